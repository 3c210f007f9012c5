//! Randomized invariants.

use paralleltime::data::{origins, plan_batches, split, BatchPlan, SplitSpec};
use paralleltime::embedder::{revin_denormalize, revin_normalize, PatchGrid};
use paralleltime::numcore::{broadcast_shape, Tape, Tensor};
use paralleltime::sweep::{format_table, parse_table, Stat, TableRow};
use paralleltime::train::{huber_grad, huber_loss, MetricAccumulator};
use paralleltime::winatt::{build_mask, window_from_ratio};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    (1usize..80, -1e3..1e3f64, 1e-3..1e3f64).prop_flat_map(|(len, offset, scale)| {
        prop::collection::vec(-1.0..1.0f64, len).prop_map(move |v| v.into_iter().map(|x| offset + scale * x).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mask_rows_follow_the_window(p in 1usize..40, r in 0usize..6, s in 1usize..12) {
        let m = build_mask(p, r, s).unwrap();
        for i in 0..p {
            let row = r + i;
            for c in 0..r {
                prop_assert!(m.get(row, c));
            }
            for q in 0..p {
                prop_assert_eq!(m.get(row, r + q), q <= i && i < q + s);
            }
        }
        for reg in 0..r {
            for c in 0..r + p {
                prop_assert_eq!(m.get(reg, c), c <= reg);
            }
        }
        let visible = m.patch_rows().iter().filter(|&&v| v).count();
        prop_assert_eq!(visible, (0..p).map(|i| r + s.min(i + 1)).sum::<usize>());
    }

    #[test]
    fn ratio_window_is_ceiling_of_a_ninth(p in 1usize..500) {
        let s = window_from_ratio(p);
        prop_assert!(s >= 1 && 9 * s >= p && (s == 1 || 9 * (s - 1) < p));
    }

    #[test]
    fn revin_round_trip(x in series(), gain in 0.1..5.0f64, bias in -3.0..3.0f64) {
        let (xn, st) = revin_normalize(&x);
        let y: Vec<f64> = xn.iter().map(|v| v * gain + bias).collect();
        let back = revin_denormalize(&y, st, gain, bias);
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn patches_tile_the_padded_lookback(l in 1usize..200, pl in 1usize..32) {
        let grid = PatchGrid::new(l, pl).unwrap();
        let x: Vec<f64> = (0..l).map(|i| i as f64 + 1.0).collect();
        let patches = grid.patchify(&x);
        prop_assert_eq!(patches.len(), grid.n_patches() * pl);
        prop_assert_eq!(grid.n_patches() * pl, l + grid.pad());
        prop_assert!(grid.pad() < pl);
        prop_assert_eq!(&patches[grid.pad()..], &x[..]);
        prop_assert!(patches[..grid.pad()].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn huber_is_continuous_and_matches_its_derivative(e in -5.0..5.0f64, delta in 0.1..3.0f64) {
        let f = |e: f64| huber_loss(&[e], &[0.0], delta);
        let h = 1e-6;
        let numeric = (f(e + h) - f(e - h)) / (2.0 * h);
        prop_assert!((numeric - huber_grad(e, delta)).abs() < 1e-5);
        prop_assert!(f(e) >= 0.0 && f(e) <= 0.5 * e * e + 1e-12);
    }

    #[test]
    fn splits_are_disjoint_ordered_and_covering(total in 200usize..3000, a in 0.3..0.8f64, b in 0.05..0.15f64) {
        let spec = SplitSpec { train_end: (total as f64 * a) as usize, val_end: (total as f64 * (a + b)) as usize };
        if let Ok(s) = split(total, spec, 32, 8) {
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, total);
        }
    }

    #[test]
    fn batches_visit_each_origin_once(
        len in 60usize..400, l in 4usize..24, h in 1usize..12, bs in 1usize..20,
        stride in 1usize..4, shuffle: bool, seed: u64,
    ) {
        let plan = BatchPlan { batch_size: bs, variate_subsample: None, shuffle, seed, stride, max_batches: None };
        let batches = plan_batches(3, 0..len, l, h, &plan, 5).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.origins.clone()).collect();
        prop_assert!(batches.iter().all(|b| b.origins.len() <= bs && b.variates == vec![0, 1, 2]));
        seen.sort_unstable();
        let want: Vec<usize> = origins(0..len, l, h).step_by(stride).collect();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn metrics_ignore_row_order_and_batching(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 6), 1..20), cut in 0usize..20) {
        let n = rows.len();
        let pred = Tensor::new(&[n, 3], rows.iter().flat_map(|r| r[..3].to_vec()).collect()).unwrap();
        let target = Tensor::new(&[n, 3], rows.iter().flat_map(|r| r[3..].to_vec()).collect()).unwrap();
        let mut whole = MetricAccumulator::default();
        whole.add(&pred, &target).unwrap();
        let whole = whole.finish().unwrap();

        let cut = cut.min(n);
        let part = |t: &Tensor<f64>, range: std::ops::Range<usize>| {
            Tensor::new(&[range.len(), 3], t.data()[range.start * 3..range.end * 3].to_vec()).unwrap()
        };
        let mut split_acc = MetricAccumulator::default();
        // later rows first, in a separate batch
        for range in [cut..n, 0..cut] {
            if !range.is_empty() {
                split_acc.add(&part(&pred, range.clone()), &part(&target, range)).unwrap();
            }
        }
        let split_report = split_acc.finish().unwrap();
        prop_assert!((whole.mse - split_report.mse).abs() < 1e-12);
        prop_assert!((whole.mae - split_report.mae).abs() < 1e-12);
        prop_assert_eq!(whole.windows, split_report.windows);
    }

    #[test]
    fn sweep_table_round_trips(cells in prop::collection::vec((1usize..5, 1usize..33, prop::option::of((0.0..2.0f64, 0.0..0.1f64)), 1usize..6), 0..8)) {
        let rows: Vec<TableRow> = cells
            .iter()
            .map(|&(n_layers, patch_len, stat, runs)| TableRow {
                n_layers,
                patch_len,
                mse: stat.map(|(mean, std)| Stat { mean, std }),
                mae: stat.map(|(mean, std)| Stat { mean: mean / 2.0, std }),
                runs,
                failed: if stat.is_some() { 0 } else { runs },
            })
            .collect();
        let text = format_table(&rows);
        let parsed = parse_table(&text).unwrap();
        prop_assert_eq!(format_table(&parsed), text);
        for (a, b) in parsed.iter().zip(&rows) {
            prop_assert_eq!((a.n_layers, a.patch_len, a.runs, a.failed), (b.n_layers, b.patch_len, b.runs, b.failed));
            let close = |x: Option<Stat>, y: Option<Stat>| match (x, y) {
                (Some(x), Some(y)) => (x.mean - y.mean).abs() <= 5e-7 && (x.std - y.std).abs() <= 5e-7,
                (None, None) => true,
                _ => false,
            };
            prop_assert!(close(a.mse, b.mse) && close(a.mae, b.mae));
        }
    }

    #[test]
    fn broadcast_add_matches_explicit_expansion(a0 in 1usize..4, a1 in 1usize..4, b1 in prop::bool::ANY) {
        let sa = [a0, a1];
        let sb = if b1 { vec![1, a1] } else { vec![a1] };
        let out = broadcast_shape(&sa, &sb).unwrap();
        prop_assert_eq!(out.clone(), vec![a0, a1]);
        let a = Tensor::<f64>::from_fn(&sa, |i| i as f64);
        let b = Tensor::<f64>::from_fn(&sb, |i| 10.0 * i as f64 + 1.0);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let y = t.add(av, bv).unwrap();
        for i in 0..a0 {
            for j in 0..a1 {
                prop_assert_eq!(t.data(y)[i * a1 + j], a.data()[i * a1 + j] + b.data()[j]);
            }
        }
    }
}

#[test]
fn identical_seeds_give_zero_spread() {
    let s = Stat::of(&[0.3, 0.3, 0.3]).unwrap();
    assert_eq!((s.mean, s.std), (0.3, 0.0));
}
