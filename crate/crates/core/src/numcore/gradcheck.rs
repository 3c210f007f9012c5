//! Central finite-difference checks of tape gradients, in `f64`.
//!
//! Relative error per coordinate is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`;
//! the floor keeps vanishing gradients from dividing rounding noise by ~0.
//! Coordinates whose `+step` and `-step` evaluations land on different relu
//! activation patterns straddle a kink and are reported as excluded.

use super::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor label and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crosses a relu kink.
    pub excluded: Vec<(String, usize)>,
    pub tol: f64,
}

impl GradCheckReport {
    fn empty(tol: f64) -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            excluded: Vec::new(),
            tol,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if self.worst.is_none() || rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some((label.to_string(), index));
        }
    }
}

fn scalar_of(tape: &Tape<f64>, loss: Var, index: usize) -> Result<f64> {
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::Contract(format!("grad_check needs a scalar function, got {:?}", v.shape())));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::Numeric {
            op: "grad_check".into(),
            index,
        });
    }
    Ok(s)
}

/// Compare `d f / d x` from the tape against central differences.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    scalar_of(&tape, loss, 0)?;
    tape.backward(loss)?;
    let analytic = tape.value(xv).grad().expect("leaf grad").to_vec();
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            op: "grad_check analytic".into(),
            index: i,
        });
    }

    let eval = |shifted: Tensor<f64>, index: usize| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let v = t.constant(shifted);
        let out = f(&mut t, v)?;
        Ok((scalar_of(&t, out, index)?, t.kink_signature()))
    };

    let mut report = GradCheckReport::empty(tol);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let (fp, sp) = eval(plus, i)?;
        let (fm, sm) = eval(minus, i)?;
        if sp != sm {
            report.excluded.push(("x".into(), i));
            continue;
        }
        report.record("x", i, analytic[i], (fp - fm) / (2.0 * step));
    }
    Ok(report)
}

/// Check gradients with respect to every tensor of a parameter store.
///
/// `max_per_tensor` caps the number of coordinates probed per tensor; probed
/// coordinates are spread evenly across the tensor.
pub fn grad_check_params<F>(
    f: F,
    params: &ParamStore<f64>,
    step: f64,
    tol: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    scalar_of(&tape, loss, 0)?;
    tape.backward(loss)?;
    let analytic = bound.grads(&tape);

    let eval = |p: &ParamStore<f64>, index: usize| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let b = p.bind_frozen(&mut t);
        let out = f(&mut t, &b)?;
        Ok((scalar_of(&t, out, index)?, t.kink_signature()))
    };

    let mut report = GradCheckReport::empty(tol);
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let n = tensor.numel();
        let probes: Vec<usize> = match max_per_tensor {
            Some(cap) if cap < n => (0..cap).map(|j| j * n / cap).collect(),
            _ => (0..n).collect(),
        };
        let grads = &analytic[name];
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                op: format!("grad_check analytic {name}"),
                index: i,
            });
        }
        for i in probes {
            let orig = tensor.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + step;
            let (fp, sp) = eval(&work, i)?;
            work.get_mut(name)?.data_mut()[i] = orig - step;
            let (fm, sm) = eval(&work, i)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            if sp != sm {
                report.excluded.push((name.to_string(), i));
                continue;
            }
            report.record(name, i, grads[i], (fp - fm) / (2.0 * step));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_sum_passes_tight() {
        let x = Tensor::from_f64(&[3], &[0.3, -0.2, 0.5]).unwrap();
        let report = grad_check(
            |t, x| {
                let s = t.sum(x);
                Ok(t.sigmoid(s))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn relu_at_zero_is_excluded_not_failed() {
        let x = Tensor::from_f64(&[3], &[0.0, 1.0, -1.0]).unwrap();
        let report = grad_check(
            |t, x| {
                let r = t.relu(x);
                Ok(t.sum(r))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.excluded, vec![("x".to_string(), 0)]);
        assert_eq!(report.checked, 2);
        assert!(report.passed());
    }

    #[test]
    fn nan_reports_index() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let z = t.constant(Tensor::zeros(&[2]));
                let q = t.div(x, z)?;
                let q = t.sub(q, q)?;
                Ok(t.sum(q))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }

    #[test]
    fn square_passes_tight() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let report = grad_check(
            |t, x| {
                let y = t.mul(x, x)?;
                Ok(t.sum(y))
            },
            &x,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
