use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes, aligned at the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// How an input of shape `input` is laid out against a broadcast `output` shape.
pub(crate) enum Layout {
    /// Same shape: output index == input index.
    Same,
    /// Input repeats every `len` elements (input is a trailing block of output).
    Cycle(usize),
    /// Each input element is repeated `rep` times consecutively.
    Repeat(usize),
    /// General case: explicit output-to-input offset map.
    Map(Vec<usize>),
}

impl Layout {
    pub(crate) fn new(input: &[usize], output: &[usize]) -> Layout {
        let n_in: usize = input.iter().product();
        let n_out: usize = output.iter().product();
        if n_in == n_out {
            return Layout::Same;
        }
        let mut padded = vec![1; output.len() - input.len()];
        padded.extend_from_slice(input);
        // leading ones then an exact trailing block
        let first_real = padded.iter().position(|&d| d != 1).unwrap_or(padded.len());
        if padded[first_real..] == output[first_real..] {
            return Layout::Cycle(n_in);
        }
        // exact leading block then trailing ones
        let last_real = padded.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if padded[..last_real] == output[..last_real] {
            return Layout::Repeat(n_out / n_in);
        }
        let mut strides = vec![0; output.len()];
        let mut s = 1;
        for i in (0..output.len()).rev() {
            strides[i] = if padded[i] == 1 { 0 } else { s };
            s *= padded[i];
        }
        let mut map = Vec::with_capacity(n_out);
        let mut idx = vec![0usize; output.len()];
        let mut off = 0usize;
        for _ in 0..n_out {
            map.push(off);
            for ax in (0..output.len()).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < output[ax] {
                    break;
                }
                off -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Layout::Map(map)
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Layout::Same => i,
            Layout::Cycle(len) => i % len,
            Layout::Repeat(rep) => i / rep,
            Layout::Map(m) => m[i],
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(input: &[usize], output: &[usize]) -> Vec<usize> {
        let n_out: usize = output.iter().product();
        let mut padded = vec![1; output.len() - input.len()];
        padded.extend_from_slice(input);
        let in_strides = strides(&padded);
        let out_strides = strides(output);
        (0..n_out)
            .map(|flat| {
                (0..output.len())
                    .map(|ax| {
                        let ix = (flat / out_strides[ax]) % output[ax];
                        if padded[ax] == 1 {
                            0
                        } else {
                            ix * in_strides[ax]
                        }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]).unwrap(), vec![4, 5, 3]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn layouts_match_brute_force() {
        let cases: &[(&[usize], &[usize])] = &[
            (&[3], &[2, 3]),
            (&[2, 1], &[2, 3]),
            (&[1, 3, 1], &[2, 3, 4]),
            (&[2, 1, 4], &[2, 3, 4]),
            (&[1], &[5]),
            (&[3, 4], &[2, 3, 4]),
        ];
        for (input, output) in cases {
            let layout = Layout::new(input, output);
            let expected = brute(input, output);
            for (i, e) in expected.iter().enumerate() {
                assert_eq!(layout.index(i), *e, "{input:?} -> {output:?} at {i}");
            }
        }
    }
}
