use crate::numcore::Real;

/// Mean Huber loss: `0.5 e²` inside `|e| ≤ delta`, `delta (|e| - 0.5 delta)` outside.
pub fn huber_loss<T: Real>(pred: &[T], target: &[T], delta: T) -> T {
    let half = T::of(0.5);
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = (p - t).abs();
            if e <= delta {
                half * e * e
            } else {
                delta * (e - half * delta)
            }
        })
        .sum();
    total / T::of(pred.len().max(1) as f64)
}

/// Derivative of the elementwise Huber term with respect to the error `e`.
pub fn huber_grad<T: Real>(e: T, delta: T) -> T {
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}
