//! Shared helpers for gradient checking and randomized test data. Used by
//! the unit tests and the acceptance suite; not part of the public API
//! proper.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floored denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Tensor with i.i.d. U[-scale, scale) entries from a fresh seeded stream.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = Rng::new(seed);
    let mut t = Tensor::zeros(shape).expect("valid shape");
    for v in t.data_mut() {
        *v = rng.uniform(-scale, scale);
    }
    t
}

/// Check an analytic gradient against central finite differences of `loss`,
/// element by element. Returns the maximum relative error observed.
pub fn grad_check<F>(at: &Tensor, analytic: &Tensor, mut loss: F) -> f64
where
    F: FnMut(&Tensor) -> f64,
{
    assert_eq!(at.shape(), analytic.shape(), "gradient shape mismatch");
    let mut max_rel = 0.0_f64;
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = at.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(numeric, analytic.data()[i]));
    }
    max_rel
}
