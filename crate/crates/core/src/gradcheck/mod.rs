//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`crate::autograd`].
//!
//! Only forward evaluations are used here. Errors are measured per tensor as
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`; tensors whose
//! gradients are both below `1e-10` in norm count as agreeing.

use crate::tensor::Matrix;

/// Step used by the gradient suites.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance used by the gradient suites.
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn numeric_gradient(x: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let plus = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let minus = f(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Like [`numeric_gradient`] but only at the listed flat indices; other
/// entries are left at zero and should be masked out of the comparison.
pub fn numeric_gradient_at(
    x: &Matrix,
    indices: &[usize],
    step: f64,
    mut f: impl FnMut(&Matrix) -> f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&k| {
            let orig = probe.as_slice()[k];
            probe.as_mut_slice()[k] = orig + step;
            let plus = f(&probe);
            probe.as_mut_slice()[k] = orig - step;
            let minus = f(&probe);
            probe.as_mut_slice()[k] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

pub fn assert_close_gradients(label: &str, analytic: &Matrix, numeric: &Matrix, tol: f64) {
    assert_eq!(analytic.shape(), numeric.shape(), "{label}: shape mismatch");
    let err = relative_error(analytic.as_slice(), numeric.as_slice());
    assert!(
        err <= tol,
        "{label}: relative gradient error {err:e} > {tol:e}\nanalytic: {:?}\nnumeric:  {:?}",
        analytic.as_slice(),
        numeric.as_slice()
    );
}

pub mod suite;
