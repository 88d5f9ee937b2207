//! Central finite-difference gradient checking.
//!
//! Independent of the backward engine: the oracle only re-evaluates a
//! caller-supplied loss closure under point perturbations of parameter data.

use super::Tensor;

/// Default perturbation step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `loss_fn` with respect to every element of
/// `param`. The closure must be deterministic (fix seeds, disable dropout).
pub fn finite_difference_grad(param: &Tensor, mut loss_fn: impl FnMut() -> f64, h: f64) -> Vec<f64> {
    let original = param.to_vec();
    let mut grad = vec![0.0; original.len()];
    let mut work = original.clone();
    for i in 0..original.len() {
        work[i] = original[i] + h;
        param.set_data(&work);
        let up = loss_fn();
        work[i] = original[i] - h;
        param.set_data(&work);
        let down = loss_fn();
        work[i] = original[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    param.set_data(&original);
    grad
}

/// Worst relative discrepancy between an analytic gradient and its
/// finite-difference estimate. Exact zero-zero pairs compare equal.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (a, f) in analytic.iter().zip(numeric) {
        let diff = (a - f).abs();
        if diff < 1e-9 {
            continue; // differences below FD noise floor
        }
        let denom = a.abs().max(f.abs()).max(1e-6);
        worst = worst.max(diff / denom);
    }
    worst
}

/// Convenience: checks one parameter of a scalar-loss computation and returns
/// the worst relative error between reverse-mode and central differences.
pub fn check_param(param: &Tensor, mut loss_fn: impl FnMut() -> Tensor) -> f64 {
    param.zero_grad();
    let loss = loss_fn();
    loss.backward().expect("backward in gradient check");
    let analytic = param.grad_or_zeros();
    let numeric = finite_difference_grad(param, || loss_fn().item(), FD_STEP);
    max_rel_error(&analytic, &numeric)
}
