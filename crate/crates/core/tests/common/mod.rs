//! Shared test oracles.
#![allow(dead_code)]

use pcg_feel::nn::{loss_and_gradient, ParamVector};

/// Central finite difference of the batch loss w.r.t. one coordinate.
pub fn finite_difference(
    params: &ParamVector,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    index: usize,
    step: f64,
) -> f64 {
    let loss_at = |delta: f64| {
        let mut p = params.clone();
        p.values_mut()[index] += delta;
        loss_and_gradient(&p, inputs, targets).unwrap().0
    };
    (loss_at(step) - loss_at(-step)) / (2.0 * step)
}

/// Mixed relative/absolute closeness used by the gradient checks.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}
