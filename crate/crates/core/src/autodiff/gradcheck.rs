//! Central finite-difference check of a primitive's vector-Jacobian product.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{backward, forward, Op};
use crate::tensor::Tensor;

/// `Σ r ⊙ op(inputs, params)`, the scalar whose gradient the VJP with
/// upstream `r` computes.
fn objective(op: &Op, inputs: &[Tensor<f64>], params: &[Tensor<f64>], r: &Tensor<f64>) -> f64 {
    let ins: Vec<&Tensor<f64>> = inputs.iter().collect();
    let ps: Vec<&Tensor<f64>> = params.iter().collect();
    forward(op, &ins, &ps).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(x, y)| x - y).collect();
    let scale = max_abs(analytic).max(max_abs(numeric));
    if scale == 0.0 {
        0.0
    } else {
        max_abs(&diff) / scale
    }
}

/// Worst [`relative_error`] over every input and parameter tensor of `op`,
/// comparing [`backward`] with upstream `r` against central differences
/// of step `h`.
///
/// # Panics
/// If the shapes do not suit `op`, as [`forward`] does.
pub fn max_relative_error(op: &Op, mut inputs: Vec<Tensor<f64>>, mut params: Vec<Tensor<f64>>, r: &Tensor<f64>, h: f64) -> f64 {
    let analytic = {
        let ins: Vec<&Tensor<f64>> = inputs.iter().collect();
        let ps: Vec<&Tensor<f64>> = params.iter().collect();
        backward(op, &ins, &ps, r, &vec![true; ins.len()])
    };
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[i].len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[e];
            inputs[i].data_mut()[e] = x0 + h;
            let fp = objective(op, &inputs, &params, r);
            inputs[i].data_mut()[e] = x0 - h;
            let fm = objective(op, &inputs, &params, r);
            inputs[i].data_mut()[e] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        let a = analytic.inputs[i].as_ref().expect("every input gradient was requested");
        worst = worst.max(relative_error(a.data(), &numeric));
    }
    for j in 0..params.len() {
        let mut numeric = vec![0.0; params[j].len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = params[j].data()[e];
            params[j].data_mut()[e] = x0 + h;
            let fp = objective(op, &inputs, &params, r);
            params[j].data_mut()[e] = x0 - h;
            let fm = objective(op, &inputs, &params, r);
            params[j].data_mut()[e] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(relative_error(analytic.params[j].data(), &numeric));
    }
    worst
}
