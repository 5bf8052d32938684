use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, Graph};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update. Parameters without an entry in `grads` are left
    /// untouched but still count towards the step number.
    pub fn step<T: Real>(&mut self, graph: &mut Graph<T>, grads: &GradientMap<T>) {
        let params = graph.params_mut();
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| alloc::vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (id, g) in grads {
            update(&mut params[*id].value, g, &mut self.m[*id], &mut self.v[*id], lr, beta1, beta2, eps, c1, c2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<T: Real>(
    p: &mut Tensor<T>,
    g: &Tensor<T>,
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
        let gi = gi.to_f64();
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *w = T::from_f64(w.to_f64() - lr * mhat / (libm::sqrt(vhat) + eps));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_the_gradient_sign() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[1, 1, 1, 2]).unwrap();
        g.conv3d("c", x, 1, 1, 0).unwrap();
        g.params_mut()[0].value.data_mut()[0] = 0.25;
        let mut grads = BTreeMap::new();
        grads.insert(0, Tensor::from_vec(&[1, 1, 1, 1, 1], alloc::vec![3.0]).unwrap());
        grads.insert(1, Tensor::from_vec(&[1], alloc::vec![-0.5]).unwrap());
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut g, &grads);
        assert!((g.params()[0].value.data()[0] - (0.25 - 1e-3)).abs() < 1e-9);
        assert!((g.params()[1].value.data()[0] - 1e-3).abs() < 1e-9);
        assert_eq!(opt.steps(), 1);
    }
}
