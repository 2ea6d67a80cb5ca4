use serde::{Deserialize, Serialize};

use super::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Parameters,
    pub v: Parameters,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            config: AdamConfig::default(),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update over flat slices. `step` is 1-based.
pub fn adam_update(cfg: &AdamConfig, step: u64, lr: f64, w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        w[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

pub fn optimizer_step(params: &mut Parameters, grads: &Parameters, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let step = state.step;
    let cfg = state.config;
    let g: Vec<_> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((w, g), m), v) in tensors {
        adam_update(&cfg, step, lr, &mut w.data, &g.data, &mut m.data, &mut v.data);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = init_params(&ModelConfig::tiny()).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = p.zeros_like();
        optimizer_step(&mut p, &g, &mut st, 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic() {
        let p = init_params(&ModelConfig::tiny()).unwrap();
        let mut g = p.zeros_like();
        g.w_out
            .data
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = (i as f64).cos());
        let run = || {
            let mut q = p.clone();
            let mut st = AdamState::new(&q);
            optimizer_step(&mut q, &g, &mut st, 0.01);
            optimizer_step(&mut q, &g, &mut st, 0.01);
            (q, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn descends_on_quadratic() {
        let cfg = AdamConfig::default();
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        let g = [2.0 * w[0]];
        adam_update(&cfg, 1, 0.1, &mut w, &g, &mut m, &mut v);
        assert!(w[0] < 1.0);
        assert!((w[0] - 0.9).abs() < 1e-6);
    }
}
