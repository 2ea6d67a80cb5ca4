//! Central finite-difference check of the analytic gradient.
//!
//! The numerical side evaluates the objective through [`forward`] and
//! [`task_loss`] only, so it shares no code with the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{forward, gradient, task_loss, LossWeights, Parameters};
use crate::error::Result;
use crate::prompt::EncodedInstance;
use crate::sequence::Direction;

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub name: String,
    /// `|a - fd| / max(|a|, |fd|, 1e-8)` over the block's L2 norms.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub blocks: Vec<BlockCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `sum_i w_i * L_i / |batch|`, evaluated through the forward pass.
pub fn batch_objective(params: &Parameters, batch: &[EncodedInstance], w: LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for enc in batch {
        let dists = forward(params, &enc.tokens)?;
        total += w.for_direction(enc.direction) * task_loss(&dists, enc)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn finite_difference_check(
    params: &Parameters,
    batch: &[EncodedInstance],
    w: LossWeights,
    eps: f64,
) -> Result<GradCheckReport> {
    let (analytic, _) = gradient(params, batch, w)?;
    let mut probe = params.clone();
    let mut blocks = Vec::new();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (bi, name) in names.into_iter().enumerate() {
        let a = &analytic.tensors()[bi].1.data;
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut fd2 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.tensors_mut()[bi].data[i];
            probe.tensors_mut()[bi].data[i] = orig + eps;
            let plus = batch_objective(&probe, batch, w)?;
            probe.tensors_mut()[bi].data[i] = orig - eps;
            let minus = batch_objective(&probe, batch, w)?;
            probe.tensors_mut()[bi].data[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let d = ai - fd;
            diff2 += d * d;
            an2 += ai * ai;
            fd2 += fd * fd;
            max_abs = max_abs.max(d.abs());
        }
        let (diff, an, fd) = (diff2.sqrt(), an2.sqrt(), fd2.sqrt());
        blocks.push(BlockCheck {
            name,
            rel_err: diff / an.max(fd).max(1e-8),
            max_abs_err: max_abs,
            analytic_norm: an,
        });
    }
    let max_rel_err = blocks.iter().map(|b| b.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps,
        blocks,
        max_rel_err,
    })
}

/// Adds uniform noise in `[-spread, spread)` to every parameter. Moves a
/// fresh init off its symmetric point (unit gains, zero biases) so every
/// block carries a nontrivial gradient.
pub fn perturb(params: &mut Parameters, spread: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x += rng.random_range(-spread..spread));
    }
}

/// A small mixed-direction batch (forward, backward, forward) of random
/// token sequences, with targets on the second half of each sequence.
pub fn tiny_check_batch(vocab_size: usize, len: usize, seed: u64) -> Vec<EncodedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [Direction::Forward, Direction::Backward, Direction::Forward]
        .into_iter()
        .map(|direction| {
            let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab_size)).collect();
            let prompt_len = len / 2;
            EncodedInstance {
                direction,
                loss_mask: (0..len).map(|i| i >= prompt_len).collect(),
                tokens,
                prompt_len,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn perturbed(cfg: ModelConfig) -> Parameters {
        let mut p = init_params(&cfg).unwrap();
        perturb(&mut p, 0.3, cfg.seed + 100);
        p
    }

    #[test]
    fn tiny_config_passes() {
        let p = perturbed(ModelConfig::tiny());
        let batch = tiny_check_batch(12, 14, 3);
        let report = finite_difference_check(&p, &batch, LossWeights::new(1.0, 0.5).unwrap(), 1e-4).unwrap();
        for b in &report.blocks {
            assert!(b.rel_err < 1e-4, "{}: {}", b.name, b.rel_err);
        }
        assert!(report.passed(1e-4));
    }

    #[test]
    fn two_layers_pass() {
        let cfg = ModelConfig {
            num_layers: 2,
            num_heads: 4,
            seed: 5,
            ..ModelConfig::tiny()
        };
        let p = perturbed(cfg);
        let batch = tiny_check_batch(12, 10, 9);
        let report = finite_difference_check(&p, &batch, LossWeights::default(), 1e-4).unwrap();
        assert!(report.passed(1e-4), "max rel err {}", report.max_rel_err);
    }
}
