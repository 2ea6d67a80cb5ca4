//! A small causal transformer over the prompt token space, trained with
//! exact analytic gradients.
//!
//! Architecture (pre-norm): token + learned positional embedding, then
//! `num_layers` blocks of causal multi-head self-attention and a GELU MLP,
//! each wrapped in a residual connection, then a final layer norm and a
//! linear projection back to the token space.

mod decode;
mod gradcheck;
mod optim;
mod params;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decode::DecoderState;
pub use gradcheck::{batch_objective, finite_difference_check, perturb, tiny_check_batch, BlockCheck, GradCheckReport};
pub use optim::{adam_update, optimizer_step, AdamConfig, AdamState};
pub use params::{init_params, load_checkpoint, save_checkpoint, LayerParams, Parameters, Tensor, CHECKPOINT_VERSION};
pub use transformer::{forward, gradient, instance_gradient, task_loss, BatchLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 42,
            context_len: 96,
            embed_dim: 32,
            num_heads: 2,
            num_layers: 1,
            mlp_hidden: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The configuration used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 12,
            context_len: 16,
            embed_dim: 8,
            num_heads: 2,
            num_layers: 1,
            mlp_hidden: 16,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab_size,
            self.context_len,
            self.embed_dim,
            self.num_heads,
            self.num_layers,
            self.mlp_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Task weights of the joint objective `alpha * L_fwd + beta * L_bwd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn forward_only() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "loss weights must be nonnegative with positive sum, got alpha={} beta={}",
                self.alpha, self.beta
            )))
        }
    }

    pub fn for_direction(&self, d: crate::sequence::Direction) -> f64 {
        match d {
            crate::sequence::Direction::Forward => self.alpha,
            crate::sequence::Direction::Backward => self.beta,
        }
    }
}

/// `alpha * l_fwd + beta * l_bwd`.
pub fn combined_loss(l_fwd: f64, l_bwd: f64, w: LossWeights) -> f64 {
    w.alpha * l_fwd + w.beta * l_bwd
}
