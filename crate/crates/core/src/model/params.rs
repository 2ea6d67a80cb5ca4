use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn normal(shape: &[usize], rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    /// No key bias: it only adds a per-query constant to attention scores.
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_mlp_in: Tensor,
    pub b_mlp_in: Tensor,
    pub w_mlp_out: Tensor,
    pub b_mlp_out: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl LayerParams {
    fn zeros(d: usize, h: usize) -> Self {
        Self {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            w_q: Tensor::zeros(&[d, d]),
            b_q: Tensor::zeros(&[d]),
            w_k: Tensor::zeros(&[d, d]),
            w_v: Tensor::zeros(&[d, d]),
            b_v: Tensor::zeros(&[d]),
            w_o: Tensor::zeros(&[d, d]),
            b_o: Tensor::zeros(&[d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            w_mlp_in: Tensor::zeros(&[d, h]),
            b_mlp_in: Tensor::zeros(&[h]),
            w_mlp_out: Tensor::zeros(&[h, d]),
            b_mlp_out: Tensor::zeros(&[d]),
        }
    }

    fn named(&self) -> [(&'static str, &Tensor); 15] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w_mlp_in", &self.w_mlp_in),
            ("b_mlp_in", &self.b_mlp_in),
            ("w_mlp_out", &self.w_mlp_out),
            ("b_mlp_out", &self.b_mlp_out),
        ]
    }

    fn named_mut(&mut self) -> [&mut Tensor; 15] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_mlp_in,
            &mut self.b_mlp_in,
            &mut self.w_mlp_out,
            &mut self.b_mlp_out,
        ]
    }
}

impl Parameters {
    /// All-zero arrays with the shapes implied by `config`; used for gradients
    /// and optimizer moments.
    pub fn zeros(config: ModelConfig) -> Self {
        let (v, c, d, h) = (
            config.vocab_size,
            config.context_len,
            config.embed_dim,
            config.mlp_hidden,
        );
        Self {
            config,
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[c, d]),
            layers: (0..config.num_layers).map(|_| LayerParams::zeros(d, h)).collect(),
            lnf_gain: Tensor::zeros(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            w_out: Tensor::zeros(&[d, v]),
            b_out: Tensor::zeros(&[v]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Named parameter arrays in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.named().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.extend([
            ("lnf_gain".to_string(), &self.lnf_gain),
            ("lnf_bias".to_string(), &self.lnf_bias),
            ("w_out".to_string(), &self.w_out),
            ("b_out".to_string(), &self.b_out),
        ]);
        out
    }

    /// Same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.named_mut());
        }
        out.extend([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.w_out, &mut self.b_out]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src: Vec<&Tensor> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(&src.data) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::zeros(self.config);
        for ((name, got), (_, want)) in self.tensors().iter().zip(expected.tensors()) {
            if got.shape != want.shape || got.data.len() != want.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {:?}, got {:?}",
                    want.shape, got.shape
                )));
            }
        }
        if self.layers.len() != self.config.num_layers {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {}",
                self.config.num_layers,
                self.layers.len()
            )));
        }
        Ok(())
    }
}

/// Seeded init: weights ~ N(0, 0.02), biases zero, layer-norm gains one.
pub fn init_params(cfg: &ModelConfig) -> Result<Parameters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let (v, c, d, h) = (cfg.vocab_size, cfg.context_len, cfg.embed_dim, cfg.mlp_hidden);
    let tok_emb = Tensor::normal(&[v, d], &mut rng, &dist);
    let pos_emb = Tensor::normal(&[c, d], &mut rng, &dist);
    let layers = (0..cfg.num_layers)
        .map(|_| LayerParams {
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            w_q: Tensor::normal(&[d, d], &mut rng, &dist),
            b_q: Tensor::zeros(&[d]),
            w_k: Tensor::normal(&[d, d], &mut rng, &dist),
            w_v: Tensor::normal(&[d, d], &mut rng, &dist),
            b_v: Tensor::zeros(&[d]),
            w_o: Tensor::normal(&[d, d], &mut rng, &dist),
            b_o: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w_mlp_in: Tensor::normal(&[d, h], &mut rng, &dist),
            b_mlp_in: Tensor::zeros(&[h]),
            w_mlp_out: Tensor::normal(&[h, d], &mut rng, &dist),
            b_mlp_out: Tensor::zeros(&[d]),
        })
        .collect();
    let w_out = Tensor::normal(&[d, v], &mut rng, &dist);
    Ok(Parameters {
        config: *cfg,
        tok_emb,
        pos_emb,
        layers,
        lnf_gain: Tensor::filled(&[d], 1.0),
        lnf_bias: Tensor::zeros(&[d]),
        w_out,
        b_out: Tensor::zeros(&[v]),
    })
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: Parameters,
}

const CHECKPOINT_FORMAT: &str = "biant-checkpoint";

/// Writes a versioned JSON checkpoint. Floats use shortest round-trip
/// formatting, so a reload is bitwise identical.
pub fn save_checkpoint(params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    let text = serde_json::to_string(&ckpt).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Parameters> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ckpt.format,
            ckpt.version
        )));
    }
    ckpt.params.check_shapes()?;
    Ok(ckpt.params)
}
