use super::Parameters;
use crate::error::{Error, Result};
use crate::linalg::{gelu, layer_norm, vecmat_acc};
use crate::prompt::Token;

/// Incremental decoder with a per-layer key/value cache. Feeding tokens one
/// at a time yields the same logits as the batch forward pass.
#[derive(Clone)]
pub struct DecoderState<'p> {
    params: &'p Parameters,
    len: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl<'p> DecoderState<'p> {
    pub fn new(params: &'p Parameters) -> Self {
        let n = params.config.num_layers;
        let cap = params.config.context_len * params.config.embed_dim;
        Self {
            params,
            len: 0,
            keys: (0..n).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..n).map(|_| Vec::with_capacity(cap)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `token` and returns the next-token logits.
    pub fn push(&mut self, token: Token) -> Result<Vec<f64>> {
        let p = self.params;
        let cfg = &p.config;
        if self.len >= cfg.context_len {
            return Err(Error::ContextOverflow {
                len: self.len + 1,
                context_len: cfg.context_len,
            });
        }
        if token >= cfg.vocab_size {
            return Err(Error::ShapeMismatch(format!("token {token} outside vocabulary")));
        }
        let (d, nh, dh) = (cfg.embed_dim, cfg.num_heads, cfg.head_dim());
        let pos = self.len;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x: Vec<f64> = p.tok_emb.data[token * d..(token + 1) * d]
            .iter()
            .zip(&p.pos_emb.data[pos * d..(pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect();

        for (l, lp) in p.layers.iter().enumerate() {
            let (h, _, _) = layer_norm(&x, &lp.ln1_gain.data, &lp.ln1_bias.data, d);
            let mut q = lp.b_q.data.clone();
            vecmat_acc(&h, &lp.w_q.data, &mut q);
            let mut k = vec![0.0; d];
            vecmat_acc(&h, &lp.w_k.data, &mut k);
            let mut v = lp.b_v.data.clone();
            vecmat_acc(&h, &lp.w_v.data, &mut v);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);

            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut o = vec![0.0; d];
            let mut scores = vec![0.0; pos + 1];
            for head in 0..nh {
                let span = head * dh..(head + 1) * dh;
                let qh = &q[span.clone()];
                for (u, s) in scores.iter_mut().enumerate() {
                    let ku = &keys[u * d + span.start..u * d + span.end];
                    *s = scale * qh.iter().zip(ku).map(|(a, b)| a * b).sum::<f64>();
                }
                crate::linalg::softmax_in_place(&mut scores);
                let oh = &mut o[span.clone()];
                for (u, &a) in scores.iter().enumerate() {
                    let vu = &values[u * d + span.start..u * d + span.end];
                    oh.iter_mut().zip(vu).for_each(|(acc, vv)| *acc += a * vv);
                }
            }
            let mut attn = lp.b_o.data.clone();
            vecmat_acc(&o, &lp.w_o.data, &mut attn);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

            let (h2, _, _) = layer_norm(&x, &lp.ln2_gain.data, &lp.ln2_bias.data, d);
            let mut pre = lp.b_mlp_in.data.clone();
            vecmat_acc(&h2, &lp.w_mlp_in.data, &mut pre);
            pre.iter_mut().for_each(|v| *v = gelu(*v));
            let mut out = lp.b_mlp_out.data.clone();
            vecmat_acc(&pre, &lp.w_mlp_out.data, &mut out);
            x.iter_mut().zip(&out).for_each(|(a, b)| *a += b);
        }
        self.len += 1;
        let (hf, _, _) = layer_norm(&x, &p.lnf_gain.data, &p.lnf_bias.data, d);
        let mut logits = p.b_out.data.clone();
        vecmat_acc(&hf, &p.w_out.data, &mut logits);
        Ok(logits)
    }
}
