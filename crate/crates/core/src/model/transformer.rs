//! Batch forward pass, per-task cross-entropy and the analytic backward pass.

use rayon::prelude::*;

use super::{LayerParams, LossWeights, Parameters};
use crate::error::{Error, Result};
use crate::linalg::{
    gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, Layout,
};
use crate::prompt::{EncodedInstance, Token};
use crate::sequence::Direction;

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: NormCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, `[head][query][key]`, zero above the diagonal.
    att: Vec<f64>,
    o: Vec<f64>,
    ln2: NormCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct Activations {
    len: usize,
    layers: Vec<LayerCache>,
    lnf: NormCache,
    hf: Vec<f64>,
}

fn check_tokens(params: &Parameters, tokens: &[Token]) -> Result<()> {
    let cfg = &params.config;
    if tokens.len() > cfg.context_len {
        return Err(Error::ContextOverflow {
            len: tokens.len(),
            context_len: cfg.context_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::ShapeMismatch(format!(
            "token {t} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn attention_forward(cfg: &super::ModelConfig, q: &[f64], k: &[f64], v: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let (d, nh, dh) = (cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut att = vec![0.0; nh * t * t];
    let mut o = vec![0.0; t * d];
    for h in 0..nh {
        let head = Layout::column_block(t, dh, d, h * dh);
        let a = &mut att[h * t * t..(h + 1) * t * t];
        gemm(scale, q, head, k, head.t(), 0.0, a, Layout::dense(t, t));
        for (i, row) in a.chunks_exact_mut(t).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(0.0);
        }
        gemm(1.0, a, Layout::dense(t, t), v, head, 0.0, &mut o, head);
    }
    (att, o)
}

fn layer_forward(cfg: &super::ModelConfig, lp: &LayerParams, x: &mut [f64], t: usize) -> LayerCache {
    let (d, hid) = (cfg.embed_dim, cfg.mlp_hidden);
    let (h1, xhat1, rstd1) = layer_norm(x, &lp.ln1_gain.data, &lp.ln1_bias.data, d);
    let q = linear(&h1, &lp.w_q.data, Some(&lp.b_q.data), t, d, d);
    let k = linear(&h1, &lp.w_k.data, None, t, d, d);
    let v = linear(&h1, &lp.w_v.data, Some(&lp.b_v.data), t, d, d);
    let (att, o) = attention_forward(cfg, &q, &k, &v, t);
    let attn_out = linear(&o, &lp.w_o.data, Some(&lp.b_o.data), t, d, d);
    x.iter_mut().zip(&attn_out).for_each(|(a, b)| *a += b);

    let (h2, xhat2, rstd2) = layer_norm(x, &lp.ln2_gain.data, &lp.ln2_bias.data, d);
    let pre = linear(&h2, &lp.w_mlp_in.data, Some(&lp.b_mlp_in.data), t, d, hid);
    let act: Vec<f64> = pre.iter().map(|&p| gelu(p)).collect();
    let mlp_out = linear(&act, &lp.w_mlp_out.data, Some(&lp.b_mlp_out.data), t, hid, d);
    x.iter_mut().zip(&mlp_out).for_each(|(a, b)| *a += b);

    LayerCache {
        ln1: NormCache {
            xhat: xhat1,
            rstd: rstd1,
        },
        h1,
        q,
        k,
        v,
        att,
        o,
        ln2: NormCache {
            xhat: xhat2,
            rstd: rstd2,
        },
        h2,
        pre,
        act,
    }
}

fn run(params: &Parameters, tokens: &[Token]) -> Activations {
    let cfg = &params.config;
    let (d, t) = (cfg.embed_dim, tokens.len());
    let mut x = vec![0.0; t * d];
    for (i, &tok) in tokens.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        let te = &params.tok_emb.data[tok * d..(tok + 1) * d];
        let pe = &params.pos_emb.data[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] = te[j] + pe[j];
        }
    }
    let layers = params
        .layers
        .iter()
        .map(|lp| layer_forward(cfg, lp, &mut x, t))
        .collect();
    let (hf, xhat, rstd) = layer_norm(&x, &params.lnf_gain.data, &params.lnf_bias.data, d);
    Activations {
        len: t,
        layers,
        lnf: NormCache { xhat, rstd },
        hf,
    }
}

/// Output logits for the selected positions.
fn logits_at(params: &Parameters, acts: &Activations, rows: &[usize]) -> Vec<f64> {
    let (d, v) = (params.config.embed_dim, params.config.vocab_size);
    let mut h = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        h.extend_from_slice(&acts.hf[r * d..(r + 1) * d]);
    }
    linear(&h, &params.w_out.data, Some(&params.b_out.data), rows.len(), d, v)
}

/// Next-token distributions at every position: row `i` predicts token `i + 1`.
pub fn forward(params: &Parameters, tokens: &[Token]) -> Result<Vec<Vec<f64>>> {
    check_tokens(params, tokens)?;
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let acts = run(params, tokens);
    let rows: Vec<usize> = (0..tokens.len()).collect();
    let logits = logits_at(params, &acts, &rows);
    Ok(logits
        .chunks_exact(params.config.vocab_size)
        .map(|row| {
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            p
        })
        .collect())
}

fn check_mask(enc: &EncodedInstance) -> Result<()> {
    if enc.loss_mask.len() != enc.tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss mask has {} entries for {} tokens",
            enc.loss_mask.len(),
            enc.tokens.len()
        )));
    }
    if enc.loss_mask.first() == Some(&true) {
        return Err(Error::ShapeMismatch(
            "position 0 has no predecessor to predict it".into(),
        ));
    }
    Ok(())
}

/// Sum of `-ln p(token_j)` over mask-true positions `j`, reading the
/// distribution at `j - 1`.
pub fn task_loss(dists: &[Vec<f64>], enc: &EncodedInstance) -> Result<f64> {
    check_mask(enc)?;
    if dists.len() != enc.tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} distributions for {} tokens",
            dists.len(),
            enc.tokens.len()
        )));
    }
    let mut loss = 0.0;
    for (j, (&tok, &m)) in enc.tokens.iter().zip(&enc.loss_mask).enumerate() {
        if m {
            let p = dists[j - 1]
                .get(tok)
                .ok_or_else(|| Error::ShapeMismatch(format!("token {tok} outside distribution")))?;
            loss -= p.ln();
        }
    }
    Ok(loss)
}

/// Loss of a single instance; accumulates `weight * dL/dθ` into `grads`.
pub fn instance_gradient(
    params: &Parameters,
    enc: &EncodedInstance,
    weight: f64,
    grads: &mut Parameters,
) -> Result<f64> {
    check_mask(enc)?;
    check_tokens(params, &enc.tokens)?;
    let targets: Vec<usize> = enc
        .loss_mask
        .iter()
        .enumerate()
        .filter_map(|(j, &m)| m.then_some(j))
        .collect();
    let Some(&last) = targets.last() else {
        return Ok(0.0);
    };
    let cfg = params.config;
    let (d, vsz) = (cfg.embed_dim, cfg.vocab_size);
    // Tokens after the last target's predecessor cannot influence the loss.
    let input = &enc.tokens[..last];
    let acts = run(params, input);
    let rows: Vec<usize> = targets.iter().map(|j| j - 1).collect();
    let mut dlogits = logits_at(params, &acts, &rows);
    let mut loss = 0.0;
    for (row, &j) in dlogits.chunks_exact_mut(vsz).zip(&targets) {
        softmax_in_place(row);
        let tok = enc.tokens[j];
        loss -= row[tok].ln();
        row[tok] -= 1.0;
        row.iter_mut().for_each(|g| *g *= weight);
    }
    if weight == 0.0 {
        return Ok(loss);
    }

    let t = acts.len;
    let mut hsel = Vec::with_capacity(rows.len() * d);
    for &r in &rows {
        hsel.extend_from_slice(&acts.hf[r * d..(r + 1) * d]);
    }
    let dh_sel = linear_backward(
        &hsel,
        &params.w_out.data,
        &dlogits,
        &mut grads.w_out.data,
        Some(&mut grads.b_out.data),
        rows.len(),
        d,
        vsz,
    );
    let mut dhf = vec![0.0; t * d];
    for (k, &r) in rows.iter().enumerate() {
        dhf[r * d..(r + 1) * d].copy_from_slice(&dh_sel[k * d..(k + 1) * d]);
    }
    let mut dx = layer_norm_backward(
        &dhf,
        &acts.lnf.xhat,
        &acts.lnf.rstd,
        &params.lnf_gain.data,
        &mut grads.lnf_gain.data,
        &mut grads.lnf_bias.data,
        d,
    );
    for (l, cache) in acts.layers.iter().enumerate().rev() {
        layer_backward(&cfg, &params.layers[l], &mut grads.layers[l], cache, &mut dx, t);
    }
    for (i, &tok) in input.iter().enumerate() {
        let g = &dx[i * d..(i + 1) * d];
        for (acc, v) in grads.tok_emb.data[tok * d..(tok + 1) * d].iter_mut().zip(g) {
            *acc += v;
        }
        for (acc, v) in grads.pos_emb.data[i * d..(i + 1) * d].iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(loss)
}

/// Backpropagates through one block; `dx` holds the gradient w.r.t. the
/// block output on entry and w.r.t. its input on exit.
fn layer_backward(
    cfg: &super::ModelConfig,
    lp: &LayerParams,
    g: &mut LayerParams,
    c: &LayerCache,
    dx: &mut [f64],
    t: usize,
) {
    let (d, hid, nh, dh) = (cfg.embed_dim, cfg.mlp_hidden, cfg.num_heads, cfg.head_dim());

    // MLP branch
    let mut dpre = linear_backward(
        &c.act,
        &lp.w_mlp_out.data,
        dx,
        &mut g.w_mlp_out.data,
        Some(&mut g.b_mlp_out.data),
        t,
        hid,
        d,
    );
    dpre.iter_mut().zip(&c.pre).for_each(|(gr, &p)| *gr *= gelu_grad(p));
    let dh2 = linear_backward(
        &c.h2,
        &lp.w_mlp_in.data,
        &dpre,
        &mut g.w_mlp_in.data,
        Some(&mut g.b_mlp_in.data),
        t,
        d,
        hid,
    );
    let dres = layer_norm_backward(
        &dh2,
        &c.ln2.xhat,
        &c.ln2.rstd,
        &lp.ln2_gain.data,
        &mut g.ln2_gain.data,
        &mut g.ln2_bias.data,
        d,
    );
    dx.iter_mut().zip(&dres).for_each(|(a, b)| *a += b);

    // attention branch
    let d_o = linear_backward(&c.o, &lp.w_o.data, dx, &mut g.w_o.data, Some(&mut g.b_o.data), t, d, d);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut da = vec![0.0; t * t];
    for h in 0..nh {
        let head = Layout::column_block(t, dh, d, h * dh);
        let a = &c.att[h * t * t..(h + 1) * t * t];
        gemm(1.0, &d_o, head, &c.v, head.t(), 0.0, &mut da, Layout::dense(t, t));
        gemm(1.0, a, Layout::dense(t, t).t(), &d_o, head, 0.0, &mut dv, head);
        // softmax backward, row by row over the causal prefix
        for i in 0..t {
            let ar = &a[i * t..=i * t + i];
            let dar = &mut da[i * t..(i + 1) * t];
            let dot: f64 = ar.iter().zip(&dar[..=i]).map(|(p, g)| p * g).sum();
            for (u, gr) in dar.iter_mut().enumerate() {
                *gr = if u <= i { ar[u] * (*gr - dot) } else { 0.0 };
            }
        }
        gemm(scale, &da, Layout::dense(t, t), &c.k, head, 0.0, &mut dq, head);
        gemm(scale, &da, Layout::dense(t, t).t(), &c.q, head, 0.0, &mut dk, head);
    }
    let mut dh1 = linear_backward(
        &c.h1,
        &lp.w_q.data,
        &dq,
        &mut g.w_q.data,
        Some(&mut g.b_q.data),
        t,
        d,
        d,
    );
    let dh1_k = linear_backward(&c.h1, &lp.w_k.data, &dk, &mut g.w_k.data, None, t, d, d);
    let dh1_v = linear_backward(
        &c.h1,
        &lp.w_v.data,
        &dv,
        &mut g.w_v.data,
        Some(&mut g.b_v.data),
        t,
        d,
        d,
    );
    for ((a, b), c2) in dh1.iter_mut().zip(&dh1_k).zip(&dh1_v) {
        *a += b + c2;
    }
    let dres = layer_norm_backward(
        &dh1,
        &c.ln1.xhat,
        &c.ln1.rstd,
        &lp.ln1_gain.data,
        &mut g.ln1_gain.data,
        &mut g.ln1_bias.data,
        d,
    );
    dx.iter_mut().zip(&dres).for_each(|(a, b)| *a += b);
}

/// Per-batch loss bookkeeping. `objective` is the quantity differentiated:
/// `sum_i w_i * L_i / batch_len`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    pub objective: f64,
    pub sum_fwd: f64,
    pub sum_bwd: f64,
    pub n_fwd: usize,
    pub n_bwd: usize,
}

/// Exact gradient of the mean weighted loss over `batch`.
///
/// Instances are processed in parallel; their gradients are summed in batch
/// order, so the result does not depend on the thread count.
pub fn gradient(params: &Parameters, batch: &[EncodedInstance], w: LossWeights) -> Result<(Parameters, BatchLoss)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let per_instance: Vec<Result<(f64, Parameters)>> = batch
        .par_iter()
        .map(|enc| {
            let mut g = params.zeros_like();
            let weight = w.for_direction(enc.direction);
            let l = instance_gradient(params, enc, weight, &mut g)?;
            Ok((l, g))
        })
        .collect();
    let mut grads = params.zeros_like();
    let mut stats = BatchLoss::default();
    let mut weighted = 0.0;
    for (enc, r) in batch.iter().zip(per_instance) {
        let (l, g) = r?;
        grads.add_scaled(&g, 1.0);
        weighted += w.for_direction(enc.direction) * l;
        match enc.direction {
            Direction::Forward => {
                stats.sum_fwd += l;
                stats.n_fwd += 1;
            }
            Direction::Backward => {
                stats.sum_bwd += l;
                stats.n_bwd += 1;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    stats.objective = weighted * inv;
    if !stats.objective.is_finite() || !grads.all_finite() {
        return Err(Error::NumericalDivergence { epoch: 0, batch: 0 });
    }
    Ok((grads, stats))
}
