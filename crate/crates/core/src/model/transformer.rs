//! Pre-norm transformer stack with explicit backward pass.
//!
//! ```text
//! x ─ rms ─ attn(rope q,k) ─ wo ─(+)─ rms ─ w_up ─ gelu ─ w_down ─(+)─ … ─ rms ─ hidden
//! └──────────────────────────────┘└───────────────────────────────┘
//! ```

use crate::error::{Error, Result};
use crate::numcore::ops::{
    gelu, gelu_grad, rms_norm_backward, rms_norm_cached, row_softmax_backward, row_softmax_with, RmsCache,
};
use crate::numcore::Matrix;

use super::{AttentionMode, LayerParams, ModelConfig, ModelParams};

struct LayerCache {
    x: Matrix,
    n1: Matrix,
    c1: RmsCache,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
    h: Matrix,
    n2: Matrix,
    c2: RmsCache,
    u: Matrix,
    g: Matrix,
}

/// Activations kept by [`forward_cached`] for [`backward`].
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    pre_final: Matrix,
    c_final: RmsCache,
    rope: Option<RopeTable>,
}

struct RopeTable {
    cos: Matrix,
    sin: Matrix,
}

impl RopeTable {
    fn new(len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let inv: Vec<f64> = (0..half)
            .map(|i| base.powf(-(2.0 * i as f64) / head_dim as f64))
            .collect();
        let cos = Matrix::from_fn(len, half, |t, i| (t as f64 * inv[i]).cos());
        let sin = Matrix::from_fn(len, half, |t, i| (t as f64 * inv[i]).sin());
        Self { cos, sin }
    }

    /// Rotates each `(2i, 2i+1)` pair of every head block. `inverse` applies
    /// the transpose rotation, which is what the backward pass needs.
    fn apply(&self, m: &mut Matrix, head_dim: usize, inverse: bool) {
        let half = head_dim / 2;
        let cols = m.cols();
        for t in 0..m.rows() {
            let cos = self.cos.row(t);
            let sin = self.sin.row(t);
            let row = m.row_mut(t);
            for h0 in (0..cols).step_by(head_dim) {
                for i in 0..half {
                    let (a, b) = (row[h0 + 2 * i], row[h0 + 2 * i + 1]);
                    let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
                    row[h0 + 2 * i] = a * c - b * s;
                    row[h0 + 2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

fn head_slice(m: &Matrix, h: usize, dh: usize) -> Matrix {
    Matrix::from_fn(m.rows(), dh, |r, c| m.get(r, h * dh + c))
}

fn write_head(dst: &mut Matrix, src: &Matrix, h: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

pub fn check_ids(cfg: &ModelConfig, ids: &[u32]) -> Result<()> {
    if ids.len() > cfg.max_seq {
        return Err(Error::SequenceLength {
            len: ids.len(),
            min: 0,
            max: cfg.max_seq,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::InvalidToken(bad));
    }
    Ok(())
}

fn layer_forward(
    p: &LayerParams,
    cfg: &ModelConfig,
    x: Matrix,
    mode: AttentionMode,
    rope: Option<&RopeTable>,
) -> Result<(Matrix, LayerCache)> {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let (n1, c1) = rms_norm_cached(&x, p.attn_norm.data(), cfg.norm_eps)?;
    let mut q = n1.matmul(&p.wq)?;
    let mut k = n1.matmul(&p.wk)?;
    let v = n1.matmul(&p.wv)?;
    if let Some(r) = rope {
        r.apply(&mut q, dh, false);
        r.apply(&mut k, dh, false);
    }

    let mut concat = Matrix::zeros(x.rows(), cfg.d_model);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = head_slice(&q, h, dh);
        let kh = head_slice(&k, h, dh);
        let vh = head_slice(&v, h, dh);
        let mut scores = qh.matmul_nt(&kh)?;
        scores.scale(scale);
        let p_h = match mode {
            AttentionMode::Causal => row_softmax_with(&scores, |r, c| c <= r)?,
            AttentionMode::Bidirectional => row_softmax_with(&scores, |_, _| true)?,
        };
        write_head(&mut concat, &p_h.matmul(&vh)?, h, dh);
        probs.push(p_h);
    }

    let h_res = x.add(&concat.matmul(&p.wo)?)?;
    let (n2, c2) = rms_norm_cached(&h_res, p.mlp_norm.data(), cfg.norm_eps)?;
    let u = n2.matmul(&p.w_up)?;
    let g = Matrix::from_fn(u.rows(), u.cols(), |r, c| gelu(u.get(r, c)));
    let out = h_res.add(&g.matmul(&p.w_down)?)?;
    Ok((
        out,
        LayerCache {
            x,
            n1,
            c1,
            q,
            k,
            v,
            probs,
            concat,
            h: h_res,
            n2,
            c2,
            u,
            g,
        },
    ))
}

fn layer_backward(
    p: &LayerParams,
    cfg: &ModelConfig,
    c: &LayerCache,
    dout: &Matrix,
    grad: &mut LayerParams,
    rope: Option<&RopeTable>,
) -> Result<Matrix> {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch
    grad.w_down.add_assign(&c.g.matmul_tn(dout)?)?;
    let dg = dout.matmul_nt(&p.w_down)?;
    let du = Matrix::from_fn(dg.rows(), dg.cols(), |r, k| dg.get(r, k) * gelu_grad(c.u.get(r, k)));
    grad.w_up.add_assign(&c.n2.matmul_tn(&du)?)?;
    let dn2 = du.matmul_nt(&p.w_up)?;
    let mut dh_res = dout.clone();
    dh_res.add_assign(&rms_norm_backward(
        &c.h,
        p.mlp_norm.data(),
        &c.c2,
        &dn2,
        grad.mlp_norm.data_mut(),
    ))?;

    // attention branch
    grad.wo.add_assign(&c.concat.matmul_tn(&dh_res)?)?;
    let dconcat = dh_res.matmul_nt(&p.wo)?;
    let t = c.x.rows();
    let mut dq = Matrix::zeros(t, cfg.d_model);
    let mut dk = Matrix::zeros(t, cfg.d_model);
    let mut dv = Matrix::zeros(t, cfg.d_model);
    for h in 0..cfg.heads {
        let qh = head_slice(&c.q, h, dh);
        let kh = head_slice(&c.k, h, dh);
        let vh = head_slice(&c.v, h, dh);
        let doh = head_slice(&dconcat, h, dh);
        let probs = &c.probs[h];
        let dprobs = doh.matmul_nt(&vh)?;
        write_head(&mut dv, &probs.matmul_tn(&doh)?, h, dh);
        let mut dscores = row_softmax_backward(probs, &dprobs);
        dscores.scale(scale);
        write_head(&mut dq, &dscores.matmul(&kh)?, h, dh);
        write_head(&mut dk, &dscores.matmul_tn(&qh)?, h, dh);
    }
    if let Some(r) = rope {
        r.apply(&mut dq, dh, true);
        r.apply(&mut dk, dh, true);
    }
    grad.wq.add_assign(&c.n1.matmul_tn(&dq)?)?;
    grad.wk.add_assign(&c.n1.matmul_tn(&dk)?)?;
    grad.wv.add_assign(&c.n1.matmul_tn(&dv)?)?;
    let mut dn1 = dq.matmul_nt(&p.wq)?;
    dn1.add_assign(&dk.matmul_nt(&p.wk)?)?;
    dn1.add_assign(&dv.matmul_nt(&p.wv)?)?;
    let mut dx = dh_res;
    dx.add_assign(&rms_norm_backward(
        &c.x,
        p.attn_norm.data(),
        &c.c1,
        &dn1,
        grad.attn_norm.data_mut(),
    ))?;
    Ok(dx)
}

/// Final hidden states (`positions × d_model`) plus the activations needed
/// for the backward pass.
pub fn forward_cached(
    params: &ModelParams,
    cfg: &ModelConfig,
    ids: &[u32],
    mode: AttentionMode,
) -> Result<(Matrix, ForwardCache)> {
    check_ids(cfg, ids)?;
    let rope = cfg.rope.then(|| RopeTable::new(ids.len(), cfg.head_dim(), cfg.rope_base));
    let mut x = Matrix::zeros(ids.len(), cfg.d_model);
    for (t, &id) in ids.iter().enumerate() {
        x.row_mut(t).copy_from_slice(params.embed.row(id as usize));
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let (next, cache) = layer_forward(p, cfg, x, mode, rope.as_ref())?;
        layers.push(cache);
        x = next;
    }
    let (hidden, c_final) = rms_norm_cached(&x, params.final_norm.data(), cfg.norm_eps)?;
    hidden.ensure_finite("hidden states")?;
    Ok((
        hidden,
        ForwardCache {
            ids: ids.to_vec(),
            layers,
            pre_final: x,
            c_final,
            rope,
        },
    ))
}

/// Accumulates backbone gradients for `dhidden` into `grads`.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    dhidden: &Matrix,
    grads: &mut ModelParams,
) -> Result<()> {
    let mut dx = rms_norm_backward(
        &cache.pre_final,
        params.final_norm.data(),
        &cache.c_final,
        dhidden,
        grads.final_norm.data_mut(),
    );
    for (i, c) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(&params.layers[i], cfg, c, &dx, &mut grads.layers[i], cache.rope.as_ref())?;
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = grads.embed.row_mut(id as usize);
        for (g, d) in row.iter_mut().zip(dx.row(t)) {
            *g += d;
        }
    }
    Ok(())
}
