//! Differentiable building blocks with explicit forward and backward passes.

use crate::error::{Error, Result};

use super::Matrix;

/// Target id that `cross_entropy` skips.
pub const IGNORE: usize = usize::MAX;

/// Row-wise softmax where `valid(r, c) == false` positions get probability 0.
///
/// Each row subtracts its maximum over valid entries before exponentiating.
pub fn row_softmax_with(x: &Matrix, valid: impl Fn(usize, usize) -> bool) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for (c, &v) in row.iter().enumerate() {
            if valid(r, c) {
                any = true;
                if v > max {
                    max = v;
                }
            }
        }
        if !any {
            return Err(Error::FullyMasked(r));
        }
        let o = out.row_mut(r);
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if valid(r, c) {
                let e = (v - max).exp();
                o[c] = e;
                sum += e;
            }
        }
        let inv = 1.0 / sum;
        for v in o.iter_mut() {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Row-wise softmax with an optional row-major validity mask.
pub fn row_softmax(x: &Matrix, mask: Option<&[bool]>) -> Result<Matrix> {
    match mask {
        None => row_softmax_with(x, |_, _| true),
        Some(m) => {
            if m.len() != x.len() {
                return Err(Error::Shape {
                    op: "row_softmax",
                    left: x.shape(),
                    right: (m.len(), 1),
                });
            }
            let cols = x.cols();
            row_softmax_with(x, |r, c| m[r * cols + c])
        }
    }
}

/// Backward of a row softmax: `dx = p ⊙ (dp − Σ dp⊙p)` per row.
pub fn row_softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let mut inner = 0.0;
        for (a, b) in p.iter().zip(dp) {
            inner += a * b;
        }
        for ((d, &pv), &dpv) in dx.row_mut(r).iter_mut().zip(p).zip(dp) {
            *d = pv * (dpv - inner);
        }
    }
    dx
}

/// Per-row inverse RMS values kept from the forward pass.
#[derive(Debug, Clone)]
pub struct RmsCache {
    pub inv_rms: Vec<f64>,
}

/// `y = x / sqrt(mean(x²) + eps) ⊙ gain`, row by row.
pub fn rms_norm(x: &Matrix, gain: &[f64], eps: f64) -> Result<Matrix> {
    rms_norm_cached(x, gain, eps).map(|(y, _)| y)
}

pub fn rms_norm_cached(x: &Matrix, gain: &[f64], eps: f64) -> Result<(Matrix, RmsCache)> {
    if gain.len() != x.cols() {
        return Err(Error::Shape {
            op: "rms_norm",
            left: x.shape(),
            right: (1, gain.len()),
        });
    }
    let n = x.cols() as f64;
    let mut y = Matrix::zeros(x.rows(), x.cols());
    let mut inv_rms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut ms = 0.0;
        for v in row {
            ms += v * v;
        }
        let inv = 1.0 / (ms / n + eps).sqrt();
        inv_rms.push(inv);
        for ((o, &v), &g) in y.row_mut(r).iter_mut().zip(row).zip(gain) {
            *o = v * inv * g;
        }
    }
    Ok((y, RmsCache { inv_rms }))
}

/// Returns `dx` and accumulates into `dgain`.
pub fn rms_norm_backward(
    x: &Matrix,
    gain: &[f64],
    cache: &RmsCache,
    dy: &Matrix,
    dgain: &mut [f64],
) -> Matrix {
    let n = x.cols() as f64;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut xhat = vec![0.0; x.cols()];
    let mut dxhat = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        let inv = cache.inv_rms[r];
        let row = x.row(r);
        let dyr = dy.row(r);
        let mut proj = 0.0;
        for c in 0..x.cols() {
            xhat[c] = row[c] * inv;
            dxhat[c] = dyr[c] * gain[c];
            dgain[c] += dyr[c] * xhat[c];
            proj += dxhat[c] * xhat[c];
        }
        proj /= n;
        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
            *d = inv * (dxhat[c] - xhat[c] * proj);
        }
    }
    dx
}

/// Mean negative log-likelihood over rows whose target is not [`IGNORE`],
/// together with the gradient of that mean with respect to `logits`.
///
/// With no scored rows the loss and gradient are both zero.
pub fn cross_entropy(logits: &Matrix, targets: &[usize], ignore: usize) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: logits.shape(),
            right: (targets.len(), 1),
        });
    }
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let scored = targets.iter().filter(|&&t| t != ignore).count();
    if scored == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / scored as f64;
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t == ignore {
            continue;
        }
        if t >= logits.cols() {
            return Err(Error::Shape {
                op: "cross_entropy target",
                left: logits.shape(),
                right: (r, t),
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - row[t];
        let g = grad.row_mut(r);
        for (gc, &v) in g.iter_mut().zip(row) {
            *gc = (v - lse).exp() * scale;
        }
        g[t] -= scale;
    }
    Ok((total * scale, grad))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
