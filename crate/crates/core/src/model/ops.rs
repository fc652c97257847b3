//! Layer primitives with hand-written backward passes.
//!
//! Conventions: activations are flat row-major `[rows, features]` slices,
//! linear weights are `[out, in]` so a forward is `x · Wᵀ + b`. Each `*_bwd`
//! consumes exactly what its `*_fwd` cached and accumulates weight gradients
//! with `+=` into caller-provided tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{add_bias, matmul_nn, matmul_nt, matmul_tn, softmax_rows, Tensor};

const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_fwd(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; rows * out_dim];
    matmul_nt(x, w.data(), rows, in_dim, out_dim, &mut y);
    add_bias(&mut y, b.data());
    y
}

/// Returns dx; accumulates into `dw`, `db`.
pub(crate) fn linear_bwd(
    dy: &[f64],
    rows: usize,
    x: &[f64],
    w: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let mut dw_tmp = vec![0.0; out_dim * in_dim];
    matmul_tn(dy, x, rows, out_dim, in_dim, &mut dw_tmp);
    for (g, t) in dw.data_mut().iter_mut().zip(&dw_tmp) {
        *g += *t;
    }
    for row in dy.chunks(out_dim) {
        for (g, v) in db.data_mut().iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut dx = vec![0.0; rows * in_dim];
    matmul_nn(dy, w.data(), rows, out_dim, in_dim, &mut dx);
    dx
}

pub(crate) struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn layernorm_fwd(
    x: &[f64],
    rows: usize,
    dim: usize,
    gain: &Tensor,
    bias: &Tensor,
) -> (Vec<f64>, LayerNormCache) {
    let mut y = vec![0.0; rows * dim];
    let mut xhat = vec![0.0; rows * dim];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..dim {
            let h = (row[i] - mean) * rs;
            xhat[r * dim + i] = h;
            y[r * dim + i] = gain.data()[i] * h + bias.data()[i];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub(crate) fn layernorm_bwd(
    dy: &[f64],
    cache: &LayerNormCache,
    rows: usize,
    dim: usize,
    gain: &Tensor,
    dgain: &mut Tensor,
    dbias: &mut Tensor,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    for r in 0..rows {
        let dy_row = &dy[r * dim..(r + 1) * dim];
        let xhat_row = &cache.xhat[r * dim..(r + 1) * dim];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..dim {
            let dxhat = dy_row[i] * gain.data()[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat_row[i];
            dgain.data_mut()[i] += dy_row[i] * xhat_row[i];
            dbias.data_mut()[i] += dy_row[i];
        }
        mean_dxhat /= dim as f64;
        mean_dxhat_xhat /= dim as f64;
        for i in 0..dim {
            let dxhat = dy_row[i] * gain.data()[i];
            dx[r * dim + i] = cache.rstd[r] * (dxhat - mean_dxhat - xhat_row[i] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

pub(crate) fn gelu_fwd(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        })
        .collect()
}

pub(crate) fn gelu_bwd(dy: &[f64], x: &[f64]) -> Vec<f64> {
    dy.iter()
        .zip(x)
        .map(|(&g, &v)| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
            g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
        })
        .collect()
}

/// Inverted dropout; `None` when inactive. The mask holds the multiplier
/// applied to each element (0 or 1/keep), which is also the local gradient.
pub(crate) fn dropout_fwd(
    x: &mut [f64],
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Option<Vec<f64>> {
    let rng = rng.as_deref_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask: Vec<f64> = x
        .iter_mut()
        .map(|v| {
            if rng.gen::<f64>() < keep {
                *v *= scale;
                scale
            } else {
                *v = 0.0;
                0.0
            }
        })
        .collect();
    Some(mask)
}

pub(crate) fn dropout_bwd(dy: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (g, m) in dy.iter_mut().zip(mask) {
            *g *= *m;
        }
    }
}

/// Q/K/V/O weight bundle for one attention block.
pub(crate) struct AttnWeights<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub bk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

pub(crate) struct AttnGrads<'a> {
    pub wq: &'a mut Tensor,
    pub bq: &'a mut Tensor,
    pub wk: &'a mut Tensor,
    pub bk: &'a mut Tensor,
    pub wv: &'a mut Tensor,
    pub bv: &'a mut Tensor,
    pub wo: &'a mut Tensor,
    pub bo: &'a mut Tensor,
}

pub(crate) struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmaxed scores, `[heads, rq, rk]`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    rq: usize,
    rk: usize,
}

/// Multi-head attention. `q_in` supplies queries, `kv_in` keys and values
/// (the same slice for self-attention). `causal` masks out `j > i`; masked
/// probabilities are exactly zero, so future rows contribute nothing at all.
pub(crate) fn attention_fwd(
    q_in: &[f64],
    rq: usize,
    kv_in: &[f64],
    rk: usize,
    heads: usize,
    dim: usize,
    w: &AttnWeights,
    causal: bool,
) -> (Vec<f64>, AttnCache) {
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = linear_fwd(q_in, rq, w.wq, w.bq);
    let k = linear_fwd(kv_in, rk, w.wk, w.bk);
    let v = linear_fwd(kv_in, rk, w.wv, w.bv);

    let mut probs = vec![0.0; heads * rq * rk];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..rq {
            let row = &mut probs[(h * rq + i) * rk..(h * rq + i + 1) * rk];
            for (j, p) in row.iter_mut().enumerate() {
                if causal && j > i {
                    *p = f64::NEG_INFINITY;
                    continue;
                }
                let mut dot = 0.0;
                for l in 0..hd {
                    dot += q[i * dim + off + l] * k[j * dim + off + l];
                }
                *p = dot * scale;
            }
        }
    }
    softmax_rows(&mut probs, rk);

    let mut ctx = vec![0.0; rq * dim];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..rq {
            for j in 0..rk {
                let p = probs[(h * rq + i) * rk + j];
                if p == 0.0 {
                    continue;
                }
                for l in 0..hd {
                    ctx[i * dim + off + l] += p * v[j * dim + off + l];
                }
            }
        }
    }
    let out = linear_fwd(&ctx, rq, w.wo, w.bo);
    (out, AttnCache { q, k, v, probs, ctx, rq, rk })
}

/// Returns `(dq_in, dkv_in)`; callers add them together for self-attention.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_bwd(
    dout: &[f64],
    cache: &AttnCache,
    q_in: &[f64],
    kv_in: &[f64],
    heads: usize,
    dim: usize,
    w: &AttnWeights,
    grads: AttnGrads,
) -> (Vec<f64>, Vec<f64>) {
    let (rq, rk) = (cache.rq, cache.rk);
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let dctx = linear_bwd(dout, rq, &cache.ctx, w.wo, grads.wo, grads.bo);

    let mut dq = vec![0.0; rq * dim];
    let mut dk = vec![0.0; rk * dim];
    let mut dv = vec![0.0; rk * dim];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..rq {
            let prow = &cache.probs[(h * rq + i) * rk..(h * rq + i + 1) * rk];
            // dprobs and the softmax Jacobian, one row at a time.
            let mut dprobs = vec![0.0; rk];
            for (j, dp) in dprobs.iter_mut().enumerate() {
                let mut acc = 0.0;
                for l in 0..hd {
                    acc += dctx[i * dim + off + l] * cache.v[j * dim + off + l];
                }
                *dp = acc;
            }
            for j in 0..rk {
                let p = prow[j];
                if p == 0.0 {
                    continue;
                }
                for l in 0..hd {
                    dv[j * dim + off + l] += p * dctx[i * dim + off + l];
                }
            }
            let dot: f64 = prow.iter().zip(&dprobs).map(|(p, dp)| p * dp).sum();
            for j in 0..rk {
                let dscore = prow[j] * (dprobs[j] - dot) * scale;
                if dscore == 0.0 {
                    continue;
                }
                for l in 0..hd {
                    dq[i * dim + off + l] += dscore * cache.k[j * dim + off + l];
                    dk[j * dim + off + l] += dscore * cache.q[i * dim + off + l];
                }
            }
        }
    }

    let dq_in = linear_bwd(&dq, rq, q_in, w.wq, grads.wq, grads.bq);
    let mut dkv_in = linear_bwd(&dk, rk, kv_in, w.wk, grads.wk, grads.bk);
    let dkv_v = linear_bwd(&dv, rk, kv_in, w.wv, grads.wv, grads.bv);
    for (a, b) in dkv_in.iter_mut().zip(&dkv_v) {
        *a += *b;
    }
    (dq_in, dkv_in)
}

/// Output spatial size of a stride-2, 3×3, pad-1 convolution.
pub(crate) fn conv_out(size: usize) -> usize {
    (size - 1) / 2 + 1
}

/// Direct 3×3 stride-2 pad-1 convolution, channel-major `[c, h, w]`.
pub(crate) fn conv2d_fwd(
    input: &[f64],
    c_in: usize,
    size: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Vec<f64> {
    let c_out = weight.shape()[0];
    let osize = conv_out(size);
    let mut out = vec![0.0; c_out * osize * osize];
    for oc in 0..c_out {
        for oy in 0..osize {
            for ox in 0..osize {
                let mut acc = bias.data()[oc];
                for ic in 0..c_in {
                    for ky in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= size as isize {
                                continue;
                            }
                            acc += weight.data()[((oc * c_in + ic) * 3 + ky) * 3 + kx]
                                * input[(ic * size + iy as usize) * size + ix as usize];
                        }
                    }
                }
                out[(oc * osize + oy) * osize + ox] = acc;
            }
        }
    }
    out
}

/// Accumulates into `dweight`/`dbias`; returns `d_input` when requested.
pub(crate) fn conv2d_bwd(
    dout: &[f64],
    input: &[f64],
    c_in: usize,
    size: usize,
    weight: &Tensor,
    dweight: &mut Tensor,
    dbias: &mut Tensor,
    need_dinput: bool,
) -> Option<Vec<f64>> {
    let c_out = weight.shape()[0];
    let osize = conv_out(size);
    let mut dinput = if need_dinput { Some(vec![0.0; c_in * size * size]) } else { None };
    for oc in 0..c_out {
        for oy in 0..osize {
            for ox in 0..osize {
                let g = dout[(oc * osize + oy) * osize + ox];
                if g == 0.0 {
                    continue;
                }
                dbias.data_mut()[oc] += g;
                for ic in 0..c_in {
                    for ky in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= size as isize {
                                continue;
                            }
                            let in_idx = (ic * size + iy as usize) * size + ix as usize;
                            let w_idx = ((oc * c_in + ic) * 3 + ky) * 3 + kx;
                            dweight.data_mut()[w_idx] += g * input[in_idx];
                            if let Some(di) = dinput.as_mut() {
                                di[in_idx] += g * weight.data()[w_idx];
                            }
                        }
                    }
                }
            }
        }
    }
    dinput
}
