//! Windowed multi-head cross-attention from candidate queries to the most
//! recent convolved frames, followed by per-head and residual projections.

use alloc::vec;
use alloc::vec::Vec;

use super::{Depthwise, RrbParams};
use crate::dataset::Frames;
use crate::math;

pub(crate) struct AttnCache {
    pub(crate) window: usize,
    n_queries: usize,
    /// Windowed attention input, `window × D`.
    input: Vec<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    /// Raw queries (cluster centers), `n_queries × D`.
    raw_queries: Vec<f64>,
    queries: Vec<f64>,
    /// Softmax weights, `[query][head][frame]`.
    weights: Vec<f64>,
    /// Attended values per head before projection, `n_queries × D`.
    attended: Vec<f64>,
    /// After per-head projection, `n_queries × D`.
    projected: Vec<f64>,
}

/// Causal depthwise convolution with dilation 1 over `t` frames.
fn depthwise(p: &Depthwise, kernel: usize, x: &[f64], t: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * d];
    for s in 0..t {
        let ys = &mut y[s * d..(s + 1) * d];
        if !p.bias.is_empty() {
            ys.copy_from_slice(&p.bias);
        }
        for tap in 0..kernel {
            let back = kernel - 1 - tap;
            if back > s {
                continue;
            }
            let src = &x[(s - back) * d..(s - back + 1) * d];
            let w = &p.weight[tap * d..(tap + 1) * d];
            for c in 0..d {
                ys[c] += w[c] * src[c];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn depthwise_backward(
    p: &Depthwise,
    kernel: usize,
    x: &[f64],
    dy: &[f64],
    t: usize,
    d: usize,
    grad: &mut Depthwise,
    mut dx: Option<&mut [f64]>,
) {
    for s in 0..t {
        let dys = &dy[s * d..(s + 1) * d];
        // zip over an empty bias is a no-op
        for (gb, v) in grad.bias.iter_mut().zip(dys) {
            *gb += v;
        }
        for tap in 0..kernel {
            let back = kernel - 1 - tap;
            if back > s {
                continue;
            }
            let row = s - back;
            for c in 0..d {
                grad.weight[tap * d + c] += dys[c] * x[row * d + c];
                if let Some(dx) = dx.as_deref_mut() {
                    dx[row * d + c] += p.weight[tap * d + c] * dys[c];
                }
            }
        }
    }
}

pub(crate) fn forward(params: &RrbParams, context: Frames<'_>, queries: &[&[f64]]) -> (AttnCache, Vec<Vec<f64>>) {
    let cfg = &params.config;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let heads = cfg.heads;
    let scale = 1.0 / math::sqrt(hd as f64);

    let window_frames = context.tail(cfg.attn_window);
    let w = window_frames.len();
    let input = window_frames.data().to_vec();
    let keys = depthwise(&params.key, cfg.proj_kernel, &input, w, d);
    let values = depthwise(&params.value, cfg.proj_kernel, &input, w, d);

    let nq = queries.len();
    let raw_queries: Vec<f64> = queries.iter().flat_map(|q| q.iter().copied()).collect();
    // Each query is a one-frame sequence, so only the current tap applies.
    let mut projected_queries = Vec::with_capacity(nq * d);
    for q in queries {
        projected_queries.extend(depthwise(&params.query, cfg.proj_kernel, q, 1, d));
    }

    let mut weights = vec![0.0; nq * heads * w];
    let mut attended = vec![0.0; nq * d];
    let mut projected = vec![0.0; nq * d];
    let mut residuals = Vec::with_capacity(nq);
    for i in 0..nq {
        let q = &projected_queries[i * d..(i + 1) * d];
        for h in 0..heads {
            let ch = h * hd..(h + 1) * hd;
            let a = &mut weights[(i * heads + h) * w..(i * heads + h + 1) * w];
            for (j, aj) in a.iter_mut().enumerate() {
                let k = &keys[j * d..(j + 1) * d];
                *aj = q[ch.clone()].iter().zip(&k[ch.clone()]).map(|(x, y)| x * y).sum::<f64>() * scale;
            }
            let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for aj in a.iter_mut() {
                *aj = math::exp(*aj - max);
                total += *aj;
            }
            a.iter_mut().for_each(|aj| *aj /= total);

            let o = &mut attended[i * d + ch.start..i * d + ch.end];
            for (j, &aj) in a.iter().enumerate() {
                let v = &values[j * d + ch.start..j * d + ch.end];
                for (oc, vc) in o.iter_mut().zip(v) {
                    *oc += aj * vc;
                }
            }
            let p = &params.head_out[h];
            for r in 0..hd {
                projected[i * d + ch.start + r] = (0..hd).map(|c| p[r * hd + c] * o[c]).sum();
            }
        }
        let u = &projected[i * d..(i + 1) * d];
        let r: Vec<f64> = (0..d)
            .map(|o| params.res_bias[o] + (0..d).map(|c| params.res_weight[o * d + c] * u[c]).sum::<f64>())
            .collect();
        residuals.push(r);
    }

    let cache = AttnCache {
        window: w,
        n_queries: nq,
        input,
        keys,
        values,
        raw_queries,
        queries: projected_queries,
        weights,
        attended,
        projected,
    };
    (cache, residuals)
}

/// Accumulates attention-side gradients and returns `d loss / d input` for
/// the windowed frames (`window × D`).
pub(crate) fn backward(params: &RrbParams, cache: &AttnCache, d_res: &[Vec<f64>], grads: &mut RrbParams) -> Vec<f64> {
    let cfg = &params.config;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let heads = cfg.heads;
    let w = cache.window;
    let scale = 1.0 / math::sqrt(hd as f64);

    let mut d_keys = vec![0.0; w * d];
    let mut d_values = vec![0.0; w * d];
    let mut d_queries = vec![0.0; cache.n_queries * d];

    for (i, dr) in d_res.iter().enumerate().take(cache.n_queries) {
        let u = &cache.projected[i * d..(i + 1) * d];
        let mut du = vec![0.0; d];
        for o in 0..d {
            grads.res_bias[o] += dr[o];
            for c in 0..d {
                grads.res_weight[o * d + c] += dr[o] * u[c];
                du[c] += params.res_weight[o * d + c] * dr[o];
            }
        }
        let q = &cache.queries[i * d..(i + 1) * d];
        for h in 0..heads {
            let off = h * hd;
            let o = &cache.attended[i * d + off..i * d + off + hd];
            let p = &params.head_out[h];
            let gp = &mut grads.head_out[h];
            let mut d_o = vec![0.0; hd];
            for r in 0..hd {
                let g = du[off + r];
                for c in 0..hd {
                    gp[r * hd + c] += g * o[c];
                    d_o[c] += p[r * hd + c] * g;
                }
            }
            let a = &cache.weights[(i * heads + h) * w..(i * heads + h + 1) * w];
            let mut da = vec![0.0; w];
            for j in 0..w {
                let v = &cache.values[j * d + off..j * d + off + hd];
                da[j] = d_o.iter().zip(v).map(|(x, y)| x * y).sum();
                for c in 0..hd {
                    d_values[j * d + off + c] += a[j] * d_o[c];
                }
            }
            let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for j in 0..w {
                let ds = a[j] * (da[j] - mean) * scale;
                let k = &cache.keys[j * d + off..j * d + off + hd];
                for c in 0..hd {
                    d_queries[i * d + off + c] += ds * k[c];
                    d_keys[j * d + off + c] += ds * q[off + c];
                }
            }
        }
    }

    let k = cfg.proj_kernel;
    let mut d_input = vec![0.0; w * d];
    depthwise_backward(&params.key, k, &cache.input, &d_keys, w, d, &mut grads.key, Some(&mut d_input));
    depthwise_backward(&params.value, k, &cache.input, &d_values, w, d, &mut grads.value, Some(&mut d_input));
    for i in 0..cache.n_queries {
        let raw = &cache.raw_queries[i * d..(i + 1) * d];
        let dq = &d_queries[i * d..(i + 1) * d];
        depthwise_backward(&params.query, k, raw, dq, 1, d, &mut grads.query, None);
    }
    d_input
}

/// Residual for each query given already-convolved context frames (`T × D`).
/// Keys and values come from the last `min(window, T)` frames only.
pub fn local_cross_attention(queries: &[&[f64]], context: Frames<'_>, params: &RrbParams) -> Vec<Vec<f64>> {
    if context.is_empty() {
        return vec![vec![0.0; params.config.dim]; queries.len()];
    }
    forward(params, context, queries).1
}
