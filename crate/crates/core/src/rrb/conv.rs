//! Causal dilated convolution stack with per-layer residual skips:
//! `h[l+1][t] = h[l][t] + relu(b + sum_k W[k] h[l][t - (K-1-k) * dilation])`,
//! zero-padded on the left.

use alloc::vec;
use alloc::vec::Vec;

use super::RrbParams;
use crate::dataset::{FeatureMatrix, Frames};

pub(crate) struct ConvCache {
    pub(crate) frames: usize,
    /// `inputs[l]` feeds layer `l`; the last entry is the stack output.
    pub(crate) inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub(crate) pre: Vec<Vec<f64>>,
}

impl ConvCache {
    pub(crate) fn output_frames(&self, dim: usize) -> Frames<'_> {
        Frames::new(dim, self.inputs.last().expect("at least the input"))
    }
}

pub(crate) fn forward(params: &RrbParams, x: Frames<'_>) -> ConvCache {
    let cfg = &params.config;
    let (t, d, k) = (x.len(), cfg.dim, cfg.kernel);
    let mut inputs = vec![x.data().to_vec()];
    let mut pre = Vec::with_capacity(params.conv.len());
    for (l, layer) in params.conv.iter().enumerate() {
        let dil = cfg.dilation(l);
        let h = inputs.last().expect("non-empty");
        let mut z = vec![0.0; t * d];
        for s in 0..t {
            let zs = &mut z[s * d..(s + 1) * d];
            zs.copy_from_slice(&layer.bias);
            for tap in 0..k {
                let back = (k - 1 - tap) * dil;
                if back > s {
                    continue;
                }
                let src = &h[(s - back) * d..(s - back + 1) * d];
                let w = &layer.weight[tap * d * d..(tap + 1) * d * d];
                for (o, zo) in zs.iter_mut().enumerate() {
                    *zo += w[o * d..(o + 1) * d].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let next: Vec<f64> = h.iter().zip(&z).map(|(hv, zv)| hv + zv.max(0.0)).collect();
        pre.push(z);
        inputs.push(next);
    }
    ConvCache { frames: t, inputs, pre }
}

/// Backpropagates `grad_out` (w.r.t. the stack output) into `grads.conv` and
/// returns the gradient w.r.t. the stack input.
pub(crate) fn backward(
    params: &RrbParams,
    cache: &ConvCache,
    mut grad_out: Vec<f64>,
    grads: &mut RrbParams,
) -> Vec<f64> {
    let cfg = &params.config;
    let (t, d, k) = (cache.frames, cfg.dim, cfg.kernel);
    for l in (0..params.conv.len()).rev() {
        let dil = cfg.dilation(l);
        let layer = &params.conv[l];
        let g = &mut grads.conv[l];
        let h = &cache.inputs[l];
        let dz: Vec<f64> = grad_out.iter().zip(&cache.pre[l]).map(|(&go, &z)| if z > 0.0 { go } else { 0.0 }).collect();
        // skip connection passes the gradient through unchanged
        let mut grad_in = grad_out;
        for s in 0..t {
            let dzs = &dz[s * d..(s + 1) * d];
            for (gb, v) in g.bias.iter_mut().zip(dzs) {
                *gb += v;
            }
            for tap in 0..k {
                let back = (k - 1 - tap) * dil;
                if back > s {
                    continue;
                }
                let src_row = s - back;
                let src = &h[src_row * d..(src_row + 1) * d];
                let w = &layer.weight[tap * d * d..(tap + 1) * d * d];
                let gw = &mut g.weight[tap * d * d..(tap + 1) * d * d];
                for (o, &go) in dzs.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * d..(o + 1) * d];
                    let gwrow = &mut gw[o * d..(o + 1) * d];
                    let gin = &mut grad_in[src_row * d..(src_row + 1) * d];
                    for i in 0..d {
                        gwrow[i] += go * src[i];
                        gin[i] += wrow[i] * go;
                    }
                }
            }
        }
        grad_out = grad_in;
    }
    grad_out
}

/// Runs the convolution stack over `context` (`T × D`) and returns `T × D`.
pub fn causal_dilated_conv(context: Frames<'_>, params: &RrbParams) -> FeatureMatrix {
    let cache = forward(params, context);
    cache.output_frames(params.config.dim).to_matrix()
}
