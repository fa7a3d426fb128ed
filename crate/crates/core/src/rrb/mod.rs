//! Normal-representation reconstruction.
//!
//! Context frames go through a stack of causal dilated convolutions; the
//! candidate classes' cluster centers then attend (two heads, local window)
//! over the most recent convolved frames. The attended feature is projected to
//! a residual, and each candidate's normal representation is its center plus
//! that residual. Backpropagation is written out by hand in the `conv` and
//! `attention` submodules.

mod attention;
mod conv;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClusterCenters, Frames};
use crate::{ClassId, Error, Result};

pub use attention::local_cross_attention;
pub use conv::causal_dilated_conv;
pub use train::{
    cosine_lr, gradient_check, gradient_check_with, loss, loss_and_gradient, train, train_step, GradCheckReport,
    TrainOptions, TrainOutcome,
};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrbConfig {
    pub dim: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    /// Layer `i` uses dilation `dilation_base^i`.
    pub dilation_base: usize,
    pub attn_window: usize,
    pub heads: usize,
    pub proj_kernel: usize,
}

impl RrbConfig {
    /// Five kernel-3 layers with dilations 1, 3, 9, 27, 81; a 32-frame window
    /// and two heads.
    pub fn new(dim: usize) -> Self {
        Self { dim, conv_layers: 5, kernel: 3, dilation_base: 3, attn_window: 32, heads: 2, proj_kernel: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} is not divisible across {} heads", self.dim, self.heads));
        }
        if self.kernel == 0 || self.proj_kernel == 0 {
            return bad("kernel sizes must be positive".into());
        }
        if self.attn_window == 0 {
            return bad("attention window must be at least 1".into());
        }
        if self.dilation_base == 0 {
            return bad("dilation base must be positive".into());
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_base.pow(layer as u32)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// How many frames back the convolution stack can see (excluding the
    /// current one).
    pub fn conv_reach(&self) -> usize {
        (0..self.conv_layers).map(|l| (self.kernel - 1) * self.dilation(l)).sum()
    }

    /// Trailing context length that fully determines the block's output.
    pub fn context_span(&self) -> usize {
        self.attn_window + self.conv_reach()
    }
}

/// Weights of one convolution layer; `weight[tap][out][in]`, tap `kernel - 1`
/// is the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-channel causal convolution; `weight[tap][channel]`. An empty `bias`
/// means no bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct Depthwise {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct RrbParams {
    pub config: RrbConfig,
    pub conv: Vec<ConvLayer>,
    pub query: Depthwise,
    pub key: Depthwise,
    pub value: Depthwise,
    /// One `head_dim × head_dim` matrix per head, `[out][in]`.
    pub head_out: Vec<Vec<f64>>,
    /// `dim × dim`, `[out][in]`.
    pub res_weight: Vec<f64>,
    pub res_bias: Vec<f64>,
}

/// Name and shape of a parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RrbParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(config: RrbConfig) -> Self {
        let d = config.dim;
        let dw = |bias: usize| Depthwise { weight: vec![0.0; config.proj_kernel * d], bias: vec![0.0; bias] };
        Self {
            config,
            conv: (0..config.conv_layers)
                .map(|_| ConvLayer { weight: vec![0.0; config.kernel * d * d], bias: vec![0.0; d] })
                .collect(),
            query: dw(d),
            // A shared offset on every key cancels in the softmax, so keys carry no bias.
            key: dw(0),
            value: dw(d),
            head_out: vec![vec![0.0; config.head_dim() * config.head_dim()]; config.heads],
            res_weight: vec![0.0; d * d],
            res_bias: vec![0.0; d],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Tensor names and shapes, in the order of [`tensors`](Self::tensors).
    pub fn specs(config: &RrbConfig) -> Vec<TensorSpec> {
        let d = config.dim;
        let hd = config.head_dim();
        let spec = |name: String, shape: Vec<usize>| TensorSpec { name, shape };
        let mut out = Vec::new();
        for l in 0..config.conv_layers {
            out.push(spec(format!("conv.{l}.weight"), vec![config.kernel, d, d]));
            out.push(spec(format!("conv.{l}.bias"), vec![d]));
        }
        for name in ["query", "key", "value"] {
            out.push(spec(format!("{name}.weight"), vec![config.proj_kernel, d]));
            if name != "key" {
                out.push(spec(format!("{name}.bias"), vec![d]));
            }
        }
        for h in 0..config.heads {
            out.push(spec(format!("head.{h}.weight"), vec![hd, hd]));
        }
        out.push(spec("residual.weight".into(), vec![d, d]));
        out.push(spec("residual.bias".into(), vec![d]));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.conv {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for p in [&self.query, &self.key, &self.value] {
            out.push(&p.weight);
            if !p.bias.is_empty() {
                out.push(&p.bias);
            }
        }
        for h in &self.head_out {
            out.push(h);
        }
        out.push(&self.res_weight);
        out.push(&self.res_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for p in [&mut self.query, &mut self.key, &mut self.value] {
            out.push(&mut p.weight);
            if !p.bias.is_empty() {
                out.push(&mut p.bias);
            }
        }
        for h in &mut self.head_out {
            out.push(h);
        }
        out.push(&mut self.res_weight);
        out.push(&mut self.res_bias);
        out
    }

    /// Rebuilds parameters from tensors listed in [`specs`](Self::specs) order.
    pub fn from_tensors(config: RrbConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let specs = Self::specs(&config);
        if tensors.len() != specs.len() {
            return Err(Error::DimensionMismatch { expected: specs.len(), found: tensors.len() });
        }
        let mut params = Self::zeros(config);
        for ((dst, src), spec) in params.tensors_mut().into_iter().zip(&tensors).zip(&specs) {
            if src.len() != dst.len() {
                return Err(Error::Config(format!(
                    "tensor {} has {} values, expected {}",
                    spec.name,
                    src.len(),
                    dst.len()
                )));
            }
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("tensor {} has non-finite values", spec.name)));
            }
            dst.copy_from_slice(src);
        }
        Ok(params)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Deterministic initialization. The residual projection starts at zero so an
/// untrained block reproduces the cluster centers exactly.
pub fn init_params(config: RrbConfig, seed: u64) -> Result<RrbParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dim;
    let mut params = RrbParams::zeros(config);

    let conv_std = 0.05 / libm::sqrt((config.kernel * d) as f64);
    let conv_dist = Normal::new(0.0, conv_std).expect("valid std");
    for layer in &mut params.conv {
        layer.weight.iter_mut().for_each(|w| *w = conv_dist.sample(&mut rng));
    }

    // Projections start close to identity on the current frame.
    let jitter = Normal::new(0.0, 0.05).expect("valid std");
    let current = config.proj_kernel - 1;
    for p in [&mut params.query, &mut params.key, &mut params.value] {
        for (i, w) in p.weight.iter_mut().enumerate() {
            let base = if i / d == current { 1.0 } else { 0.0 };
            *w = base + jitter.sample(&mut rng);
        }
    }
    let hd = config.head_dim();
    for head in &mut params.head_out {
        for (i, w) in head.iter_mut().enumerate() {
            let base = if i / hd == i % hd { 1.0 } else { 0.0 };
            *w = base + jitter.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Candidate normal representations: `representations[i] = center + residuals[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSet {
    pub candidates: Vec<ClassId>,
    pub representations: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

impl NormalSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Trained block: configuration, parameters and the per-class centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RrbModel {
    pub params: RrbParams,
    pub centers: ClusterCenters,
}

impl RrbModel {
    pub fn config(&self) -> &RrbConfig {
        &self.params.config
    }

    pub fn reconstruct(&self, candidates: &[ClassId], context: Frames<'_>) -> Result<NormalSet> {
        reconstruct_normals(&self.params, &self.centers, candidates, context)
    }

    /// The same model with a zero residual head, i.e. static prototypes.
    pub fn centers_only(&self) -> Self {
        let mut params = self.params.clone();
        params.res_weight.iter_mut().for_each(|w| *w = 0.0);
        params.res_bias.iter_mut().for_each(|w| *w = 0.0);
        Self { params, centers: self.centers.clone() }
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    conv: conv::ConvCache,
    attn: attention::AttnCache,
}

impl Trace {
    /// Rectifier on/off pattern of every convolution unit.
    pub(crate) fn activation_pattern(&self) -> Vec<bool> {
        self.conv.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }
}

/// Residuals for each query; `None` trace when the context is empty (the
/// residual is then zero).
pub(crate) fn forward(params: &RrbParams, context: Frames<'_>, queries: &[&[f64]]) -> (Option<Trace>, Vec<Vec<f64>>) {
    let cfg = &params.config;
    if context.is_empty() {
        return (None, vec![vec![0.0; cfg.dim]; queries.len()]);
    }
    let ctx = context.tail(cfg.context_span());
    let conv = conv::forward(params, ctx);
    let (attn, residuals) = attention::forward(params, conv.output_frames(cfg.dim), queries);
    (Some(Trace { conv, attn }), residuals)
}

/// Accumulates parameter gradients given `d loss / d residual` for each query.
pub(crate) fn backward(params: &RrbParams, trace: &Trace, d_residuals: &[Vec<f64>], grads: &mut RrbParams) {
    let d_tail = attention::backward(params, &trace.attn, d_residuals, grads);
    let cfg = &params.config;
    let frames = trace.conv.frames;
    let mut d_conv_out = vec![0.0; frames * cfg.dim];
    let start = (frames - trace.attn.window) * cfg.dim;
    d_conv_out[start..].copy_from_slice(&d_tail);
    conv::backward(params, &trace.conv, d_conv_out, grads);
}

/// One normal representation per candidate, in candidate order.
pub fn reconstruct_normals(
    params: &RrbParams,
    centers: &ClusterCenters,
    candidates: &[ClassId],
    context: Frames<'_>,
) -> Result<NormalSet> {
    let dim = params.config.dim;
    if context.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: context.dim() });
    }
    let queries = candidates.iter().map(|&c| centers.require(c)).collect::<Result<Vec<_>>>()?;
    if let Some(q) = queries.iter().find(|q| q.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: q.len() });
    }
    let (_, residuals) = forward(params, context, &queries);
    let representations =
        queries.iter().zip(&residuals).map(|(c, r)| c.iter().zip(r).map(|(a, b)| a + b).collect()).collect();
    Ok(NormalSet { candidates: candidates.to_vec(), representations, residuals })
}
