//! Loss, gradient descent with cosine-annealed learning rate, and a
//! finite-difference gradient checker.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, init_params, RrbConfig, RrbModel, RrbParams};
use crate::dataset::{cluster_centers, ClusterCenters, TrainingSample};
use crate::{math, Error, Result};

/// Squared Euclidean distance.
pub fn loss(f_normal: &[f64], f_action: &[f64]) -> f64 {
    math::squared_distance(f_normal, f_action)
}

/// Single-query forward pass: the sample's own class is the only candidate.
fn sample_loss(params: &RrbParams, center: &[f64], sample: &TrainingSample) -> (f64, Option<super::Trace>, Vec<f64>) {
    let (trace, residuals) = forward(params, sample.context.as_frames(), &[center]);
    let normal: Vec<f64> = center.iter().zip(&residuals[0]).map(|(c, r)| c + r).collect();
    (loss(&normal, &sample.target_feature), trace, normal)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(params: &RrbParams, center: &[f64], sample: &TrainingSample) -> (f64, RrbParams) {
    let (value, trace, normal) = sample_loss(params, center, sample);
    let mut grads = params.zeros_like();
    if let Some(trace) = trace {
        let d_res: Vec<f64> = normal.iter().zip(&sample.target_feature).map(|(f, y)| 2.0 * (f - y)).collect();
        backward(params, &trace, &[d_res], &mut grads);
    }
    (value, grads)
}

/// One plain gradient-descent step on a single sample; returns the loss
/// before the update.
pub fn train_step(params: &mut RrbParams, centers: &ClusterCenters, sample: &TrainingSample, lr: f64) -> Result<f64> {
    let center = centers.require(sample.target_class)?;
    let (value, grads) = loss_and_gradient(params, center, sample);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { loss: value, step: 0 });
    }
    params.add_scaled(&grads, -lr);
    Ok(value)
}

/// `lr0 * 0.5 * (1 + cos(pi * epoch / epochs))`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + math::cos(core::f64::consts::PI * epoch as f64 / epochs as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 8, lr0: 0.001, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RrbModel,
    /// Mean sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent over `samples`. Cluster centers are the
/// per-class means of the samples' target features.
pub fn train(samples: &[TrainingSample], config: RrbConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let centers = cluster_centers(samples.iter().map(|s| (s.target_class, s.target_feature.as_slice())));
    train_with_centers(samples, config, centers, opts)
}

pub(crate) fn train_with_centers(
    samples: &[TrainingSample],
    config: RrbConfig,
    centers: ClusterCenters,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let mut params = init_params(config, opts.seed)?;
    for s in samples {
        if s.target_feature.len() != config.dim {
            return Err(Error::DimensionMismatch { expected: config.dim, found: s.target_feature.len() });
        }
        centers.require(s.target_class)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut step = 0;

    for epoch in 0..opts.epochs {
        let lr = cosine_lr(opts.lr0, epoch, opts.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let sample = &samples[i];
                let center = centers.require(sample.target_class)?;
                let (value, g) = loss_and_gradient(&params, center, sample);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { loss: value, step });
                }
                total += value;
                grads.add_scaled(&g, 1.0);
            }
            params.add_scaled(&grads, -lr / batch.len() as f64);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { loss: f64::NAN, step });
            }
            step += 1;
        }
        let mean = total / samples.len() as f64;
        log::info!("epoch {epoch}: lr {lr:.6} mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model: RrbModel { params, centers }, epoch_losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a rectifier, where the central
    /// difference is not a valid derivative estimate.
    pub skipped: usize,
}

const FD_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient with central differences for every
/// parameter.
pub fn gradient_check(params: &RrbParams, center: &[f64], sample: &TrainingSample) -> GradCheckReport {
    gradient_check_with(params, center, sample, loss_and_gradient)
}

/// [`gradient_check`] against an arbitrary analytic gradient.
pub fn gradient_check_with<F>(
    params: &RrbParams,
    center: &[f64],
    sample: &TrainingSample,
    analytic: F,
) -> GradCheckReport
where
    F: Fn(&RrbParams, &[f64], &TrainingSample) -> (f64, RrbParams),
{
    let (_, grads) = analytic(params, center, sample);
    let base_pattern = activations(sample_loss(params, center, sample).1);
    let grad_values: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut flat = 0;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].len();
        for i in 0..len {
            let original = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = original + FD_STEP;
            let (plus, plus_trace, _) = sample_loss(&probe, center, sample);
            probe.tensors_mut()[t][i] = original - FD_STEP;
            let (minus, minus_trace, _) = sample_loss(&probe, center, sample);
            probe.tensors_mut()[t][i] = original;

            if activations(plus_trace) != base_pattern || activations(minus_trace) != base_pattern {
                report.skipped += 1;
            } else {
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = grad_values[flat];
                let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
                report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
                report.checked += 1;
            }
            flat += 1;
        }
    }
    report
}

fn activations(trace: Option<super::Trace>) -> Vec<bool> {
    trace.map(|t| t.activation_pattern()).unwrap_or_default()
}
