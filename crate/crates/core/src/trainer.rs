//! The adapt-by-pruning training loop.
//!
//! Each step samples a mini-batch, runs the soft-masked forward pass, moves
//! the mask logits along the dual-temperature gradient plus a constant
//! sparsity push, and takes an exact SGD step on the head. The loop stops
//! early as soon as the fraction of non-positive logits exceeds the target
//! sparsity; the returned mask is `1[θ > 0]`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binary_mask::BinaryMask;
use crate::error::{Error, Result};
use crate::mask::{recovery_stats, update_theta, MaskLogits, MaskMode, RecoveryStats, SparsityPenaltySchedule, Temperatures, RECOVERY_CLAMP};
use crate::model::{Batch, Dataset, LayerMask, MaskSource, MaskedNetwork, Mlp};
use crate::ops::sigmoid_scalar;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Step size `α_i` for the mask logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant { alpha: f64 },
    /// `c / √i`, the rate under which the convergence bound holds.
    TheoremRate { c: f64 },
}

impl AlphaSchedule {
    /// `α_i` for 1-based step `i`.
    pub fn alpha(&self, step: usize) -> f64 {
        match *self {
            AlphaSchedule::Constant { alpha } => alpha,
            AlphaSchedule::TheoremRate { c } => c / (step.max(1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            AlphaSchedule::Constant { alpha } => alpha,
            AlphaSchedule::TheoremRate { c } => c,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Parameter(format!("alpha schedule must be positive: {self:?}")))
        }
    }
}

/// Normal initialisation of `θ_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaInit {
    pub mean: f64,
    pub std: f64,
}

impl ThetaInit {
    /// Mean 0.01 with variance 0.001.
    pub const LITERAL_VARIANCE: ThetaInit = ThetaInit {
        mean: 0.01,
        std: 0.031_622_776_601_683_79,
    };

    /// Mean 0.01 with standard deviation 0.001 (almost surely all positive).
    pub const NARROW: ThetaInit = ThetaInit { mean: 0.01, std: 0.001 };
}

impl Default for ThetaInit {
    fn default() -> Self {
        Self::LITERAL_VARIANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Stop once the pruned fraction exceeds this; `None` never stops early.
    pub target_sparsity: Option<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub alpha: AlphaSchedule,
    /// Head learning rate `β`.
    pub beta: f64,
    pub gamma: SparsityPenaltySchedule,
    pub theta_init: ThetaInit,
    pub temperatures: Temperatures,
    pub allow_recovery: bool,
    pub seed: u64,
    /// Log a record every this many steps (and on the final step).
    pub eval_every: usize,
    /// Experimental: run the forward pass with the hard mask and route the
    /// gradient through the small-temperature sigmoid (straight-through).
    pub hard_forward: bool,
    /// Extension: after the loop, keep exactly the top `⌈(1 − s)·d⌉` logits.
    pub exact_sparsity_projection: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            target_sparsity: None,
            steps: 2000,
            batch_size: 32,
            alpha: AlphaSchedule::Constant { alpha: 0.1 },
            beta: 0.01,
            gamma: SparsityPenaltySchedule::default(),
            theta_init: ThetaInit::default(),
            temperatures: Temperatures::default(),
            allow_recovery: true,
            seed: 0,
            eval_every: 100,
            hard_forward: false,
            exact_sparsity_projection: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Parameter("steps, batch_size and eval_every must be >= 1".into()));
        }
        if let Some(s) = self.target_sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Parameter(format!("target sparsity {s} outside [0, 1)")));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Parameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.theta_init.std >= 0.0) {
            return Err(Error::Parameter("theta init std must be >= 0".into()));
        }
        self.alpha.validate()?;
        self.gamma.validate()
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub train_loss_soft: f64,
    pub eval_loss_hard: Option<f64>,
    pub task_metric: Option<f64>,
    pub sparsity: f64,
    pub recovered_fraction: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    records: Vec<StepRecord>,
}

impl RunMetrics {
    /// Appends a record; steps must be strictly increasing.
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Usage(format!(
                    "metric steps must increase: {} after {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut m = RunMetrics::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            m.push(serde_json::from_str(line)?)?;
        }
        Ok(m)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Result of [`adapt_by_pruning`].
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub mask: BinaryMask,
    pub head: Mlp,
    pub metrics: RunMetrics,
    pub steps_run: usize,
    /// Whether the loop ended through the sparsity break.
    pub stopped_on_sparsity: bool,
    /// Sparsity of the returned mask.
    pub sparsity: f64,
    /// `max |θ_i|` over every iterate, the `M` of the convergence bound.
    pub max_abs_theta: f64,
    pub recovery: RecoveryStats,
}

/// Draws `θ_0 ~ N(mean, std²)` elementwise.
pub fn init_theta(shape: &[usize], init: ThetaInit, temperatures: Temperatures, rng: &mut Rng) -> Result<MaskLogits> {
    if !(init.std >= 0.0) {
        return Err(Error::Parameter("theta init std must be >= 0".into()));
    }
    MaskLogits::new(rng.normal_tensor(shape, init.mean, init.std), temperatures)
}

fn first_non_finite(net: &MaskedNetwork, grads: &crate::model::Gradients) -> Option<String> {
    for (layer, g) in net.base().iter().zip(&grads.theta) {
        if !g.is_finite() || !layer.logits().theta().is_finite() {
            return Some(layer.name().to_string());
        }
    }
    None
}

/// Learns a binary mask over `net`'s frozen base while training its head.
///
/// `monitor`, when given, is evaluated with the hard mask at every logged step.
pub fn adapt_by_pruning(
    net: &mut MaskedNetwork,
    train: &Dataset,
    monitor: Option<&Dataset>,
    config: &TrainingConfig,
) -> Result<AdaptOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = Rng::seed_from(config.seed);
    let temps = config.temperatures;
    for logits in net.all_logits_mut() {
        *logits = init_theta(logits.shape(), config.theta_init, temps, &mut rng)?;
    }

    let mode = if config.hard_forward { MaskMode::Hard } else { MaskMode::Soft };
    let mut metrics = RunMetrics::default();
    let mut max_abs_theta: f64 = 0.0;
    let mut stopped = false;
    let mut steps_run = 0;

    for step in 1..=config.steps {
        let batch = train.sample(config.batch_size, &mut rng);
        let out = net.forward(&batch, MaskSource::Logits(mode))?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, layer: None });
        }
        let grads = net.backward(&out.cache, &batch)?;
        if let Some(layer) = first_non_finite(net, &grads) {
            return Err(Error::NonFiniteLoss { step, layer: Some(layer) });
        }

        let alpha = config.alpha.alpha(step);
        let gamma = config.gamma.gamma(step);
        for (i, layer) in net.base_mut().iter_mut().enumerate() {
            update_theta(layer.logits_mut(), &grads.theta[i], alpha, gamma, config.allow_recovery)?;
            if let (Some(bl), Some(g)) = (layer.bias_logits_mut(), &grads.bias_theta[i]) {
                update_theta(bl, g, alpha, gamma, config.allow_recovery)?;
            }
        }
        net.head.sgd_step(&grads.head, config.beta);

        for logits in net.all_logits() {
            let m = logits.theta().data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            max_abs_theta = max_abs_theta.max(m);
        }
        steps_run = step;
        let sparsity = net.logit_sparsity();
        stopped = config.target_sparsity.is_some_and(|s| sparsity > s);

        if step % config.eval_every == 0 || stopped || step == config.steps {
            let eval = monitor.map(|m| net.evaluate(m)).transpose()?;
            let recovery = RecoveryStats::combine(net.all_logits().into_iter().map(recovery_stats));
            metrics.push(StepRecord {
                step,
                train_loss_soft: out.loss,
                eval_loss_hard: eval.map(|e| e.loss),
                task_metric: eval.and_then(|e| e.metric),
                sparsity,
                recovered_fraction: recovery.recovered_fraction,
                gamma,
                alpha,
            })?;
        }
        if stopped {
            break;
        }
    }

    if config.exact_sparsity_projection {
        if let Some(s) = config.target_sparsity {
            project_to_sparsity(net, s)?;
        }
    }

    let mask = net.binarize();
    let sparsity = crate::binary_mask::Sparsity::sparsity(&mask);
    let recovery = RecoveryStats::combine(net.all_logits().into_iter().map(recovery_stats));
    Ok(AdaptOutcome {
        mask,
        head: net.head.clone(),
        metrics,
        steps_run,
        stopped_on_sparsity: stopped,
        sparsity,
        max_abs_theta,
        recovery,
    })
}

/// Keeps exactly the `⌈(1 − s)·d⌉` largest logits positive (ties by position).
fn project_to_sparsity(net: &mut MaskedNetwork, s: f64) -> Result<()> {
    let values: Vec<f64> = net
        .all_logits()
        .iter()
        .flat_map(|l| l.theta().data().iter().copied())
        .collect();
    let d = values.len();
    let keep = ((1.0 - s) * d as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut kept = vec![false; d];
    for &i in &order[..keep.min(d)] {
        kept[i] = true;
    }
    let mut offset = 0;
    for logits in net.all_logits_mut() {
        let mut theta = logits.theta().clone();
        for (j, v) in theta.data_mut().iter_mut().enumerate() {
            *v = if kept[offset + j] { v.max(RECOVERY_CLAMP) } else { v.min(-RECOVERY_CLAMP) };
        }
        offset += theta.len();
        logits.set_theta(theta)?;
    }
    Ok(())
}

/// Settings for head-only training under a fixed mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for HeadTrainingConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            beta: 0.01,
            seed: 0,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrainingOutcome {
    pub head: Mlp,
    pub metrics: RunMetrics,
}

/// SGD on the head alone with `mask` applied to the frozen base.
///
/// Returns the trained head; `net` itself is untouched.
pub fn continue_head_training(
    net: &MaskedNetwork,
    mask: &BinaryMask,
    train: &Dataset,
    monitor: Option<&Dataset>,
    config: &HeadTrainingConfig,
) -> Result<HeadTrainingOutcome> {
    net.check_mask(mask)?;
    if config.steps > 0 && train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut work = net.clone();
    let mut rng = Rng::seed_from(config.seed);
    let mut metrics = RunMetrics::default();
    let sparsity = crate::binary_mask::Sparsity::sparsity(mask);
    for step in 1..=config.steps {
        let batch = train.sample(config.batch_size, &mut rng);
        let loss = head_step(&mut work, mask, &batch, config.beta)
            .map_err(|e| match e {
                Error::NonFiniteLoss { layer, .. } => Error::NonFiniteLoss { step, layer },
                other => other,
            })?;
        if step % config.eval_every.max(1) == 0 || step == config.steps {
            let eval = monitor.map(|m| work.evaluate_with(m, MaskSource::Binary(mask))).transpose()?;
            metrics.push(StepRecord {
                step,
                train_loss_soft: loss,
                eval_loss_hard: eval.map(|e| e.loss),
                task_metric: eval.and_then(|e| e.metric),
                sparsity,
                recovered_fraction: 0.0,
                gamma: 0.0,
                alpha: 0.0,
            })?;
        }
    }
    Ok(HeadTrainingOutcome {
        head: work.head,
        metrics,
    })
}

/// One SGD step on the head of `net` under a fixed binary mask; returns the batch loss.
pub fn head_step(net: &mut MaskedNetwork, mask: &BinaryMask, batch: &Batch, beta: f64) -> Result<f64> {
    let out = net.forward(batch, MaskSource::Binary(mask))?;
    if !out.loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0, layer: None });
    }
    let grads = net.backward(&out.cache, batch)?;
    net.head.sgd_step(&grads.head, beta);
    Ok(out.loss)
}

/// Convergence bound and the constants it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremBound {
    pub bound: f64,
    /// `C = t_l t_s (1/(t_l t_s) − 2 g(t_l) g(t_s) + t_l t_s / 16²)`.
    pub c_const: f64,
    pub g_max_large: f64,
    pub g_max_small: f64,
}

/// `g_max(t) = σ(tM)(1 − σ(tM))`.
pub fn g_max(t: f64, m: f64) -> f64 {
    let s = sigmoid_scalar(m, t);
    s * (1.0 - s)
}

/// `1/(c√T) + c G² (1 + C)(1 + ln T) / T`.
pub fn theorem1_bound(t_large: f64, t_small: f64, m: f64, g: f64, c: f64, steps: usize) -> Result<TheoremBound> {
    for (name, v) in [("t_large", t_large), ("t_small", t_small), ("M", m), ("G", g), ("c", c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    if steps == 0 {
        return Err(Error::Parameter("T must be >= 1".into()));
    }
    let gl = g_max(t_large, m);
    let gs = g_max(t_small, m);
    let tt = t_large * t_small;
    let c_const = tt * (1.0 / tt - 2.0 * gl * gs + tt / 256.0);
    let t = steps as f64;
    let bound = 1.0 / (c * t.sqrt()) + c * g * g * (1.0 + c_const) * (1.0 + t.ln()) / t;
    Ok(TheoremBound {
        bound,
        c_const,
        g_max_large: gl,
        g_max_small: gs,
    })
}

/// Empirical `max ‖∇_v ℓ(z; v, p)‖` over random examples `z` and masks `v ∈ [0,1]^d`.
///
/// A lower estimate of the gradient bound `G`; the running maximum is
/// non-decreasing in `sample_count` for a fixed `rng` seed.
pub fn estimate_grad_bound(net: &MaskedNetwork, data: &Dataset, sample_count: usize, rng: &mut Rng) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::Parameter("sample_count must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut best: f64 = 0.0;
    for _ in 0..sample_count {
        let z = data.select(&[rng.index(data.len())]);
        let mut uniform = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform()).collect()).expect("shape")
        };
        let values: Vec<LayerMask> = net
            .base()
            .iter()
            .map(|l| LayerMask {
                weight: uniform(l.w0().shape()),
                bias: l.bias_logits().map(|b| uniform(b.shape())),
            })
            .collect();
        let out = net.forward(&z, MaskSource::Values(&values))?;
        let grads = net.backward(&out.cache, &z)?;
        let sq: f64 = grads
            .mask
            .iter()
            .chain(grads.bias_mask.iter().flatten())
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum();
        best = best.max(sq.sqrt());
    }
    Ok(best)
}

/// Full-data soft loss `L_t(θ)` at the forward temperature.
pub fn relaxed_loss(net: &MaskedNetwork, data: &Dataset) -> Result<f64> {
    Ok(net.forward(data, MaskSource::Logits(MaskMode::Soft))?.loss)
}

/// Full-batch gradient descent on `θ` with the exact gradient of `L_{t_large}`.
///
/// The head is held fixed. Returns the final relaxed loss; `net`'s logits are
/// left at the last iterate.
pub fn minimize_relaxed_loss(net: &mut MaskedNetwork, data: &Dataset, steps: usize, alpha: f64) -> Result<f64> {
    let t_large = net
        .all_logits()
        .first()
        .map(|l| l.temperatures().large())
        .ok_or_else(|| Error::Usage("network has no maskable tensors".into()))?;
    let exact = Temperatures::single(t_large)?;
    let original: Vec<Temperatures> = net.all_logits().iter().map(|l| l.temperatures()).collect();
    net.set_temperatures(exact);
    let mut best = f64::INFINITY;
    for _ in 0..steps {
        let out = net.forward(data, MaskSource::Logits(MaskMode::Soft))?;
        best = best.min(out.loss);
        let grads = net.backward(&out.cache, data)?;
        for (i, layer) in net.base_mut().iter_mut().enumerate() {
            let theta: Tensor = layer.logits().theta().zip_map(&grads.theta[i], "descent", |t, g| t - alpha * g)?;
            layer.logits_mut().set_theta(theta)?;
            if let (Some(bl), Some(g)) = (layer.bias_logits_mut(), &grads.bias_theta[i]) {
                let theta = bl.theta().zip_map(g, "descent", |t, g| t - alpha * g)?;
                bl.set_theta(theta)?;
            }
        }
    }
    let last = relaxed_loss(net, data)?;
    for (logits, t) in net.all_logits_mut().into_iter().zip(original) {
        logits.set_temperatures(t);
    }
    Ok(best.min(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary_mask::Sparsity;
    use crate::model::{BaseLayer, LossKind};
    use crate::ops::Activation;

    fn regression_setup(seed: u64) -> (MaskedNetwork, Dataset) {
        let mut rng = Rng::seed_from(seed);
        let t = Temperatures::default();
        let base = vec![
            BaseLayer::new("base.0", rng.normal_tensor(&[4, 8], 0.0, 0.7), Tensor::zeros(&[8]), Activation::Relu, t, false).unwrap(),
        ];
        let head = Mlp::init(&[8, 8, 1], &mut rng);
        let net = MaskedNetwork::new(base, head, LossKind::SquaredError).unwrap();
        let x = rng.normal_tensor(&[64, 4], 0.0, 1.0);
        let y = Tensor::new(vec![64, 1], (0..64).map(|r| x.row(r)[0] - 0.5 * x.row(r)[2]).collect()).unwrap();
        (net, Batch::new(x, y).unwrap())
    }

    #[test]
    fn zero_std_init_is_constant() {
        let mut rng = Rng::seed_from(0);
        let l = init_theta(&[5, 5], ThetaInit { mean: 0.01, std: 0.0 }, Temperatures::default(), &mut rng).unwrap();
        assert!(l.theta().data().iter().all(|&v| v == 0.01));
    }

    #[test]
    fn default_init_moments() {
        let mut rng = Rng::seed_from(123);
        let l = init_theta(&[100_000], ThetaInit::default(), Temperatures::default(), &mut rng).unwrap();
        let d = l.theta().data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (0.001f64 / n).sqrt();
        assert!((mean - 0.01).abs() < 3.0 * se, "mean {mean}");
        assert!((var - 0.001).abs() < 0.1 * 0.001, "var {var}");
    }

    #[test]
    fn heavy_penalty_stops_just_above_target() {
        let (mut net, data) = regression_setup(1);
        let config = TrainingConfig {
            target_sparsity: Some(0.3),
            steps: 500,
            alpha: AlphaSchedule::Constant { alpha: 1e-4 },
            gamma: SparsityPenaltySchedule::constant(1e-4).unwrap(),
            theta_init: ThetaInit::NARROW,
            ..TrainingConfig::default()
        };
        let out = adapt_by_pruning(&mut net, &data, None, &config).unwrap();
        assert!(out.stopped_on_sparsity);
        assert!(out.steps_run < 500);
        assert!(out.sparsity > 0.3 && out.sparsity < 0.45, "{}", out.sparsity);
    }

    #[test]
    fn zero_target_without_penalty_runs_full_budget() {
        let (mut net, data) = regression_setup(2);
        let config = TrainingConfig {
            target_sparsity: None,
            steps: 120,
            theta_init: ThetaInit::NARROW,
            eval_every: 40,
            ..TrainingConfig::default()
        };
        let out = adapt_by_pruning(&mut net, &data, Some(&data), &config).unwrap();
        assert_eq!(out.steps_run, 120);
        assert!(!out.stopped_on_sparsity);
        let steps: Vec<usize> = out.metrics.records().iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![40, 80, 120]);
    }

    #[test]
    fn frozen_base_untouched_by_training() {
        let (mut net, data) = regression_setup(3);
        let before: Vec<Vec<u64>> = net.base().iter().map(|l| l.w0().data().iter().map(|v| v.to_bits()).collect()).collect();
        let config = TrainingConfig {
            target_sparsity: Some(0.5),
            gamma: SparsityPenaltySchedule::constant(1e-3).unwrap(),
            steps: 300,
            ..TrainingConfig::default()
        };
        adapt_by_pruning(&mut net, &data, None, &config).unwrap();
        let after: Vec<Vec<u64>> = net.base().iter().map(|l| l.w0().data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn exact_projection_hits_count() {
        let (mut net, data) = regression_setup(4);
        let config = TrainingConfig {
            target_sparsity: Some(0.25),
            steps: 400,
            gamma: SparsityPenaltySchedule::constant(5e-3).unwrap(),
            theta_init: ThetaInit::NARROW,
            exact_sparsity_projection: true,
            ..TrainingConfig::default()
        };
        let out = adapt_by_pruning(&mut net, &data, None, &config).unwrap();
        let d = out.mask.total();
        assert_eq!(out.mask.pruned(), d - ((0.75 * d as f64).ceil() as usize));
    }

    #[test]
    fn head_training_zero_steps_is_identity() {
        let (net, data) = regression_setup(5);
        let mask = net.binarize();
        let cfg = HeadTrainingConfig { steps: 0, ..HeadTrainingConfig::default() };
        let out = continue_head_training(&net, &mask, &data, None, &cfg).unwrap();
        assert_eq!(out.head, net.head);
    }

    #[test]
    fn g_max_closed_form() {
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((g_max(1.0, 1.0) - s * (1.0 - s)).abs() < 1e-15);
        assert!((g_max(1.0, 1.0) - 0.196_611_933_241_481_85).abs() < 1e-12);
    }

    #[test]
    fn bound_limits_at_small_m() {
        for t in [1.0, 2.0, 10.0] {
            let b = theorem1_bound(t, t, 1e-9, 1.0, 1.0, 10).unwrap();
            assert!((b.g_max_large - 0.25).abs() < 1e-9);
            let expect = t * t * (1.0 / (t * t) - 0.125 + t * t / 256.0);
            assert!((b.c_const - expect).abs() < 1e-6 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn bound_rejects_nonpositive_inputs() {
        assert!(theorem1_bound(0.0, 1.0, 1.0, 1.0, 1.0, 10).is_err());
        assert!(theorem1_bound(1.0, 1.0, 1.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn grad_bound_running_max() {
        let (net, data) = regression_setup(6);
        let mut prev = 0.0;
        for n in [1, 5, 20, 60] {
            let g = estimate_grad_bound(&net, &data, n, &mut Rng::seed_from(9)).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn grad_bound_zero_for_zero_network() {
        let mut rng = Rng::seed_from(7);
        let base = vec![BaseLayer::new("base.0", Tensor::zeros(&[3, 1]), Tensor::zeros(&[1]), Activation::Identity, Temperatures::default(), false).unwrap()];
        let net = MaskedNetwork::new(base, Mlp::default(), LossKind::SquaredError).unwrap();
        let data = Batch::new(rng.normal_tensor(&[10, 3], 0.0, 1.0), Tensor::filled(&[10, 1], 0.3)).unwrap();
        assert_eq!(estimate_grad_bound(&net, &data, 50, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn metrics_jsonl_round_trip_and_order() {
        let mut m = RunMetrics::default();
        let rec = |step| StepRecord {
            step,
            train_loss_soft: 0.5,
            eval_loss_hard: None,
            task_metric: Some(0.25),
            sparsity: 0.1,
            recovered_fraction: 0.0,
            gamma: 1e-4,
            alpha: 0.1,
        };
        m.push(rec(1)).unwrap();
        m.push(rec(5)).unwrap();
        assert!(m.push(rec(5)).is_err());
        let back = RunMetrics::from_jsonl(&m.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
