//! Mask logits and the dual-temperature sigmoid relaxation.
//!
//! A real-valued logit tensor `θ` stands in for a binary mask. The forward
//! pass uses the sharp mask `σ(t_large·θ)`; gradients with respect to `θ` are
//! routed through the flatter `σ(t_small·θ)` so they do not vanish once the
//! forward mask saturates. Binarisation keeps exactly the entries with
//! `θ > 0`.

use serde::{Deserialize, Serialize};

use crate::binary_mask::{MaskBits, Sparsity};
use crate::error::{Error, Result};
use crate::ops::{sigmoid, sigmoid_grad, sigmoid_scalar};
use crate::tensor::Tensor;

/// Clamp applied to previously pruned logits when recovery is disabled.
pub const RECOVERY_CLAMP: f64 = 1e-6;

/// Forward (`large`) and backward (`small`) sigmoid temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    large: f64,
    small: f64,
}

impl Temperatures {
    pub fn new(large: f64, small: f64) -> Result<Self> {
        if !(small > 0.0 && small.is_finite() && large.is_finite()) || large < small {
            return Err(Error::Parameter(format!(
                "temperatures must satisfy t_large >= t_small > 0, got t_large={large}, t_small={small}"
            )));
        }
        Ok(Self { large, small })
    }

    /// A single temperature for both passes: the exact gradient of the relaxation.
    pub fn single(t: f64) -> Result<Self> {
        Self::new(t, t)
    }

    pub fn large(&self) -> f64 {
        self.large
    }

    pub fn small(&self) -> f64 {
        self.small
    }
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            large: 100.0,
            small: 1.0,
        }
    }
}

/// Which temperature a soft mask is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPass {
    /// `σ(t_large·θ)`, used in the forward pass.
    Forward,
    /// `t_small·σ(t_small·θ)(1 − σ(t_small·θ))`, used to route gradients.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Sigmoid relaxation at the forward temperature.
    Soft,
    /// `1[θ > 0]`.
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    theta: Tensor,
    temperatures: Temperatures,
    ever_negative: Vec<bool>,
}

impl MaskLogits {
    /// Wraps `theta`; entries that already are non-positive count as pruned once.
    pub fn new(theta: Tensor, temperatures: Temperatures) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Parameter("mask logits must be finite".into()));
        }
        let ever_negative = theta.data().iter().map(|&v| v <= 0.0).collect();
        Ok(Self {
            theta,
            temperatures,
            ever_negative,
        })
    }

    pub fn theta(&self) -> &Tensor {
        &self.theta
    }

    pub fn shape(&self) -> &[usize] {
        self.theta.shape()
    }

    pub fn temperatures(&self) -> Temperatures {
        self.temperatures
    }

    pub fn set_temperatures(&mut self, temperatures: Temperatures) {
        self.temperatures = temperatures;
    }

    /// Entries that have been pruned (`θ ≤ 0`) at some point.
    pub fn ever_negative(&self) -> &[bool] {
        &self.ever_negative
    }

    /// Replaces `θ` wholesale without touching the pruning history.
    ///
    /// Intended for tests and analyses (finite differences, sign-preserving
    /// rescaling); training goes through [`update_theta`].
    pub fn set_theta(&mut self, theta: Tensor) -> Result<()> {
        self.theta.check_same_shape(&theta, "set_theta")?;
        if !theta.is_finite() {
            return Err(Error::Parameter("mask logits must be finite".into()));
        }
        self.theta = theta;
        Ok(())
    }
}

impl Sparsity for MaskLogits {
    fn total(&self) -> usize {
        self.theta.len()
    }

    fn pruned(&self) -> usize {
        self.theta.data().iter().filter(|&&v| v <= 0.0).count()
    }
}

/// The relaxed mask (forward) or the gradient-routing tensor (backward).
pub fn soft_mask(logits: &MaskLogits, which: MaskPass) -> Tensor {
    let t = logits.temperatures;
    match which {
        MaskPass::Forward => sigmoid(&logits.theta, t.large),
        MaskPass::Backward => sigmoid_grad(&logits.theta, t.small),
    }
    .expect("temperatures validated at construction")
}

/// The `{0,1}` mask `1[θ > 0]` as floats.
pub fn hard_mask(logits: &MaskLogits) -> Tensor {
    logits.theta.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// `w0 ⊙ mask` with the soft (`σ(t_large θ)`) or hard (`1[θ > 0]`) mask.
pub fn masked_weights(w0: &Tensor, logits: &MaskLogits, mode: MaskMode) -> Result<Tensor> {
    w0.check_same_shape(&logits.theta, "masked_weights")?;
    let t = logits.temperatures.large;
    w0.zip_map(&logits.theta, "masked_weights", |w, th| match mode {
        MaskMode::Soft => w * sigmoid_scalar(th, t),
        MaskMode::Hard => {
            if th > 0.0 {
                w
            } else {
                0.0
            }
        }
    })
}

/// Dual-temperature `θ` gradient: the loss gradient taken at the forward mask,
/// multiplied elementwise by the derivative of the small-temperature sigmoid.
pub fn theta_gradient(loss_grad_wrt_mask: &Tensor, logits: &MaskLogits) -> Result<Tensor> {
    let routing = soft_mask(logits, MaskPass::Backward);
    loss_grad_wrt_mask.hadamard(&routing)
}

/// One regularised step: `θ ← θ − α·grad − γ·1`.
///
/// When `allow_recovery` is false, every entry that has ever been pruned is
/// held at or below `-RECOVERY_CLAMP`.
pub fn update_theta(
    logits: &mut MaskLogits,
    grad: &Tensor,
    alpha: f64,
    gamma: f64,
    allow_recovery: bool,
) -> Result<()> {
    logits.theta.check_same_shape(grad, "update_theta")?;
    if !(alpha > 0.0) || !(gamma >= 0.0) {
        return Err(Error::Parameter(format!(
            "need alpha > 0 and gamma >= 0, got alpha={alpha}, gamma={gamma}"
        )));
    }
    for ((th, g), neg) in logits
        .theta
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(logits.ever_negative.iter_mut())
    {
        *th -= alpha * g + gamma;
        if *th <= 0.0 {
            *neg = true;
        }
        if !allow_recovery && *neg {
            *th = th.min(-RECOVERY_CLAMP);
        }
    }
    Ok(())
}

/// `1[θ > 0]`, bit-packed.
pub fn binarize(logits: &MaskLogits) -> MaskBits {
    let bits: Vec<bool> = logits.theta.data().iter().map(|&v| v > 0.0).collect();
    MaskBits::from_bools(logits.shape(), &bits).expect("shape matches theta")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryStats {
    pub recovered_count: usize,
    pub surviving_count: usize,
    /// `recovered_count / surviving_count`, 0 when nothing survives.
    pub recovered_fraction: f64,
}

impl RecoveryStats {
    pub fn combine(items: impl IntoIterator<Item = RecoveryStats>) -> RecoveryStats {
        let (rec, surv) = items
            .into_iter()
            .fold((0, 0), |(r, s), x| (r + x.recovered_count, s + x.surviving_count));
        RecoveryStats {
            recovered_count: rec,
            surviving_count: surv,
            recovered_fraction: if surv == 0 { 0.0 } else { rec as f64 / surv as f64 },
        }
    }
}

/// Entries that were pruned at some step and are alive now.
pub fn recovery_stats(logits: &MaskLogits) -> RecoveryStats {
    let mut recovered = 0;
    let mut surviving = 0;
    for (&th, &neg) in logits.theta.data().iter().zip(&logits.ever_negative) {
        if th > 0.0 {
            surviving += 1;
            if neg {
                recovered += 1;
            }
        }
    }
    RecoveryStats::combine([RecoveryStats {
        recovered_count: recovered,
        surviving_count: surviving,
        recovered_fraction: 0.0,
    }])
}

/// Per-step weight `γ_i` of the sparsity penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SparsityPenaltySchedule {
    Constant { gamma: f64 },
    /// `γ · min(1, i / ramp_steps)`.
    LinearRamp { gamma: f64, ramp_steps: usize },
}

impl SparsityPenaltySchedule {
    pub fn constant(gamma: f64) -> Result<Self> {
        let s = SparsityPenaltySchedule::Constant { gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn linear_ramp(gamma: f64, ramp_steps: usize) -> Result<Self> {
        let s = SparsityPenaltySchedule::LinearRamp { gamma, ramp_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (gamma, ok_steps) = match *self {
            SparsityPenaltySchedule::Constant { gamma } => (gamma, true),
            SparsityPenaltySchedule::LinearRamp { gamma, ramp_steps } => (gamma, ramp_steps > 0),
        };
        if !(gamma >= 0.0 && gamma.is_finite()) || !ok_steps {
            return Err(Error::Parameter(format!("invalid sparsity penalty schedule {self:?}")));
        }
        Ok(())
    }

    /// `γ_i` for 1-based step `i`.
    pub fn gamma(&self, step: usize) -> f64 {
        match *self {
            SparsityPenaltySchedule::Constant { gamma } => gamma,
            SparsityPenaltySchedule::LinearRamp { gamma, ramp_steps } => {
                gamma * (step as f64 / ramp_steps as f64).min(1.0)
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            SparsityPenaltySchedule::Constant { gamma } | SparsityPenaltySchedule::LinearRamp { gamma, .. } => gamma,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            SparsityPenaltySchedule::Constant { .. } => "constant",
            SparsityPenaltySchedule::LinearRamp { .. } => "ramp",
        }
    }
}

impl Default for SparsityPenaltySchedule {
    fn default() -> Self {
        SparsityPenaltySchedule::Constant { gamma: 0.0 }
    }
}
