//! Comparison pruners: random masks, gradual magnitude pruning (MP), and
//! iterative magnitude pruning with rewinding (IMP).
//!
//! All of them leave the frozen base weights at their original values; only
//! the mask and the head change. Magnitude ranking is global across tensors
//! and uses `|w0|`, so pruned entries never come back.

use serde::{Deserialize, Serialize};

use crate::binary_mask::{BinaryMask, MaskBits, Sparsity};
use crate::error::{Error, Result};
use crate::model::{Dataset, MaskedNetwork, Mlp};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{continue_head_training, head_step, HeadTrainingConfig, RunMetrics, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunerKind {
    Rnd,
    Mp,
    Imp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpSchedule {
    /// `s_i = s·(1 − (1 − i/N)³)`.
    Cubic,
    /// `s_i = s·i/N`.
    Linear,
}

impl MpSchedule {
    /// Sparsity after prune event `event` of `events` (1-based).
    pub fn sparsity_at(self, target: f64, event: usize, events: usize) -> f64 {
        if event >= events {
            return target;
        }
        let frac = event as f64 / events as f64;
        match self {
            MpSchedule::Cubic => target * (1.0 - (1.0 - frac).powi(3)),
            MpSchedule::Linear => target * frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpConfig {
    pub prune_every: usize,
    pub schedule: MpSchedule,
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            prune_every: 200,
            schedule: MpSchedule::Cubic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpConfig {
    pub per_round_fraction: f64,
    /// Head training steps per round; `None` means three passes over the data.
    pub round_steps: Option<usize>,
}

impl Default for ImpConfig {
    fn default() -> Self {
        Self {
            per_round_fraction: 0.2,
            round_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunerConfig {
    pub kind: PrunerKind,
    pub target_sparsity: f64,
    pub mp: MpConfig,
    pub imp: ImpConfig,
    /// Head training budget (`steps` is the total for rnd and mp).
    pub head: HeadTrainingConfig,
}

impl PrunerConfig {
    pub fn new(kind: PrunerKind, target_sparsity: f64) -> Self {
        Self {
            kind,
            target_sparsity,
            mp: MpConfig::default(),
            imp: ImpConfig::default(),
            head: HeadTrainingConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::Parameter(format!(
                "target sparsity {} outside [0, 1)",
                self.target_sparsity
            )));
        }
        let f = self.imp.per_round_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Parameter(format!("per-round prune fraction {f} outside (0, 1)")));
        }
        if self.mp.prune_every == 0 {
            return Err(Error::Parameter("prune_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub mask: BinaryMask,
    pub head: Mlp,
    pub metrics: RunMetrics,
}

/// Each entry is pruned independently with probability `s`.
pub fn random_mask(layout: &[(String, Vec<usize>)], s: f64, rng: &mut Rng) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Parameter(format!("sparsity {s} outside [0, 1]")));
    }
    let mut mask = BinaryMask::new();
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let bits: Vec<bool> = (0..n).map(|_| !rng.bernoulli(s)).collect();
        mask.push(name.clone(), MaskBits::from_bools(shape, &bits)?)?;
    }
    Ok(mask)
}

/// Raises the pruned count to `round(new_sparsity · d)` by removing the
/// surviving entries with the smallest `|w|`, ranked globally.
///
/// `weights` are aligned with the tensors of `current`. Ties are broken by
/// flat position.
pub fn magnitude_prune_step(weights: &[&Tensor], current: &BinaryMask, new_sparsity: f64) -> Result<BinaryMask> {
    if weights.len() != current.tensors().len() {
        return Err(Error::Usage("one weight tensor per mask tensor".into()));
    }
    for (w, t) in weights.iter().zip(current.tensors()) {
        if w.shape() != t.bits.shape() {
            return Err(Error::Dimension {
                op: "magnitude_prune_step",
                left: w.shape().to_vec(),
                right: t.bits.shape().to_vec(),
            });
        }
    }
    let total = current.total();
    let target = (new_sparsity * total as f64).round() as usize;
    let pruned = current.pruned();
    if !(0.0..=1.0).contains(&new_sparsity) || target < pruned {
        return Err(Error::Contract(format!(
            "new sparsity {new_sparsity} is below the current sparsity {}",
            current.sparsity()
        )));
    }
    let mut survivors: Vec<(f64, usize, usize)> = Vec::with_capacity(total - pruned);
    for (ti, (w, t)) in weights.iter().zip(current.tensors()).enumerate() {
        for (i, &v) in w.data().iter().enumerate() {
            if t.bits.get(i) {
                survivors.push((v.abs(), ti, i));
            }
        }
    }
    survivors.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut next = current.clone();
    for &(_, ti, i) in survivors.iter().take(target - pruned) {
        next.tensors_mut()[ti].bits.set(i, false);
    }
    Ok(next)
}

/// Smallest number of rounds `r ≥ 1` with `1 − (1 − f)^r ≥ s`.
pub fn imp_rounds(target: f64, per_round_fraction: f64) -> usize {
    let mut r = 1;
    while 1.0 - (1.0 - per_round_fraction).powi(r as i32) < target - 1e-12 {
        r += 1;
    }
    r
}

fn record(step: usize, loss: f64, sparsity: f64) -> StepRecord {
    StepRecord {
        step,
        train_loss_soft: loss,
        eval_loss_hard: None,
        task_metric: None,
        sparsity,
        recovered_fraction: 0.0,
        gamma: 0.0,
        alpha: 0.0,
    }
}

/// Random mask at the target sparsity, then head training.
pub fn run_rnd(net: &MaskedNetwork, train: &Dataset, config: &PrunerConfig) -> Result<BaselineOutcome> {
    config.validate()?;
    let mut rng = Rng::seed_from(config.head.seed).fork(0x524e_44);
    let mask = random_mask(&net.mask_layout(), config.target_sparsity, &mut rng)?;
    let trained = continue_head_training(net, &mask, train, None, &config.head)?;
    Ok(BaselineOutcome {
        mask,
        head: trained.head,
        metrics: trained.metrics,
    })
}

/// Gradual magnitude pruning: the head trains throughout while the mask is
/// tightened every `prune_every` steps along the schedule.
pub fn run_mp(net: &MaskedNetwork, train: &Dataset, config: &PrunerConfig) -> Result<BaselineOutcome> {
    config.validate()?;
    let steps = config.head.steps;
    let k = config.mp.prune_every;
    let events = steps / k;
    let weights = net.maskable_weights();
    let mut work = net.clone();
    let mut mask = ones_like(net);
    let mut rng = Rng::seed_from(config.head.seed);
    let mut metrics = RunMetrics::default();
    let mut event = 0;
    for step in 1..=steps {
        let batch = train.sample(config.head.batch_size, &mut rng);
        let loss = head_step(&mut work, &mask, &batch, config.head.beta)?;
        if events > 0 && step % k == 0 && event < events {
            event += 1;
            let s = config.mp.schedule.sparsity_at(config.target_sparsity, event, events);
            mask = magnitude_prune_step(&weights, &mask, s.max(mask.sparsity()))?;
            metrics.push(record(step, loss, mask.sparsity()))?;
        }
    }
    if events == 0 {
        mask = magnitude_prune_step(&weights, &mask, config.target_sparsity)?;
        metrics.push(record(steps.max(1), f64::NAN, mask.sparsity()))?;
    }
    Ok(BaselineOutcome {
        mask,
        head: work.head,
        metrics,
    })
}

/// Iterative magnitude pruning: train the head, prune a fixed fraction of the
/// survivors, rewind the head to its initial values; repeat until the target
/// is met, then train the rewound head on the final mask.
///
/// The base is frozen, so rewinding applies to the head only.
pub fn run_imp(net: &MaskedNetwork, train: &Dataset, config: &PrunerConfig) -> Result<BaselineOutcome> {
    config.validate()?;
    let f = config.imp.per_round_fraction;
    let round_steps = config
        .imp
        .round_steps
        .unwrap_or_else(|| (3 * train.len()).div_ceil(config.head.batch_size.max(1)));
    let rounds = imp_rounds(config.target_sparsity, f);
    let weights = net.maskable_weights();
    let mut mask = ones_like(net);
    let mut metrics = RunMetrics::default();
    let round_cfg = |round: usize| HeadTrainingConfig {
        steps: round_steps,
        seed: Rng::seed_from(config.head.seed).fork(round as u64).seed(),
        ..config.head
    };
    for round in 1..=rounds {
        let trained = continue_head_training(net, &mask, train, None, &round_cfg(round))?;
        let s = if round == rounds {
            config.target_sparsity
        } else {
            (1.0 - (1.0 - f).powi(round as i32)).min(config.target_sparsity)
        };
        mask = magnitude_prune_step(&weights, &mask, s.max(mask.sparsity()))?;
        let loss = trained.metrics.last().map_or(f64::NAN, |r| r.train_loss_soft);
        metrics.push(record(round * round_steps.max(1), loss, mask.sparsity()))?;
    }
    let last = continue_head_training(net, &mask, train, None, &round_cfg(rounds + 1))?;
    Ok(BaselineOutcome {
        mask,
        head: last.head,
        metrics,
    })
}

/// Dispatches on `config.kind`.
pub fn run_baseline(net: &MaskedNetwork, train: &Dataset, config: &PrunerConfig) -> Result<BaselineOutcome> {
    match config.kind {
        PrunerKind::Rnd => run_rnd(net, train, config),
        PrunerKind::Mp => run_mp(net, train, config),
        PrunerKind::Imp => run_imp(net, train, config),
    }
}

fn ones_like(net: &MaskedNetwork) -> BinaryMask {
    let mut mask = BinaryMask::new();
    for (name, shape) in net.mask_layout() {
        mask.push(name, MaskBits::ones(&shape)).expect("unique names");
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Temperatures;
    use crate::model::{BaseLayer, Batch, LossKind};
    use crate::ops::Activation;

    fn layout(n: usize) -> Vec<(String, Vec<usize>)> {
        vec![("w".to_string(), vec![n])]
    }

    fn setup(seed: u64) -> (MaskedNetwork, Dataset) {
        let mut rng = Rng::seed_from(seed);
        let t = Temperatures::default();
        let base = vec![
            BaseLayer::new("base.0", rng.normal_tensor(&[4, 6], 0.0, 1.0), Tensor::zeros(&[6]), Activation::Relu, t, false).unwrap(),
            BaseLayer::new("base.1", rng.normal_tensor(&[6, 6], 0.0, 1.0), Tensor::zeros(&[6]), Activation::Relu, t, false).unwrap(),
        ];
        let net = MaskedNetwork::new(base, Mlp::init(&[6, 6, 1], &mut rng), LossKind::SquaredError).unwrap();
        let x = rng.normal_tensor(&[40, 4], 0.0, 1.0);
        let y = rng.normal_tensor(&[40, 1], 0.0, 1.0);
        (net, Batch::new(x, y).unwrap())
    }

    #[test]
    fn random_mask_extremes() {
        let mut rng = Rng::seed_from(0);
        assert_eq!(random_mask(&layout(100), 0.0, &mut rng).unwrap().sparsity(), 0.0);
        assert_eq!(random_mask(&layout(100), 1.0, &mut rng).unwrap().sparsity(), 1.0);
    }

    #[test]
    fn random_mask_concentrates() {
        let mut rng = Rng::seed_from(17);
        let n = 100_000;
        let s = random_mask(&layout(n), 0.5, &mut rng).unwrap().sparsity();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((s - 0.5).abs() < 3.0 * sigma, "{s}");
    }

    #[test]
    fn magnitude_step_prunes_smallest() {
        let w = Tensor::vector(vec![3.0, -1.0, 2.0, 0.5]);
        let ones = BinaryMask::from_iter_for_test("w", MaskBits::ones(&[4]));
        let next = magnitude_prune_step(&[&w], &ones, 0.5).unwrap();
        assert_eq!(next.get("w").unwrap().iter().collect::<Vec<_>>(), vec![true, false, true, false]);
        assert_eq!(magnitude_prune_step(&[&w], &next, 0.5).unwrap(), next);
        assert!(matches!(magnitude_prune_step(&[&w], &next, 0.25), Err(Error::Contract(_))));
    }

    #[test]
    fn magnitude_step_matches_sort_oracle() {
        let mut rng = Rng::seed_from(8);
        for _ in 0..20 {
            let a = rng.normal_tensor(&[5, 7], 0.0, 1.0);
            let b = rng.normal_tensor(&[9], 0.0, 1.0);
            let mut mask = BinaryMask::new();
            mask.push("a", MaskBits::ones(&[5, 7])).unwrap();
            mask.push("b", MaskBits::ones(&[9])).unwrap();
            let s = rng.uniform_range(0.0, 1.0);
            let out = magnitude_prune_step(&[&a, &b], &mask, s).unwrap();
            let mut all: Vec<f64> = a.data().iter().chain(b.data()).map(|v| v.abs()).collect();
            let keep = all.len() - (s * all.len() as f64).round() as usize;
            all.sort_by(|x, y| y.total_cmp(x));
            let survivors: Vec<f64> = {
                let flat: Vec<f64> = a.data().iter().chain(b.data()).map(|v| v.abs()).collect();
                (0..flat.len()).filter(|&i| out.flat_get(i)).map(|i| flat[i]).collect()
            };
            let mut sorted = survivors.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            assert_eq!(sorted, all[..keep].to_vec());
        }
    }

    #[test]
    fn cubic_schedule_endpoints() {
        let s = MpSchedule::Cubic;
        assert_eq!(s.sparsity_at(0.9, 10, 10), 0.9);
        assert!((s.sparsity_at(0.9, 5, 10) - 0.9 * (1.0 - 0.125)).abs() < 1e-15);
        assert!(s.sparsity_at(0.9, 1, 10) > MpSchedule::Linear.sparsity_at(0.9, 1, 10));
    }

    #[test]
    fn imp_round_counts() {
        assert_eq!(imp_rounds(0.488, 0.2), 3);
        assert_eq!(imp_rounds(0.1, 0.2), 1);
        for s in [0.3, 0.5, 0.7, 0.9, 0.95, 0.99] {
            let closed = ((1.0f64 - s).ln() / 0.8f64.ln()).ceil() as usize;
            assert_eq!(imp_rounds(s, 0.2), closed, "s={s}");
        }
    }

    #[test]
    fn mp_single_prune_when_interval_exceeds_budget() {
        let (net, data) = setup(1);
        let mut cfg = PrunerConfig::new(PrunerKind::Mp, 0.5);
        cfg.head.steps = 50;
        cfg.mp.prune_every = 1000;
        let out = run_mp(&net, &data, &cfg).unwrap();
        assert_eq!(out.metrics.records().len(), 1);
        let one_shot = magnitude_prune_step(&net.maskable_weights(), &ones_like(&net), 0.5).unwrap();
        assert_eq!(out.mask, one_shot);
    }

    #[test]
    fn mp_hits_target_within_one_entry() {
        let (net, data) = setup(2);
        let mut cfg = PrunerConfig::new(PrunerKind::Mp, 0.7);
        cfg.head.steps = 100;
        cfg.mp.prune_every = 10;
        let out = run_mp(&net, &data, &cfg).unwrap();
        let d = out.mask.total() as f64;
        assert!((out.mask.sparsity() - 0.7).abs() <= 1.0 / d);
        let s: Vec<f64> = out.metrics.records().iter().map(|r| r.sparsity).collect();
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn imp_masks_are_monotone_and_base_frozen() {
        let (net, data) = setup(3);
        let before = net.clone();
        let mut cfg = PrunerConfig::new(PrunerKind::Imp, 0.488);
        cfg.imp.round_steps = Some(10);
        let out = run_imp(&net, &data, &cfg).unwrap();
        assert_eq!(out.metrics.records().len(), 3);
        assert!((out.mask.sparsity() - 0.488).abs() <= 1.0 / out.mask.total() as f64);
        assert_eq!(net, before);
    }

    impl BinaryMask {
        fn from_iter_for_test(name: &str, bits: MaskBits) -> BinaryMask {
            let mut m = BinaryMask::new();
            m.push(name, bits).unwrap();
            m
        }
    }
}
