//! Method × sparsity × seed sweeps with per-cell mean ± std summaries.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, ImpConfig, MpConfig, PrunerConfig, PrunerKind};
use crate::binary_mask::{BinaryMask, Sparsity};
use crate::error::{Error, Result};
use crate::harness::format::save_mask;
use crate::harness::task::{generate_task, Task, TaskSpec};
use crate::mask::SparsityPenaltySchedule;
use crate::model::{Dataset, MaskSource, MaskedNetwork, Mlp};
use crate::trainer::{adapt_by_pruning, continue_head_training, HeadTrainingConfig, RunMetrics, ThetaInit, TrainingConfig};

pub const DEFAULT_GRID: [f64; 6] = [0.2, 0.5, 0.7, 0.9, 0.95, 0.99];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Allowed overshoot above the target for a tuned arm to count as on target.
pub const SPARSITY_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Rnd,
    Mp,
    Imp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Rnd => "rnd",
            Method::Mp => "mp",
            Method::Imp => "imp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Method::Ours),
            "rnd" => Ok(Method::Rnd),
            "mp" => Ok(Method::Mp),
            "imp" => Ok(Method::Imp),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

/// `{1e-5, 1e-4, 1e-3}` × `{constant, linear ramp over half the run}`.
pub fn default_gamma_grid(steps: usize) -> Vec<SparsityPenaltySchedule> {
    let mut out = Vec::new();
    for gamma in [1e-5, 1e-4, 1e-3] {
        out.push(SparsityPenaltySchedule::Constant { gamma });
        out.push(SparsityPenaltySchedule::LinearRamp {
            gamma,
            ramp_steps: (steps / 2).max(1),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub task: TaskSpec,
    pub methods: Vec<Method>,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template for the mask learner; target and seed are set per arm.
    pub training: TrainingConfig,
    /// Penalty schedules tried per sparsity level on `tune_seed`; empty keeps
    /// `training.gamma`.
    pub gamma_grid: Vec<SparsityPenaltySchedule>,
    pub tune_seed: u64,
    /// Head refit applied to every method's final mask.
    pub refit: HeadTrainingConfig,
    pub mp: MpConfig,
    pub imp: ImpConfig,
    /// Maximum concurrent arms.
    pub jobs: usize,
}

impl ExperimentPlan {
    pub fn new(task: TaskSpec) -> Self {
        let training = TrainingConfig {
            theta_init: ThetaInit::NARROW,
            ..TrainingConfig::default()
        };
        Self {
            task,
            methods: vec![Method::Ours, Method::Rnd, Method::Mp, Method::Imp],
            grid: DEFAULT_GRID.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            gamma_grid: default_gamma_grid(training.steps),
            training,
            tune_seed: 1000,
            refit: HeadTrainingConfig {
                steps: 500,
                ..HeadTrainingConfig::default()
            },
            mp: MpConfig::default(),
            imp: ImpConfig::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() || self.grid.is_empty() {
            return Err(Error::Parameter("plan needs methods, seeds and a sparsity grid".into()));
        }
        if self.grid.iter().any(|&s| !(s > 0.0 && s < 1.0)) || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!("sparsity grid {:?} must be strictly increasing in (0, 1)", self.grid)));
        }
        if self.jobs == 0 {
            return Err(Error::Parameter("jobs must be >= 1".into()));
        }
        self.training.validate()?;
        self.task.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub method: Method,
    pub target_sparsity: f64,
    pub seed: u64,
    pub achieved_sparsity: Option<f64>,
    /// Task metric on the evaluation split.
    pub metric: Option<f64>,
    pub eval_loss: Option<f64>,
    pub validation_metric: Option<f64>,
    pub error: Option<String>,
}

impl ArmResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ArmOutput {
    pub result: ArmResult,
    pub mask: BinaryMask,
    pub head: Mlp,
    pub metrics: RunMetrics,
    /// Trained network: learned logits for `Ours`, the base otherwise, with the refit head.
    pub network: MaskedNetwork,
}

fn refit_and_score(
    net: &MaskedNetwork,
    head: Mlp,
    mask: &BinaryMask,
    task: &Task,
    refit: &HeadTrainingConfig,
) -> Result<(Mlp, f64, f64, f64)> {
    let mut net = net.clone();
    net.head = head;
    if refit.steps > 0 {
        net.head = continue_head_training(&net, mask, &task.train, None, refit)?.head;
    }
    let eval = net.evaluate_with(&task.eval, MaskSource::Binary(mask))?;
    let val = net.evaluate_with(&task.validation, MaskSource::Binary(mask))?;
    Ok((net.head, eval.metric_or_zero(), eval.loss, val.metric_or_zero()))
}

/// Learns a mask with `config` and refits the head on it.
pub fn run_ours(task: &Task, config: &TrainingConfig, refit: &HeadTrainingConfig) -> Result<ArmOutput> {
    let mut net = task.network.clone();
    let out = adapt_by_pruning(&mut net, &task.train, None, config)?;
    let refit = HeadTrainingConfig { seed: config.seed, ..*refit };
    let (head, metric, loss, val) = refit_and_score(&task.network, out.head, &out.mask, task, &refit)?;
    net.head = head.clone();
    Ok(ArmOutput {
        result: ArmResult {
            method: Method::Ours,
            target_sparsity: config.target_sparsity.unwrap_or(0.0),
            seed: config.seed,
            achieved_sparsity: Some(out.sparsity),
            metric: Some(metric),
            eval_loss: Some(loss),
            validation_metric: Some(val),
            error: None,
        },
        mask: out.mask,
        head,
        metrics: out.metrics,
        network: net,
    })
}

fn run_pruner(task: &Task, method: Method, s: f64, seed: u64, plan: &ExperimentPlan) -> Result<ArmOutput> {
    let kind = match method {
        Method::Rnd => PrunerKind::Rnd,
        Method::Mp => PrunerKind::Mp,
        Method::Imp => PrunerKind::Imp,
        Method::Ours => unreachable!("handled by run_ours"),
    };
    let config = PrunerConfig {
        kind,
        target_sparsity: s,
        mp: plan.mp,
        imp: plan.imp,
        head: HeadTrainingConfig {
            steps: plan.training.steps,
            batch_size: plan.training.batch_size,
            beta: plan.training.beta,
            seed,
            eval_every: plan.training.eval_every,
        },
    };
    let out = run_baseline(&task.network, &task.train, &config)?;
    let refit = HeadTrainingConfig { seed, ..plan.refit };
    let (head, metric, loss, val) = refit_and_score(&task.network, out.head, &out.mask, task, &refit)?;
    let mut network = task.network.clone();
    network.head = head.clone();
    Ok(ArmOutput {
        result: ArmResult {
            method,
            target_sparsity: s,
            seed,
            achieved_sparsity: Some(out.mask.sparsity()),
            metric: Some(metric),
            eval_loss: Some(loss),
            validation_metric: Some(val),
            error: None,
        },
        mask: out.mask,
        head,
        metrics: out.metrics,
        network,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub gamma: SparsityPenaltySchedule,
    pub achieved_sparsity: Option<f64>,
    pub validation_metric: Option<f64>,
    pub on_target: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub target_sparsity: f64,
    pub best: usize,
    pub trials: Vec<Trial>,
}

/// Picks the best candidate by validation metric among those landing in
/// `[s, s + band]`; ties go to the smaller overshoot, then the lower index.
/// With no candidate on target, the one closest to the band wins.
pub fn grid_search(
    task: &Task,
    candidates: &[TrainingConfig],
    refit: &HeadTrainingConfig,
    band: f64,
) -> Result<GridSearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::Parameter("empty search grid".into()));
    }
    let s = candidates[0].target_sparsity.unwrap_or(0.0);
    let trials: Vec<Trial> = candidates
        .iter()
        .enumerate()
        .map(|(index, cfg)| match run_ours(task, cfg, refit) {
            Ok(out) => {
                let a = out.result.achieved_sparsity.expect("set");
                Trial {
                    index,
                    gamma: cfg.gamma,
                    achieved_sparsity: Some(a),
                    validation_metric: out.result.validation_metric,
                    on_target: a >= s && a <= s + band,
                    error: None,
                }
            }
            Err(e) => Trial {
                index,
                gamma: cfg.gamma,
                achieved_sparsity: None,
                validation_metric: None,
                on_target: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let ok: Vec<&Trial> = trials.iter().filter(|t| t.error.is_none()).collect();
    if ok.is_empty() {
        return Err(Error::AllArmsFailed);
    }
    let on_target: Vec<&&Trial> = ok.iter().filter(|t| t.on_target).collect();
    let best = if on_target.is_empty() {
        let miss = |t: &Trial| {
            let a = t.achieved_sparsity.expect("ok trial");
            if a < s { s - a } else { a - s - band }
        };
        ok.iter()
            .min_by(|a, b| miss(a).total_cmp(&miss(b)).then(a.index.cmp(&b.index)))
            .expect("non-empty")
            .index
    } else {
        on_target
            .iter()
            .max_by(|a, b| {
                let (ma, mb) = (a.validation_metric.unwrap_or(f64::NEG_INFINITY), b.validation_metric.unwrap_or(f64::NEG_INFINITY));
                let (oa, ob) = (a.achieved_sparsity.expect("ok") - s, b.achieved_sparsity.expect("ok") - s);
                ma.total_cmp(&mb).then(ob.total_cmp(&oa)).then(b.index.cmp(&a.index))
            })
            .expect("non-empty")
            .index
    };
    Ok(GridSearchOutcome {
        target_sparsity: s,
        best,
        trials,
    })
}

/// Candidate configs for target `s`: the plan's template with each schedule.
pub fn candidates_for(plan: &ExperimentPlan, s: f64) -> Vec<TrainingConfig> {
    let template = TrainingConfig {
        target_sparsity: Some(s),
        seed: plan.tune_seed,
        ..plan.training
    };
    if plan.gamma_grid.is_empty() {
        return vec![template];
    }
    plan.gamma_grid
        .iter()
        .map(|&gamma| TrainingConfig { gamma, ..template })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub target_sparsity: f64,
    pub completed: usize,
    pub failed: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub mean_achieved_sparsity: f64,
}

/// Per-(method, sparsity) summaries, in first-appearance order.
pub fn summarize(arms: &[ArmResult]) -> Vec<CellSummary> {
    let mut keys: Vec<(Method, f64)> = Vec::new();
    for a in arms {
        if !keys.iter().any(|&(m, s)| m == a.method && s == a.target_sparsity) {
            keys.push((a.method, a.target_sparsity));
        }
    }
    keys.into_iter()
        .map(|(method, s)| {
            let cell: Vec<&ArmResult> = arms.iter().filter(|a| a.method == method && a.target_sparsity == s).collect();
            let ok: Vec<&&ArmResult> = cell.iter().filter(|a| a.succeeded()).collect();
            let vals: Vec<f64> = ok.iter().map(|a| a.metric.unwrap_or(0.0)).collect();
            let (mean, std) = mean_std(&vals);
            let achieved: Vec<f64> = ok.iter().filter_map(|a| a.achieved_sparsity).collect();
            CellSummary {
                method,
                target_sparsity: s,
                completed: ok.len(),
                failed: cell.len() - ok.len(),
                mean,
                std,
                mean_achieved_sparsity: mean_std(&achieved).0,
            }
        })
        .collect()
}

/// Mean and sample standard deviation (`n − 1`); NaN mean when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultStore {
    pub arms: Vec<ArmResult>,
    pub cells: Vec<CellSummary>,
    pub tuning: Vec<GridSearchOutcome>,
}

impl ResultStore {
    pub fn all_completed(&self) -> bool {
        self.arms.iter().all(ArmResult::succeeded)
    }

    pub fn cell(&self, method: Method, s: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.target_sparsity == s)
    }

    /// `results.jsonl`, `summary.csv` and `tuning.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut lines = String::new();
        for a in &self.arms {
            lines += &serde_json::to_string(a)?;
            lines.push('\n');
        }
        let path = dir.join("results.jsonl");
        std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Malformed(e.to_string()))?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("tuning.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.tuning)?).map_err(|e| Error::io(&path, e))
    }

    /// Reloads the per-arm results written by [`Self::write`] and recomputes
    /// the summaries from them.
    pub fn from_results_jsonl(text: &str) -> Result<Self> {
        let arms = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ArmResult>, _>>()?;
        Ok(Self {
            cells: summarize(&arms),
            arms,
            tuning: Vec::new(),
        })
    }
}

fn arm_dir(root: &Path, r: &ArmResult) -> PathBuf {
    root.join("arms").join(format!("{}_s{}_seed{}", r.method, r.target_sparsity, r.seed))
}

fn persist(root: &Path, out: &ArmOutput) -> Result<()> {
    let dir = arm_dir(root, &out.result);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    out.metrics.write_jsonl(&dir.join("metrics.jsonl"))?;
    save_mask(&out.mask, &dir.join("mask.abpm"))
}

pub(crate) fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Tunes the penalty schedule per sparsity level (when a grid is given) and
/// runs every method × sparsity × seed arm on a task built once.
///
/// Failed arms are recorded and the rest continue. When `out` is given each
/// arm writes `metrics.jsonl` and `mask.abpm` into its own directory and the
/// store is written at the root.
pub fn run_plan(plan: &ExperimentPlan, out: Option<&Path>) -> Result<ResultStore> {
    plan.validate()?;
    let task = generate_task(&plan.task)?;
    run_plan_on(plan, &task, out)
}

pub fn run_plan_on(plan: &ExperimentPlan, task: &Task, out: Option<&Path>) -> Result<ResultStore> {
    plan.validate()?;
    let tune = plan.methods.contains(&Method::Ours) && plan.gamma_grid.len() > 1;
    let tuning: Vec<GridSearchOutcome> = if tune {
        with_pool(plan.jobs, || {
            plan.grid
                .par_iter()
                .map(|&s| grid_search(task, &candidates_for(plan, s), &plan.refit, SPARSITY_BAND))
                .collect::<Result<Vec<_>>>()
        })??
    } else {
        Vec::new()
    };
    let gamma_for = |i: usize| -> SparsityPenaltySchedule {
        match tuning.get(i) {
            Some(t) => plan.gamma_grid[t.best],
            None => plan.training.gamma,
        }
    };

    let mut arms = Vec::new();
    for &method in &plan.methods {
        for (i, &s) in plan.grid.iter().enumerate() {
            for &seed in &plan.seeds {
                arms.push((method, i, s, seed));
            }
        }
    }
    let results: Vec<ArmResult> = with_pool(plan.jobs, || {
        arms.par_iter()
            .map(|&(method, i, s, seed)| {
                let run = match method {
                    Method::Ours => {
                        let cfg = TrainingConfig {
                            target_sparsity: Some(s),
                            seed,
                            gamma: gamma_for(i),
                            ..plan.training
                        };
                        run_ours(task, &cfg, &plan.refit)
                    }
                    _ => run_pruner(task, method, s, seed, plan),
                };
                let run = run.and_then(|o| {
                    if let Some(root) = out {
                        persist(root, &o)?;
                    }
                    Ok(o)
                });
                match run {
                    Ok(o) => o.result,
                    Err(e) => ArmResult {
                        method,
                        target_sparsity: s,
                        seed,
                        achieved_sparsity: None,
                        metric: None,
                        eval_loss: None,
                        validation_metric: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    })?;
    let store = ResultStore {
        cells: summarize(&results),
        arms: results,
        tuning,
    };
    if let Some(root) = out {
        store.write(root)?;
    }
    Ok(store)
}

/// Final hard-mask metric of a head on `data`.
pub fn score(net: &MaskedNetwork, head: &Mlp, mask: &BinaryMask, data: &Dataset) -> Result<f64> {
    let mut net = net.clone();
    net.head = head.clone();
    Ok(net.evaluate_with(data, MaskSource::Binary(mask))?.metric_or_zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> ExperimentPlan {
        let task = TaskSpec {
            n_train: 200,
            n_eval: 100,
            input_dim: 6,
            hidden: 8,
            pretrain_steps: 200,
            ..TaskSpec::blobs(0)
        };
        let mut plan = ExperimentPlan::new(task);
        plan.training.steps = 150;
        plan.refit.steps = 20;
        plan.gamma_grid = Vec::new();
        plan.training.gamma = SparsityPenaltySchedule::Constant { gamma: 1e-3 };
        plan.grid = vec![0.5];
        plan.seeds = vec![0];
        plan.methods = vec![Method::Ours];
        plan
    }

    #[test]
    fn mean_std_matches_definition() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn grid_validation() {
        let mut plan = tiny_plan();
        plan.grid = vec![0.5, 0.2];
        assert!(plan.validate().is_err());
        plan.grid = vec![0.0, 0.5];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn single_cell_writes_one_metrics_and_one_mask() {
        let dir = tempfile::tempdir().unwrap();
        let store = run_plan(&tiny_plan(), Some(dir.path())).unwrap();
        assert!(store.all_completed());
        let arms: Vec<_> = std::fs::read_dir(dir.path().join("arms")).unwrap().collect();
        assert_eq!(arms.len(), 1);
        let arm = arms[0].as_ref().unwrap().path();
        assert!(arm.join("metrics.jsonl").exists());
        assert!(arm.join("mask.abpm").exists());
        let text = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
        assert_eq!(ResultStore::from_results_jsonl(&text).unwrap().cells, store.cells);
    }

    #[test]
    fn failures_are_recorded() {
        let mut plan = tiny_plan();
        plan.methods = vec![Method::Ours, Method::Mp];
        plan.mp.prune_every = 0;
        let store = run_plan(&plan, None).unwrap();
        assert!(!store.all_completed());
        assert!(store.arms.iter().any(|a| a.method == Method::Ours && a.succeeded()));
        assert_eq!(store.cell(Method::Mp, 0.5).unwrap().failed, 1);
    }

    #[test]
    fn grid_search_rules() {
        let plan = tiny_plan();
        let task = generate_task(&plan.task).unwrap();
        let one = candidates_for(&plan, 0.5);
        assert_eq!(grid_search(&task, &one, &plan.refit, SPARSITY_BAND).unwrap().best, 0);

        let mut with_degenerate = plan.clone();
        with_degenerate.gamma_grid = vec![SparsityPenaltySchedule::Constant { gamma: 10.0 }, SparsityPenaltySchedule::Constant { gamma: 1e-3 }];
        let cands = candidates_for(&with_degenerate, 0.5);
        let a = grid_search(&task, &cands, &plan.refit, SPARSITY_BAND).unwrap();
        let b = grid_search(&task, &cands, &plan.refit, SPARSITY_BAND).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials[0].achieved_sparsity, Some(1.0));
        assert_ne!(a.best, 0);
    }
}
