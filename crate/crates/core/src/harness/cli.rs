//! Command-line front end.
//!
//! Seed precedence: `--seed`, then `ABP_SEED`, then `seed` in the config
//! file, then 0.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{sparsity_profile, Layout};
use crate::harness::ablation::run_ablations;
use crate::binary_mask::Sparsity;
use crate::error::{Error, Result};
use crate::harness::config::KvConfig;
use crate::harness::experiment::{
    candidates_for, grid_search, run_ours, run_plan_on, ExperimentPlan, SPARSITY_BAND,
};
use crate::harness::format::{load_checkpoint, load_mask, save_checkpoint, save_mask};
use crate::harness::task::{generate_task, Task, TaskSpec};
use crate::mask::{SparsityPenaltySchedule, Temperatures};
use crate::trainer::{AlphaSchedule, HeadTrainingConfig, ThetaInit, TrainingConfig};
use crate::baselines::{run_baseline, MpSchedule, PrunerConfig, PrunerKind};
use crate::model::MaskSource;

pub const SEED_ENV: &str = "ABP_SEED";

#[derive(Debug, Parser)]
#[command(name = "abp", version, about = "Adapt a frozen pre-trained network by learning a binary mask")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Target sparsity; overrides the config grid where one applies.
    #[arg(long, global = true)]
    pub sparsity: Option<f64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineMethod {
    Rnd,
    Mp,
    Imp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the task and write the pre-trained network.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Learn a mask at the target sparsity.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of the generated base.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a comparison pruner.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Layer- and component-wise sparsity of a mask file.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sensitivity and connection-recovery ablations.
    Sensitivity {
        #[command(flatten)]
        common: Common,
    },
    /// Method × sparsity × seed sweep with summaries.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "sparsity",
    "grid",
    "seeds",
    "methods",
    "steps",
    "batch_size",
    "alpha",
    "alpha_c",
    "beta",
    "gamma",
    "gamma_mode",
    "ramp_steps",
    "tune",
    "theta_init",
    "t_large",
    "t_small",
    "allow_recovery",
    "eval_every",
    "refit_steps",
    "prune_every",
    "mp_schedule",
    "imp_fraction",
    "imp_round_steps",
    "sigmas",
    "jobs",
    "task",
    "task.n_train",
    "task.n_eval",
    "task.input_dim",
    "task.classes",
    "task.hidden",
    "task.base_layers",
    "task.noise",
    "task.separation",
    "task.pretrain_steps",
    "task.pretrain_lr",
    "task.csv_path",
    "task.seed",
];

/// Resolved settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub config: KvConfig,
    pub plan: ExperimentPlan,
    pub sigmas: Vec<f64>,
}

fn resolve_seed(flag: Option<u64>, env: Option<&str>, cfg: &KvConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} is not an integer: `{v}`")));
    }
    cfg.get_or("seed", 0)
}

/// Builds the plan from config keys; unspecified keys keep library defaults.
pub fn plan_from_config(cfg: &KvConfig, seed: u64, sparsity: Option<f64>) -> Result<(ExperimentPlan, Vec<f64>)> {
    cfg.check_known(KNOWN_KEYS)?;
    let mut plan = ExperimentPlan::new(TaskSpec::from_config(cfg, seed)?);
    let t = &mut plan.training;
    t.steps = cfg.get_or("steps", t.steps)?;
    t.batch_size = cfg.get_or("batch_size", t.batch_size)?;
    t.beta = cfg.get_or("beta", t.beta)?;
    t.eval_every = cfg.get_or("eval_every", t.eval_every)?;
    t.allow_recovery = cfg.get_or("allow_recovery", t.allow_recovery)?;
    if let Some(c) = cfg.get::<f64>("alpha_c")? {
        t.alpha = AlphaSchedule::TheoremRate { c };
    } else if let Some(alpha) = cfg.get::<f64>("alpha")? {
        t.alpha = AlphaSchedule::Constant { alpha };
    }
    t.theta_init = match cfg.raw("theta_init").unwrap_or("narrow") {
        "narrow" => ThetaInit::NARROW,
        "literal" => ThetaInit::LITERAL_VARIANCE,
        other => return Err(Error::Config(format!("theta_init must be narrow or literal, got `{other}`"))),
    };
    let temps = Temperatures::default();
    t.temperatures = Temperatures::new(cfg.get_or("t_large", temps.large())?, cfg.get_or("t_small", temps.small())?)?;
    let steps = t.steps;
    plan.gamma_grid = crate::harness::experiment::default_gamma_grid(steps);
    if let Some(gamma) = cfg.get::<f64>("gamma")? {
        let schedule = match cfg.raw("gamma_mode").unwrap_or("constant") {
            "constant" => SparsityPenaltySchedule::Constant { gamma },
            "ramp" | "linear_ramp" => SparsityPenaltySchedule::LinearRamp {
                gamma,
                ramp_steps: cfg.get_or("ramp_steps", (steps / 2).max(1))?,
            },
            other => return Err(Error::Config(format!("gamma_mode must be constant or ramp, got `{other}`"))),
        };
        schedule.validate()?;
        plan.training.gamma = schedule;
        if !cfg.get_or("tune", false)? {
            plan.gamma_grid = Vec::new();
        }
    } else if !cfg.get_or("tune", true)? {
        plan.gamma_grid = Vec::new();
    }

    plan.refit.steps = cfg.get_or("refit_steps", plan.refit.steps)?;
    plan.refit.batch_size = plan.training.batch_size;
    plan.refit.beta = plan.training.beta;
    plan.mp.prune_every = cfg.get_or("prune_every", plan.mp.prune_every)?;
    plan.mp.schedule = match cfg.raw("mp_schedule").unwrap_or("cubic") {
        "cubic" => MpSchedule::Cubic,
        "linear" => MpSchedule::Linear,
        other => return Err(Error::Config(format!("mp_schedule must be cubic or linear, got `{other}`"))),
    };
    plan.imp.per_round_fraction = cfg.get_or("imp_fraction", plan.imp.per_round_fraction)?;
    plan.imp.round_steps = cfg.get("imp_round_steps")?;
    plan.jobs = cfg.get_or("jobs", plan.jobs)?;
    plan.tune_seed = seed.wrapping_add(1000);

    plan.grid = match (sparsity, cfg.get::<f64>("sparsity")?, cfg.get_list::<f64>("grid")?) {
        (Some(s), _, _) | (None, Some(s), _) => vec![s],
        (None, None, Some(g)) => g,
        (None, None, None) => plan.grid,
    };
    plan.seeds = match cfg.get_list::<u64>("seeds")? {
        Some(s) => s,
        None => (0..5).map(|i| seed.wrapping_add(i)).collect(),
    };
    if let Some(m) = cfg.get_list::<String>("methods")? {
        plan.methods = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    let sigmas = cfg.get_list("sigmas")?.unwrap_or_else(|| vec![0.001, 0.01, 0.1]);
    plan.validate()?;
    Ok((plan, sigmas))
}

impl Settings {
    pub fn resolve(common: &Common, env_seed: Option<&str>) -> Result<Self> {
        let config = match &common.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        let seed = resolve_seed(common.seed, env_seed, &config)?;
        let (plan, sigmas) = plan_from_config(&config, seed, common.sparsity)?;
        Ok(Self {
            seed,
            config,
            plan,
            sigmas,
        })
    }

    fn target(&self) -> Result<f64> {
        match self.plan.grid.as_slice() {
            [s] => Ok(*s),
            _ => Err(Error::Usage("pass --sparsity or a single `sparsity` in the config".into())),
        }
    }

    /// The tuned or configured penalty for target `s`.
    fn gamma_for(&self, task: &Task, s: f64) -> Result<SparsityPenaltySchedule> {
        if self.plan.gamma_grid.len() > 1 {
            let g = grid_search(task, &candidates_for(&self.plan, s), &self.plan.refit, SPARSITY_BAND)?;
            Ok(self.plan.gamma_grid[g.best])
        } else {
            Ok(self.plan.gamma_grid.first().copied().unwrap_or(self.plan.training.gamma))
        }
    }

    fn training_for(&self, task: &Task, s: f64, seed: u64) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            target_sparsity: Some(s),
            seed,
            gamma: self.gamma_for(task, s)?,
            ..self.plan.training
        })
    }

    fn task(&self, checkpoint: Option<&Path>) -> Result<Task> {
        let mut task = generate_task(&self.plan.task)?;
        if let Some(p) = checkpoint {
            let net = load_checkpoint(p)?;
            if net.input_width() != task.network.input_width() || net.output_width() != task.network.output_width() {
                return Err(Error::Usage("checkpoint does not match the configured task".into()));
            }
            task.network = net;
        }
        Ok(task)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    spec: &'a TaskSpec,
    source_loss: f64,
    train: usize,
    validation: usize,
    eval: usize,
    maskable_weights: usize,
    chance_level: f64,
}

fn cmd_pretrain(s: &Settings, out: &Path) -> Result<bool> {
    let task = s.task(None)?;
    save_checkpoint(&task.network, &out.join("base.abpc"))?;
    write_json(
        &out.join("pretrain.json"),
        &PretrainSummary {
            spec: &task.spec,
            source_loss: task.source_loss,
            train: task.train.len(),
            validation: task.validation.len(),
            eval: task.eval.len(),
            maskable_weights: task.network.maskable_count(),
            chance_level: task.chance_level,
        },
    )?;
    Ok(true)
}

fn cmd_adapt(s: &Settings, out: &Path, checkpoint: Option<&Path>) -> Result<bool> {
    let task = s.task(checkpoint)?;
    let target = s.target()?;
    let cfg = s.training_for(&task, target, s.seed)?;
    let arm = run_ours(&task, &cfg, &s.plan.refit)?;
    arm.metrics.write_jsonl(&out.join("metrics.jsonl"))?;
    save_mask(&arm.mask, &out.join("mask.abpm"))?;
    save_checkpoint(&arm.network, &out.join("checkpoint.abpc"))?;
    write_json(&out.join("summary.json"), &arm.result)?;
    Ok(true)
}

fn cmd_baseline(s: &Settings, out: &Path, method: BaselineMethod, checkpoint: Option<&Path>) -> Result<bool> {
    let task = s.task(checkpoint)?;
    let target = s.target()?;
    let kind = match method {
        BaselineMethod::Rnd => PrunerKind::Rnd,
        BaselineMethod::Mp => PrunerKind::Mp,
        BaselineMethod::Imp => PrunerKind::Imp,
    };
    let config = PrunerConfig {
        kind,
        target_sparsity: target,
        mp: s.plan.mp,
        imp: s.plan.imp,
        head: HeadTrainingConfig {
            steps: s.plan.training.steps,
            batch_size: s.plan.training.batch_size,
            beta: s.plan.training.beta,
            seed: s.seed,
            eval_every: s.plan.training.eval_every,
        },
    };
    let outcome = run_baseline(&task.network, &task.train, &config)?;
    let mut net = task.network.clone();
    net.head = outcome.head;
    let eval = net.evaluate_with(&task.eval, MaskSource::Binary(&outcome.mask))?;
    outcome.metrics.write_jsonl(&out.join("metrics.jsonl"))?;
    save_mask(&outcome.mask, &out.join("mask.abpm"))?;
    #[derive(Serialize)]
    struct Summary {
        method: &'static str,
        target_sparsity: f64,
        achieved_sparsity: f64,
        eval_loss: f64,
        metric: Option<f64>,
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            method: match method {
                BaselineMethod::Rnd => "rnd",
                BaselineMethod::Mp => "mp",
                BaselineMethod::Imp => "imp",
            },
            target_sparsity: target,
            achieved_sparsity: outcome.mask.sparsity(),
            eval_loss: eval.loss,
            metric: eval.metric,
        },
    )?;
    Ok(true)
}

fn cmd_analyze(s: &Settings, out: &Path, mask_path: &Path, checkpoint: Option<&Path>) -> Result<bool> {
    let mask = load_mask(mask_path)?;
    let net = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => s.task(None)?.network,
    };
    let profile = sparsity_profile(&mask, &Layout::for_network(&net))?;
    write_json(&out.join("profile.json"), &profile)?;
    let path = out.join("profile.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Malformed(e.to_string()))?;
    w.write_record(["group", "key", "total", "pruned", "sparsity"])?;
    for t in &profile.tensors {
        w.write_record(["tensor", &t.name, &t.total.to_string(), &t.pruned.to_string(), &t.sparsity.to_string()])?;
    }
    for (layer, g) in &profile.layers {
        w.write_record(["layer", &layer.to_string(), &g.total.to_string(), &g.pruned.to_string(), &g.sparsity.to_string()])?;
    }
    for (c, g) in &profile.components {
        w.write_record(["component", c.as_str(), &g.total.to_string(), &g.pruned.to_string(), &g.sparsity.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(true)
}

fn cmd_sensitivity(s: &Settings, out: &Path) -> Result<bool> {
    let task = s.task(None)?;
    run_ablations(&s.plan, &task, &s.sigmas)?.write(out)?;
    Ok(true)
}

fn cmd_sweep(s: &Settings, out: &Path) -> Result<bool> {
    let task = s.task(None)?;
    let store = run_plan_on(&s.plan, &task, Some(out))?;
    Ok(store.all_completed())
}

/// Runs a parsed command; `Ok(false)` means some arm failed.
pub fn execute(cli: &Cli, env_seed: Option<&str>) -> Result<bool> {
    let common = match &cli.command {
        Command::Pretrain { common }
        | Command::Adapt { common, .. }
        | Command::Baseline { common, .. }
        | Command::Analyze { common, .. }
        | Command::Sensitivity { common }
        | Command::Sweep { common } => common,
    };
    let settings = Settings::resolve(common, env_seed)?;
    let out = common.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Pretrain { .. } => cmd_pretrain(&settings, out),
        Command::Adapt { checkpoint, .. } => cmd_adapt(&settings, out, checkpoint.as_deref()),
        Command::Baseline { method, checkpoint, .. } => cmd_baseline(&settings, out, *method, checkpoint.as_deref()),
        Command::Analyze { mask, checkpoint, .. } => cmd_analyze(&settings, out, mask, checkpoint.as_deref()),
        Command::Sensitivity { .. } => cmd_sensitivity(&settings, out),
        Command::Sweep { .. } => cmd_sweep(&settings, out),
    }
}

/// Process entry point: exit code 0 iff every requested arm completed.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("abp: some arms failed; see results.jsonl");
            1
        }
        Err(e) => {
            eprintln!("abp: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::Method;

    fn common(seed: Option<u64>) -> Common {
        Common {
            seed,
            sparsity: None,
            config: None,
            out: PathBuf::from("out"),
        }
    }

    #[test]
    fn seed_precedence() {
        let cfg = KvConfig::parse("seed = 7").unwrap();
        assert_eq!(resolve_seed(Some(1), Some("2"), &cfg).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), &cfg).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, &cfg).unwrap(), 7);
        assert_eq!(resolve_seed(None, None, &KvConfig::default()).unwrap(), 0);
        assert!(resolve_seed(None, Some("x"), &cfg).is_err());
        assert_eq!(Settings::resolve(&common(Some(3)), Some("9")).unwrap().seed, 3);
    }

    #[test]
    fn plan_keys() {
        let cfg = KvConfig::parse(
            "task = regression\nsteps = 50\ngamma = 0.001\ngamma_mode = ramp\ngrid = 0.3, 0.6\nseeds = 4, 5\nmethods = ours, mp\nprune_every = 10",
        )
        .unwrap();
        let (plan, sigmas) = plan_from_config(&cfg, 2, None).unwrap();
        assert_eq!(plan.training.steps, 50);
        assert_eq!(
            plan.training.gamma,
            SparsityPenaltySchedule::LinearRamp {
                gamma: 0.001,
                ramp_steps: 25
            }
        );
        assert!(plan.gamma_grid.is_empty());
        assert_eq!(plan.grid, vec![0.3, 0.6]);
        assert_eq!(plan.seeds, vec![4, 5]);
        assert_eq!(plan.methods, vec![Method::Ours, Method::Mp]);
        assert_eq!(plan.mp.prune_every, 10);
        assert_eq!(sigmas, vec![0.001, 0.01, 0.1]);
        let (plan, _) = plan_from_config(&cfg, 2, Some(0.9)).unwrap();
        assert_eq!(plan.grid, vec![0.9]);
        assert!(plan_from_config(&KvConfig::parse("stepz = 3").unwrap(), 0, None).is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["abp", "baseline", "--method", "mp", "--sparsity", "0.5", "--seed", "3"]).unwrap();
        match cli.command {
            Command::Baseline { common, method, .. } => {
                assert_eq!(common.seed, Some(3));
                assert_eq!(common.sparsity, Some(0.5));
                assert!(matches!(method, BaselineMethod::Mp));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["abp", "frobnicate"]).is_err());
    }
}
