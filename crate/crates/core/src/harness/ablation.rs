//! Sensitivity and connection-recovery ablations over a sparsity grid and
//! several seeds.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    recovery_report, sensitivity_report, write_sensitivity_csv, RecoveryReport, ReinitArm, SensitivityConfig,
    SensitivityReport, SparsityPoint,
};
use crate::error::{Error, Result};
use crate::harness::experiment::{candidates_for, grid_search, run_ours, with_pool, ExperimentPlan, SPARSITY_BAND};
use crate::harness::task::Task;
use crate::mask::SparsityPenaltySchedule;
use crate::trainer::{HeadTrainingConfig, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAblation {
    pub seed: u64,
    /// One report per grid level.
    pub sensitivity: Vec<SensitivityReport>,
    pub recovery: RecoveryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub chance_level: f64,
    pub gammas: Vec<SparsityPenaltySchedule>,
    pub per_seed: Vec<SeedAblation>,
    /// Elementwise medians over seeds.
    pub sensitivity_median: Vec<SensitivityReport>,
    pub recovery_median: RecoveryReport,
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Head retraining budget for every sensitivity arm: as many steps as the mask search.
pub fn matched_head(plan: &ExperimentPlan, seed: u64) -> HeadTrainingConfig {
    HeadTrainingConfig {
        steps: plan.training.steps,
        seed,
        ..plan.refit
    }
}

fn run_seed(plan: &ExperimentPlan, task: &Task, gammas: &[SparsityPenaltySchedule], sigmas: &[f64], seed: u64) -> Result<SeedAblation> {
    let mut sensitivity = Vec::new();
    let mut with = Vec::new();
    let mut without = Vec::new();
    for (&target, &gamma) in plan.grid.iter().zip(gammas) {
        let cfg = TrainingConfig {
            target_sparsity: Some(target),
            seed,
            gamma,
            ..plan.training
        };
        let arm = run_ours(task, &cfg, &plan.refit)?;
        let ablated = run_ours(task, &TrainingConfig { allow_recovery: false, ..cfg }, &plan.refit)?;
        with.push(SparsityPoint { sparsity: target, metric: arm.result.metric.unwrap_or(0.0) });
        without.push(SparsityPoint { sparsity: target, metric: ablated.result.metric.unwrap_or(0.0) });
        let sens = SensitivityConfig {
            head: matched_head(plan, seed),
            sigmas: sigmas.to_vec(),
            seed,
        };
        let mut report = sensitivity_report(&task.network, &arm.mask, &task.train, &task.eval, &sens)?;
        report.sparsity = target;
        sensitivity.push(report);
    }
    Ok(SeedAblation {
        seed,
        sensitivity,
        recovery: recovery_report(&with, &without)?,
    })
}

/// Tunes the penalty per level on `plan.tune_seed`, then runs every seed.
pub fn run_ablations(plan: &ExperimentPlan, task: &Task, sigmas: &[f64]) -> Result<AblationReport> {
    plan.validate()?;
    let gammas = plan
        .grid
        .iter()
        .map(|&s| {
            if plan.gamma_grid.len() > 1 {
                let g = grid_search(task, &candidates_for(plan, s), &plan.refit, SPARSITY_BAND)?;
                Ok(plan.gamma_grid[g.best])
            } else {
                Ok(plan.gamma_grid.first().copied().unwrap_or(plan.training.gamma))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let per_seed = with_pool(plan.jobs, || {
        plan.seeds
            .par_iter()
            .map(|&seed| run_seed(plan, task, &gammas, sigmas, seed))
            .collect::<Result<Vec<_>>>()
    })??;

    let levels = plan.grid.len();
    let med = |f: &dyn Fn(&SeedAblation, usize) -> f64, i: usize| median(&per_seed.iter().map(|s| f(s, i)).collect::<Vec<_>>());
    let sensitivity_median = (0..levels)
        .map(|i| SensitivityReport {
            sparsity: plan.grid[i],
            baseline_metric: med(&|s, i| s.sensitivity[i].baseline_metric, i),
            shuffled_metric: med(&|s, i| s.sensitivity[i].shuffled_metric, i),
            reinit: sigmas
                .iter()
                .enumerate()
                .map(|(k, &sigma)| ReinitArm {
                    sigma,
                    metric: med(&|s, i| s.sensitivity[i].reinit[k].metric, i),
                })
                .collect(),
        })
        .collect();
    let points = |f: &dyn Fn(&SeedAblation, usize) -> f64| {
        (0..levels)
            .map(|i| SparsityPoint { sparsity: plan.grid[i], metric: med(f, i) })
            .collect::<Vec<_>>()
    };
    let recovery_median = recovery_report(
        &points(&|s, i| s.recovery.rows[i].with_recovery),
        &points(&|s, i| s.recovery.rows[i].without_recovery),
    )?;
    Ok(AblationReport {
        chance_level: task.chance_level,
        gammas,
        per_seed,
        sensitivity_median,
        recovery_median,
    })
}

impl AblationReport {
    /// Median over seeds of each level's `Δ`, as opposed to the `Δ` of the medians.
    pub fn median_delta(&self) -> Vec<f64> {
        let levels = self.recovery_median.rows.len();
        (0..levels)
            .map(|i| median(&self.per_seed.iter().map(|s| s.recovery.rows[i].delta).collect::<Vec<_>>()))
            .collect()
    }

    /// Writes `sensitivity.json`, `sensitivity.csv` and `recovery.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_sensitivity_csv(&self.sensitivity_median, &dir.join("sensitivity.csv"))?;
        self.recovery_median.write_csv(&dir.join("recovery.csv"))?;
        let path = dir.join("sensitivity.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::{generate_task, TaskSpec};

    #[test]
    fn median_oracle() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn small_run_shapes() {
        let spec = TaskSpec {
            n_train: 200,
            n_eval: 100,
            hidden: 8,
            pretrain_steps: 200,
            ..TaskSpec::blobs(3)
        };
        let task = generate_task(&spec).unwrap();
        let mut plan = ExperimentPlan::new(spec);
        plan.grid = vec![0.5, 0.9];
        plan.seeds = vec![0, 1, 2];
        plan.training.steps = 150;
        plan.refit.steps = 50;
        plan.gamma_grid = Vec::new();
        plan.training.gamma = SparsityPenaltySchedule::Constant { gamma: 1e-3 };
        let r = run_ablations(&plan, &task, &[0.01]).unwrap();
        assert_eq!(r.per_seed.len(), 3);
        assert_eq!(r.sensitivity_median.len(), 2);
        assert_eq!(r.recovery_median.rows.len(), 2);
        let first: Vec<f64> = r.per_seed.iter().map(|s| s.sensitivity[0].shuffled_metric).collect();
        assert_eq!(r.sensitivity_median[0].shuffled_metric, median(&first));
        let again = run_ablations(&plan, &task, &[0.01]).unwrap();
        assert_eq!(r, again);
    }
}
