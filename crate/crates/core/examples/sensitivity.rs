//! Shuffles a learned mask within each layer and perturbs the frozen weights
//! multiplicatively, retraining the head for every arm.

use abp::analysis::{sensitivity_report, SensitivityConfig};
use abp::harness::experiment::run_ours;
use abp::harness::task::{generate_task, TaskSpec};
use abp::trainer::{HeadTrainingConfig, ThetaInit, TrainingConfig};
use abp::SparsityPenaltySchedule;

fn main() -> abp::Result<()> {
    let task = generate_task(&TaskSpec { n_train: 1000, n_eval: 500, pretrain_steps: 1500, ..TaskSpec::blobs(2) })?;
    let head = HeadTrainingConfig { steps: 1000, ..HeadTrainingConfig::default() };
    for target in [0.5, 0.9] {
        let config = TrainingConfig {
            target_sparsity: Some(target),
            steps: 1000,
            gamma: SparsityPenaltySchedule::Constant { gamma: 1e-3 },
            theta_init: ThetaInit::NARROW,
            ..TrainingConfig::default()
        };
        let arm = run_ours(&task, &config, &head)?;
        let report = sensitivity_report(&task.network, &arm.mask, &task.train, &task.eval, &SensitivityConfig { head, ..SensitivityConfig::default() })?;
        print!("s={target}: mask {:.3}  shuffled {:.3}", report.baseline_metric, report.shuffled_metric);
        for r in &report.reinit {
            print!("  reinit σ={} {:.3}", r.sigma, r.metric);
        }
        println!("  (chance {:.3})", task.chance_level);
    }
    Ok(())
}
