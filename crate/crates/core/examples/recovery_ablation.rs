//! Learns masks with and without connection recovery and reports the
//! metric difference per sparsity level.

use abp::analysis::{recovery_report, SparsityPoint};
use abp::harness::experiment::run_ours;
use abp::harness::task::{generate_task, TaskSpec};
use abp::trainer::{HeadTrainingConfig, ThetaInit, TrainingConfig};
use abp::SparsityPenaltySchedule;

fn main() -> abp::Result<()> {
    let task = generate_task(&TaskSpec { n_train: 1000, n_eval: 500, pretrain_steps: 1500, ..TaskSpec::regression(3) })?;
    let head = HeadTrainingConfig { steps: 300, ..HeadTrainingConfig::default() };
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for target in [0.5, 0.9, 0.99] {
        let config = TrainingConfig {
            target_sparsity: Some(target),
            steps: 1500,
            gamma: SparsityPenaltySchedule::Constant { gamma: 1e-3 },
            theta_init: ThetaInit::NARROW,
            ..TrainingConfig::default()
        };
        let a = run_ours(&task, &config, &head)?;
        let b = run_ours(&task, &TrainingConfig { allow_recovery: false, ..config }, &head)?;
        let recovered = a.metrics.last().map(|r| r.recovered_fraction).unwrap_or(0.0);
        println!("s={target}: {:.1}% of surviving connections were recovered", 100.0 * recovered);
        with.push(SparsityPoint { sparsity: target, metric: a.result.metric.unwrap_or(0.0) });
        without.push(SparsityPoint { sparsity: target, metric: b.result.metric.unwrap_or(0.0) });
    }
    for row in recovery_report(&with, &without)?.rows {
        println!("s={}: with {:.3}  without {:.3}  Δ {:+.3}", row.sparsity, row.with_recovery, row.without_recovery, row.delta);
    }
    Ok(())
}
