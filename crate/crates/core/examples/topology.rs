//! Layer-wise and component-wise sparsity of a learned mask.

use abp::analysis::{sparsity_profile, Layout};
use abp::harness::experiment::run_ours;
use abp::harness::task::{generate_task, TaskSpec};
use abp::trainer::{HeadTrainingConfig, ThetaInit, TrainingConfig};
use abp::SparsityPenaltySchedule;

fn main() -> abp::Result<()> {
    let spec = TaskSpec { base_layers: 3, n_train: 1000, n_eval: 500, pretrain_steps: 1500, ..TaskSpec::blobs(1) };
    let task = generate_task(&spec)?;
    let config = TrainingConfig {
        target_sparsity: Some(0.9),
        steps: 1500,
        gamma: SparsityPenaltySchedule::Constant { gamma: 1e-3 },
        theta_init: ThetaInit::NARROW,
        ..TrainingConfig::default()
    };
    let arm = run_ours(&task, &config, &HeadTrainingConfig { steps: 200, ..HeadTrainingConfig::default() })?;
    let profile = sparsity_profile(&arm.mask, &Layout::for_network(&task.network))?;
    for t in &profile.tensors {
        println!("{:<14} {:>6} entries  sparsity {:.3}", t.name, t.total, t.sparsity);
    }
    for (c, g) in &profile.components {
        println!("{:<16} sparsity {:.3}", c.as_str(), g.sparsity);
    }
    println!("overall {:.4}", profile.overall);
    Ok(())
}
