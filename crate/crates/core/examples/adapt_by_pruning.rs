//! Learns a 70%-sparse mask over a pre-trained base for a shifted
//! classification task, then refits the head on the binary mask.

use abp::harness::experiment::run_ours;
use abp::harness::task::{generate_task, TaskSpec};
use abp::trainer::{HeadTrainingConfig, ThetaInit, TrainingConfig};
use abp::{BinaryMask, MaskBits, MaskSource, SparsityPenaltySchedule};

fn main() -> abp::Result<()> {
    let task = generate_task(&TaskSpec { n_train: 1000, n_eval: 500, pretrain_steps: 1500, ..TaskSpec::blobs(0) })?;
    let mut dense = BinaryMask::new();
    for (name, shape) in task.network.mask_layout() {
        dense.push(name, MaskBits::ones(&shape))?;
    }
    let before = task.network.evaluate_with(&task.eval, MaskSource::Binary(&dense))?;
    println!("chance level {:.3}; dense base with untrained head {:.3}", task.chance_level, before.metric_or_zero());

    let config = TrainingConfig {
        target_sparsity: Some(0.7),
        steps: 1500,
        gamma: SparsityPenaltySchedule::LinearRamp { gamma: 1e-3, ramp_steps: 750 },
        theta_init: ThetaInit::NARROW,
        eval_every: 250,
        ..TrainingConfig::default()
    };
    let arm = run_ours(&task, &config, &HeadTrainingConfig { steps: 500, ..HeadTrainingConfig::default() })?;
    for r in arm.metrics.records() {
        println!(
            "step {:>5}  soft loss {:.4}  sparsity {:.3}  recovered {:.3}",
            r.step, r.train_loss_soft, r.sparsity, r.recovered_fraction
        );
    }
    println!(
        "achieved sparsity {:.4}, eval accuracy {:.3}",
        arm.result.achieved_sparsity.unwrap_or(f64::NAN),
        arm.result.metric.unwrap_or(f64::NAN)
    );
    Ok(())
}
