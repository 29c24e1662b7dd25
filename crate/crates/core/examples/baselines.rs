//! Every comparison pruner at one sparsity, with the evaluation metric of
//! each final mask.

use abp::baselines::{imp_rounds, run_baseline, PrunerConfig, PrunerKind};
use abp::harness::task::{generate_task, TaskSpec};
use abp::{MaskSource, Sparsity};

fn main() -> abp::Result<()> {
    let task = generate_task(&TaskSpec { n_train: 1000, n_eval: 500, pretrain_steps: 1500, ..TaskSpec::regression(0) })?;
    let target = 0.8;
    println!("IMP needs {} rounds of 20% to reach {target}", imp_rounds(target, 0.2));
    for kind in [PrunerKind::Rnd, PrunerKind::Mp, PrunerKind::Imp] {
        let mut config = PrunerConfig::new(kind, target);
        config.head.steps = 1000;
        config.imp.round_steps = Some(300);
        let out = run_baseline(&task.network, &task.train, &config)?;
        let mut net = task.network.clone();
        net.head = out.head;
        let eval = net.evaluate_with(&task.eval, MaskSource::Binary(&out.mask))?;
        println!("{kind:?}: sparsity {:.4}, spearman {:.3}", out.mask.sparsity(), eval.metric_or_zero());
    }
    Ok(())
}
