//! A small method × sparsity × seed sweep with penalty tuning, written to
//! `results.jsonl`, `summary.csv` and `tuning.json`.

use abp::harness::experiment::{run_plan, ExperimentPlan};
use abp::harness::task::TaskSpec;

fn main() -> abp::Result<()> {
    let mut plan = ExperimentPlan::new(TaskSpec { n_train: 600, n_eval: 300, pretrain_steps: 800, ..TaskSpec::blobs(0) });
    plan.grid = vec![0.5, 0.9];
    plan.seeds = vec![0, 1, 2];
    plan.training.steps = 500;
    plan.gamma_grid = abp::harness::experiment::default_gamma_grid(plan.training.steps);
    plan.refit.steps = 200;
    let out = std::env::temp_dir().join("abp_sweep_example");
    let store = run_plan(&plan, Some(&out))?;
    println!("{:<5} {:>5} {:>8} {:>8} {:>9}", "arm", "s", "mean", "std", "achieved");
    for c in &store.cells {
        println!("{:<5} {:>5} {:>8.3} {:>8.3} {:>9.4}", c.method.to_string(), c.target_sparsity, c.mean, c.std, c.mean_achieved_sparsity);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
