//! Evaluates the convergence bound on a small linear instance and compares it
//! with the observed gap of the relaxed loss.

use abp::model::{BaseLayer, Batch, LossKind, MaskedNetwork, Mlp};
use abp::ops::Activation;
use abp::trainer::{
    adapt_by_pruning, estimate_grad_bound, minimize_relaxed_loss, relaxed_loss, theorem1_bound, AlphaSchedule, ThetaInit,
    TrainingConfig,
};
use abp::{Rng, SparsityPenaltySchedule, Temperatures, Tensor};

fn main() -> abp::Result<()> {
    let d = 8;
    let mut rng = Rng::seed_from(0);
    let w0 = rng.normal_tensor(&[d, 1], 0.0, 1.0);
    let x = rng.normal_tensor(&[128, d], 0.0, 1.0);
    let y: Vec<f64> = (0..128).map(|r| (0..d).step_by(2).map(|j| x.at(r, j) * w0.data()[j]).sum()).collect();
    let data = Batch::new(x, Tensor::new(vec![128, 1], y)?)?;
    let temps = Temperatures::default();
    let base = BaseLayer::new("base.0", w0, Tensor::zeros(&[1]), Activation::Identity, temps, false)?;
    let net = MaskedNetwork::new(vec![base], Mlp::default(), LossKind::SquaredError)?;
    let g = estimate_grad_bound(&net, &data, 1000, &mut rng)?;
    let c = 1.0;

    for steps in [100, 1000, 10000] {
        let config = TrainingConfig {
            steps,
            batch_size: 1,
            alpha: AlphaSchedule::TheoremRate { c },
            gamma: SparsityPenaltySchedule::Constant { gamma: 0.0 },
            theta_init: ThetaInit::NARROW,
            eval_every: steps,
            ..TrainingConfig::default()
        };
        let mut learner = net.clone();
        let out = adapt_by_pruning(&mut learner, &data, None, &config)?;
        let at_t = relaxed_loss(&learner, &data)?;
        let star = minimize_relaxed_loss(&mut learner.clone(), &data, 20_000, 0.05)?;
        let b = theorem1_bound(temps.large(), temps.small(), out.max_abs_theta, g, c, steps)?;
        println!(
            "T={steps:>5}: gap {:.3e}  bound {:.3e}  (M {:.3}, G {:.2}, C {:.2})",
            at_t - star,
            b.bound,
            out.max_abs_theta,
            g,
            b.c_const
        );
    }
    Ok(())
}
