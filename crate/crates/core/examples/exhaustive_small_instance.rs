//! Linear model with 10 maskable weights: compares the learned mask with the
//! best of all 1024 binary masks.

use abp::model::{BaseLayer, Batch, LossKind, MaskSource, MaskedNetwork, Mlp};
use abp::ops::Activation;
use abp::trainer::{adapt_by_pruning, ThetaInit, TrainingConfig};
use abp::{BinaryMask, MaskBits, Rng, SparsityPenaltySchedule, Temperatures, Tensor};

fn main() -> abp::Result<()> {
    let d = 10;
    let mut rng = Rng::seed_from(4);
    let w0 = rng.normal_tensor(&[d, 1], 0.0, 1.0);
    let planted: Vec<bool> = (0..d).map(|_| rng.uniform() < 0.5).collect();
    let x = rng.normal_tensor(&[200, d], 0.0, 1.0);
    let y: Vec<f64> = (0..200)
        .map(|r| (0..d).filter(|&j| planted[j]).map(|j| x.at(r, j) * w0.data()[j]).sum::<f64>() + 0.1 * rng.normal(0.0, 1.0))
        .collect();
    let data = Batch::new(x, Tensor::new(vec![200, 1], y)?)?;
    let base = BaseLayer::new("base.0", w0, Tensor::zeros(&[1]), Activation::Identity, Temperatures::default(), false)?;
    let net = MaskedNetwork::new(vec![base], Mlp::default(), LossKind::SquaredError)?;

    let mut best = (f64::INFINITY, 0u32);
    for code in 0..1u32 << d {
        let bits: Vec<bool> = (0..d).map(|j| code >> j & 1 == 1).collect();
        let mut mask = BinaryMask::new();
        mask.push("base.0.weight", MaskBits::from_bools(&[d, 1], &bits)?)?;
        let loss = net.evaluate_with(&data, MaskSource::Binary(&mask))?.loss;
        if loss < best.0 {
            best = (loss, code);
        }
    }

    let config = TrainingConfig {
        gamma: SparsityPenaltySchedule::Constant { gamma: 0.0 },
        theta_init: ThetaInit::NARROW,
        ..TrainingConfig::default()
    };
    let mut learner = net.clone();
    let out = adapt_by_pruning(&mut learner, &data, None, &config)?;
    let learned = net.evaluate_with(&data, MaskSource::Binary(&out.mask))?.loss;
    let bits: String = out.mask.tensors()[0].bits.iter().map(|b| if b { '1' } else { '0' }).collect();
    let optimum: String = (0..d).map(|j| if best.1 >> j & 1 == 1 { '1' } else { '0' }).collect();
    println!("enumerated optimum {optimum} loss {:.5}", best.0);
    println!("learned mask       {bits} loss {learned:.5}");
    println!("relative gap {:.4}", (learned - best.0) / best.0);
    Ok(())
}
