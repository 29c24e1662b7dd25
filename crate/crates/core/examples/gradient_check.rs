//! Compares the backprop mask-logit gradient with central differences on a
//! tiny network where both temperatures coincide, then shows how the
//! dual-temperature gradient rescales it.

use abp::mask::{MaskLogits, MaskMode, Temperatures};
use abp::model::{BaseLayer, Batch, LossKind, MaskSource, MaskedNetwork, Mlp};
use abp::ops::Activation;
use abp::{Rng, Tensor};

fn network(temps: Temperatures, rng: &mut Rng) -> MaskedNetwork {
    let mut layer = BaseLayer::new("base.0", rng.normal_tensor(&[3, 4], 0.0, 1.0), Tensor::zeros(&[4]), Activation::Relu, temps, false).unwrap();
    *layer.logits_mut() = MaskLogits::new(rng.normal_tensor(&[3, 4], 0.0, 0.2), temps).unwrap();
    MaskedNetwork::new(vec![layer], Mlp::init(&[4, 2], rng), LossKind::SquaredError).unwrap()
}

fn main() {
    let mut rng = Rng::seed_from(1);
    let exact = Temperatures::single(4.0).unwrap();
    let net = network(exact, &mut rng);
    let batch = Batch::new(rng.normal_tensor(&[5, 3], 0.0, 1.0), rng.normal_tensor(&[5, 2], 0.0, 1.0)).unwrap();

    let out = net.forward(&batch, MaskSource::Logits(MaskMode::Soft)).unwrap();
    let grads = net.backward(&out.cache, &batch).unwrap();
    let h = 1e-6;
    println!("{:>5} {:>14} {:>14} {:>10}", "index", "backprop", "central diff", "rel err");
    for i in 0..6 {
        let loss_at = |delta: f64| {
            let mut n = net.clone();
            let logits = n.base_mut()[0].logits_mut();
            let mut theta = logits.theta().clone();
            theta.data_mut()[i] += delta;
            logits.set_theta(theta).unwrap();
            n.forward(&batch, MaskSource::Logits(MaskMode::Soft)).unwrap().loss
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let analytic = grads.theta[0].data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        println!("{i:>5} {analytic:>14.8} {numeric:>14.8} {rel:>10.2e}");
    }

    let mut dual = net.clone();
    dual.set_temperatures(Temperatures::new(100.0, 1.0).unwrap());
    let out = dual.forward(&batch, MaskSource::Logits(MaskMode::Soft)).unwrap();
    let g = dual.backward(&out.cache, &batch).unwrap();
    println!("dual temperature (100, 1): first logit gradient {:.6}", g.theta[0].data()[0]);
}
