mod common;

use abp::mask::{MaskLogits, MaskMode, Temperatures};
use abp::model::MaskSource;
use abp::rng::Rng;
use proptest::prelude::*;

#[test]
fn backprop_matches_central_differences() {
    let mut rng = Rng::seed_from(11);
    for _ in 0..50 {
        let (net, batch) = common::random_instance(&mut rng);
        let err = common::max_gradient_error(&net, &batch, common::FD_STEP);
        assert!(err <= 1e-5, "relative error {err}");
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn dual_temperature_gradient_rescales_mask_gradient() {
    let mut rng = Rng::seed_from(12);
    for _ in 0..20 {
        let (mut net, batch) = common::random_instance(&mut rng);
        let (tl, ts) = (rng.uniform_range(20.0, 200.0), rng.uniform_range(0.5, 5.0));
        net.set_temperatures(Temperatures::new(tl, ts).unwrap());
        let out = net.forward(&batch, MaskSource::Logits(MaskMode::Soft)).unwrap();
        let grads = net.backward(&out.cache, &batch).unwrap();
        for (l, layer) in net.base().iter().enumerate() {
            let theta = layer.logits().theta().data();
            for (i, &th) in theta.iter().enumerate() {
                let forward_mask = logistic(tl * th);
                assert!((out.cache.masks()[l].weight.data()[i] - forward_mask).abs() < 1e-12);
                let s = logistic(ts * th);
                let expected = grads.mask[l].data()[i] * ts * s * (1.0 - s);
                let got = grads.theta[l].data()[i];
                assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "{got} vs {expected}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn equal_temperatures_match_finite_differences(seed in any::<u64>()) {
        let mut rng = Rng::seed_from(seed);
        let (net, batch) = common::random_instance(&mut rng);
        prop_assert!(common::max_gradient_error(&net, &batch, common::FD_STEP) <= 1e-5);
    }

    #[test]
    fn hard_forward_ignores_logit_magnitude(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = Rng::seed_from(seed);
        let (mut net, batch) = common::random_instance(&mut rng);
        let before = net.forward(&batch, MaskSource::Logits(MaskMode::Hard)).unwrap();
        for layer in net.base_mut() {
            let t = layer.logits().temperatures();
            let theta = layer.logits().theta().map(|v| v * scale);
            *layer.logits_mut() = MaskLogits::new(theta, t).unwrap();
        }
        let after = net.forward(&batch, MaskSource::Logits(MaskMode::Hard)).unwrap();
        prop_assert_eq!(before.loss.to_bits(), after.loss.to_bits());
    }
}
