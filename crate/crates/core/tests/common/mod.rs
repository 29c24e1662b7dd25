#![allow(dead_code)]

use abp::binary_mask::{BinaryMask, MaskBits};
use abp::mask::{MaskLogits, MaskMode, Temperatures};
use abp::model::{BaseLayer, Batch, DenseLayer, LossKind, MaskSource, MaskedNetwork, Mlp};
use abp::ops::Activation;
use abp::rng::Rng;
use abp::tensor::Tensor;

/// Random masked network with `t_l = t_s`, random logits and a matching batch.
pub fn random_instance(rng: &mut Rng) -> (MaskedNetwork, Batch) {
    let t = rng.uniform_range(1.0, 10.0);
    let temps = Temperatures::single(t).unwrap();
    let depth = 1 + rng.index(3);
    let mut widths = vec![2 + rng.index(4)];
    for _ in 0..depth {
        widths.push(2 + rng.index(4));
    }
    let base: Vec<BaseLayer> = (0..depth)
        .map(|i| {
            let act = if i + 1 == depth && rng.uniform() < 0.5 { Activation::Identity } else { Activation::Relu };
            let mut layer = BaseLayer::new(
                format!("base.{i}"),
                rng.normal_tensor(&[widths[i], widths[i + 1]], 0.0, 0.8),
                rng.normal_tensor(&[widths[i + 1]], 0.1, 0.3),
                act,
                temps,
                rng.uniform() < 0.5,
            )
            .unwrap();
            let theta = rng.normal_tensor(&[widths[i], widths[i + 1]], 0.0, 0.5 / t);
            *layer.logits_mut() = MaskLogits::new(theta, temps).unwrap();
            if let Some(b) = layer.bias_logits_mut() {
                let theta = rng.normal_tensor(b.shape(), 0.0, 0.5 / t);
                *b = MaskLogits::new(theta, temps).unwrap();
            }
            layer
        })
        .collect();
    let loss = if rng.uniform() < 0.5 { LossKind::SquaredError } else { LossKind::CrossEntropy };
    let out = 2 + rng.index(3);
    let mut head_widths = vec![*widths.last().unwrap()];
    for _ in 0..rng.index(2) {
        head_widths.push(2 + rng.index(4));
    }
    head_widths.push(out);
    let mut head = Mlp::init(&head_widths, rng);
    for layer in &mut head.layers {
        layer.bias = rng.normal_tensor(layer.bias.shape(), 0.0, 0.2);
    }
    let net = MaskedNetwork::new(base, head, loss).unwrap();
    let rows = 1 + rng.index(8);
    let x = rng.normal_tensor(&[rows, widths[0]], 0.0, 1.0);
    let y = match loss {
        LossKind::SquaredError => rng.normal_tensor(&[rows, out], 0.0, 1.0),
        LossKind::CrossEntropy => {
            let mut y = Tensor::zeros(&[rows, out]);
            for r in 0..rows {
                let k = rng.index(out);
                y.data_mut()[r * out + k] = 1.0;
            }
            y
        }
    };
    (net, Batch::new(x, y).unwrap())
}

/// Soft loss and the sign pattern of every pre-activation.
fn soft_loss(net: &MaskedNetwork, batch: &Batch) -> (f64, Vec<bool>) {
    let out = net.forward(batch, MaskSource::Logits(MaskMode::Soft)).unwrap();
    let pattern = out.cache.layer_caches().flat_map(|c| c.pre_activation().data().iter().map(|&z| z > 0.0)).collect();
    (out.loss, pattern)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Step of the five-point stencil: large enough that round-off stays far below
/// the tolerance on small gradient entries.
pub const FD_STEP: f64 = 3e-4;

/// Five-point central difference `[8(f(h) − f(−h)) − (f(2h) − f(−2h))] / 12h`.
///
/// `None` when a ReLU changes side inside the stencil.
pub fn central_difference(f: impl Fn(f64) -> (f64, Vec<bool>), h: f64, pattern: &[bool]) -> Option<f64> {
    let mut v = [0.0; 4];
    for (slot, delta) in v.iter_mut().zip([h, -h, 2.0 * h, -2.0 * h]) {
        let (loss, p) = f(delta);
        if p != pattern {
            return None;
        }
        *slot = loss;
    }
    Some((8.0 * (v[0] - v[1]) - (v[2] - v[3])) / (12.0 * h))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose stencil crosses a ReLU kink.
    pub skipped: usize,
}

impl GradientCheck {
    pub fn merge(self, other: GradientCheck) -> GradientCheck {
        GradientCheck {
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Largest relative error between backprop and central differences over every
/// logit and head parameter.
pub fn max_gradient_error(net: &MaskedNetwork, batch: &Batch, h: f64) -> f64 {
    gradient_check(net, batch, h).max_relative_error
}

pub fn gradient_check(net: &MaskedNetwork, batch: &Batch, h: f64) -> GradientCheck {
    let out = net.forward(batch, MaskSource::Logits(MaskMode::Soft)).unwrap();
    let grads = net.backward(&out.cache, batch).unwrap();
    let (_, pattern) = soft_loss(net, batch);
    let mut check = GradientCheck::default();
    let mut record = |analytic: f64, numeric: Option<f64>| match numeric {
        Some(n) => {
            check.checked += 1;
            check.max_relative_error = check.max_relative_error.max(relative_error(analytic, n));
        }
        None => check.skipped += 1,
    };

    let layers = net.base().len();
    for l in 0..layers {
        for bias in [false, true] {
            let analytic = if bias {
                match &grads.bias_theta[l] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                grads.theta[l].clone()
            };
            for i in 0..analytic.len() {
                let perturb = |delta: f64| {
                    let mut n = net.clone();
                    let layer = &mut n.base_mut()[l];
                    let logits = if bias { layer.bias_logits_mut().unwrap() } else { layer.logits_mut() };
                    let mut theta = logits.theta().clone();
                    theta.data_mut()[i] += delta;
                    logits.set_theta(theta).unwrap();
                    soft_loss(&n, batch)
                };
                record(analytic.data()[i], central_difference(perturb, h, &pattern));
            }
        }
    }

    for (k, g) in grads.head.iter().enumerate() {
        for (is_bias, analytic) in [(false, &g.weights), (true, &g.bias)] {
            for i in 0..analytic.len() {
                let perturb = |delta: f64| {
                    let mut n = net.clone();
                    let layer: &mut DenseLayer = &mut n.head.layers[k];
                    let t = if is_bias { &mut layer.bias } else { &mut layer.weights };
                    t.data_mut()[i] += delta;
                    soft_loss(&n, batch)
                };
                record(analytic.data()[i], central_difference(perturb, h, &pattern));
            }
        }
    }
    check
}

/// Linear model `y = x·(m ⊙ w0)` with `d` maskable weights and a planted mask.
pub fn convex_instance(seed: u64, d: usize, n: usize) -> (MaskedNetwork, Batch) {
    let mut rng = Rng::seed_from(seed);
    let w0 = rng.normal_tensor(&[d, 1], 0.0, 1.0);
    let planted: Vec<f64> = (0..d).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
    let x = rng.normal_tensor(&[n, d], 0.0, 1.0);
    let y: Vec<f64> = (0..n)
        .map(|r| (0..d).map(|j| x.at(r, j) * w0.data()[j] * planted[j]).sum::<f64>() + 0.1 * rng.normal(0.0, 1.0))
        .collect();
    let base = vec![BaseLayer::new("base.0", w0, Tensor::zeros(&[1]), Activation::Identity, Temperatures::default(), false).unwrap()];
    let net = MaskedNetwork::new(base, Mlp { layers: vec![] }, LossKind::SquaredError).unwrap();
    (net, Batch::new(x, Tensor::new(vec![n, 1], y).unwrap()).unwrap())
}

/// Minimum hard loss over all `2^d` masks of a single-tensor network.
pub fn enumerate_optimum(net: &MaskedNetwork, data: &Batch) -> (f64, BinaryMask) {
    let layout = net.mask_layout();
    assert_eq!(layout.len(), 1);
    let (name, shape) = &layout[0];
    let d: usize = shape.iter().product();
    assert!(d <= 20);
    let mut best = (f64::INFINITY, BinaryMask::new());
    for code in 0..(1u64 << d) {
        let bits: Vec<bool> = (0..d).map(|j| code >> j & 1 == 1).collect();
        let mut m = BinaryMask::new();
        m.push(name.clone(), MaskBits::from_bools(shape, &bits).unwrap()).unwrap();
        let loss = net.evaluate_with(data, MaskSource::Binary(&m)).unwrap().loss;
        if loss < best.0 {
            best = (loss, m);
        }
    }
    best
}

/// `min_{v ∈ [0,1]^d} mean((x·(v ⊙ w0) − y)²)` by projected gradient descent.
pub fn box_infimum(net: &MaskedNetwork, data: &Batch, iters: usize) -> f64 {
    let w0 = net.base()[0].w0().data().to_vec();
    let d = w0.len();
    let n = data.len();
    let a: Vec<Vec<f64>> = (0..n).map(|r| (0..d).map(|j| data.inputs.at(r, j) * w0[j]).collect()).collect();
    let y: Vec<f64> = (0..n).map(|r| data.targets.at(r, 0)).collect();
    let loss = |v: &[f64]| {
        a.iter()
            .zip(&y)
            .map(|(row, yi)| {
                let p: f64 = row.iter().zip(v).map(|(x, w)| x * w).sum();
                (p - yi).powi(2)
            })
            .sum::<f64>()
            / n as f64
    };
    let lipschitz: f64 = 2.0 * a.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64;
    let step = 1.0 / lipschitz;
    let mut v = vec![0.5; d];
    for _ in 0..iters {
        let mut g = vec![0.0; d];
        for (row, yi) in a.iter().zip(&y) {
            let r = row.iter().zip(&v).map(|(x, w)| x * w).sum::<f64>() - yi;
            for j in 0..d {
                g[j] += 2.0 * r * row[j] / n as f64;
            }
        }
        for j in 0..d {
            v[j] = (v[j] - step * g[j]).clamp(0.0, 1.0);
        }
    }
    loss(&v)
}
