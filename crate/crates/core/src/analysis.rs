//! Topology statistics and perturbation ablations over learned masks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binary_mask::{BinaryMask, MaskBits, Sparsity};
use crate::error::{Error, Result};
use crate::model::{Dataset, MaskSource, MaskedNetwork};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{continue_head_training, HeadTrainingConfig};

/// Coarse position of a tensor in the base network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    InputLayer,
    Hidden,
    OutputAdjacent,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::InputLayer => "input_layer",
            Component::Hidden => "hidden",
            Component::OutputAdjacent => "output_adjacent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorTag {
    pub name: String,
    pub layer_index: usize,
    pub component: Component,
}

/// Tags for every mask tensor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub tags: Vec<TensorTag>,
}

impl Layout {
    /// First base layer is `input_layer`, the last is `output_adjacent`, the
    /// rest `hidden`. A single-layer base is tagged `input_layer`.
    pub fn for_network(net: &MaskedNetwork) -> Self {
        let n = net.base().len();
        let mut tags = Vec::new();
        for (i, l) in net.base().iter().enumerate() {
            let component = if i == 0 {
                Component::InputLayer
            } else if i + 1 == n {
                Component::OutputAdjacent
            } else {
                Component::Hidden
            };
            tags.push(TensorTag {
                name: l.weight_mask_name(),
                layer_index: i,
                component,
            });
            if l.bias_logits().is_some() {
                tags.push(TensorTag {
                    name: l.bias_mask_name(),
                    layer_index: i,
                    component,
                });
            }
        }
        Self { tags }
    }

    fn tag(&self, name: &str) -> Result<&TensorTag> {
        self.tags
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSparsity {
    pub name: String,
    pub layer_index: usize,
    pub component: Component,
    pub total: usize,
    pub pruned: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSparsity {
    pub total: usize,
    pub pruned: usize,
    pub sparsity: f64,
}

impl GroupSparsity {
    fn add(&mut self, total: usize, pruned: usize) {
        self.total += total;
        self.pruned += pruned;
        self.sparsity = if self.total == 0 { 0.0 } else { self.pruned as f64 / self.total as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub tensors: Vec<TensorSparsity>,
    pub layers: BTreeMap<usize, GroupSparsity>,
    pub components: BTreeMap<Component, GroupSparsity>,
    pub overall: f64,
}

pub fn sparsity_profile(mask: &BinaryMask, layout: &Layout) -> Result<SparsityProfile> {
    let empty = GroupSparsity {
        total: 0,
        pruned: 0,
        sparsity: 0.0,
    };
    let mut tensors = Vec::new();
    let mut layers = BTreeMap::new();
    let mut components = BTreeMap::new();
    for t in mask.tensors() {
        let tag = layout.tag(&t.name)?;
        let (total, pruned) = (t.bits.total(), t.bits.pruned());
        tensors.push(TensorSparsity {
            name: t.name.clone(),
            layer_index: tag.layer_index,
            component: tag.component,
            total,
            pruned,
            sparsity: t.bits.sparsity(),
        });
        layers.entry(tag.layer_index).or_insert(empty).add(total, pruned);
        components.entry(tag.component).or_insert(empty).add(total, pruned);
    }
    Ok(SparsityProfile {
        tensors,
        layers,
        components,
        overall: mask.sparsity(),
    })
}

/// Randomly permutes the bits inside each tensor.
pub fn shuffle_mask(mask: &BinaryMask, rng: &mut Rng) -> BinaryMask {
    let mut out = BinaryMask::new();
    for t in mask.tensors() {
        let mut bits: Vec<bool> = t.bits.iter().collect();
        rng.shuffle(&mut bits);
        out.push(t.name.clone(), MaskBits::from_bools(t.bits.shape(), &bits).expect("same length"))
            .expect("unique names");
    }
    out
}

/// `w'ᵢ = wᵢ · gᵢ` with `gᵢ ~ N(1, σ)`.
pub fn reinit_weights(weights: &[Tensor], sigma: f64, rng: &mut Rng) -> Result<Vec<Tensor>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok(weights
        .iter()
        .map(|w| {
            let g = rng.normal_tensor(w.shape(), 1.0, sigma);
            w.hadamard(&g).expect("same shape")
        })
        .collect())
}

/// Perturbs every base weight and bias of `net`.
pub fn reinit_network(net: &MaskedNetwork, sigma: f64, rng: &mut Rng) -> Result<MaskedNetwork> {
    let flat: Vec<Tensor> = net
        .base()
        .iter()
        .flat_map(|l| [l.w0().clone(), l.bias0().clone()])
        .collect();
    let perturbed = reinit_weights(&flat, sigma, rng)?;
    let pairs: Vec<(Tensor, Tensor)> = perturbed
        .chunks(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    net.with_base_weights(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub head: HeadTrainingConfig,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            head: HeadTrainingConfig::default(),
            sigmas: vec![0.001, 0.01, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinitArm {
    pub sigma: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub sparsity: f64,
    pub baseline_metric: f64,
    pub shuffled_metric: f64,
    pub reinit: Vec<ReinitArm>,
}

fn retrain_and_score(
    net: &MaskedNetwork,
    mask: &BinaryMask,
    train: &Dataset,
    eval: &Dataset,
    head: &HeadTrainingConfig,
) -> Result<f64> {
    let trained = continue_head_training(net, mask, train, None, head)?;
    let mut scored = net.clone();
    scored.head = trained.head;
    Ok(scored.evaluate_with(eval, MaskSource::Binary(mask))?.metric_or_zero())
}

/// Retrains the head from `net.head` under each perturbation and evaluates.
///
/// Every arm uses the same head budget and sampling seed, so an identity
/// perturbation reproduces the baseline exactly.
pub fn sensitivity_report(
    net: &MaskedNetwork,
    mask: &BinaryMask,
    train: &Dataset,
    eval: &Dataset,
    config: &SensitivityConfig,
) -> Result<SensitivityReport> {
    let root = Rng::seed_from(config.seed);
    let baseline_metric = retrain_and_score(net, mask, train, eval, &config.head)?;
    let shuffled = shuffle_mask(mask, &mut root.fork(1));
    let shuffled_metric = retrain_and_score(net, &shuffled, train, eval, &config.head)?;
    let reinit = config
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let perturbed = reinit_network(net, sigma, &mut root.fork(100 + i as u64))?;
            let metric = retrain_and_score(&perturbed, mask, train, eval, &config.head)?;
            Ok(ReinitArm { sigma, metric })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport {
        sparsity: mask.sparsity(),
        baseline_metric,
        shuffled_metric,
        reinit,
    })
}

/// One row per report: sparsity, baseline, shuffled, then one column per σ.
pub fn write_sensitivity_csv(reports: &[SensitivityReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{other:?}")),
    })?;
    let mut header = vec!["sparsity".to_string(), "baseline".into(), "shuffled".into()];
    if let Some(first) = reports.first() {
        header.extend(first.reinit.iter().map(|a| format!("reinit_sigma_{}", a.sigma)));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.sparsity.to_string(), r.baseline_metric.to_string(), r.shuffled_metric.to_string()];
        row.extend(r.reinit.iter().map(|a| a.metric.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Final task metric of one run at a sparsity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub sparsity: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub sparsity: f64,
    pub with_recovery: f64,
    pub without_recovery: f64,
    /// `without_recovery − with_recovery`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
}

/// Pairs the two runs level by level; the sparsity grids must match exactly.
pub fn recovery_report(with: &[SparsityPoint], without: &[SparsityPoint]) -> Result<RecoveryReport> {
    if with.len() != without.len() || with.iter().zip(without).any(|(a, b)| a.sparsity != b.sparsity) {
        return Err(Error::Contract("recovery arms were run on different sparsity grids".into()));
    }
    Ok(RecoveryReport {
        rows: with
            .iter()
            .zip(without)
            .map(|(a, b)| RecoveryRow {
                sparsity: a.sparsity,
                with_recovery: a.metric,
                without_recovery: b.metric,
                delta: b.metric - a.metric,
            })
            .collect(),
    })
}

impl RecoveryReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Malformed(format!("{other:?}")),
        })?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::random_mask;
    use crate::mask::Temperatures;
    use crate::model::{BaseLayer, Batch, LossKind, Mlp};
    use crate::ops::Activation;
    use crate::rng::Rng;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn net(seed: u64, mask_bias: bool) -> MaskedNetwork {
        let mut rng = Rng::seed_from(seed);
        let t = Temperatures::default();
        let base = (0..3)
            .map(|i| {
                BaseLayer::new(
                    &format!("base.{i}"),
                    rng.normal_tensor(&[5, 5], 0.0, 1.0),
                    rng.normal_tensor(&[5], 0.0, 0.1),
                    Activation::Relu,
                    t,
                    mask_bias,
                )
                .unwrap()
            })
            .collect();
        MaskedNetwork::new(base, Mlp::init(&[5, 3], &mut rng), LossKind::CrossEntropy).unwrap()
    }

    fn data(seed: u64, n: usize) -> Dataset {
        let mut rng = Rng::seed_from(seed);
        let x = rng.normal_tensor(&[n, 5], 0.0, 1.0);
        let mut y = Tensor::zeros(&[n, 3]);
        for i in 0..n {
            y.data_mut()[i * 3 + rng.index(3)] = 1.0;
        }
        Batch::new(x, y).unwrap()
    }

    #[test]
    fn layout_tags() {
        let layout = Layout::for_network(&net(0, true));
        let comps: Vec<_> = layout.tags.iter().map(|t| t.component).collect();
        assert_eq!(
            comps,
            vec![
                Component::InputLayer,
                Component::InputLayer,
                Component::Hidden,
                Component::Hidden,
                Component::OutputAdjacent,
                Component::OutputAdjacent
            ]
        );
    }

    #[test]
    fn profile_all_ones_and_one_zeroed_layer() {
        let n = net(0, false);
        let layout = Layout::for_network(&n);
        let mut mask = n.binarize();
        for t in mask.tensors_mut() {
            t.bits = MaskBits::ones(t.bits.shape());
        }
        let p = sparsity_profile(&mask, &layout).unwrap();
        assert!(p.layers.values().all(|g| g.sparsity == 0.0));
        assert_eq!(p.overall, 0.0);
        *mask.get_mut("base.2.weight").unwrap() = MaskBits::zeros(&[5, 5]);
        let p = sparsity_profile(&mask, &layout).unwrap();
        assert_eq!(p.layers[&2].sparsity, 1.0);
        assert_eq!(p.layers[&0].sparsity, 0.0);
        assert_eq!(p.layers[&1].sparsity, 0.0);
        assert_eq!(p.components[&Component::OutputAdjacent].sparsity, 1.0);
    }

    #[test]
    fn profile_unknown_tensor() {
        let mut mask = BinaryMask::new();
        mask.push("nope", MaskBits::ones(&[2])).unwrap();
        assert!(matches!(
            sparsity_profile(&mask, &Layout::default()),
            Err(Error::UnknownTensor(_))
        ));
    }

    #[test]
    fn profile_random_mask_groups_concentrate() {
        let layout = Layout {
            tags: (0..4)
                .map(|i| TensorTag {
                    name: format!("t{i}"),
                    layer_index: i,
                    component: Component::Hidden,
                })
                .collect(),
        };
        let shapes: Vec<(String, Vec<usize>)> = (0..4).map(|i| (format!("t{i}"), vec![20_000])).collect();
        let mask = random_mask(&shapes, 0.5, &mut Rng::seed_from(5)).unwrap();
        let p = sparsity_profile(&mask, &layout).unwrap();
        let sigma = (0.25f64 / 20_000.0).sqrt();
        for g in p.layers.values() {
            assert!((g.sparsity - 0.5).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn shuffle_distinct_seeds_differ() {
        let shapes = vec![("a".to_string(), vec![64])];
        let mask = random_mask(&shapes, 0.5, &mut Rng::seed_from(1)).unwrap();
        let a = shuffle_mask(&mask, &mut Rng::seed_from(2));
        let b = shuffle_mask(&mask, &mut Rng::seed_from(3));
        assert_ne!(a, b);
        let ones = BinaryMask::new();
        assert_eq!(shuffle_mask(&ones, &mut Rng::seed_from(0)), ones);
    }

    #[test]
    fn reinit_properties() {
        let mut rng = Rng::seed_from(4);
        let w = vec![rng.normal_tensor(&[100_000], 0.0, 1.0), Tensor::zeros(&[10])];
        assert_eq!(reinit_weights(&w, 0.0, &mut rng).unwrap(), w);
        let out = reinit_weights(&w, 0.01, &mut rng).unwrap();
        assert!(out[1].data().iter().all(|&v| v == 0.0));
        let ratio: Vec<f64> = out[0].data().iter().zip(w[0].data()).map(|(a, b)| a / b).collect();
        let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
        assert!((mean - 1.0).abs() < 3.0 * 0.01 / (ratio.len() as f64).sqrt());
        assert!(reinit_weights(&w, -1.0, &mut rng).is_err());
    }

    #[test]
    fn identity_reinit_matches_baseline_exactly() {
        let n = net(6, false);
        let mask = random_mask(&n.mask_layout(), 0.3, &mut Rng::seed_from(0)).unwrap();
        let (train, eval) = (data(1, 60), data(2, 30));
        let cfg = SensitivityConfig {
            head: HeadTrainingConfig {
                steps: 30,
                ..Default::default()
            },
            sigmas: vec![0.0],
            seed: 9,
        };
        let r = sensitivity_report(&n, &mask, &train, &eval, &cfg).unwrap();
        assert_eq!(r.reinit[0].metric.to_bits(), r.baseline_metric.to_bits());
        let direct = n.clone();
        let zero = reinit_network(&direct, 0.0, &mut Rng::seed_from(1)).unwrap();
        let a = direct.evaluate_with(&eval, MaskSource::Binary(&mask)).unwrap();
        let b = zero.evaluate_with(&eval, MaskSource::Binary(&mask)).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }

    #[test]
    fn recovery_delta() {
        let pts = |m: &[f64]| -> Vec<SparsityPoint> {
            [0.2, 0.9].iter().zip(m).map(|(&s, &m)| SparsityPoint { sparsity: s, metric: m }).collect()
        };
        let r = recovery_report(&pts(&[0.8, 0.7]), &pts(&[0.8, 0.7])).unwrap();
        assert!(r.rows.iter().all(|row| row.delta == 0.0));
        let r = recovery_report(&pts(&[0.8, 0.7]), &pts(&[0.75, 0.5])).unwrap();
        assert!((r.rows[1].delta + 0.2).abs() < 1e-12);
        let other = vec![SparsityPoint { sparsity: 0.5, metric: 0.0 }];
        assert!(matches!(recovery_report(&pts(&[0.8, 0.7]), &other), Err(Error::Contract(_))));
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let report = SensitivityReport {
            sparsity: 0.5,
            baseline_metric: 0.9,
            shuffled_metric: 0.6,
            reinit: vec![ReinitArm { sigma: 0.01, metric: 0.4 }],
        };
        let path = dir.path().join("s.csv");
        write_sensitivity_csv(&[report], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "sparsity,baseline,shuffled,reinit_sigma_0.01\n0.5,0.9,0.6,0.4\n");
        let rec = recovery_report(
            &[SparsityPoint { sparsity: 0.9, metric: 0.5 }],
            &[SparsityPoint { sparsity: 0.9, metric: 0.25 }],
        )
        .unwrap();
        let path = dir.path().join("r.csv");
        rec.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sparsity,with_recovery,without_recovery,delta\n0.9,0.5,0.25,-0.25"));
    }

    proptest! {
        #[test]
        fn shuffle_preserves_popcounts(seed in any::<u64>(), s in 0.0f64..1.0) {
            let shapes = vec![("a".to_string(), vec![7, 3]), ("b".to_string(), vec![13])];
            let mask = random_mask(&shapes, s, &mut Rng::seed_from(seed)).unwrap();
            let out = shuffle_mask(&mask, &mut Rng::seed_from(seed ^ 1));
            for (x, y) in mask.tensors().iter().zip(out.tensors()) {
                prop_assert_eq!(x.bits.count_ones(), y.bits.count_ones());
            }
        }

        #[test]
        fn group_sparsities_average_to_overall(seed in any::<u64>(), s in 0.0f64..1.0) {
            let n = net(seed % 7, true);
            let layout = Layout::for_network(&n);
            let mask = random_mask(&n.mask_layout(), s, &mut Rng::seed_from(seed)).unwrap();
            let p = sparsity_profile(&mask, &layout).unwrap();
            let pruned: usize = p.layers.values().map(|g| g.pruned).sum();
            let total: usize = p.layers.values().map(|g| g.total).sum();
            prop_assert_eq!(pruned, mask.pruned());
            prop_assert_eq!(total, mask.total());
            let pc: usize = p.components.values().map(|g| g.pruned).sum();
            prop_assert_eq!(pc, mask.pruned());
        }
    }
}
