//! The masked task model `f(x; w0 ⊙ m, p)`.
//!
//! A stack of frozen base layers, each with its own mask logits, followed by
//! a small trainable head that is never masked.

use serde::{Deserialize, Serialize};

use crate::binary_mask::{BinaryMask, MaskBits, Sparsity};
use crate::error::{Error, Result};
use crate::mask::{binarize, hard_mask, soft_mask, theta_gradient, MaskLogits, MaskMode, MaskPass, Temperatures};
use crate::ops::{layer_backward, layer_forward, Activation, LayerCache};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Initial logit for freshly constructed layers (every weight kept).
pub const KEEP_LOGIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

/// Rows are examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Tensor,
}

pub type Dataset = Batch;

impl Batch {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        inputs.dims2("batch inputs")?;
        targets.dims2("batch targets")?;
        if inputs.rows() != targets.rows() {
            return Err(Error::Dimension {
                op: "batch",
                left: inputs.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        let pick = |t: &Tensor| {
            let c = t.cols();
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![indices.len(), c], data).expect("row gather")
        };
        Batch {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
        }
    }

    /// `batch_size` rows drawn uniformly with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.index(self.len())).collect();
        self.select(&idx)
    }
}

/// A plain trainable dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// He-normal weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            weights: rng.normal_tensor(&[fan_in, fan_out], 0.0, std),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Gradient of one dense layer's parameters.
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// A trainable feed-forward stack, used for heads and for pre-training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// ReLU on every layer except the last.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                DenseLayer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut h = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer_forward(&h, &layer.weights, &layer.bias, layer.activation)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Returns parameter gradients and `∂L/∂input`.
    pub fn backward(&self, caches: &[LayerCache], upstream: Tensor) -> Result<(Vec<DenseGrad>, Tensor)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Usage("cache does not match layer count".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream;
        for cache in caches.iter().rev() {
            let lg = layer_backward(cache, &g)?;
            grads.push(DenseGrad {
                weights: lg.weights,
                bias: lg.bias,
            });
            g = lg.input;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn sgd_step(&mut self, grads: &[DenseGrad], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (w, d) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= lr * d;
            }
            for (b, d) in layer.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * d;
            }
        }
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::fan_out)
    }
}

/// A frozen pre-trained layer together with its mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLayer {
    name: String,
    w0: Tensor,
    bias0: Tensor,
    activation: Activation,
    logits: MaskLogits,
    bias_logits: Option<MaskLogits>,
}

impl BaseLayer {
    pub fn new(
        name: impl Into<String>,
        w0: Tensor,
        bias0: Tensor,
        activation: Activation,
        temperatures: Temperatures,
        mask_bias: bool,
    ) -> Result<Self> {
        let (_, out) = w0.dims2("base layer")?;
        if bias0.len() != out {
            return Err(Error::Dimension {
                op: "base layer bias",
                left: w0.shape().to_vec(),
                right: bias0.shape().to_vec(),
            });
        }
        let logits = MaskLogits::new(Tensor::filled(w0.shape(), KEEP_LOGIT), temperatures)?;
        let bias_logits = if mask_bias {
            Some(MaskLogits::new(Tensor::filled(bias0.shape(), KEEP_LOGIT), temperatures)?)
        } else {
            None
        };
        Ok(Self {
            name: name.into(),
            w0,
            bias0,
            activation,
            logits,
            bias_logits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn w0(&self) -> &Tensor {
        &self.w0
    }

    pub fn bias0(&self) -> &Tensor {
        &self.bias0
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn logits(&self) -> &MaskLogits {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut MaskLogits {
        &mut self.logits
    }

    pub fn bias_logits(&self) -> Option<&MaskLogits> {
        self.bias_logits.as_ref()
    }

    pub fn bias_logits_mut(&mut self) -> Option<&mut MaskLogits> {
        self.bias_logits.as_mut()
    }

    pub fn weight_mask_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_mask_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Same layer with different frozen weights (for perturbation studies).
    pub fn with_weights(&self, w0: Tensor, bias0: Tensor) -> Result<Self> {
        self.w0.check_same_shape(&w0, "with_weights")?;
        self.bias0.check_same_shape(&bias0, "with_weights")?;
        Ok(Self {
            w0,
            bias0,
            ..self.clone()
        })
    }
}

/// Concrete mask values used for one forward pass.
#[derive(Debug, Clone)]
pub struct LayerMask {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Where the mask values of a forward pass come from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    /// From the logits, soft or hard.
    Logits(MaskMode),
    /// A fixed binary mask.
    Binary(&'a BinaryMask),
    /// Arbitrary mask values in `[0, 1]`, one per base layer.
    Values(&'a [LayerMask]),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    from_logits: bool,
    masks: Vec<LayerMask>,
    base: Vec<LayerCache>,
    head: Vec<LayerCache>,
    output_grad: Tensor,
}

impl ForwardCache {
    pub fn masks(&self) -> &[LayerMask] {
        &self.masks
    }

    /// Base layers followed by head layers.
    pub fn layer_caches(&self) -> impl Iterator<Item = &LayerCache> {
        self.base.iter().chain(&self.head)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub predictions: Tensor,
    pub loss: f64,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// `∂ℓ/∂m` for every base weight mask.
    pub mask: Vec<Tensor>,
    pub bias_mask: Vec<Option<Tensor>>,
    /// Dual-temperature `θ` gradients (empty when the forward pass did not come from logits).
    pub theta: Vec<Tensor>,
    pub bias_theta: Vec<Option<Tensor>>,
    pub head: Vec<DenseGrad>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Accuracy for classification, Spearman's rho for regression; `None`
    /// when the rank correlation is undefined (constant predictions).
    pub metric: Option<f64>,
}

impl Evaluation {
    /// Metric with the undefined rank correlation read as zero correlation.
    pub fn metric_or_zero(&self) -> f64 {
        self.metric.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedNetwork {
    base: Vec<BaseLayer>,
    pub head: Mlp,
    loss: LossKind,
}

impl MaskedNetwork {
    pub fn new(base: Vec<BaseLayer>, head: Mlp, loss: LossKind) -> Result<Self> {
        let mut width = None;
        let widths = base
            .iter()
            .map(|l| (l.w0.shape()[0], l.w0.shape()[1]))
            .chain(head.layers.iter().map(|l| (l.fan_in(), l.fan_out())));
        for (fan_in, fan_out) in widths {
            if let Some(w) = width {
                if w != fan_in {
                    return Err(Error::Dimension {
                        op: "network layer chain",
                        left: vec![w],
                        right: vec![fan_in],
                    });
                }
            }
            width = Some(fan_out);
        }
        let mut names: Vec<&str> = base.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Usage("base layer names must be unique".into()));
        }
        Ok(Self { base, head, loss })
    }

    pub fn base(&self) -> &[BaseLayer] {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut [BaseLayer] {
        &mut self.base
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn input_width(&self) -> usize {
        self.base
            .first()
            .map(|l| l.w0.shape()[0])
            .or_else(|| self.head.layers.first().map(DenseLayer::fan_in))
            .unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.head
            .output_width()
            .or_else(|| self.base.last().map(|l| l.w0.shape()[1]))
            .unwrap_or(0)
    }

    pub fn set_temperatures(&mut self, t: Temperatures) {
        for layer in &mut self.base {
            layer.logits.set_temperatures(t);
            if let Some(b) = &mut layer.bias_logits {
                b.set_temperatures(t);
            }
        }
    }

    /// `(name, shape)` of every maskable tensor, in mask order.
    pub fn mask_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.base {
            out.push((l.weight_mask_name(), l.w0.shape().to_vec()));
            if l.bias_logits.is_some() {
                out.push((l.bias_mask_name(), l.bias0.shape().to_vec()));
            }
        }
        out
    }

    /// Frozen tensors aligned with [`Self::mask_layout`].
    pub fn maskable_weights(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.base {
            out.push(&l.w0);
            if l.bias_logits.is_some() {
                out.push(&l.bias0);
            }
        }
        out
    }

    /// Every logit tensor, aligned with [`Self::mask_layout`].
    pub fn all_logits(&self) -> Vec<&MaskLogits> {
        let mut out = Vec::new();
        for l in &self.base {
            out.push(&l.logits);
            if let Some(b) = &l.bias_logits {
                out.push(b);
            }
        }
        out
    }

    pub fn all_logits_mut(&mut self) -> Vec<&mut MaskLogits> {
        let mut out = Vec::new();
        for l in &mut self.base {
            out.push(&mut l.logits);
            if let Some(b) = &mut l.bias_logits {
                out.push(b);
            }
        }
        out
    }

    pub fn maskable_count(&self) -> usize {
        self.all_logits().iter().map(|l| l.total()).sum()
    }

    /// Fraction of non-positive logits across every maskable tensor.
    pub fn logit_sparsity(&self) -> f64 {
        let logits = self.all_logits();
        let total: usize = logits.iter().map(|l| l.total()).sum();
        let pruned: usize = logits.iter().map(|l| l.pruned()).sum();
        if total == 0 {
            0.0
        } else {
            pruned as f64 / total as f64
        }
    }

    /// `1[θ > 0]` for every maskable tensor.
    pub fn binarize(&self) -> BinaryMask {
        let mut mask = BinaryMask::new();
        for l in &self.base {
            mask.push(l.weight_mask_name(), binarize(&l.logits)).expect("unique names");
            if let Some(b) = &l.bias_logits {
                mask.push(l.bias_mask_name(), binarize(b)).expect("unique names");
            }
        }
        mask
    }

    /// Checks that `mask` names and shapes every maskable tensor.
    pub fn check_mask(&self, mask: &BinaryMask) -> Result<()> {
        let layout = self.mask_layout();
        if layout.len() != mask.tensors().len() {
            return Err(Error::Usage(format!(
                "mask has {} tensors, network expects {}",
                mask.tensors().len(),
                layout.len()
            )));
        }
        for (name, shape) in layout {
            let bits = mask.get(&name).ok_or_else(|| Error::UnknownTensor(name.clone()))?;
            if bits.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "mask tensor",
                    left: shape,
                    right: bits.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Copy whose frozen weights are replaced, aligned with [`Self::base`].
    pub fn with_base_weights(&self, weights: &[(Tensor, Tensor)]) -> Result<Self> {
        if weights.len() != self.base.len() {
            return Err(Error::Usage("one (weights, bias) pair per base layer".into()));
        }
        let base = self
            .base
            .iter()
            .zip(weights)
            .map(|(l, (w, b))| l.with_weights(w.clone(), b.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base,
            head: self.head.clone(),
            loss: self.loss,
        })
    }

    fn resolve_masks(&self, source: MaskSource<'_>) -> Result<Vec<LayerMask>> {
        match source {
            MaskSource::Logits(mode) => Ok(self
                .base
                .iter()
                .map(|l| {
                    let make = |lg: &MaskLogits| match mode {
                        MaskMode::Soft => soft_mask(lg, MaskPass::Forward),
                        MaskMode::Hard => hard_mask(lg),
                    };
                    LayerMask {
                        weight: make(&l.logits),
                        bias: l.bias_logits.as_ref().map(make),
                    }
                })
                .collect()),
            MaskSource::Binary(mask) => {
                self.check_mask(mask)?;
                let to_tensor = |bits: &MaskBits| Tensor::new(bits.shape().to_vec(), bits.to_f64()).expect("mask shape");
                Ok(self
                    .base
                    .iter()
                    .map(|l| LayerMask {
                        weight: to_tensor(mask.get(&l.weight_mask_name()).expect("checked")),
                        bias: l
                            .bias_logits
                            .as_ref()
                            .map(|_| to_tensor(mask.get(&l.bias_mask_name()).expect("checked"))),
                    })
                    .collect())
            }
            MaskSource::Values(values) => {
                if values.len() != self.base.len() {
                    return Err(Error::Usage("one mask value set per base layer".into()));
                }
                for (l, v) in self.base.iter().zip(values) {
                    l.w0.check_same_shape(&v.weight, "mask values")?;
                    match (&l.bias_logits, &v.bias) {
                        (Some(_), Some(b)) => l.bias0.check_same_shape(b, "mask values")?,
                        (None, None) => {}
                        _ => return Err(Error::Usage("bias mask presence mismatch".into())),
                    }
                }
                Ok(values.to_vec())
            }
        }
    }

    /// Runs the network and the loss on `batch`.
    pub fn forward(&self, batch: &Batch, source: MaskSource<'_>) -> Result<ForwardOutput> {
        if batch.inputs.cols() != self.input_width() {
            return Err(Error::Dimension {
                op: "forward input",
                left: vec![self.input_width()],
                right: batch.inputs.shape().to_vec(),
            });
        }
        if batch.targets.cols() != self.output_width() {
            return Err(Error::Dimension {
                op: "forward target",
                left: vec![self.output_width()],
                right: batch.targets.shape().to_vec(),
            });
        }
        let masks = self.resolve_masks(source)?;
        let mut h = batch.inputs.clone();
        let mut base_caches = Vec::with_capacity(self.base.len());
        for (layer, m) in self.base.iter().zip(&masks) {
            let w = layer.w0.hadamard(&m.weight)?;
            let b = match &m.bias {
                Some(bm) => layer.bias0.hadamard(bm)?,
                None => layer.bias0.clone(),
            };
            let (out, cache) = layer_forward(&h, &w, &b, layer.activation)?;
            base_caches.push(cache);
            h = out;
        }
        let (predictions, head_caches) = self.head.forward(&h)?;
        let (loss, output_grad) = loss_and_grad(&predictions, &batch.targets, self.loss)?;
        Ok(ForwardOutput {
            predictions,
            loss,
            cache: ForwardCache {
                rows: batch.len(),
                from_logits: matches!(source, MaskSource::Logits(_)),
                masks,
                base: base_caches,
                head: head_caches,
                output_grad,
            },
        })
    }

    /// Gradients for the forward pass recorded in `cache`.
    ///
    /// The mask gradient is `∂ℓ/∂(w0 ⊙ m) ⊙ w0`; when the pass came from the
    /// logits it is routed through the small-temperature sigmoid derivative.
    /// Head gradients are exact.
    pub fn backward(&self, cache: &ForwardCache, batch: &Batch) -> Result<Gradients> {
        if cache.rows != batch.len()
            || cache.base.len() != self.base.len()
            || cache.head.len() != self.head.layers.len()
        {
            return Err(Error::Usage("stale forward cache".into()));
        }
        let (head, mut g) = self.head.backward(&cache.head, cache.output_grad.clone())?;
        let n = self.base.len();
        let mut mask = vec![Tensor::zeros(&[0]); n];
        let mut bias_mask = vec![None; n];
        for i in (0..n).rev() {
            let layer = &self.base[i];
            let lg = layer_backward(&cache.base[i], &g)?;
            mask[i] = lg.weights.hadamard(&layer.w0)?;
            if cache.masks[i].bias.is_some() {
                bias_mask[i] = Some(lg.bias.hadamard(&layer.bias0)?);
            }
            g = lg.input;
        }
        let (theta, bias_theta) = if cache.from_logits {
            let mut theta = Vec::with_capacity(n);
            let mut bias_theta = Vec::with_capacity(n);
            for (i, layer) in self.base.iter().enumerate() {
                theta.push(theta_gradient(&mask[i], &layer.logits)?);
                bias_theta.push(match (&bias_mask[i], &layer.bias_logits) {
                    (Some(gm), Some(bl)) => Some(theta_gradient(gm, bl)?),
                    _ => None,
                });
            }
            (theta, bias_theta)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Gradients {
            mask,
            bias_mask,
            theta,
            bias_theta,
            head,
        })
    }

    /// Hard-mask evaluation from the current logits.
    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        self.evaluate_with(data, MaskSource::Logits(MaskMode::Hard))
    }

    pub fn evaluate_with(&self, data: &Dataset, source: MaskSource<'_>) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let out = self.forward(data, source)?;
        let metric = task_metric(&out.predictions, &data.targets, self.loss);
        Ok(Evaluation { loss: out.loss, metric })
    }
}

/// Mean over rows of `G(ŷ, y)` and its gradient with respect to `ŷ`.
///
/// Squared error is `Σ_k (ŷ_k − y_k)²`; cross-entropy treats `ŷ` as logits
/// and `y` as (one-hot) class weights.
pub fn loss_and_grad(pred: &Tensor, targets: &Tensor, kind: LossKind) -> Result<(f64, Tensor)> {
    pred.check_same_shape(targets, "loss")?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv = 1.0 / n as f64;
    match kind {
        LossKind::SquaredError => {
            let mut loss = 0.0;
            let grad = pred.zip_map(targets, "loss", |p, y| 2.0 * (p - y) * inv)?;
            for (p, y) in pred.data().iter().zip(targets.data()) {
                loss += (p - y) * (p - y);
            }
            Ok((loss * inv, grad))
        }
        LossKind::CrossEntropy => {
            if !pred.is_finite() {
                return Err(Error::Numeric("cross-entropy on non-finite logits".into()));
            }
            let c = pred.cols();
            let mut loss = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for r in 0..n {
                let z = pred.row(r);
                let y = targets.row(r);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_sum = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let y_sum: f64 = y.iter().sum();
                for k in 0..c {
                    let log_p = z[k] - log_sum;
                    loss -= y[k] * log_p;
                    grad[r * c + k] = (log_p.exp() * y_sum - y[k]) * inv;
                }
            }
            Ok((loss * inv, Tensor::new(pred.shape().to_vec(), grad)?))
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy (classification) or Spearman's rho on the first output (regression).
pub fn task_metric(pred: &Tensor, targets: &Tensor, kind: LossKind) -> Option<f64> {
    match kind {
        LossKind::CrossEntropy => Some(accuracy(pred, targets)),
        LossKind::SquaredError => {
            let p: Vec<f64> = (0..pred.rows()).map(|r| pred.row(r)[0]).collect();
            let y: Vec<f64> = (0..targets.rows()).map(|r| targets.row(r)[0]).collect();
            spearman(&p, &y)
        }
    }
}

pub fn accuracy(pred: &Tensor, targets: &Tensor) -> f64 {
    let n = pred.rows();
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n).filter(|&r| argmax(pred.row(r)) == argmax(targets.row(r))).count();
    hits as f64 / n as f64
}

/// Ranks starting at 1, ties receive their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
