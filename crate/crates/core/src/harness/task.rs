//! Synthetic and CSV-backed tasks, each with a base network pre-trained on a
//! related source task.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::KvConfig;
use crate::mask::Temperatures;
use crate::model::{loss_and_grad, BaseLayer, Batch, Dataset, LossKind, MaskedNetwork, Mlp};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

/// Fraction of the training split held out for model selection.
pub const VALIDATION_FRACTION: f64 = 0.1;
/// Label noise of the classification source task.
pub const SOURCE_LABEL_FLIP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TeacherStudentRegression,
    GaussianBlobsClassification,
    CsvDataset,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_student_regression" | "regression" => Ok(Self::TeacherStudentRegression),
            "gaussian_blobs_classification" | "blobs" => Ok(Self::GaussianBlobsClassification),
            "csv_dataset" | "csv" => Ok(Self::CsvDataset),
            _ => Err(Error::Config(format!("unknown task kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Training examples before the validation hold-out.
    pub n_train: usize,
    pub n_eval: usize,
    pub input_dim: usize,
    /// Classes for classification; 0 marks a regression CSV target.
    pub classes: usize,
    /// Width of every base layer.
    pub hidden: usize,
    pub base_layers: usize,
    /// Target noise std (regression) for the synthetic tasks.
    pub noise: f64,
    /// Std of the class means (blobs).
    pub separation: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub csv_path: Option<PathBuf>,
    pub seed: u64,
}

impl TaskSpec {
    pub fn regression(seed: u64) -> Self {
        Self {
            kind: TaskKind::TeacherStudentRegression,
            n_train: 2000,
            n_eval: 1000,
            input_dim: 16,
            classes: 0,
            hidden: 32,
            base_layers: 2,
            noise: 0.1,
            separation: 0.0,
            pretrain_steps: 3000,
            pretrain_lr: 0.02,
            csv_path: None,
            seed,
        }
    }

    pub fn blobs(seed: u64) -> Self {
        Self {
            kind: TaskKind::GaussianBlobsClassification,
            classes: 3,
            separation: 0.5,
            noise: 1.0,
            pretrain_lr: 0.05,
            ..Self::regression(seed)
        }
    }

    /// Overrides from `task.*` keys; `task` itself selects the kind.
    pub fn from_config(cfg: &KvConfig, seed: u64) -> Result<Self> {
        let kind: TaskKind = cfg.raw("task").unwrap_or("blobs").parse()?;
        let base = match kind {
            TaskKind::TeacherStudentRegression => Self::regression(seed),
            TaskKind::GaussianBlobsClassification => Self::blobs(seed),
            TaskKind::CsvDataset => Self {
                kind,
                classes: 0,
                ..Self::regression(seed)
            },
        };
        Ok(Self {
            kind,
            n_train: cfg.get_or("task.n_train", base.n_train)?,
            n_eval: cfg.get_or("task.n_eval", base.n_eval)?,
            input_dim: cfg.get_or("task.input_dim", base.input_dim)?,
            classes: cfg.get_or("task.classes", base.classes)?,
            hidden: cfg.get_or("task.hidden", base.hidden)?,
            base_layers: cfg.get_or("task.base_layers", base.base_layers)?,
            noise: cfg.get_or("task.noise", base.noise)?,
            separation: cfg.get_or("task.separation", base.separation)?,
            pretrain_steps: cfg.get_or("task.pretrain_steps", base.pretrain_steps)?,
            pretrain_lr: cfg.get_or("task.pretrain_lr", base.pretrain_lr)?,
            csv_path: cfg.raw("task.csv_path").map(PathBuf::from),
            seed: cfg.get_or("task.seed", seed)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != TaskKind::CsvDataset && (self.n_train < 2 || self.n_eval < 1 || self.input_dim < 1) {
            return Err(Error::Parameter("need n_train >= 2, n_eval >= 1, input_dim >= 1".into()));
        }
        if self.hidden == 0 || self.base_layers == 0 {
            return Err(Error::Parameter("hidden width and base depth must be >= 1".into()));
        }
        if self.kind == TaskKind::GaussianBlobsClassification && self.classes < 2 {
            return Err(Error::Parameter("classification needs >= 2 classes".into()));
        }
        if self.kind == TaskKind::CsvDataset && self.csv_path.is_none() {
            return Err(Error::Parameter("csv task needs task.csv_path".into()));
        }
        if !(self.noise >= 0.0 && self.separation >= 0.0 && self.pretrain_lr > 0.0) {
            return Err(Error::Parameter("noise and separation must be >= 0, pretrain_lr > 0".into()));
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match (self.kind, self.classes) {
            (TaskKind::TeacherStudentRegression, _) | (TaskKind::CsvDataset, 0) => LossKind::SquaredError,
            _ => LossKind::CrossEntropy,
        }
    }
}

/// Data splits plus the pre-trained base with its untrained head `p0`.
#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub train: Dataset,
    pub validation: Dataset,
    pub eval: Dataset,
    /// Base pre-trained on the source task with an untrained target head.
    pub network: MaskedNetwork,
    /// Final source-task training loss of the pre-trained model.
    pub source_loss: f64,
    /// Metric of a predictor that ignores the input.
    pub chance_level: f64,
}

pub fn generate_task(spec: &TaskSpec) -> Result<Task> {
    spec.validate()?;
    let root = Rng::seed_from(spec.seed);
    let (train_full, eval, source, out_dim) = match spec.kind {
        TaskKind::TeacherStudentRegression => teacher_student(spec, &root)?,
        TaskKind::GaussianBlobsClassification => blobs(spec, &root)?,
        TaskKind::CsvDataset => csv_task(spec, &root)?,
    };
    let (train, validation) = split_validation(&train_full, &mut root.fork(6))?;

    let (pretrained, source_loss) = pretrain(spec, &source, &mut root.fork(4))?;
    let temps = Temperatures::default();
    let base = pretrained.layers[..spec.base_layers]
        .iter()
        .enumerate()
        .map(|(i, l)| BaseLayer::new(format!("base.{i}"), l.weights.clone(), l.bias.clone(), l.activation, temps, false))
        .collect::<Result<Vec<_>>>()?;
    let head = Mlp::init(&[spec.hidden, out_dim], &mut root.fork(5));
    let network = MaskedNetwork::new(base, head, spec.loss_kind())?;
    let chance_level = match spec.loss_kind() {
        LossKind::CrossEntropy => 1.0 / out_dim as f64,
        LossKind::SquaredError => 0.0,
    };
    Ok(Task {
        spec: spec.clone(),
        train,
        validation,
        eval,
        network,
        source_loss,
        chance_level,
    })
}

fn split_validation(data: &Dataset, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    let n_val = ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((data.select(&train), data.select(&val)))
}

fn gaussian_inputs(n: usize, d: usize, rng: &mut Rng) -> Tensor {
    rng.normal_tensor(&[n, d], 0.0, 1.0)
}

fn relu_features(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut h = matmul(x, w)?;
    let cols = h.cols();
    for (i, v) in h.data_mut().iter_mut().enumerate() {
        *v = (*v + b.data()[i % cols]).max(0.0);
    }
    Ok(h)
}

type Generated = (Dataset, Dataset, Dataset, usize);

/// Hidden teacher `φ(x) = relu(x W + b)`; the source task predicts 8 random
/// mixtures of all of `φ`, the target a single mixture of a quarter of its
/// units plus noise.
fn teacher_student(spec: &TaskSpec, root: &Rng) -> Result<Generated> {
    let d = spec.input_dim;
    let ht = (spec.hidden / 2).max(4);
    let mut teacher_rng = root.fork(1);
    let w = teacher_rng.normal_tensor(&[d, ht], 0.0, (2.0 / d as f64).sqrt());
    let b = teacher_rng.normal_tensor(&[ht], 0.0, 0.1);
    let src_out = 8;
    let a = teacher_rng.normal_tensor(&[ht, src_out], 0.0, (1.0 / ht as f64).sqrt());
    let mut units: Vec<usize> = (0..ht).collect();
    teacher_rng.shuffle(&mut units);
    let subset = &units[..(ht / 4).max(1)];
    let coef = teacher_rng.normal_tensor(&[subset.len()], 0.0, 1.0);

    let target = |x: Tensor, rng: &mut Rng| -> Result<Dataset> {
        let phi = relu_features(&x, &w, &b)?;
        let n = x.rows();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let row = phi.row(i);
                let clean: f64 = subset.iter().zip(coef.data()).map(|(&u, c)| row[u] * c).sum();
                clean + rng.normal(0.0, spec.noise)
            })
            .collect();
        Batch::new(x, Tensor::new(vec![n, 1], y)?)
    };
    let mut data_rng = root.fork(3);
    let train = target(gaussian_inputs(spec.n_train, d, &mut data_rng), &mut data_rng)?;
    let eval = target(gaussian_inputs(spec.n_eval, d, &mut data_rng), &mut data_rng)?;

    let mut src_rng = root.fork(2);
    let xs = gaussian_inputs(spec.n_train, d, &mut src_rng);
    let ys = matmul(&relu_features(&xs, &w, &b)?, &a)?;
    let source = Batch::new(xs, ys)?;
    Ok((train, eval, source, 1))
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = 1.0;
    }
    t
}

fn flip_labels(labels: &[usize], k: usize, p: f64, rng: &mut Rng) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| if rng.bernoulli(p) { (l + 1 + rng.index(k - 1)) % k } else { l })
        .collect()
}

/// Isotropic clusters around means drawn from `N(0, separation² I)`; the
/// source task is the same problem with a quarter of the labels flipped.
fn blobs(spec: &TaskSpec, root: &Rng) -> Result<Generated> {
    let (d, k) = (spec.input_dim, spec.classes);
    let means = root.fork(1).normal_tensor(&[k, d], 0.0, spec.separation);
    let draw = |n: usize, rng: &mut Rng| -> Result<(Tensor, Vec<usize>)> {
        let labels: Vec<usize> = (0..n).map(|_| rng.index(k)).collect();
        let mut x = Vec::with_capacity(n * d);
        for &l in &labels {
            for j in 0..d {
                x.push(means.at(l, j) + rng.normal(0.0, spec.noise));
            }
        }
        Ok((Tensor::new(vec![n, d], x)?, labels))
    };
    let mut data_rng = root.fork(3);
    let (xt, lt) = draw(spec.n_train, &mut data_rng)?;
    let (xe, le) = draw(spec.n_eval, &mut data_rng)?;
    let mut src_rng = root.fork(2);
    let (xs, ls) = draw(spec.n_train, &mut src_rng)?;
    let ls = flip_labels(&ls, k, SOURCE_LABEL_FLIP, &mut src_rng);
    Ok((
        Batch::new(xt, one_hot(&lt, k))?,
        Batch::new(xe, one_hot(&le, k))?,
        Batch::new(xs, one_hot(&ls, k))?,
        k,
    ))
}

/// Numeric CSV with a header; the last column is the target (an integer
/// label in `0..classes` when `classes > 0`). Rows are shuffled, the first
/// `n_eval` become the evaluation split. The source task perturbs the
/// training targets.
fn csv_task(spec: &TaskSpec, root: &Rng) -> Result<Generated> {
    let path = spec.csv_path.as_ref().expect("validated");
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{other:?}")),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("non-numeric CSV field `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::Malformed("CSV needs >= 2 columns and equal-length rows".into()));
    }
    if spec.input_dim != width - 1 {
        return Err(Error::Parameter(format!("task.input_dim is {} but the CSV has {} features", spec.input_dim, width - 1)));
    }
    if rows.len() < spec.n_eval + 2 {
        return Err(Error::Parameter(format!("{} CSV rows cannot hold {} eval rows plus a train split", rows.len(), spec.n_eval)));
    }
    root.fork(7).shuffle(&mut rows);
    let d = width - 1;
    let k = spec.classes;
    let build = |rows: &[Vec<f64>]| -> Result<(Tensor, Tensor)> {
        let x = Tensor::new(vec![rows.len(), d], rows.iter().flat_map(|r| r[..d].iter().copied()).collect())?;
        let y = if k == 0 {
            Tensor::new(vec![rows.len(), 1], rows.iter().map(|r| r[d]).collect())?
        } else {
            let labels = rows
                .iter()
                .map(|r| {
                    let l = r[d];
                    if l.fract() != 0.0 || l < 0.0 || l as usize >= k {
                        Err(Error::Malformed(format!("label {l} outside 0..{k}")))
                    } else {
                        Ok(l as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            one_hot(&labels, k)
        };
        Ok((x, y))
    };
    let (xe, ye) = build(&rows[..spec.n_eval])?;
    let (xt, yt) = build(&rows[spec.n_eval..])?;
    let mut src_rng = root.fork(2);
    let ys = if k == 0 {
        let std = {
            let m = yt.data().iter().sum::<f64>() / yt.len() as f64;
            (yt.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / yt.len() as f64).sqrt()
        };
        let noisy = yt.data().iter().map(|v| v + src_rng.normal(0.0, 0.5 * std.max(1e-12))).collect();
        Tensor::new(yt.shape().to_vec(), noisy)?
    } else {
        let labels: Vec<usize> = (0..yt.rows())
            .map(|i| yt.row(i).iter().position(|&v| v == 1.0).expect("one-hot"))
            .collect();
        one_hot(&flip_labels(&labels, k, SOURCE_LABEL_FLIP, &mut src_rng), k)
    };
    let source = Batch::new(xt.clone(), ys)?;
    Ok((Batch::new(xt, yt)?, Batch::new(xe, ye)?, source, k.max(1)))
}

/// Trains an MLP of `base_layers` ReLU layers plus a linear read-out on the
/// source task.
fn pretrain(spec: &TaskSpec, source: &Dataset, rng: &mut Rng) -> Result<(Mlp, f64)> {
    let mut widths = vec![source.inputs.cols()];
    widths.extend(std::iter::repeat_n(spec.hidden, spec.base_layers));
    widths.push(source.targets.cols());
    let mut mlp = Mlp::init(&widths, rng);
    let kind = spec.loss_kind();
    let mut last = f64::NAN;
    for step in 1..=spec.pretrain_steps {
        let batch = source.sample(32, rng);
        let (pred, caches) = mlp.forward(&batch.inputs)?;
        let (loss, grad) = loss_and_grad(&pred, &batch.targets, kind)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, layer: None });
        }
        let (grads, _) = mlp.backward(&caches, grad)?;
        mlp.sgd_step(&grads, spec.pretrain_lr);
        last = loss;
    }
    if spec.pretrain_steps > 0 {
        let (pred, _) = mlp.forward(&source.inputs)?;
        last = loss_and_grad(&pred, &source.targets, kind)?.0;
    }
    Ok((mlp, last))
}
