//! Adapt a frozen pre-trained network to a new task by pruning it.
//!
//! Instead of updating weights, a task-specific binary mask over the frozen
//! base weights is learned through a dual-temperature sigmoid relaxation with
//! a sparsity penalty; only a small head is trained. Magnitude and random
//! pruning baselines come alongside mask analyses. A reproducible experiment
//! harness stores masks in a checksummed file format.

pub mod analysis;
pub mod baselines;
pub mod binary_mask;
pub mod error;
pub mod harness;
pub mod mask;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use binary_mask::{BinaryMask, MaskBits, Sparsity};
pub use error::{Error, Result};
pub use mask::{MaskLogits, MaskMode, MaskPass, SparsityPenaltySchedule, Temperatures};
pub use model::{Batch, BaseLayer, Dataset, Evaluation, LossKind, MaskSource, MaskedNetwork, Mlp};
pub use rng::Rng;
pub use tensor::Tensor;
