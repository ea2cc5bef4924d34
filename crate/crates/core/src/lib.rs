//! Prototype-based generalized category discovery (GCD) on fixed feature
//! embeddings.
//!
//! The crate learns one unit prototype per class on the hypersphere, jointly
//! for classes seen in the labeled subset ("old") and classes that only occur
//! in the unlabeled pool ("new"). Training combines two-view contrastive
//! losses, adaptive hard/soft pseudo-labels, marginal-entropy and
//! prototype-separation regularizers, all optimized end-to-end with projected
//! SGD. Around the trainer sit Hungarian-matched evaluation, class-number
//! estimation and post-hoc out-of-distribution scoring.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the scalar to `f64`, which is what the CLI and
//! the acceptance suite use.

// `!(x > 0)` style checks are intentional: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dapl;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod ood;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod sphere;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the generic types.
pub type EmbeddingDataset = dataset::EmbeddingDataset<f64>;
/// Row-major `n x d` embedding matrix.
pub type Features = ndarray::Array2<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type ForwardOutputs = model::ForwardOutputs<f64>;
pub type UnitVector = sphere::UnitVector<f64>;
pub type ProbabilityVector = sphere::ProbabilityVector<f64>;
pub type VmfComponent = sphere::VmfComponent<f64>;
pub type LossBreakdown = objectives::LossBreakdown<f64>;
pub type Gradients = model::Gradients<f64>;
pub type TrainConfig = trainer::TrainConfig<f64>;
pub type TrainHistory = trainer::TrainHistory<f64>;
pub type DaplEpochState = dapl::DaplEpochState<f64>;
pub type PseudoLabel = dapl::PseudoLabel<f64>;
pub type OptimizerConfig = optimizer::OptimizerConfig<f64>;
