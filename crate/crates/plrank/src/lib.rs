//! Plackett-Luce (multinomial logit) models learned from general partial
//! rankings.
//!
//! A partial ranking is a set of pairwise preferences forming a DAG. Exact
//! MNL likelihoods of such rankings require summing over all linear
//! extensions, which is intractable beyond toy sizes. This crate instead
//! decomposes each ranking into maximal ordered partitions per weakly
//! connected component ([`PartialRanking::decompose`](poset::PartialRanking::decompose)) and evaluates each partition
//! chain with a one-dimensional numerical integral
//! ([`likelihood::pp_log_likelihood_and_grad`]). Brute-force oracles over
//! linear extensions are kept alongside for verification at small sizes.
//!
//! On top of the likelihood kernel sit:
//! - [`models`]: free and linear-in-features utility parameterizations,
//!   mixtures with shared-parameter bindings, and softmax-normalized MSE;
//! - [`training`]: full-batch AdaGrad fitting, ranking-distance K-means
//!   initialization, and the mixture EM loop;
//! - [`netform`]: network formation as discrete choice — an (r, p) growth
//!   simulator, uniform/preferential attachment mixture components with a
//!   shared degree exponent, structural features, negative sampling, and
//!   precision@k.
//!
//! The numeric kernel is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the aliases at the crate root fix `f64`, which is what
//! the application layers and the CLI use.

pub mod likelihood;
pub mod models;
pub mod netform;
pub mod poset;
pub mod scalar;
pub mod training;

pub use poset::{ItemId, PartialRanking, PartitionedPreference, PosetError};
pub use scalar::Real;

/// Default scalar for the application layers.
pub type Scalar = f64;

/// Utility scores over the item universe, `f64` instantiation.
pub type Utilities = likelihood::UtilityVector<Scalar>;
/// Gradient of a log-likelihood with respect to utilities, `f64` instantiation.
pub type Gradient = likelihood::GradientVector<Scalar>;
/// Gauss-Legendre rule used by the integral likelihood, `f64` instantiation.
pub type Quadrature = likelihood::QuadratureRule<Scalar>;
/// Free per-item utility model, `f64` instantiation.
pub type FreeModel = models::FreeUtilityModel<Scalar>;
/// Linear-in-features utility model, `f64` instantiation.
pub type LinearModel = models::LinearUtilityModel<Scalar>;
/// Mixture of utility models, `f64` instantiation.
pub type Mixture = models::MixtureModel<Scalar>;
/// AdaGrad configuration, `f64` instantiation.
pub type Optimizer = training::OptimizerConfig<Scalar>;
