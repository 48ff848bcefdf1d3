//! Quasi-diagonal Riemannian gradient descent for feedforward networks.
//!
//! The crate trains multilayer perceptrons with a family of optimizers that
//! precondition the gradient by a curvature metric restricted to a
//! *quasi-diagonal* shape: per neuron, the diagonal plus the row coupling
//! the bias with each incoming weight. That shape keeps training invariant
//! under affine changes of every unit's activity (sigmoid vs tanh, inverted
//! inputs) at roughly twice the cost of a diagonal preconditioner.
//!
//! Layout of the crate:
//!
//! - [`metric`]: storage, rank-one accumulation and approximate inversion
//!   of quasi-diagonal and diagonal metrics.
//! - [`network`]: the MLP, batched forward/backward passes, sparse
//!   connectivity and checkpoints.
//! - [`outputs`]: softmax, Gaussian and Bernoulli heads (loss, gradient
//!   seeds, pseudo-target sampling, exact Fisher terms).
//! - [`optim`]: SGD, AdaGrad and the six Riemannian variants.
//! - [`data`]: IDX/CSV loading, transforms, synthetic signals, minibatches.
//! - [`harness`]: training loop, step-size grid search, timing and the
//!   built-in verification suites behind the `qdnet` binary.

pub mod data;
pub mod error;
mod fpenv;
pub mod harness;
pub mod metric;
pub mod network;
pub mod optim;
pub mod outputs;
mod param;

pub use error::{Error, Result};
pub use metric::{BlockLayout, MetricConfig, MetricMode, QdMetric};
pub use network::{Activation, Mode, Network};
pub use optim::{Algorithm, Optimizer, OptimizerConfig};
pub use outputs::{OutputModel, Target, TargetRef};
pub use param::ParamVector;
