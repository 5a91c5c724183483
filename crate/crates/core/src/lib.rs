//! Gaussian process autoregressive regression.
//!
//! The joint distribution over `M` outputs is factorised by the product rule into
//! `M` single-output GP regressions; layer `i` regresses output `i` on the input
//! `x` and the preceding outputs observed at `x`.
//!
//! - [`kernels`]: covariance expressions over augmented inputs.
//! - [`gp`]: exact single-output GP regression and hyperparameter learning.
//! - [`data`]: multi-output datasets with missing cells, CSV I/O, benchmark splits.
//! - [`gpar`]: the layered model: training, prediction, sampling, persistence.
//! - [`synth`]: synthetic generators and evaluation metrics.
//! - [`oracle`]: brute-force reference computations used for verification.

pub mod data;
pub mod gp;
pub mod gpar;
pub mod kernels;
pub mod optim;
pub mod oracle;
pub mod scalar;
pub mod synth;

pub use scalar::Real;

pub type Kernel64 = kernels::Kernel<f64>;
pub type Kernel32 = kernels::Kernel<f32>;
pub type GpProblem64 = gp::GpProblem<f64>;
pub type GpProblem32 = gp::GpProblem<f32>;
pub type FittedGp64 = gp::FittedGp<f64>;
pub type FittedGp32 = gp::FittedGp<f32>;
pub type Inputs64 = kernels::Inputs<f64>;
