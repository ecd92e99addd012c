//! Curvature-aware posterior sampling for small dense networks.
//!
//! The building blocks, bottom up:
//!
//! * [`net`]: dense networks with JVPs, VJPs and explicit Jacobians
//! * [`likelihood`]: observation models and their output-space Hessians
//! * [`curvature`]: matrix-free GGN operator, dense GGN/NTK, covariance split
//! * [`lanczos`]: top-k eigenpairs with full reorthogonalization
//! * [`posterior`]: sampled Laplace, Laplace diffusion, kernel diffusion and
//!   the neural-network / linearized predictives
//! * [`geometry`]: pullback path lengths and ReLU rescaling checks
//! * [`metrics`]: calibration metrics and AUROC
//! * [`io`]: checkpoint and sample file formats

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod lanczos;
pub mod likelihood;
pub mod metrics;
pub mod net;
pub mod posterior;

pub use curvature::{
    decompose_covariance, dense_ggn, ggn_rank, ntk_matrix, split_sample, CovarianceDecomposition, CurvatureOperator,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use lanczos::{inv_sqrt_apply, lanczos_topk, LanczosConfig, LinearOperator, LowRankEigen};
pub use likelihood::Likelihood;
pub use net::{Activation, Dataset, NetworkSpec, ParamVector, Target, Targets};
pub use posterior::{
    kernel_diffusion, laplace_diffusion, predictive_linearized, predictive_nn, sample_laplace, DiffusionConfig,
    PosteriorSamples, Predictive, PredictiveKind, SamplerKind,
};
