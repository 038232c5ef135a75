//! Spectral learning of mixtures of discrete product distributions.
//!
//! A sample is a vector of `n` categorical labels drawn by first picking a
//! hidden component `q` with probability `w_q` and then drawing every
//! coordinate independently from that component's distribution. This crate
//! estimates the weights and the per-coordinate distributions from samples
//! alone by matching second and third moments:
//!
//! 1. [`moments`]: masked empirical second moment from the first half of the
//!    samples, and whitened masked third moment from the second half;
//! 2. [`altmin`]: fill in the unobservable diagonal blocks of the second
//!    moment by alternating minimization;
//! 3. [`tensorls`]: recover the whitened `r×r×r` third-moment core by least
//!    squares on its observable entries;
//! 4. [`power`]: orthogonal tensor decomposition of the core;
//! 5. [`pipeline`]: assemble the parameters and clamp them into a valid model.
//!
//! [`eval`] and [`cluster`] measure and use fitted models. The `book/`
//! directory of the repository walks through each stage with runnable
//! examples.
//!
//! ```
//! use mixspec::{fit, sample, FitConfig, RandomModelSpec};
//!
//! let truth = RandomModelSpec::new(30, 3, 3, 11).build()?;
//! let samples = sample(&truth, 20_000, 1);
//! let report = fit(&samples, &FitConfig::new(3, 0))?;
//! let err = mixspec::eval::align(&truth, &report.valid_model)?;
//! assert!(err.max_w_error < 0.1);
//! # Ok::<(), mixspec::Error>(())
//! ```

// Negated float comparisons such as `!(x > 0.0)` are used on purpose so
// that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod altmin;
pub mod assignment;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod power;
pub mod rng;
mod serde_matrix;
pub mod tensor;
pub mod tensorls;

pub use altmin::{altmin_complete, AltMinConfig, CompletionResult, Truncation};
pub use cluster::{cluster_map, cluster_projected, ClusterAssignment, ClusterMethod};
pub use error::{Error, Result, Stage};
pub use eval::{align, clustering_accuracy, kl_exact, kl_mc, AlignmentResult, KlEstimate};
pub use model::{
    block_incoherence, oracle_m2, oracle_m3, sample, MaskedMatrix, MixtureModel, RandomModelSpec, SampleSet,
};
pub use moments::{masked_second_moment, masked_third_contraction, EmpiricalMoments};
pub use pipeline::{assemble_parameters, clamp_to_valid, fit, fit_exact, FitConfig, FitReport, RawEstimate};
pub use power::{tensor_power_decompose, PowerConfig, TensorEigenDecomposition};
pub use tensor::CoreTensor;
pub use tensorls::{build_nu_contracted, solve_core, LinearOperatorA, WhiteningOperator};

// The guide's chapters, compiled so their examples run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/moments.md")]
    pub mod moments {}
    #[doc = include_str!("../../../book/src/completion.md")]
    pub mod completion {}
    #[doc = include_str!("../../../book/src/core-tensor.md")]
    pub mod core_tensor {}
    #[doc = include_str!("../../../book/src/power-method.md")]
    pub mod power_method {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    pub mod fitting {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/crowdsourcing.md")]
    pub mod crowdsourcing {}
}
