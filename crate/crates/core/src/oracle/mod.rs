//! Ground-truth machinery used to validate the learnable pipeline.
//!
//! Two independent families:
//!
//! * Gaussian closed forms — squared Bures-Wasserstein distance, the
//!   unregularized barycenter fixed point, and the unexplained-variance
//!   metric built on them ([`gaussian`]).
//! * A discrete-grid solver for the same coupling problem the networks
//!   learn — tree-structured Sinkhorn via message passing ([`sinkhorn`]),
//!   cross-checked against a dense full-tensor brute force ([`dense`]).

pub mod dense;
pub mod gaussian;
pub mod grid;
pub mod sinkhorn;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("numerical underflow in message passing")]
    NumericalUnderflow,
    #[error("dense tensor of {size} entries exceeds the cap of {cap}")]
    InstanceTooLarge { size: usize, cap: usize },
    #[error("measures live on different grids")]
    GridMismatch,
    #[error("coupling does not factorize along the tree (residual {residual:e})")]
    NotTreeFactorized { residual: f64 },
    #[error("covariance is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("weights must be non-negative and sum to 1")]
    BadWeights,
    #[error("node {0} is not a leaf with a prescribed marginal")]
    MissingLeafMarginal(crate::tree::NodeId),
}

pub use dense::{dense_mipf, wp_objective_check, CouplingTensor, DenseMipfRun};
pub use gaussian::{bw2_uvp, bw2_uvp_gaussians, gaussian_barycenter_fixed_point, gaussian_w2sq};
pub use grid::{discrete_kl, discrete_tv, gaussian_on_grid, Grid, GridMeasure, TreeKernelSet};
pub use sinkhorn::{tree_sinkhorn_mp, PotentialSet, SinkhornRun};
