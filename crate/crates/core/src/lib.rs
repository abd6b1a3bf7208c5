//! Multi-target Stein sampling.
//!
//! A set of particles is transported toward the region where `K`
//! unnormalized densities are jointly high. Each step computes one Stein
//! direction per target, the RKHS Gram matrix `U` of those directions, and
//! the minimum-norm convex combination `w* = argmin_{w ∈ Δ_K} wᵀUw`. Moving
//! along `Σ w*_i φ_i` does not increase any of the KL divergences to first
//! order, because `⟨Σ w*_j φ_j, φ_i⟩ ≥ ‖Σ w*_j φ_j‖²` for every `i`.
//!
//! | module | contents |
//! |--------|----------|
//! | [`kernels`] | RBF kernel, derivatives, median bandwidth |
//! | [`targets`] | score-function densities: Gaussian mixtures, Gibbs targets |
//! | [`stein`] | per-target directions and the Gram matrix |
//! | [`qp`] | simplex QP and direction combination |
//! | [`sampler`] | the outer loop, SVGD/MGDA reductions, per-particle baseline |
//! | [`mtl`] | shared-trunk multi-task ensembles |
//! | [`metrics`] | Brier, ECE, log-density and ZDT3 front metrics |

pub mod error;
pub mod kernels;
pub mod metrics;
pub mod mtl;
pub mod optim;
pub mod particles;
pub mod qp;
pub mod sampler;
pub mod stein;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{median_bandwidth, Kernel, KernelDerivatives, RbfKernel};
pub use optim::{Optimizer, OptimizerState};
pub use particles::ParticleSet;
pub use qp::{combine_directions, solve_simplex_qp, QpReport, QpSettings, SimplexWeights};
pub use sampler::{
    mtsgd_step, per_particle_qp_baseline_step, run, BandwidthMode, Method, RunOptions, Sampler, StepConfig,
    StepOutcome, TrajectoryRecord,
};
pub use stein::{gram_matrix, per_target_directions, rbf_gram_closed_form, DirectionField, GramMatrix, ScoreTable};
pub use targets::{build_three_mixture_targets, FlatTarget, GaussianMixture, GibbsTarget, TargetDensity};
