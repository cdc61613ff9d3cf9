//! Variational SAR despeckling with a quadratic-linear approximation of the
//! anisotropic total variation.
//!
//! Each outer iteration linearizes the l1 regularizer around the previous
//! iterate and solves a sparse symmetric positive definite 5-point system
//! with incomplete-Cholesky preconditioned conjugate gradients:
//!
//! ```text
//! A = 2I + lambda (1 - alpha) (Cx' Wx Cx + Cy' Wy Cy)
//! b = g + f_hat - lambda (alpha / 2) (Cx' sx + Cy' sy)
//! ```
//!
//! `alpha = 0` gives the purely quadratic (SDD-style) reweighting,
//! `alpha = 1` makes `A` diagonal.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod despeckle;
mod error;
pub mod image;
pub mod metrics;
pub mod simulate;
pub mod solver;
pub mod sparse;
mod stencil;
pub mod sum;

pub use despeckle::{
    cost_gradient, cost_linearized, cost_true, ql_abs, run_despeckle, run_despeckle_with,
    DespeckleParams, DespeckleReport, InnerSolver, IterationRecord, IterationSystem,
};
pub use error::{Error, Result};
pub use image::{image_stats, load_image, save_image, Image, ImageFormat, ImageStats};
pub use metrics::{snr_db, ssim, MetricParams};
pub use simulate::{apply_speckle, generate_phantom, PhantomKind, PhantomSpec, SpeckleSpec};
pub use solver::{
    dense_solve, incomplete_cholesky, pcg_solve, IcFactor, SolveOutcome, SolverConfig,
};
pub use sparse::{
    assemble_rhs, assemble_system, build_gradient_ops, signs_from_gradient, spmv, spmv_transpose,
    weights_from_gradient, GradientOperators, SparseMatrix,
};
