//! Quadratic-linear approximation of `|z|`, the linearized cost and the
//! outer despeckling loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::solver::{dense_solve, pcg_core, SolverConfig};
use crate::sparse::{
    assemble_rhs, build_gradient_ops, signs_from_gradient, weights_from_gradient,
    GradientOperators, SparseMatrix, SystemAssembler,
};
use crate::stencil::{Stencil5, StencilIc};
use crate::sum::exact_norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DespeckleParams {
    /// Smoothing strength. Depends on the dynamic range of the data.
    pub lambda: f64,
    pub epsilon: f64,
    /// Blend between the quadratic (0) and linear (1) approximations.
    pub alpha: f64,
    /// Number of outer iterations.
    pub n_max: usize,
    pub solver: SolverConfig,
}

impl Default for DespeckleParams {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            epsilon: 1e-2,
            alpha: 0.5,
            n_max: 5,
            solver: SolverConfig::default(),
        }
    }
}

impl DespeckleParams {
    /// Quadratic-only reweighting (`alpha = 0`), used as the SDD baseline.
    pub fn sdd() -> Self {
        Self {
            alpha: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        self.solver.validate()
    }
}

/// `(1 - alpha) z^2 / (|zhat| + epsilon) + alpha sgn(zhat) z`.
pub fn ql_abs(z: f64, zhat: f64, alpha: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let sgn = if zhat > 0.0 {
        1.0
    } else if zhat < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok((1.0 - alpha) * z * z / (zhat.abs() + epsilon) + alpha * sgn * z)
}

/// Anisotropic TV cost `(1/2N) sum (f - g)^2 + lambda (|dx f| + |dy f|)`.
pub fn cost_true(f: &Image, g: &Image, lambda: f64) -> Result<f64> {
    f.check_shape(g)?;
    let ops = build_gradient_ops(f.width(), f.height())?;
    let dx = ops.dx(f.pixels())?;
    let dy = ops.dy(f.pixels())?;
    let fidelity: f64 = f
        .pixels()
        .iter()
        .zip(g.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let tv: f64 = dx.iter().zip(&dy).map(|(a, b)| a.abs() + b.abs()).sum();
    Ok((fidelity + lambda * tv) / (2.0 * f.len() as f64))
}

struct Linearization {
    ops: GradientOperators,
    wx: Vec<f64>,
    wy: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

fn linearize(
    f: &Image,
    fhat: &Image,
    g: &Image,
    params: &DespeckleParams,
) -> Result<Linearization> {
    f.check_shape(fhat)?;
    f.check_shape(g)?;
    if !(params.epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let ops = build_gradient_ops(f.width(), f.height())?;
    let dx = ops.dx(fhat.pixels())?;
    let dy = ops.dy(fhat.pixels())?;
    Ok(Linearization {
        wx: weights_from_gradient(&dx, params.epsilon)?,
        wy: weights_from_gradient(&dy, params.epsilon)?,
        sx: signs_from_gradient(&dx),
        sy: signs_from_gradient(&dy),
        ops,
    })
}

/// Cost of `f` under the approximation built around the proxy `fhat`,
/// including the `(f - fhat)^2` proximity term.
pub fn cost_linearized(
    f: &Image,
    fhat: &Image,
    g: &Image,
    params: &DespeckleParams,
) -> Result<f64> {
    let lin = linearize(f, fhat, g, params)?;
    let dx = lin.ops.dx(f.pixels())?;
    let dy = lin.ops.dy(f.pixels())?;
    let (lambda, alpha) = (params.lambda, params.alpha);
    let mut total = 0.0;
    for p in 0..f.len() {
        let (fp, gp, hp) = (f.pixels()[p], g.pixels()[p], fhat.pixels()[p]);
        let quad = lin.wx[p] * dx[p] * dx[p] + lin.wy[p] * dy[p] * dy[p];
        let lin_term = lin.sx[p] * dx[p] + lin.sy[p] * dy[p];
        total += (fp - gp) * (fp - gp)
            + (fp - hp) * (fp - hp)
            + lambda * ((1.0 - alpha) * quad + alpha * lin_term);
    }
    Ok(total / (2.0 * f.len() as f64))
}

/// Gradient of [`cost_linearized`] with respect to the pixels of `f`.
pub fn cost_gradient(
    f: &Image,
    fhat: &Image,
    g: &Image,
    params: &DespeckleParams,
) -> Result<Vec<f64>> {
    let lin = linearize(f, fhat, g, params)?;
    let ops = &lin.ops;
    let dx = ops.dx(f.pixels())?;
    let dy = ops.dy(f.pixels())?;
    let wdx: Vec<f64> = dx.iter().zip(&lin.wx).map(|(d, w)| d * w).collect();
    let wdy: Vec<f64> = dy.iter().zip(&lin.wy).map(|(d, w)| d * w).collect();
    let smooth = ops.divergence_like(&wdx, &wdy)?;
    let linear = ops.divergence_like(&lin.sx, &lin.sy)?;
    let (lambda, alpha) = (params.lambda, params.alpha);
    let n = f.len() as f64;
    Ok((0..f.len())
        .map(|p| {
            let (fp, gp, hp) = (f.pixels()[p], g.pixels()[p], fhat.pixels()[p]);
            ((fp - gp)
                + (fp - hp)
                + lambda * (1.0 - alpha) * smooth[p]
                + lambda * (alpha / 2.0) * linear[p])
                / n
        })
        .collect())
}

/// Linear system of one outer iteration.
#[derive(Debug, Clone)]
pub struct IterationSystem {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub v_fhat: Vec<f64>,
}

impl IterationSystem {
    /// Weights, signs, matrix and right-hand side linearized at `v_fhat`.
    pub fn build(
        ops: &GradientOperators,
        assembler: &SystemAssembler,
        v_g: &[f64],
        v_fhat: Vec<f64>,
        params: &DespeckleParams,
    ) -> Result<Self> {
        let dx = ops.dx(&v_fhat)?;
        let dy = ops.dy(&v_fhat)?;
        let wx = weights_from_gradient(&dx, params.epsilon)?;
        let wy = weights_from_gradient(&dy, params.epsilon)?;
        let sx = signs_from_gradient(&dx);
        let sy = signs_from_gradient(&dy);
        let a = assembler.assemble(&wx, &wy, params.lambda, params.alpha)?;
        let b = assemble_rhs(v_g, &v_fhat, ops, &sx, &sy, params.lambda, params.alpha)?;
        Ok(Self {
            a,
            b,
            wx,
            wy,
            sx,
            sy,
            v_fhat,
        })
    }
}

/// How the linear system of each outer iteration is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSolver {
    /// Conjugate gradients with IC(0), warm-started at the proxy.
    PcgIc0,
    /// Conjugate gradients without preconditioning.
    Pcg,
    /// Dense Cholesky; small images only.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer_n: usize,
    pub pcg_iterations: usize,
    pub pcg_relative_residual: f64,
    pub pcg_converged: bool,
    pub ic_shift: f64,
    pub cost_true_value: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DespeckleReport {
    pub iterations: Vec<IterationRecord>,
    pub total_pcg_iterations: usize,
    pub total_wall_time_ms: f64,
}

impl DespeckleReport {
    pub fn all_converged(&self) -> bool {
        self.iterations.iter().all(|r| r.pcg_converged)
    }

    /// Report with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> DespeckleReport {
        let mut r = self.clone();
        r.total_wall_time_ms = 0.0;
        for it in &mut r.iterations {
            it.wall_time_ms = 0.0;
        }
        r
    }
}

/// Despeckle `g` with IC(0)-preconditioned conjugate gradients.
pub fn run_despeckle(g: &Image, params: &DespeckleParams) -> Result<(Image, DespeckleReport)> {
    run_despeckle_with(g, params, InnerSolver::PcgIc0)
}

/// IC(0) of the stencil with the same shifted retries as
/// [`incomplete_cholesky`](crate::solver::incomplete_cholesky).
fn stencil_ic0(op: &Stencil5, cfg: &SolverConfig) -> Result<(StencilIc, f64)> {
    let mut shift = 0.0;
    for attempt in 0..=cfg.ic_max_retries {
        if let Some(ic) = op.ic0(shift) {
            return Ok((ic, shift));
        }
        shift = if attempt == 0 {
            cfg.ic_shift_initial
        } else {
            shift * cfg.ic_shift_growth
        };
    }
    Err(Error::FactorizationFailed {
        retries: cfg.ic_max_retries,
    })
}

pub fn run_despeckle_with(
    g: &Image,
    params: &DespeckleParams,
    inner: InnerSolver,
) -> Result<(Image, DespeckleReport)> {
    params.validate()?;
    let start = Instant::now();
    let ops = build_gradient_ops(g.width(), g.height())?;
    let assembler = SystemAssembler::new(&ops);
    let v_g = g.pixels();
    let mut v_f = v_g.to_vec();
    let mut report = DespeckleReport::default();

    for outer_n in 1..=params.n_max {
        let t0 = Instant::now();
        let v_fhat = std::mem::take(&mut v_f);
        let sys = IterationSystem::build(&ops, &assembler, v_g, v_fhat, params)?;

        let (x, pcg_iterations, residual, converged, shift) = if params.alpha == 1.0 {
            // A = 2I
            let x: Vec<f64> = sys.b.iter().map(|v| v * 0.5).collect();
            (x, 0, 0.0, true, 0.0)
        } else {
            match inner {
                InnerSolver::PcgIc0 | InnerSolver::Pcg => {
                    let scale = params.lambda * (1.0 - params.alpha);
                    let op = Stencil5::from_weights(g.width(), g.height(), &sys.wx, &sys.wy, scale);
                    let ic = match inner {
                        InnerSolver::PcgIc0 => Some(stencil_ic0(&op, &params.solver)?),
                        _ => None,
                    };
                    let out = pcg_core(
                        &op,
                        &sys.b,
                        &sys.v_fhat,
                        ic.as_ref().map(|(m, _)| m),
                        ic.as_ref().map_or(0.0, |(_, shift)| *shift),
                        &params.solver,
                        |_, _| {},
                    )?;
                    (
                        out.x,
                        out.iterations,
                        out.final_relative_residual,
                        out.converged,
                        out.ic_shift_used,
                    )
                }
                InnerSolver::Dense => {
                    let x = dense_solve(&sys.a, &sys.b)?;
                    let ax = sys.a.mul_vec(&x)?;
                    let r: Vec<f64> = sys.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
                    let b_norm = exact_norm(&sys.b);
                    let rel = if b_norm > 0.0 {
                        exact_norm(&r) / b_norm
                    } else {
                        0.0
                    };
                    (x, 0, rel, true, 0.0)
                }
            }
        };
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        v_f = x;

        let f = g.with_pixels(v_f.clone())?;
        let cost = cost_true(&f, g, params.lambda)?;
        report.total_pcg_iterations += pcg_iterations;
        report.iterations.push(IterationRecord {
            outer_n,
            pcg_iterations,
            pcg_relative_residual: residual,
            pcg_converged: converged,
            ic_shift: shift,
            cost_true_value: cost,
            wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    report.total_wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((g.with_pixels(v_f)?, report))
}
