//! Preconditioned conjugate gradients with a zero-fill incomplete Cholesky
//! preconditioner, and a dense Cholesky solver used as a reference.
//!
//! All reductions go through [`crate::sum`], so a solve is bit-identical
//! under any symmetric relabelling of the unknowns that maps the sparsity
//! pattern onto itself in triangular order (image transposition being the
//! case that matters here).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::sum::{canonical_sum, canonical_sum_iter, exact_dot, exact_norm};

/// Largest system [`dense_solve`] accepts.
pub const DENSE_SOLVE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iters: usize,
    /// First diagonal shift tried when IC(0) breaks down.
    pub ic_shift_initial: f64,
    pub ic_shift_growth: f64,
    pub ic_max_retries: usize,
    /// Recompute the true residual every this many iterations.
    pub residual_refresh: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-2,
            max_iters: 100,
            ic_shift_initial: 1e-3,
            ic_shift_growth: 2.0,
            ic_max_retries: 20,
            residual_refresh: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "solver tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.ic_shift_initial >= 0.0) || !(self.ic_shift_growth > 1.0) {
            return Err(Error::InvalidParameter(
                "IC shift must be nonnegative with growth > 1".into(),
            ));
        }
        if self.residual_refresh == 0 {
            return Err(Error::InvalidParameter(
                "residual_refresh must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    #[serde(skip)]
    pub x: Vec<f64>,
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    pub ic_shift_used: f64,
}

/// IC(0) factor `L` (lower, same pattern as the lower triangle of `A`) and
/// its transpose, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct IcFactor {
    lower: SparseMatrix,
    upper: SparseMatrix,
    shift: f64,
}

impl IcFactor {
    pub fn lower(&self) -> &SparseMatrix {
        &self.lower
    }

    /// Diagonal shift `beta` that was needed, `0` when none.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `z = (L L^T)^{-1} r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        // L y = r, diagonal is the last entry of each row
        for i in 0..n {
            let (cs, vs) = self.lower.row(i);
            let d = cs.len() - 1;
            let s = canonical_sum_iter(d, cs[..d].iter().zip(&vs[..d]).map(|(&j, &l)| l * z[j]));
            z[i] = (r[i] - s) / vs[d];
        }
        // L^T z = y, diagonal is the first entry of each row
        for i in (0..n).rev() {
            let (cs, vs) = self.upper.row(i);
            let s = canonical_sum_iter(
                cs.len() - 1,
                cs[1..].iter().zip(&vs[1..]).map(|(&j, &u)| u * z[j]),
            );
            z[i] = (z[i] - s) / vs[0];
        }
    }
}

/// Zero-fill incomplete Cholesky. When a pivot is not positive the
/// factorization is retried on `A + beta diag(A)` with `beta` starting at
/// `cfg.ic_shift_initial` and growing geometrically.
pub fn incomplete_cholesky(a: &SparseMatrix, cfg: &SolverConfig) -> Result<IcFactor> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "IC(0) needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    let pattern = a.lower_triangle();
    for i in 0..pattern.rows() {
        let (cs, vs) = pattern.row(i);
        match cs.last() {
            Some(&c) if c == i && vs[vs.len() - 1] > 0.0 => {}
            _ => {
                return Err(Error::NotPositiveDefinite {
                    row: i,
                    pivot: a.get(i, i),
                })
            }
        }
    }

    let mut shift = 0.0;
    for attempt in 0..=cfg.ic_max_retries {
        if let Some(values) = factor_values(&pattern, shift) {
            let lower = SparseMatrix::new(
                pattern.rows(),
                pattern.cols(),
                pattern.row_offsets().to_vec(),
                pattern.col_indices().to_vec(),
                values,
            )?;
            let upper = lower.transpose();
            return Ok(IcFactor {
                lower,
                upper,
                shift,
            });
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

/// Row-oriented IC(0) on the lower-triangle pattern; `None` on a
/// nonpositive pivot.
fn factor_values(pattern: &SparseMatrix, shift: f64) -> Option<Vec<f64>> {
    let offsets = pattern.row_offsets();
    let cols = pattern.col_indices();
    let a = pattern.values();
    let mut l = vec![0.0; a.len()];
    let mut buf = Vec::with_capacity(8);
    for i in 0..pattern.rows() {
        let (lo, hi) = (offsets[i], offsets[i + 1]);
        for e in lo..hi - 1 {
            let k = cols[e];
            // sum over j < k present in both row i and row k
            buf.clear();
            let (mut p, mut q) = (lo, offsets[k]);
            let q_end = offsets[k + 1] - 1;
            while p < e && q < q_end {
                match cols[p].cmp(&cols[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        buf.push(l[p] * l[q]);
                        p += 1;
                        q += 1;
                    }
                }
            }
            l[e] = (a[e] - canonical_sum(&mut buf)) / l[q_end];
        }
        let d = hi - 1;
        buf.clear();
        buf.extend(l[lo..d].iter().map(|v| v * v));
        let pivot = (a[d] + shift * a[d]) - canonical_sum(&mut buf);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        l[d] = pivot.sqrt();
    }
    Some(l)
}

/// Solve `A x = b` by (preconditioned) conjugate gradients from `x0`.
pub fn pcg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    precond: Option<&IcFactor>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    pcg_solve_observed(a, b, x0, precond, cfg, |_, _| {})
}

/// [`pcg_solve`] calling `observe(iteration, x)` after every update.
pub fn pcg_solve_observed<F: FnMut(usize, &[f64])>(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    precond: Option<&IcFactor>,
    cfg: &SolverConfig,
    observe: F,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let n = a.rows();
    if a.cols() != n || b.len() != n || x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "PCG on {}x{} with |b| = {}, |x0| = {}",
            a.rows(),
            a.cols(),
            b.len(),
            x0.len()
        )));
    }
    if let Some(m) = precond {
        if m.lower.rows() != n {
            return Err(Error::DimensionMismatch("preconditioner size".into()));
        }
    }
    let ic_shift_used = precond.map_or(0.0, |m| m.shift);
    pcg_core(a, b, x0, precond, ic_shift_used, cfg, observe)
}

/// `y = A v` for a square operator.
pub(crate) trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], y: &mut [f64]);
}

/// `z = M^{-1} r`.
pub(crate) trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        self.mul_vec_canonical_into(v, y);
    }
}

impl Preconditioner for IcFactor {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        IcFactor::apply(self, r, z);
    }
}

/// Conjugate gradients on an already validated problem.
pub(crate) fn pcg_core<A, M, F>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    precond: Option<&M>,
    ic_shift_used: f64,
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<SolveOutcome>
where
    A: LinearOperator + ?Sized,
    M: Preconditioner + ?Sized,
    F: FnMut(usize, &[f64]),
{
    let n = a.dim();
    let b_norm = exact_norm(b);
    if !b_norm.is_finite() {
        return Err(Error::Breakdown("non-finite right-hand side".into()));
    }
    if b_norm == 0.0 {
        return Ok(SolveOutcome {
            x: vec![0.0; n],
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
            ic_shift_used,
        });
    }

    let mut x = x0.to_vec();
    let mut q = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64]| {
        a.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    };
    let precondition = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };

    let mut r = vec![0.0; n];
    true_residual(&x, &mut r);
    let mut rel = exact_norm(&r) / b_norm;
    if !rel.is_finite() {
        return Err(Error::Breakdown("non-finite initial residual".into()));
    }
    if rel <= cfg.tol {
        return Ok(SolveOutcome {
            x,
            iterations: 0,
            final_relative_residual: rel,
            converged: true,
            ic_shift_used,
        });
    }

    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = exact_dot(&r, &z);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        a.apply(&p, &mut q);
        let pq = exact_dot(&p, &q);
        if !pq.is_finite() || !rz.is_finite() {
            return Err(Error::Breakdown(format!(
                "NaN in PCG at iteration {iterations}"
            )));
        }
        if pq <= 0.0 {
            return Err(Error::Breakdown(format!(
                "non-positive curvature p'Ap = {pq} at iteration {iterations}"
            )));
        }
        let step = rz / pq;
        for ((xi, ri), (pi, qi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&q)) {
            *xi += step * pi;
            *ri -= step * qi;
        }
        iterations += 1;
        observe(iterations, &x);

        if iterations % cfg.residual_refresh == 0 {
            true_residual(&x, &mut r);
        }
        rel = exact_norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::Breakdown(format!(
                "NaN residual at iteration {iterations}"
            )));
        }
        if rel <= cfg.tol {
            true_residual(&x, &mut r);
            rel = exact_norm(&r) / b_norm;
            if rel <= cfg.tol {
                converged = true;
                break;
            }
            // recursive residual drifted; restart from the true one
            precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = exact_dot(&r, &z);
            continue;
        }
        precondition(&r, &mut z);
        let rz_next = exact_dot(&r, &z);
        let beta = rz_next / rz;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rz = rz_next;
    }

    if !converged {
        true_residual(&x, &mut r);
        rel = exact_norm(&r) / b_norm;
        converged = rel <= cfg.tol;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Breakdown("non-finite PCG iterate".into()));
    }
    Ok(SolveOutcome {
        x,
        iterations,
        final_relative_residual: rel,
        converged,
        ic_shift_used,
    })
}

/// Dense Cholesky factor (row-major lower triangle) of a symmetric positive
/// definite matrix.
pub fn dense_cholesky(a: &SparseMatrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(
            "dense Cholesky needs a square matrix".into(),
        ));
    }
    if n > DENSE_SOLVE_CAP {
        return Err(Error::TooLarge {
            n,
            cap: DENSE_SOLVE_CAP,
        });
    }
    let mut l = a.to_dense();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = l[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
        for c in j + 1..n {
            l[j * n + c] = 0.0;
        }
    }
    Ok(l)
}

/// Direct solve of an SPD system through a dense Cholesky factorization.
pub fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {n} unknowns",
            b.len()
        )));
    }
    let l = dense_cholesky(a)?;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    Ok(y)
}
