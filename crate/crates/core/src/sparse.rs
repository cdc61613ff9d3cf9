//! Compressed sparse row matrices, forward-difference gradient operators and
//! assembly of the per-iteration 5-point system.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::sum::canonical_sum_iter;

/// CSR matrix with sorted, unique column indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, validating every structural invariant.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
            return Err(Error::InvalidParameter(
                "row_offsets must span [0, nnz]".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::DimensionMismatch(
                "col_indices and values differ in length".into(),
            ));
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::InvalidParameter(
                    "row_offsets must be nondecreasing".into(),
                ));
            }
            let cs = &col_indices[lo..hi];
            if cs.iter().any(|&c| c >= cols) || cs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: column indices must be strictly increasing and < {cols}"
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<_> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::DimensionMismatch(format!(
                "entry ({r}, {c}) outside {rows}x{cols}"
            )));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(vec![1.0; n])
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at `(r, c)`, zero when absent.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cs, vs) = self.row(r);
        cs.binary_search(&c).map(|k| vs[k]).unwrap_or(0.0)
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Explicit transpose. Rows of the result list entries in ascending
    /// source-row order.
    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                let k = next[c];
                col_indices[k] = r;
                values[k] = v;
                next[c] += 1;
            }
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Exact structural and value symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                d[r * self.cols + c] = v;
            }
        }
        d
    }

    /// Lower triangle including the diagonal.
    pub fn lower_triangle(&self) -> SparseMatrix {
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if c <= r {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    fn check_len(&self, v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against {}x{} matrix",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// `y = M v`, each row accumulated left to right in column order.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v, self.cols)?;
        Ok((0..self.rows)
            .map(|r| {
                let (cs, vs) = self.row(r);
                cs.iter().zip(vs).fold(0.0, |s, (&c, &a)| s + a * v[c])
            })
            .collect())
    }

    /// `y = M^T v` by scattering rows in order, which reproduces
    /// `transpose().mul_vec(v)` bit for bit.
    pub fn mul_vec_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v, self.rows)?;
        let mut y = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &a) in cs.iter().zip(vs) {
                y[c] += a * vr;
            }
        }
        Ok(y)
    }

    /// `y = M v` where each row sum depends only on the set of products in
    /// that row, not on the column labelling. Lengths are the caller's
    /// responsibility.
    pub(crate) fn mul_vec_canonical_into(&self, v: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (cs, vs) = self.row(r);
            *out = canonical_sum_iter(cs.len(), cs.iter().zip(vs).map(|(&c, &a)| a * v[c]));
        }
    }

    /// Dump in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for r in 0..self.rows {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

pub fn spmv(m: &SparseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    m.mul_vec(v)
}

pub fn spmv_transpose(m: &SparseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    m.mul_vec_transpose(v)
}

/// Forward-difference operators on a row-major `width x height` grid.
///
/// Rows whose forward neighbour falls outside the image (last column for
/// `cx`, last row for `cy`) are empty, so both operators stay `N x N`.
#[derive(Debug, Clone)]
pub struct GradientOperators {
    pub cx: SparseMatrix,
    pub cy: SparseMatrix,
    pub width: usize,
    pub height: usize,
}

impl GradientOperators {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.cx.mul_vec(v)
    }

    pub fn dy(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.cy.mul_vec(v)
    }

    /// `Cx^T sx + Cy^T sy`.
    pub fn divergence_like(&self, sx: &[f64], sy: &[f64]) -> Result<Vec<f64>> {
        let tx = self.cx.mul_vec_transpose(sx)?;
        let ty = self.cy.mul_vec_transpose(sy)?;
        Ok(tx.iter().zip(&ty).map(|(a, b)| a + b).collect())
    }
}

pub fn build_gradient_ops(width: usize, height: usize) -> Result<GradientOperators> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "gradient operators need positive dimensions, got {width}x{height}"
        )));
    }
    let n = width * height;
    let forward = |step: usize, active: &dyn Fn(usize) -> bool| {
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(2 * n);
        let mut values = Vec::with_capacity(2 * n);
        for p in 0..n {
            if active(p) {
                col_indices.extend([p, p + step]);
                values.extend([-1.0, 1.0]);
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets,
            col_indices,
            values,
        }
    };
    let cx = forward(1, &|p| p % width + 1 < width);
    let cy = forward(width, &|p| p / width + 1 < height);
    Ok(GradientOperators {
        cx,
        cy,
        width,
        height,
    })
}

/// `1 / (|d| + epsilon)` elementwise.
pub fn weights_from_gradient(d: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(d.iter().map(|x| 1.0 / (x.abs() + epsilon)).collect())
}

/// Signum with `sgn(0) = 0`.
pub fn signs_from_gradient(d: &[f64]) -> Vec<f64> {
    d.iter()
        .map(|&x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn check_lambda_alpha(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Fixed 5-point sparsity pattern of the system matrix for one image size.
///
/// The pattern is built once; [`SystemAssembler::assemble`] only refills
/// values.
#[derive(Debug, Clone)]
pub struct SystemAssembler {
    width: usize,
    height: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SystemAssembler {
    pub fn new(ops: &GradientOperators) -> Self {
        let (w, h) = (ops.width, ops.height);
        let n = w * h;
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(5 * n);
        for p in 0..n {
            let (r, c) = (p / w, p % w);
            if r > 0 {
                col_indices.push(p - w);
            }
            if c > 0 {
                col_indices.push(p - 1);
            }
            col_indices.push(p);
            if c + 1 < w {
                col_indices.push(p + 1);
            }
            if r + 1 < h {
                col_indices.push(p + w);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            width: w,
            height: h,
            row_offsets,
            col_indices,
        }
    }

    /// `2I + lambda (1 - alpha) (Cx' Wx Cx + Cy' Wy Cy)`; exactly `2I` at
    /// `alpha = 1`.
    pub fn assemble(
        &self,
        wx: &[f64],
        wy: &[f64],
        lambda: f64,
        alpha: f64,
    ) -> Result<SparseMatrix> {
        check_lambda_alpha(lambda, alpha)?;
        let (w, h) = (self.width, self.height);
        let n = w * h;
        for (name, ws) in [("wx", wx), ("wy", wy)] {
            if ws.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has length {}, expected {n}",
                    ws.len()
                )));
            }
            if let Some(i) = ws.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name}[{i}] = {} is not strictly positive",
                    ws[i]
                )));
            }
        }
        if alpha == 1.0 {
            return Ok(SparseMatrix::diagonal(vec![2.0; n]));
        }
        let scale = lambda * (1.0 - alpha);
        let mut values = Vec::with_capacity(self.col_indices.len());
        for p in 0..n {
            let (r, c) = (p / w, p % w);
            let up = if r > 0 { scale * wy[p - w] } else { 0.0 };
            let left = if c > 0 { scale * wx[p - 1] } else { 0.0 };
            let right = if c + 1 < w { scale * wx[p] } else { 0.0 };
            let down = if r + 1 < h { scale * wy[p] } else { 0.0 };
            if r > 0 {
                values.push(-up);
            }
            if c > 0 {
                values.push(-left);
            }
            // grouped so that swapping the roles of x and y is exact
            values.push(2.0 + ((left + right) + (up + down)));
            if c + 1 < w {
                values.push(-right);
            }
            if r + 1 < h {
                values.push(-down);
            }
        }
        Ok(SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values,
        })
    }
}

pub fn assemble_system(
    ops: &GradientOperators,
    wx: &[f64],
    wy: &[f64],
    lambda: f64,
    alpha: f64,
) -> Result<SparseMatrix> {
    SystemAssembler::new(ops).assemble(wx, wy, lambda, alpha)
}

/// `b = v_g + v_fhat - lambda (alpha / 2) (Cx' sx + Cy' sy)`.
pub fn assemble_rhs(
    v_g: &[f64],
    v_fhat: &[f64],
    ops: &GradientOperators,
    sx: &[f64],
    sy: &[f64],
    lambda: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_lambda_alpha(lambda, alpha)?;
    let n = ops.len();
    for (name, v) in [("v_g", v_g), ("v_fhat", v_fhat), ("sx", sx), ("sy", sy)] {
        if v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} has length {}, expected {n}",
                v.len()
            )));
        }
    }
    let t = ops.divergence_like(sx, sy)?;
    let coef = lambda * (alpha / 2.0);
    Ok(v_g
        .iter()
        .zip(v_fhat)
        .zip(&t)
        .map(|((g, f), t)| (g + f) - coef * t)
        .collect())
}
