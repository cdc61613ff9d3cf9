//! Matrix-free form of the 5-point system used inside the outer loop.
//!
//! Neighbour contributions are always grouped as `(left + right) + (up +
//! down)`. Transposing the image swaps the two groups, and `+` is
//! commutative, so every kernel here gives bit-identical results on the
//! transposed problem.

use crate::solver::{LinearOperator, Preconditioner};

/// Symmetric operator `c_p v_p - sum_q k_pq v_q` over 4-neighbours.
#[derive(Debug, Clone)]
pub(crate) struct Stencil5 {
    width: usize,
    height: usize,
    center: Vec<f64>,
    /// coupling between `p` and `p + 1`, zero on the last column
    east: Vec<f64>,
    /// coupling between `p` and `p + width`, zero on the last row
    south: Vec<f64>,
}

impl Stencil5 {
    /// `2I + scale (Cx' Wx Cx + Cy' Wy Cy)`, with the same diagonal
    /// rounding as the assembled CSR matrix.
    pub(crate) fn from_weights(
        width: usize,
        height: usize,
        wx: &[f64],
        wy: &[f64],
        scale: f64,
    ) -> Self {
        let n = width * height;
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        for p in 0..n {
            let (r, c) = (p / width, p % width);
            if c + 1 < width {
                east[p] = scale * wx[p];
            }
            if r + 1 < height {
                south[p] = scale * wy[p];
            }
        }
        let center = (0..n)
            .map(|p| {
                let (r, c) = (p / width, p % width);
                let up = if r > 0 { south[p - width] } else { 0.0 };
                let left = if c > 0 { east[p - 1] } else { 0.0 };
                2.0 + ((left + east[p]) + (up + south[p]))
            })
            .collect();
        Self {
            width,
            height,
            center,
            east,
            south,
        }
    }

    /// IC(0) factor; the pivot is shifted by `shift * a_pp`. `None` on a
    /// nonpositive pivot.
    pub(crate) fn ic0(&self, shift: f64) -> Option<StencilIc> {
        let (w, n) = (self.width, self.center.len());
        let mut diag = vec![0.0; n];
        let mut lx = vec![0.0; n];
        let mut ly = vec![0.0; n];
        for p in 0..n {
            let (r, c) = (p / w, p % w);
            if c > 0 {
                lx[p] = -self.east[p - 1] / diag[p - 1];
            }
            if r > 0 {
                ly[p] = -self.south[p - w] / diag[p - w];
            }
            let a = self.center[p];
            let pivot = (a + shift * a) - (lx[p] * lx[p] + ly[p] * ly[p]);
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            diag[p] = pivot.sqrt();
        }
        Some(StencilIc {
            width: w,
            height: self.height,
            diag,
            lx,
            ly,
        })
    }
}

impl LinearOperator for Stencil5 {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let left = if c > 0 {
                    self.east[p - 1] * v[p - 1]
                } else {
                    0.0
                };
                let right = if c + 1 < w {
                    self.east[p] * v[p + 1]
                } else {
                    0.0
                };
                let up = if r > 0 {
                    self.south[p - w] * v[p - w]
                } else {
                    0.0
                };
                let down = if r + 1 < h {
                    self.south[p] * v[p + w]
                } else {
                    0.0
                };
                y[p] = self.center[p] * v[p] - ((left + right) + (up + down));
            }
        }
    }
}

/// Lower factor with unit stride couplings `lx` (to `p - 1`) and `ly` (to
/// `p - width`).
#[derive(Debug, Clone)]
pub(crate) struct StencilIc {
    width: usize,
    height: usize,
    diag: Vec<f64>,
    lx: Vec<f64>,
    ly: Vec<f64>,
}

impl Preconditioner for StencilIc {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        for p in 0..n {
            let (row, c) = (p / w, p % w);
            let left = if c > 0 { self.lx[p] * z[p - 1] } else { 0.0 };
            let up = if row > 0 { self.ly[p] * z[p - w] } else { 0.0 };
            z[p] = (r[p] - (left + up)) / self.diag[p];
        }
        for p in (0..n).rev() {
            let (row, c) = (p / w, p % w);
            let right = if c + 1 < w {
                self.lx[p + 1] * z[p + 1]
            } else {
                0.0
            };
            let down = if row + 1 < h {
                self.ly[p + w] * z[p + w]
            } else {
                0.0
            };
            z[p] = (z[p] - (right + down)) / self.diag[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{incomplete_cholesky, SolverConfig};
    use crate::sparse::{build_gradient_ops, SystemAssembler};

    fn weights(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 + ((i as u64 * 2654435761 + seed) % 97) as f64 / 13.0)
            .collect()
    }

    #[test]
    fn matches_assembled_matrix() {
        let (w, h) = (5, 4);
        let ops = build_gradient_ops(w, h).unwrap();
        let (wx, wy) = (weights(w * h, 1), weights(w * h, 2));
        let a = SystemAssembler::new(&ops)
            .assemble(&wx, &wy, 30.0, 0.25)
            .unwrap();
        let s = Stencil5::from_weights(w, h, &wx, &wy, 30.0 * 0.75);
        let v: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).cos()).collect();
        let mut y = vec![0.0; w * h];
        s.apply(&v, &mut y);
        let reference = a.mul_vec(&v).unwrap();
        for (p, q) in y.iter().zip(&reference) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
        for p in 0..w * h {
            assert_eq!(s.center[p], a.get(p, p));
        }

        let ic = incomplete_cholesky(&a, &SolverConfig::default()).unwrap();
        let sic = s.ic0(0.0).unwrap();
        let (mut z1, mut z2) = (vec![0.0; w * h], vec![0.0; w * h]);
        crate::solver::Preconditioner::apply(&ic, &v, &mut z1);
        sic.apply(&v, &mut z2);
        for (p, q) in z1.iter().zip(&z2) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }
}
