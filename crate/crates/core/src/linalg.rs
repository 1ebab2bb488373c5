//! Column-equilibrated SVD helpers shared by the estimator and the bound code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Systems whose reciprocal condition number falls below this are rejected.
pub const RCOND_GATE: f64 = 1e-10;

/// Rank and conditioning of a column-equilibrated matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub rank: usize,
    pub columns: usize,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub condition_number: f64,
}

impl RankDiagnostics {
    pub fn rcond(&self) -> f64 {
        if self.max_singular_value > 0.0 {
            self.min_singular_value / self.max_singular_value
        } else {
            0.0
        }
    }

    /// Full column rank and above the conditioning gate.
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.columns && self.rcond() >= RCOND_GATE
    }
}

/// Thin SVD `U diag(s) V^T` of `m * diag(1 / scales)`, where `scales` are the column norms.
///
/// The factorization comes from faer: nalgebra's bidiagonal SVD returns
/// inaccurate factors for some well-conditioned regression matrices.
pub(crate) struct ScaledSvd {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v_t: DMatrix<f64>,
    scales: DVector<f64>,
    pub diagnostics: RankDiagnostics,
}

fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = a.thin_svd();
    match svd {
        Ok(svd) => {
            let (u, s, v) = (svd.U(), svd.S(), svd.V());
            (
                DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
                DVector::from_fn(k, |i, _| s[i]),
                DMatrix::from_fn(k, cols, |i, j| v[(j, i)]),
            )
        }
        // No convergence: report a zero spectrum so callers see a rank-0 system.
        Err(_) => (DMatrix::zeros(rows, k), DVector::zeros(k), DMatrix::zeros(k, cols)),
    }
}

impl ScaledSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let scales = DVector::from_iterator(
            cols,
            m.column_iter().map(|c| {
                let n = c.norm();
                if n > 0.0 && n.is_finite() {
                    n
                } else {
                    1.0
                }
            }),
        );
        let mut scaled = m.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(scales.iter()) {
            col /= *s;
        }
        let (u, singular_values, v_t) = thin_svd(&scaled);
        let sv = &singular_values;
        let max = sv.iter().copied().fold(0.0, f64::max);
        // A wide matrix has at most `rows` nonzero singular values.
        let min = if rows < cols {
            0.0
        } else {
            sv.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let cutoff = rows.max(cols) as f64 * f64::EPSILON * max;
        let rank = sv.iter().filter(|s| **s > cutoff).count();
        let diagnostics = RankDiagnostics {
            rank,
            columns: cols,
            min_singular_value: min,
            max_singular_value: max,
            condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
        };
        Self {
            u,
            singular_values,
            v_t,
            scales,
            diagnostics,
        }
    }

    fn require_full_rank(&self) -> Result<()> {
        if self.diagnostics.is_full_rank() {
            Ok(())
        } else {
            Err(Error::InsufficientExcitation {
                rank: self.diagnostics.rank,
                required: self.diagnostics.columns,
                rcond: self.diagnostics.rcond(),
            })
        }
    }

    /// Least-squares solution of `m x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_full_rank()?;
        let mut y = self.u.transpose() * b;
        for (yi, s) in y.iter_mut().zip(self.singular_values.iter()) {
            *yi /= *s;
        }
        let mut x = self.v_t.transpose() * y;
        x.component_div_assign(&self.scales);
        Ok(x)
    }

    /// `(m^T m)^{-1}`, assembled from the SVD so the condition number is not squared.
    pub fn gram_inverse(&self) -> std::result::Result<DMatrix<f64>, (f64, DVector<f64>)> {
        if !self.diagnostics.is_full_rank() {
            return Err((self.diagnostics.rcond(), self.weakest_direction()));
        }
        let mut w = self.v_t.transpose();
        for (mut col, s) in w.column_iter_mut().zip(self.singular_values.iter()) {
            col /= *s;
        }
        let mut out = &w * w.transpose();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] /= self.scales[i] * self.scales[j];
            }
        }
        Ok(out)
    }

    /// Right singular vector of the smallest singular value, in unscaled coordinates.
    pub fn weakest_direction(&self) -> DVector<f64> {
        let v_t = &self.v_t;
        let sv = &self.singular_values;
        let cols = self.scales.len();
        if sv.len() < cols {
            // Wide matrix: any null-space vector. Project e_last out of the row space.
            let mut e = DVector::zeros(cols);
            e[cols - 1] = 1.0;
            for row in v_t.row_iter() {
                let r = row.transpose();
                let d = r.dot(&e);
                e -= r * d;
            }
            return normalize(e.component_div(&self.scales));
        }
        let idx = sv.imin();
        let dir = v_t.row(idx).transpose().component_div(&self.scales);
        normalize(dir)
    }
}

fn normalize(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}
