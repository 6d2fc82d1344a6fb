use ndarray::Array2;

use super::Scalar;

/// Sparse matrix with fixed (non-learned) coefficients, stored as a COO
/// entry list. Products iterate entries in list order, which keeps
/// accumulation order, and therefore floating-point results, deterministic.
#[derive(Clone, Debug)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, T)>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<(u32, u32, T)>) -> Self {
        debug_assert!(entries
            .iter()
            .all(|&(r, c, _)| (r as usize) < rows && (c as usize) < cols));
        Self {
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Dense product `self * x`.
    pub fn mul_dense(&self, x: &Array2<T>) -> Array2<T> {
        let f = x.ncols();
        let mut out = Array2::zeros((self.rows, f));
        for &(r, c, w) in &self.entries {
            let (r, c) = (r as usize, c as usize);
            for j in 0..f {
                out[(r, j)] += w * x[(c, j)];
            }
        }
        out
    }

    /// Dense product `self^T * x`.
    pub fn mul_dense_transposed(&self, x: &Array2<T>) -> Array2<T> {
        let f = x.ncols();
        let mut out = Array2::zeros((self.cols, f));
        for &(r, c, w) in &self.entries {
            let (r, c) = (r as usize, c as usize);
            for j in 0..f {
                out[(c, j)] += w * x[(r, j)];
            }
        }
        out
    }
}
