use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with global column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(Error::config(format!(
                "row offsets must have {} entries starting at 0",
                n_rows + 1
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("row offsets must be nondecreasing"));
        }
        let nnz = row_ptr[n_rows];
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(Error::config(format!(
                "expected {nnz} column indices and values, got {} and {}",
                col_idx.len(),
                values.len()
            )));
        }
        if let Some(&c) = col_idx.iter().find(|&&c| c >= n_cols) {
            return Err(Error::config(format!("column index {c} out of range for {n_cols} columns")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("matrix value {v} is not finite")));
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed in input order
    /// and each row is sorted by column.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::config(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols} matrix"
                )));
            }
            rows[r].push((c, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// `(column, value)` pairs of row `i` in storage order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Serial product, accumulating each row left to right from 0.0.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::usage(format!(
                "matrix has {} columns, vector has {} entries",
                self.n_cols,
                x.len()
            )));
        }
        Ok((0..self.n_rows)
            .map(|i| {
                let mut sum = 0.0;
                for (c, v) in self.row(i) {
                    sum += v * x[c];
                }
                sum
            })
            .collect())
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] += v;
            }
        }
        d
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n]).expect("finite diagonal")
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        CsrMatrix::new(n, n, (0..=n).collect(), (0..n).collect(), d.to_vec())
    }

    /// Constant-coefficient tridiagonal matrix.
    pub fn tridiagonal(n: usize, lower: f64, diag: f64, upper: f64) -> Result<Self> {
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, lower));
            }
            t.push((i, i, diag));
            if i + 1 < n {
                t.push((i, i + 1, upper));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    /// tridiag(-1, 2, -1).
    pub fn laplacian_1d(n: usize) -> Self {
        Self::tridiagonal(n, -1.0, 2.0, -1.0).expect("finite stencil")
    }

    /// Five-point Laplacian on a k-by-k grid with Dirichlet boundaries, row-major numbering.
    pub fn laplacian_2d(k: usize) -> Self {
        let n = k * k;
        let mut t = Vec::with_capacity(5 * n);
        for row in 0..k {
            for col in 0..k {
                let i = row * k + col;
                if row > 0 {
                    t.push((i, i - k, -1.0));
                }
                if col > 0 {
                    t.push((i, i - 1, -1.0));
                }
                t.push((i, i, 4.0));
                if col + 1 < k {
                    t.push((i, i + 1, -1.0));
                }
                if row + 1 < k {
                    t.push((i, i + k, -1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t).expect("finite stencil")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiag_row_sums() {
        let a = CsrMatrix::laplacian_1d(4);
        assert_eq!(a.mul_vec(&[1.0; 4]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.inf_norm(), 4.0);
    }

    #[test]
    fn laplacian_2d_shape() {
        let a = CsrMatrix::laplacian_2d(3);
        assert_eq!(a.n_rows(), 9);
        assert_eq!(a.nnz(), 9 + 2 * 2 * 6);
        let y = a.mul_vec(&[1.0; 9]).unwrap();
        assert_eq!(y, vec![2.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 2.0]);
        let d = a.to_dense();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 1, vec![0, 1], vec![1], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 1, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
        assert!(CsrMatrix::identity(3).mul_vec(&[1.0]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 5.0)]).unwrap();
        assert_eq!(a.to_dense(), vec![vec![0.0, 3.0], vec![5.0, 0.0]]);
    }
}
