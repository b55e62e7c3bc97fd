//! Upper Hessenberg least-squares with incremental Givens rotations.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative size below which a subdiagonal entry counts as an exact breakdown.
pub const BREAKDOWN_TOL: f64 = 1e-14;

/// `(m+1) x m` Hessenberg matrix built column by column, with its QR
/// factorization kept current.
#[derive(Clone, Debug)]
pub struct Hessenberg {
    capacity: usize,
    beta: f64,
    /// Column j holds h[0..=j+1][j] exactly as pushed.
    cols: Vec<Vec<f64>>,
    /// Column j of R after rotations (j+1 entries).
    r: Vec<Vec<f64>>,
    rotations: Vec<(f64, f64)>,
    /// Rotated right-hand side beta*e1 (len = columns + 1).
    g: Vec<f64>,
    breakdown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsqSolution {
    pub y: Vec<f64>,
    pub residual_estimate: f64,
    pub lucky_breakdown: bool,
}

/// True when the last entry of a Hessenberg column is zero or negligible
/// relative to the column.
pub fn is_breakdown(col: &[f64]) -> bool {
    let Some(&sub) = col.last() else { return false };
    let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sub == 0.0 || sub.abs() <= BREAKDOWN_TOL * scale
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        (a / r, b / r)
    }
}

impl Hessenberg {
    pub fn new(capacity: usize, beta: f64) -> Self {
        Hessenberg {
            capacity,
            beta,
            cols: Vec::with_capacity(capacity),
            r: Vec::with_capacity(capacity),
            rotations: Vec::with_capacity(capacity),
            g: vec![beta],
            breakdown: false,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.cols.len() == self.capacity
    }

    pub fn breakdown(&self) -> bool {
        self.breakdown
    }

    /// Entry h[i][j]; zero below the first subdiagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cols[j].get(i).copied().unwrap_or(0.0)
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    /// Appends column j (`j + 2` entries) and returns the new residual estimate.
    pub fn push_column(&mut self, col: Vec<f64>) -> Result<f64> {
        let j = self.cols.len();
        if j == self.capacity {
            return Err(Error::usage("Hessenberg matrix is full"));
        }
        if col.len() != j + 2 {
            return Err(Error::usage(format!("column {j} needs {} entries, got {}", j + 2, col.len())));
        }
        let mut rc = col[..=j].to_vec();
        for (i, &(c, s)) in self.rotations.iter().enumerate() {
            let (a, b) = (rc[i], rc[i + 1]);
            rc[i] = c * a + s * b;
            rc[i + 1] = -s * a + c * b;
        }
        let sub = col[j + 1];
        let (c, s) = givens(rc[j], sub);
        rc[j] = c * rc[j] + s * sub;
        let gj = self.g[j];
        self.g[j] = c * gj;
        self.g.push(-s * gj);
        self.rotations.push((c, s));
        self.r.push(rc);

        self.breakdown = is_breakdown(&col);
        self.cols.push(col);
        Ok(self.residual_estimate())
    }

    /// |last entry of the rotated right-hand side|.
    pub fn residual_estimate(&self) -> f64 {
        self.g.last().copied().unwrap_or(self.beta).abs()
    }

    /// Back substitution on the rotated triangle.
    pub fn solve(&self) -> Vec<f64> {
        self.solve_leading(self.cols.len())
    }

    /// Least-squares solution using only the first `k` columns. Later columns
    /// do not disturb the leading part of the factorization.
    pub fn solve_leading(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.cols.len());
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut sum = self.g[i];
            for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
                sum -= self.r[l][i] * yl;
            }
            y[i] = sum / self.r[i][i];
        }
        y
    }

    pub fn lsq(&self) -> LsqSolution {
        LsqSolution {
            y: self.solve(),
            residual_estimate: self.residual_estimate(),
            lucky_breakdown: self.breakdown,
        }
    }
}

/// Minimizes `‖beta e1 − H y‖` for the Hessenberg matrix given by its columns
/// (column j has `j + 2` entries).
pub fn hessenberg_lsq(columns: &[Vec<f64>], beta: f64) -> Result<LsqSolution> {
    let mut h = Hessenberg::new(columns.len(), beta);
    for c in columns {
        h.push_column(c.clone())?;
    }
    Ok(h.lsq())
}
