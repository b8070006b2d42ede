//! Dense two-phase tableau simplex for small linear programs
//! min c'x subject to Ax <= b, x >= 0 (b may be negative).
//!
//! Pivoting uses the most-negative reduced cost, switching permanently to
//! Bland's rule after an iteration threshold to rule out cycling. Problem
//! sizes here are a few hundred variables, so a dense tableau is adequate.

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    m: usize,
    width: usize,
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    bland_after: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        let inv = 1.0 / piv;
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[row].clone();
        for (r, row_vals) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = row_vals[col];
            if factor == 0.0 {
                continue;
            }
            for (v, &p) in row_vals.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            row_vals[col] = 0.0;
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            for (v, &p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Run simplex until optimal. `active` limits the columns considered.
    fn optimize(&mut self, active: &[bool]) -> Result<()> {
        loop {
            self.iterations += 1;
            if self.iterations > 200_000 {
                return Err(Error::Numerical("simplex iteration limit".into()));
            }
            let bland = self.iterations > self.bland_after;
            let mut enter: Option<usize> = None;
            let mut best = -PIVOT_TOL;
            for j in 0..self.width - 1 {
                if !active[j] {
                    continue;
                }
                let rc = self.obj[j];
                if rc < -PIVOT_TOL {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        enter = Some(j);
                    }
                }
            }
            let Some(col) = enter else {
                return Ok(());
            };
            // Ratio test; ties resolved by lowest basis index (Bland-safe).
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.m {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rows[r][self.width - 1] / a;
                    let better = ratio < best_ratio - 1e-12
                        || ((ratio - best_ratio).abs() <= 1e-12
                            && leave.map(|l| self.basis[r] < self.basis[l]).unwrap_or(false));
                    if better {
                        best_ratio = ratio;
                        leave = Some(r);
                    }
                }
            }
            let Some(row) = leave else {
                return Err(Error::LpUnbounded);
            };
            self.pivot(row, col);
        }
    }
}

/// Solve min c'x s.t. Ax <= b, x >= 0.
pub fn solve_lp(c: &[f64], a: &Mat, b: &[f64]) -> Result<LpSolution> {
    let m = a.rows;
    let n = a.cols;
    if c.len() != n || b.len() != m {
        return Err(Error::InvalidInput("lp: dimension mismatch".into()));
    }
    // Columns: n structural, m slacks, up to m artificials, then rhs.
    let neg_rows: Vec<bool> = b.iter().map(|&v| v < 0.0).collect();
    let na = neg_rows.iter().filter(|&&v| v).count();
    let width = n + m + na + 1;
    let mut rows = vec![vec![0.0; width]; m];
    let mut basis = vec![0usize; m];
    let mut art_idx = 0;
    for r in 0..m {
        let sign = if neg_rows[r] { -1.0 } else { 1.0 };
        for j in 0..n {
            rows[r][j] = sign * a[(r, j)];
        }
        rows[r][n + r] = sign; // slack
        rows[r][width - 1] = sign * b[r];
        if neg_rows[r] {
            let col = n + m + art_idx;
            rows[r][col] = 1.0;
            basis[r] = col;
            art_idx += 1;
        } else {
            basis[r] = n + r;
        }
    }

    let mut t = Tableau {
        m,
        width,
        rows,
        obj: vec![0.0; width],
        basis,
        iterations: 0,
        bland_after: 40 * (m + n),
    };

    if na > 0 {
        // Phase 1: minimize the sum of artificials. Objective row starts as
        // sum of the artificial-basic rows (so reduced costs of the basis
        // stay zero).
        let mut obj = vec![0.0; width];
        for j in n + m..width - 1 {
            obj[j] = 1.0;
        }
        for r in 0..m {
            if t.basis[r] >= n + m {
                for j in 0..width {
                    obj[j] -= t.rows[r][j];
                }
            }
        }
        t.obj = obj;
        let active = vec![true; width - 1];
        t.optimize(&active)?;
        let phase1 = -t.obj[width - 1];
        if phase1 > 1e-7 {
            return Err(Error::LpInfeasible(format!(
                "phase-1 residual {phase1:.3e}"
            )));
        }
        // Pivot any artificial still in the basis (at zero level) out of it.
        for r in 0..m {
            if t.basis[r] >= n + m {
                let col = (0..n + m).find(|&j| t.rows[r][j].abs() > PIVOT_TOL);
                if let Some(col) = col {
                    t.pivot(r, col);
                }
            }
        }
    }

    // Phase 2 objective: -c over structural columns, reduced against the
    // current basis.
    let mut obj = vec![0.0; width];
    for j in 0..n {
        obj[j] = c[j];
    }
    for r in 0..m {
        let bj = t.basis[r];
        if bj < n {
            let cost = c[bj];
            if cost != 0.0 {
                for j in 0..width {
                    obj[j] -= cost * t.rows[r][j];
                }
            }
        }
    }
    // Basic columns must read exactly zero in the objective row.
    for r in 0..m {
        obj[t.basis[r]] = 0.0;
    }
    t.obj = obj;
    let mut active = vec![true; width - 1];
    for flag in active.iter_mut().skip(n + m) {
        *flag = false; // artificials stay out in phase 2
    }
    t.optimize(&active)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rows[r][width - 1];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations: t.iterations,
    })
}
