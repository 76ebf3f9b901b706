//! Dense two-phase simplex on the equality form
//! `max c^T x  s.t.  A x = b, x >= 0`, with Bland's rule against cycling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const PHASE_ONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub rows: usize,
    pub cols: usize,
    /// Row-major constraint matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Objective to maximize.
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    m: usize,
    width: usize,
    /// `m` constraint rows then the objective row; last column is the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.width + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width + 1;
        let p = self.t[row * w + col];
        for c in 0..w {
            self.t[row * w + c] /= p;
        }
        self.t[row * w + col] = 1.0;
        for r in 0..=self.m {
            if r == row {
                continue;
            }
            let factor = self.t[r * w + col];
            if factor == 0.0 {
                continue;
            }
            for c in 0..w {
                self.t[r * w + c] -= factor * self.t[row * w + c];
            }
            self.t[r * w + col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Minimizes the objective row over columns `< allowed`. Returns false
    /// when the program is unbounded below.
    fn run(&mut self, allowed: usize) -> bool {
        loop {
            let obj = self.m;
            let entering = (0..allowed).find(|&c| self.at(obj, c) < -PIVOT_TOL);
            let Some(col) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-15 || (ratio <= bratio + 1e-15 && self.basis[r] < self.basis[br]) {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }
}

/// Solves the program. Infeasibility comes back with a Farkas certificate;
/// an unbounded objective is reported as a numerical error.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let (m, n) = (lp.rows, lp.cols);
    if lp.a.len() != m * n || lp.b.len() != m || lp.cost.len() != n {
        return Err(Error::Input("linear program dimensions are inconsistent".into()));
    }
    let width = n + m;
    let w = width + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut sign = vec![1.0; m];
    for r in 0..m {
        if lp.b[r] < 0.0 {
            sign[r] = -1.0;
        }
        for c in 0..n {
            t[r * w + c] = sign[r] * lp.a[r * n + c];
        }
        t[r * w + n + r] = 1.0;
        t[r * w + width] = sign[r] * lp.b[r];
    }
    // Phase one: minimize the sum of artificials.
    for c in 0..n {
        t[m * w + c] = -(0..m).map(|r| t[r * w + c]).sum::<f64>();
    }
    t[m * w + width] = -(0..m).map(|r| t[r * w + width]).sum::<f64>();
    let mut tab = Tableau { m, width, t, basis: (n..n + m).collect(), pivots: 0 };
    tab.run(n);
    let residual = -tab.rhs(m);
    if residual > PHASE_ONE_TOL {
        // Reduced cost of artificial r is 1 - y_r.
        let certificate = (0..m).map(|r| sign[r] * (1.0 - tab.at(m, n + r))).collect();
        return Err(Error::Infeasible { certificate, residual });
    }
    // Drive zero-level artificials out of the basis where possible.
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(c) = (0..n).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                tab.pivot(r, c);
            }
        }
    }
    // Phase two: minimize -c^T x.
    for c in 0..w {
        tab.t[m * w + c] = 0.0;
    }
    for c in 0..n {
        tab.t[m * w + c] = -lp.cost[c];
    }
    for r in 0..m {
        let bcol = tab.basis[r];
        let cb = if bcol < n { -lp.cost[bcol] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..w {
                tab.t[m * w + c] -= cb * tab.t[r * w + c];
            }
        }
    }
    if !tab.run(n) {
        return Err(Error::Numerical { context: "simplex: objective unbounded".into(), residual: f64::INFINITY });
    }
    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, objective, pivots: tab.pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // max x + y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6.
        let lp = LinearProgram {
            rows: 2,
            cols: 4,
            a: vec![1.0, 2.0, 1.0, 0.0, 3.0, 1.0, 0.0, 1.0],
            b: vec![4.0, 6.0],
            cost: vec![1.0, 1.0, 0.0, 0.0],
        };
        let sol = solve(&lp).unwrap();
        assert!((sol.objective - 2.8).abs() < 1e-12, "{sol:?}");
        assert!((sol.x[0] - 1.6).abs() < 1e-12 && (sol.x[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn infeasible_program_has_farkas_certificate() {
        // x + y = 1 and x + y = 3 with x, y >= 0.
        let lp =
            LinearProgram { rows: 2, cols: 2, a: vec![1.0, 1.0, 1.0, 1.0], b: vec![1.0, 3.0], cost: vec![1.0, 0.0] };
        match solve(&lp) {
            Err(Error::Infeasible { certificate, residual }) => {
                assert!(residual > 0.0);
                for c in 0..2 {
                    let ya: f64 = (0..2).map(|r| certificate[r] * lp.a[r * 2 + c]).sum();
                    assert!(ya <= 1e-9);
                }
                let yb: f64 = (0..2).map(|r| certificate[r] * lp.b[r]).sum();
                assert!(yb > 0.0);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn negative_rhs_rows_are_flipped() {
        // -x = -2, max -x  => x = 2.
        let lp = LinearProgram { rows: 1, cols: 1, a: vec![-1.0], b: vec![-2.0], cost: vec![-1.0] };
        let sol = solve(&lp).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        // x + y = 1 twice; max x.
        let lp =
            LinearProgram { rows: 2, cols: 2, a: vec![1.0, 1.0, 1.0, 1.0], b: vec![1.0, 1.0], cost: vec![1.0, 0.0] };
        let sol = solve(&lp).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }
}
