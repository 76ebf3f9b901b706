//! Small dense numerics shared by the oracles, design, and solvers.
//!
//! Transcendental functions go through `libm` so results are identical on
//! every platform, with or without `std`.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn max_of(values: &[f64]) -> f64 {
    values[argmax(values)]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm_inf(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm2(values: &[f64]) -> f64 {
    sqrt(dot(values, values))
}

/// Solves the square system `a x = rhs` (row-major `a`) by partial-pivot LU and
/// checks the residual `||a x - rhs||_inf <= rel_tol * (1 + ||x||_inf)`.
pub fn solve_dense(n: usize, a: &[f64], rhs: &[f64], rel_tol: f64, context: &str) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let b = DVector::from_column_slice(rhs);
    let x = m
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical { context: format!("{context}: singular matrix"), residual: f64::INFINITY })?;
    let residual = (&m * &x - &b).amax();
    if !residual.is_finite() || residual > rel_tol * (1.0 + x.amax()) {
        return Err(Error::Numerical { context: format!("{context}: residual check"), residual });
    }
    Ok(x.iter().copied().collect())
}

/// Ceiling that ignores relative rounding noise below `1e-12`, so that
/// `ceil(400.00000000000006)` is 400 rather than 401.
pub fn ceil_tolerant(x: f64) -> f64 {
    let r = libm::round(x);
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        ceil(x)
    }
}
