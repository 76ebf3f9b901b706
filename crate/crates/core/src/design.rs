//! Near G-optimal designs over state-action pairs, the design-weighted
//! least-squares map `W(z)`, and the extrapolation-bound check.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{FeatureMap, Pair};

/// Default Frank-Wolfe tolerance: `g <= d (1 + eps) = 1.5 d`.
pub const DEFAULT_EPS_FW: f64 = 0.5;
/// Weights must sum to one within this.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
/// Minimum eigenvalue of the normalized design matrix.
pub const MIN_EIGENVALUE: f64 = 1e-12;
/// Condition number above which a design carries a warning.
pub const CONDITION_WARNING: f64 = 1e12;
/// Relative size under which a direction counts as zero.
const DIRECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub dim: usize,
    pub coreset: Vec<Pair>,
    /// Flat pair index `s * A + a` of every coreset element.
    pub pair_indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// `G = sum w phi phi^T`, row-major `d x d`.
    pub g: Vec<f64>,
    pub g_inv: Vec<f64>,
    /// `max_{s,a} phi^T G^{-1} phi`.
    pub g_value: f64,
    pub condition_number: f64,
    /// `L` with `W(z) = L z`, row-major `d x |C|`.
    pub regression: Vec<f64>,
    /// Largest `nu` before each Frank-Wolfe step and at exit.
    pub max_nu_history: Vec<f64>,
    /// `ln det G` before each Frank-Wolfe step.
    pub log_det_history: Vec<f64>,
    pub warnings: Vec<String>,
}

fn normalization(features: &FeatureMap) -> f64 {
    (0..features.num_pairs()).map(|k| math::dot(features.row(k), features.row(k))).fold(0.0, f64::max)
}

fn outer_sum(features: &FeatureMap, pairs: &[usize], weights: &[f64], scale: f64) -> DMatrix<f64> {
    let d = features.dim;
    let mut g = DMatrix::zeros(d, d);
    for (&k, &w) in pairs.iter().zip(weights) {
        let phi = features.row(k);
        for i in 0..d {
            for j in i..d {
                g[(i, j)] += w * scale * phi[i] * phi[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

fn nu_all(features: &FeatureMap, g_inv: &DMatrix<f64>) -> Vec<f64> {
    let d = features.dim;
    (0..features.num_pairs())
        .map(|k| {
            let phi = features.row(k);
            let mut acc = 0.0;
            for i in 0..d {
                let mut row = 0.0;
                for j in 0..d {
                    row += g_inv[(i, j)] * phi[j];
                }
                acc += phi[i] * row;
            }
            acc
        })
        .collect()
}

fn singular(context: &str) -> Error {
    Error::Numerical { context: format!("{context}: design matrix is not positive definite"), residual: f64::INFINITY }
}

fn inverse(features: &FeatureMap, pairs: &[usize], weights: &[f64]) -> Result<DMatrix<f64>> {
    inverse_log_det(features, pairs, weights).map(|(inv, _)| inv)
}

fn inverse_log_det(features: &FeatureMap, pairs: &[usize], weights: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let g = outer_sum(features, pairs, weights, 1.0);
    let chol = g.cholesky().ok_or_else(|| singular("design"))?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..features.dim).map(|i| math::ln(l[(i, i)])).sum::<f64>();
    Ok((chol.inverse(), log_det))
}

impl Design {
    /// Builds a design from explicit weights on distinct pairs.
    pub fn from_weights(features: &FeatureMap, pairs: &[usize], weights: &[f64]) -> Result<Design> {
        let d = features.dim;
        let n = features.num_pairs();
        if pairs.is_empty() || pairs.len() != weights.len() {
            return Err(Error::Input("design needs one positive weight per coreset pair".into()));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&i| pairs[i]);
        let idx: Vec<usize> = order.iter().map(|&i| pairs[i]).collect();
        let w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        if idx.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Input("design coreset has duplicate pairs".into()));
        }
        if let Some(&k) = idx.iter().find(|&&k| k >= n) {
            return Err(Error::Index { what: "pair", index: k, bound: n });
        }
        if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Input("design weights must be positive".into()));
        }
        let total: f64 = w.iter().sum();
        if !((total - 1.0).abs() <= WEIGHT_SUM_TOL) {
            return Err(Error::Input(format!("design weights sum to {total}, expected 1")));
        }
        let norm = normalization(features);
        if !(norm > 0.0) {
            return Err(Error::RankDeficient { direction: vec![1.0; d] });
        }
        let g = outer_sum(features, &idx, &w, 1.0);
        let g_normalized = &g / norm;
        let eig = g_normalized.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        if !(lo > MIN_EIGENVALUE) {
            return Err(Error::Numerical {
                context: "design: minimum eigenvalue of the normalized design matrix".into(),
                residual: lo,
            });
        }
        let g_inv = g.clone().cholesky().ok_or_else(|| singular("design"))?.inverse();
        let nu = nu_all(features, &g_inv);
        let g_value = math::max_of(&nu);

        // Scaled weights leave W unchanged and keep uniform designs exact.
        let top = w.iter().fold(0.0f64, |a, &b| a.max(b));
        let scaled: Vec<f64> = w.iter().map(|x| x / top).collect();
        let a = outer_sum(features, &idx, &scaled, 1.0);
        let mut b = DMatrix::zeros(d, idx.len());
        for (c, (&k, &sw)) in idx.iter().zip(&scaled).enumerate() {
            let phi = features.row(k);
            for i in 0..d {
                b[(i, c)] = phi[i] * sw;
            }
        }
        let l = a.cholesky().ok_or_else(|| singular("regression"))?.solve(&b);
        let mut regression = vec![0.0; d * idx.len()];
        for i in 0..d {
            for c in 0..idx.len() {
                regression[i * idx.len() + c] = l[(i, c)];
            }
        }
        let condition_number = hi / lo;
        let mut warnings = Vec::new();
        if condition_number > CONDITION_WARNING {
            warnings.push(format!("design matrix condition number {condition_number:e} exceeds 1e12"));
        }
        let row_major = |m: &DMatrix<f64>| {
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = m[(i, j)];
                }
            }
            out
        };
        Ok(Design {
            dim: d,
            coreset: idx.iter().map(|&k| (k / features.num_actions, k % features.num_actions)).collect(),
            pair_indices: idx,
            weights: w,
            g: row_major(&g),
            g_inv: row_major(&g_inv),
            g_value,
            condition_number,
            regression,
            max_nu_history: Vec::new(),
            log_det_history: Vec::new(),
            warnings,
        })
    }

    /// Equal weights on the given pairs.
    pub fn uniform(features: &FeatureMap, pairs: &[usize]) -> Result<Design> {
        let w = 1.0 / pairs.len() as f64;
        Design::from_weights(features, pairs, &vec![w; pairs.len()])
    }

    pub fn len(&self) -> usize {
        self.pair_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_indices.is_empty()
    }

    /// `d(d+1)/2 + 1`.
    pub fn size_bound(&self) -> usize {
        self.dim * (self.dim + 1) / 2 + 1
    }

    /// `g` recomputed from the stored weights.
    pub fn recompute_g_value(&self, features: &FeatureMap) -> Result<f64> {
        let g_inv = inverse(features, &self.pair_indices, &self.weights)?;
        Ok(math::max_of(&nu_all(features, &g_inv)))
    }
}

/// Deterministic start: `d` rounds of max/min projections along directions
/// orthogonal to the differences found so far.
pub fn initialize_design(features: &FeatureMap) -> Result<Design> {
    let d = features.dim;
    let n = features.num_pairs();
    let scale = math::sqrt(normalization(features));
    if !(scale > 0.0) {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        return Err(Error::RankDeficient { direction: e });
    }
    let mut c = vec![0.0; d];
    c[0] = 1.0;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut points: Vec<usize> = Vec::with_capacity(2 * d);
    for j in 0..d {
        let proj: Vec<f64> = (0..n).map(|k| math::dot(&c, features.row(k))).collect();
        let hi = math::argmax(&proj);
        let lo = math::argmin(&proj);
        points.push(hi);
        points.push(lo);
        let mut x: Vec<f64> = features.row(hi).iter().zip(features.row(lo)).map(|(a, b)| a - b).collect();
        if proj[hi] - proj[lo] <= DIRECTION_TOL * scale {
            // Every projection is equal; the common value decides.
            if proj[hi].abs() <= DIRECTION_TOL * scale {
                return Err(Error::RankDeficient { direction: c });
            }
            x = features.row(hi).to_vec();
        }
        for q in &basis {
            let p = math::dot(q, &x);
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi -= p * qi;
            }
        }
        let norm = math::norm2(&x);
        if !(norm > DIRECTION_TOL * scale) {
            return Err(Error::RankDeficient { direction: c });
        }
        basis.push(x.iter().map(|v| v / norm).collect());
        if j + 1 == d {
            break;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..d {
            let mut r = vec![0.0; d];
            r[i] = 1.0;
            for q in &basis {
                let p = q[i];
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= p * qi;
                }
            }
            let rn = math::norm2(&r);
            if best.as_ref().is_none_or(|(b, _)| rn > *b + 1e-12) {
                best = Some((rn, r));
            }
        }
        let (rn, r) = best.expect("d >= 1");
        c = r.iter().map(|v| v / rn).collect();
    }
    points.sort_unstable();
    points.dedup();
    Design::uniform(features, &points)
}

/// `10 d ln d + 100`.
pub fn default_max_iters(d: usize) -> usize {
    let df = d as f64;
    math::ceil(10.0 * df * math::ln(df.max(1.0))) as usize + 100
}

/// Frank-Wolfe on `g`, started from [`initialize_design`], followed by
/// support trimming and renormalization.
pub fn frank_wolfe(features: &FeatureMap, eps_fw: f64, max_iters: usize) -> Result<Design> {
    if !(eps_fw > 0.0) {
        return Err(Error::Input("eps_fw must be positive".into()));
    }
    let d = features.dim;
    let n = features.num_pairs();
    if d == 1 {
        let mags: Vec<f64> = (0..n).map(|k| features.row(k)[0].abs()).collect();
        let k = math::argmax(&mags);
        if !(mags[k] > 0.0) {
            return Err(Error::RankDeficient { direction: vec![1.0] });
        }
        let mut design = Design::from_weights(features, &[k], &[1.0])?;
        design.max_nu_history.push(design.g_value);
        return Ok(design);
    }
    let start = initialize_design(features)?;
    let mut w = vec![0.0; n];
    for (&k, &x) in start.pair_indices.iter().zip(&start.weights) {
        w[k] = x;
    }
    let df = d as f64;
    let mut history = Vec::new();
    let mut log_dets = Vec::new();
    let mut iters = 0;
    let (nu, delta) = loop {
        let support: Vec<usize> = (0..n).filter(|&k| w[k] > 0.0).collect();
        let ws: Vec<f64> = support.iter().map(|&k| w[k]).collect();
        let (g_inv, log_det) = inverse_log_det(features, &support, &ws)?;
        log_dets.push(log_det);
        let nu = nu_all(features, &g_inv);
        let top = math::argmax(&nu);
        history.push(nu[top]);
        let delta = (nu[top] - df) / df;
        if delta <= eps_fw {
            break (nu, delta);
        }
        if iters == max_iters {
            return Err(Error::Convergence { iterations: iters, delta });
        }
        let step = (nu[top] - df) / ((df - 1.0) * nu[top]);
        w[top] += step;
        for x in w.iter_mut() {
            *x /= 1.0 + step;
        }
        iters += 1;
    };
    let dl = delta.max(0.0);
    let threshold = df * (1.0 + dl * df / 2.0 - math::sqrt(dl * (df - 1.0) + dl * dl * df * df / 4.0));
    let slack = 1e-9 * df;
    let kept: Vec<usize> = (0..n).filter(|&k| w[k] > 0.0 && nu[k] >= threshold - slack).collect();
    let full: Vec<usize> = (0..n).filter(|&k| w[k] > 0.0).collect();
    let renormalize = |pairs: &[usize]| {
        let total: f64 = pairs.iter().map(|&k| w[k]).sum();
        pairs.iter().map(|&k| w[k] / total).collect::<Vec<f64>>()
    };
    let mut warnings = Vec::new();
    let mut design = match Design::from_weights(features, &kept, &renormalize(&kept)) {
        Ok(t) if t.g_value <= 2.0 * df => t,
        _ => {
            warnings.push(String::from("trimming broke the design; kept the full Frank-Wolfe support"));
            Design::from_weights(features, &full, &renormalize(&full))?
        }
    };
    if design.len() > design.size_bound() {
        let (pairs, weights) = caratheodory_reduce(features, &design.pair_indices, &design.weights);
        match Design::from_weights(features, &pairs, &weights) {
            Ok(reduced) if reduced.g_value <= 2.0 * df => design = reduced,
            _ => warnings.push(format!(
                "coreset size {} exceeds d(d+1)/2 + 1 = {} and could not be reduced",
                design.len(),
                design.size_bound()
            )),
        }
    }
    history.push(design.g_value);
    design.max_nu_history = history;
    design.log_det_history = log_dets;
    design.warnings.extend(warnings);
    Ok(design)
}

/// Shrinks the support to at most `d(d+1)/2 + 1` points without changing
/// `G` or the total weight: repeatedly moves along a null direction of
/// `w -> (sum w phi phi^T, sum w)` until a weight reaches zero.
fn caratheodory_reduce(features: &FeatureMap, pairs: &[usize], weights: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let d = features.dim;
    let m = d * (d + 1) / 2 + 1;
    let mut pairs = pairs.to_vec();
    let mut w = weights.to_vec();
    while pairs.len() > m {
        let cols = m + 1;
        let mut a = DMatrix::zeros(m, cols);
        for (c, &k) in pairs[..cols].iter().enumerate() {
            let phi = features.row(k);
            let mut r = 0;
            for i in 0..d {
                for j in i..d {
                    a[(r, c)] = phi[i] * phi[j];
                    r += 1;
                }
            }
            a[(r, c)] = 1.0;
        }
        let eig = (a.transpose() * &a).symmetric_eigen();
        let low = math::argmin(eig.eigenvalues.as_slice());
        let alpha: Vec<f64> = eig.eigenvectors.column(low).iter().copied().collect();
        let mut best: Option<(usize, f64)> = None;
        for (c, &x) in alpha.iter().enumerate() {
            if x > 0.0 {
                let t = w[c] / x;
                if best.is_none_or(|(_, b)| t < b) {
                    best = Some((c, t));
                }
            }
        }
        let Some((hit, t)) = best else { break };
        for (c, &x) in alpha.iter().enumerate() {
            w[c] -= t * x;
        }
        w[hit] = 0.0;
        let keep: Vec<usize> = (0..pairs.len()).filter(|&i| w[i] > 0.0).collect();
        pairs = keep.iter().map(|&i| pairs[i]).collect();
        w = keep.iter().map(|&i| w[i]).collect();
    }
    let total: f64 = w.iter().sum();
    (pairs, w.iter().map(|x| x / total).collect())
}

/// `W(z) = G^{-1} sum_C w phi z`; `z` is indexed like `design.coreset`.
pub fn wls_solve(design: &Design, z: &[f64]) -> Result<Vec<f64>> {
    let c = design.len();
    if z.len() != c {
        return Err(Error::Input(format!("regression target has {} values, the coreset has {}", z.len(), c)));
    }
    Ok((0..design.dim).map(|i| math::dot(&design.regression[i * c..(i + 1) * c], z)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KwCheck {
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `max_{s,a} |<phi, W(z)>| / max_C |z|` against `sqrt(2d)`.
pub fn kw_check(design: &Design, features: &FeatureMap, z: &[f64]) -> Result<KwCheck> {
    let theta = wls_solve(design, z)?;
    let top = math::norm_inf(&features.predict(&theta));
    let zmax = math::norm_inf(z);
    let ratio = if zmax == 0.0 {
        if top == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        top / zmax
    };
    let bound = math::sqrt(2.0 * design.dim as f64);
    Ok(KwCheck { ratio, bound, pass: ratio <= bound + 1e-9 })
}
