//! Sparse precision-matrix estimation: weighted correlation of the local
//! dataset, graphical lasso by block coordinate descent, and EBIC selection
//! along a log-spaced penalty path.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturbation::LocalDataset;

/// Entries with magnitude at or below this count as zero when tallying edges.
pub const EDGE_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GlassoError {
    #[error("column '{0}' has zero weighted variance")]
    DegenerateColumn(String),
    #[error("effective sample size {n_effective:.3} too small for {nodes} nodes")]
    TooFewSamples { n_effective: f64, nodes: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("matrix is not positive definite")]
    NotPD,
    #[error("invalid lambda grid: {0}")]
    BadGrid(String),
    #[error("invalid solver options: {0}")]
    BadOptions(String),
    #[error("no lambda on the grid produced a usable fit")]
    SelectFailure,
}

/// Symmetric correlation-form input to the solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceMatrix {
    #[serde(skip)]
    pub s: DMatrix<f64>,
    /// `(sum w)^2 / sum w^2`.
    pub n_effective: f64,
    /// Set when a ridge was added to restore positive definiteness.
    pub repaired: bool,
}

impl CovarianceMatrix {
    pub fn from_matrix(s: DMatrix<f64>, n_effective: f64) -> Self {
        Self {
            s,
            n_effective,
            repaired: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// Weighted correlation matrix of the local dataset, with observation weights
/// acting as fractional multiplicities.
pub fn weighted_correlation(
    local: &LocalDataset,
    weights: &[f64],
) -> Result<CovarianceMatrix, GlassoError> {
    let m = local.n_samples();
    let q = local.n_nodes();
    if weights.len() != m {
        return Err(GlassoError::LengthMismatch(format!(
            "{} weights for {m} samples",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(GlassoError::LengthMismatch("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if m == 0 || total <= 0.0 {
        return Err(GlassoError::TooFewSamples {
            n_effective: 0.0,
            nodes: q,
        });
    }
    let wbar: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let n_effective = 1.0 / wbar.iter().map(|w| w * w).sum::<f64>();

    let x = &local.data;
    let means: Vec<f64> = (0..q)
        .map(|j| (0..m).map(|i| wbar[i] * x[(i, j)]).sum())
        .collect();
    let constant: Vec<bool> = (0..q)
        .map(|j| {
            let first = x[(0, j)];
            (0..m).all(|i| x[(i, j)] == first)
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(q, q);
    for a in 0..q {
        for b in a..q {
            let c: f64 = (0..m)
                .map(|i| wbar[i] * (x[(i, a)] - means[a]) * (x[(i, b)] - means[b]))
                .sum();
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    for j in 0..q {
        if constant[j] {
            continue;
        }
        let scale = (0..m).fold(0.0f64, |acc, i| acc.max(x[(i, j)].abs())).max(1e-300);
        if cov[(j, j)] <= 1e-24 * scale * scale {
            return Err(GlassoError::DegenerateColumn(local.names[j].clone()));
        }
    }
    if n_effective <= q as f64 {
        return Err(GlassoError::TooFewSamples {
            n_effective,
            nodes: q,
        });
    }
    let mut s = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            1.0
        } else if constant[a] || constant[b] {
            0.0
        } else {
            cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()
        }
    });
    let mut repaired = false;
    let min_eig = SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    if min_eig < 1e-8 {
        let eps = 1e-6;
        s = DMatrix::from_fn(q, q, |a, b| if a == b { 1.0 } else { s[(a, b)] / (1.0 + eps) });
        repaired = true;
        if Cholesky::new(s.clone()).is_none() {
            return Err(GlassoError::NotPD);
        }
    }
    Ok(CovarianceMatrix {
        s,
        n_effective,
        repaired,
    })
}

/// Descending log-spaced penalty values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    /// True when `S` has no off-diagonal mass; the grid is then `[0]`.
    pub all_zero_off_diagonal: bool,
}

pub fn lambda_grid(s: &CovarianceMatrix, count: usize, ratio: f64) -> Result<LambdaGrid, GlassoError> {
    if count < 2 {
        return Err(GlassoError::BadGrid(format!("count {count} < 2")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GlassoError::BadGrid(format!("ratio {ratio} outside (0, 1)")));
    }
    let q = s.dim();
    let mut lambda_max = 0.0f64;
    for a in 0..q {
        for b in 0..q {
            if a != b {
                lambda_max = lambda_max.max(s.s[(a, b)].abs());
            }
        }
    }
    if lambda_max == 0.0 {
        return Ok(LambdaGrid {
            values: vec![0.0],
            all_zero_off_diagonal: true,
        });
    }
    let values = (0..count)
        .map(|k| lambda_max * ratio.powf(k as f64 / (count - 1) as f64))
        .collect();
    Ok(LambdaGrid {
        values,
        all_zero_off_diagonal: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the duality gap falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Also penalize the diagonal of K (plain l1 norm over all entries).
    pub penalize_diagonal: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            penalize_diagonal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionEstimate {
    #[serde(skip)]
    pub k: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `log det K - tr(S K) - lambda * ||K||_1` on the returned K.
    pub objective: f64,
    pub duality_gap: f64,
    /// `log det W` after each sweep; block updates never decrease it.
    #[serde(skip)]
    pub dual_trace: Vec<f64>,
    #[serde(skip)]
    state: WarmStart,
}

impl PrecisionEstimate {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Strictly nonzero upper-triangle entries.
    pub fn edge_count(&self) -> usize {
        count_edges(&self.k)
    }
}

pub fn count_edges(k: &DMatrix<f64>) -> usize {
    let q = k.nrows();
    let mut e = 0;
    for a in 0..q {
        for b in a + 1..q {
            if k[(a, b)].abs() > EDGE_EPS {
                e += 1;
            }
        }
    }
    e
}

/// Covariance estimate and column regression coefficients carried between
/// solves along the penalty path.
#[derive(Debug, Clone, PartialEq, Default)]
struct WarmStart {
    w: DMatrix<f64>,
    beta: DMatrix<f64>,
}

fn log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(m.clone())?;
    Some(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn l1_penalty(k: &DMatrix<f64>, penalize_diagonal: bool) -> f64 {
    let q = k.nrows();
    let mut acc = 0.0;
    for a in 0..q {
        for b in 0..q {
            if a != b || penalize_diagonal {
                acc += k[(a, b)].abs();
            }
        }
    }
    acc
}

fn trace_product(s: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    s.iter().zip(k.iter()).map(|(a, b)| a * b).sum()
}

/// Penalized log-likelihood `log det K - tr(SK) - lambda ||K||_1`.
pub fn penalized_objective(
    k: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Option<f64> {
    Some(log_det(k)? - trace_product(s, k) - lambda * l1_penalty(k, penalize_diagonal))
}

/// Upper bound on suboptimality of `k`, using the box-projected `w` as the
/// dual certificate.
fn duality_gap(
    k: &DMatrix<f64>,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> f64 {
    let q = s.nrows();
    let feasible = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            s[(a, a)] + if penalize_diagonal { lambda } else { 0.0 }
        } else {
            w[(a, b)].clamp(s[(a, b)] - lambda, s[(a, b)] + lambda)
        }
    });
    let (Some(primal), Some(dual_ld)) = (
        penalized_objective(k, s, lambda, penalize_diagonal),
        log_det(&feasible),
    ) else {
        return f64::INFINITY;
    };
    (-dual_ld - q as f64 - primal).max(0.0)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate-descent lasso for column `j`:
/// `min_b 0.5 b' W11 b - s12' b + lambda ||b||_1`, updating `beta` in place.
fn column_lasso(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    beta: &mut DMatrix<f64>,
    j: usize,
    lambda: f64,
) {
    const INNER_TOL: f64 = 1e-13;
    const INNER_MAX: usize = 20_000;
    let q = w.nrows();
    // v = W11 * b, over all rows except j.
    let mut v = vec![0.0; q];
    for l in 0..q {
        let bl = beta[(l, j)];
        if l != j && bl != 0.0 {
            for k in 0..q {
                v[k] += w[(k, l)] * bl;
            }
        }
    }
    for _ in 0..INNER_MAX {
        let mut max_delta = 0.0f64;
        for k in 0..q {
            if k == j {
                continue;
            }
            let wkk = w[(k, k)];
            let old = beta[(k, j)];
            let r = s[(k, j)] - (v[k] - wkk * old);
            let new = soft_threshold(r, lambda) / wkk;
            let delta = new - old;
            if delta != 0.0 {
                beta[(k, j)] = new;
                for i in 0..q {
                    v[i] += w[(i, k)] * delta;
                }
                max_delta = max_delta.max(delta.abs() * wkk.sqrt());
            }
        }
        if max_delta < INNER_TOL {
            break;
        }
    }
}

fn precision_from_blocks(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let q = w.nrows();
    let mut k = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let mut dot = 0.0;
        for i in 0..q {
            if i != j {
                dot += w[(i, j)] * beta[(i, j)];
            }
        }
        let kjj = 1.0 / (w[(j, j)] - dot);
        k[(j, j)] = kjj;
        for i in 0..q {
            if i != j {
                k[(i, j)] = -beta[(i, j)] * kjj;
            }
        }
    }
    // Columns come from separate regressions; average to symmetrize.
    let kt = k.transpose();
    (k + kt) * 0.5
}

fn validate_solve_inputs(
    s: &CovarianceMatrix,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(), GlassoError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(GlassoError::BadOptions(format!("lambda {lambda}")));
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(GlassoError::BadOptions(format!(
            "tol {} max_iter {}",
            opts.tol, opts.max_iter
        )));
    }
    let q = s.dim();
    if s.s.ncols() != q || q == 0 {
        return Err(GlassoError::LengthMismatch("S must be square and nonempty".into()));
    }
    for a in 0..q {
        if !(s.s[(a, a)] > 0.0) {
            return Err(GlassoError::NotPD);
        }
        for b in 0..a {
            if (s.s[(a, b)] - s.s[(b, a)]).abs() > 1e-12 {
                return Err(GlassoError::LengthMismatch("S is not symmetric".into()));
            }
        }
    }
    if lambda == 0.0 && Cholesky::new(s.s.clone()).is_none() {
        return Err(GlassoError::NotPD);
    }
    Ok(())
}

/// Solves the graphical lasso at a single penalty.
pub fn solve(
    s: &CovarianceMatrix,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<PrecisionEstimate, GlassoError> {
    solve_from(s, lambda, opts, None)
}

fn solve_from(
    s: &CovarianceMatrix,
    lambda: f64,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<PrecisionEstimate, GlassoError> {
    validate_solve_inputs(s, lambda, opts)?;
    let q = s.dim();
    let sm = &s.s;
    let diag_shift = if opts.penalize_diagonal { lambda } else { 0.0 };
    let (mut w, mut beta) = match warm {
        Some(ws) if ws.w.nrows() == q => (ws.w.clone(), ws.beta.clone()),
        _ => (sm.clone(), DMatrix::zeros(q, q)),
    };
    for a in 0..q {
        w[(a, a)] = sm[(a, a)] + diag_shift;
    }
    if Cholesky::new(w.clone()).is_none() {
        // A warm start that lost definiteness is discarded.
        w = sm.clone();
        for a in 0..q {
            w[(a, a)] = sm[(a, a)] + diag_shift;
        }
        beta = DMatrix::zeros(q, q);
    }

    let mut dual_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut k = precision_from_blocks(&w, &beta);
    let mut gap = f64::INFINITY;
    if q == 1 {
        converged = true;
        gap = duality_gap(&k, &w, sm, lambda, opts.penalize_diagonal);
    }
    while !converged && iterations < opts.max_iter {
        for j in 0..q {
            column_lasso(&w, sm, &mut beta, j, lambda);
            for i in 0..q {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for l in 0..q {
                    if l != j {
                        acc += w[(i, l)] * beta[(l, j)];
                    }
                }
                w[(i, j)] = acc;
                w[(j, i)] = acc;
            }
        }
        iterations += 1;
        dual_trace.push(log_det(&w).unwrap_or(f64::NEG_INFINITY));
        k = precision_from_blocks(&w, &beta);
        gap = duality_gap(&k, &w, sm, lambda, opts.penalize_diagonal);
        if gap <= opts.tol {
            converged = true;
        }
    }
    if Cholesky::new(k.clone()).is_none() {
        return Err(GlassoError::NotPD);
    }
    let objective = penalized_objective(&k, sm, lambda, opts.penalize_diagonal)
        .ok_or(GlassoError::NotPD)?;
    Ok(PrecisionEstimate {
        k,
        lambda,
        iterations,
        converged,
        objective,
        duality_gap: gap,
        dual_trace,
        state: WarmStart { w, beta },
    })
}

/// Profile Gaussian log-likelihood `(n/2)(log det K - tr(SK))`.
pub fn gaussian_loglik(k: &DMatrix<f64>, s: &DMatrix<f64>, n: f64) -> Result<f64, GlassoError> {
    let ld = log_det(k).ok_or(GlassoError::NotPD)?;
    Ok(0.5 * n * (ld - trace_product(s, k)))
}

/// `-2L + E log n + 4 gamma E log p`.
pub fn ebic(loglik: f64, edges: usize, n: f64, p_nodes: usize, gamma: f64) -> f64 {
    let e = edges as f64;
    -2.0 * loglik + e * n.ln() + 4.0 * gamma * e * (p_nodes as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EbicEntry {
    pub lambda: f64,
    pub ebic: f64,
    pub edges: usize,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EbicTrace {
    /// Sorted by lambda, descending.
    pub entries: Vec<EbicEntry>,
    pub gamma: f64,
    pub n: f64,
    pub p_nodes: usize,
}

impl EbicTrace {
    pub fn selected(&self) -> Option<&EbicEntry> {
        self.entries.iter().find(|e| e.selected)
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rec = serde_json::json!({
                "lambda": e.lambda,
                "ebic": e.ebic,
                "edges": e.edges,
                "loglik": e.loglik,
                "converged": e.converged,
                "iterations": e.iterations,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoResult {
    pub selected: PrecisionEstimate,
    pub trace: EbicTrace,
    pub covariance: CovarianceMatrix,
}

/// Fits every penalty on `grid` (warm-started, in descending order) and keeps
/// the fit with the smallest EBIC. Ties go to the larger penalty.
pub fn select_model(
    s: &CovarianceMatrix,
    grid: &[f64],
    gamma: f64,
    opts: &SolverOptions,
) -> Result<GlassoResult, GlassoError> {
    if grid.is_empty() {
        return Err(GlassoError::BadGrid("empty grid".into()));
    }
    if !(0.0..=0.5).contains(&gamma) {
        return Err(GlassoError::BadOptions(format!("gamma {gamma} outside [0, 0.5]")));
    }
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite lambdas"));
    let q = s.dim();
    let n = s.n_effective;

    let mut entries = Vec::with_capacity(lambdas.len());
    let mut best: Option<(usize, PrecisionEstimate)> = None;
    let mut warm: Option<WarmStart> = None;
    for &lambda in &lambdas {
        match solve_from(s, lambda, opts, warm.as_ref()) {
            Ok(est) => {
                let edges = est.edge_count();
                let loglik = gaussian_loglik(&est.k, &s.s, n)?;
                let value = ebic(loglik, edges, n, q, gamma);
                entries.push(EbicEntry {
                    lambda,
                    ebic: value,
                    edges,
                    loglik,
                    converged: est.converged,
                    iterations: est.iterations,
                    selected: false,
                    failure: None,
                });
                let better = best
                    .as_ref()
                    .is_none_or(|(idx, _)| value < entries[*idx].ebic);
                warm = Some(est.state.clone());
                if better {
                    best = Some((entries.len() - 1, est));
                }
            }
            Err(e) => entries.push(EbicEntry {
                lambda,
                ebic: f64::NAN,
                edges: 0,
                loglik: f64::NAN,
                converged: false,
                iterations: 0,
                selected: false,
                failure: Some(e.to_string()),
            }),
        }
    }
    let (idx, selected) = best.ok_or(GlassoError::SelectFailure)?;
    entries[idx].selected = true;
    Ok(GlassoResult {
        selected,
        trace: EbicTrace {
            entries,
            gamma,
            n,
            p_nodes: q,
        },
        covariance: s.clone(),
    })
}
