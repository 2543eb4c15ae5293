//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use glime::glasso::CovarianceMatrix;
use glime::perturbation::LocalDataset;

pub fn biopsy_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/biopsy.csv")
}

/// Random positive definite correlation matrix of size `q`.
pub fn random_correlation(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = q + 2;
    let a: DMatrix<f64> = DMatrix::from_fn(q, k, |_, _| StandardNormal.sample(rng));
    let c = &a * a.transpose() / k as f64;
    let d: Vec<f64> = (0..q).map(|i| c[(i, i)].sqrt()).collect();
    DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { c[(i, j)] / (d[i] * d[j]) })
}

pub fn as_cov(s: DMatrix<f64>, n: f64) -> CovarianceMatrix {
    CovarianceMatrix::from_matrix(s, n)
}

/// Graphical lasso by ADMM on `-logdet X + tr(SX) + lambda sum_{i != j} |Z_ij|`
/// (diagonal included when `penalize_diagonal`).
pub fn admm_glasso(s: &DMatrix<f64>, lambda: f64, penalize_diagonal: bool) -> DMatrix<f64> {
    let q = s.nrows();
    let rho = 1.0;
    let mut z = DMatrix::<f64>::identity(q, q);
    let mut u = DMatrix::<f64>::zeros(q, q);
    for _ in 0..200_000 {
        let target = (&z - &u) * rho - s;
        let eig = SymmetricEigen::new(target);
        let vals = eig
            .eigenvalues
            .map(|l| (l + (l * l + 4.0 * rho).sqrt()) / (2.0 * rho));
        let x = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        let z_old = z.clone();
        let v = &x + &u;
        let t = lambda / rho;
        z = DMatrix::from_fn(q, q, |i, j| {
            let a = v[(i, j)];
            if i == j && !penalize_diagonal {
                a
            } else {
                a.signum() * (a.abs() - t).max(0.0)
            }
        });
        u += &x - &z;
        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_old).norm();
        if primal < 1e-11 && dual < 1e-11 {
            break;
        }
    }
    (&z + z.transpose()) * 0.5
}

/// Draws `n` rows from N(0, cov).
pub fn sample_gaussian(cov: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = cov.nrows();
    let l = cov.clone().cholesky().expect("PD covariance").l();
    let mut out = DMatrix::zeros(n, q);
    for i in 0..n {
        let z = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        let x = &l * z;
        for j in 0..q {
            out[(i, j)] = x[j];
        }
    }
    out
}

pub fn local_from(x: &DMatrix<f64>) -> LocalDataset {
    let q = x.ncols();
    let mut names: Vec<String> = (1..q).map(|j| format!("V{j}")).collect();
    names.push("O1".into());
    LocalDataset {
        names,
        data: x.clone(),
    }
}

/// Least-squares residuals of column `target` on an intercept and `others`.
fn residuals(x: &DMatrix<f64>, target: usize, others: &[usize]) -> DVector<f64> {
    let n = x.nrows();
    let design = DMatrix::from_fn(n, others.len() + 1, |i, k| {
        if k == 0 {
            1.0
        } else {
            x[(i, others[k - 1])]
        }
    });
    let y = DVector::from_fn(n, |i, _| x[(i, target)]);
    let beta = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .expect("least squares");
    y - design * beta
}

/// Partial correlation of every pair as the correlation of the two
/// regression residuals on all remaining columns.
pub fn residual_partial_correlations(x: &DMatrix<f64>) -> DMatrix<f64> {
    let q = x.ncols();
    let mut w = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in i + 1..q {
            let others: Vec<usize> = (0..q).filter(|&k| k != i && k != j).collect();
            let ri = residuals(x, i, &others);
            let rj = residuals(x, j, &others);
            let r = ri.dot(&rj) / (ri.norm() * rj.norm());
            w[(i, j)] = r;
            w[(j, i)] = r;
        }
    }
    w
}

/// Kendall tau-b by enumerating every pair.
pub fn brute_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                tie_a += 1;
            }
            if db == 0.0 {
                tie_b += 1;
            }
            if da != 0.0 && db != 0.0 {
                if (da > 0.0) == (db > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let total = (n * n.saturating_sub(1) / 2) as i64;
    let (ua, ub) = (total - tie_a, total - tie_b);
    if ua == 0 || ub == 0 {
        return None;
    }
    Some((conc - disc) as f64 / ((ua as f64) * (ub as f64)).sqrt())
}

/// Random rank vector of length `n`; with `ties`, values come from a small range.
pub fn random_ranks(n: usize, ties: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if ties {
        let k = rng.random_range(1..=n.max(2) / 2 + 1);
        (0..n).map(|_| rng.random_range(1..=k) as f64).collect()
    } else {
        let mut v: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        v.shuffle(rng);
        v
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
