//! Weighted linear surrogate baseline fitted on the same local dataset.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::explanation::FeatureRanking;
use crate::perturbation::LocalDataset;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("weighted design is rank deficient")]
    SingularSystem,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("ridge penalty must be finite and >= 0, got {0}")]
    BadPenalty(f64),
}

/// Coefficients are on the standardized feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge_penalty: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl SurrogateFit {
    /// Coefficients mapped back to the original feature units.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect()
    }

    pub fn raw_intercept(&self) -> f64 {
        self.intercept
            - self
                .raw_coefficients()
                .iter()
                .zip(&self.means)
                .map(|(b, m)| b * m)
                .sum::<f64>()
    }
}

/// Weighted ridge regression of the score column on the standardized features.
///
/// Minimizes `sum_i wbar_i (y_i - b0 - b'z_i)^2 + penalty ||b||^2` where
/// `wbar` are the weights normalized to sum to one and `z` the features
/// standardized by their weighted mean and standard deviation.
pub fn fit_surrogate(
    local: &LocalDataset,
    weights: &[f64],
    ridge_penalty: f64,
) -> Result<SurrogateFit, SurrogateError> {
    if !(ridge_penalty.is_finite() && ridge_penalty >= 0.0) {
        return Err(SurrogateError::BadPenalty(ridge_penalty));
    }
    let m = local.n_samples();
    let q = local.n_nodes();
    let p = q - 1;
    if weights.len() != m {
        return Err(SurrogateError::LengthMismatch(format!(
            "{} weights for {m} samples",
            weights.len()
        )));
    }
    if m < p + 2 {
        return Err(SurrogateError::TooFewSamples { needed: p + 2, got: m });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(SurrogateError::LengthMismatch("weights sum to zero".into()));
    }
    let wbar: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let x = &local.data;
    let wmean = |j: usize| (0..m).map(|i| wbar[i] * x[(i, j)]).sum::<f64>();
    let means: Vec<f64> = (0..p).map(wmean).collect();
    let y_mean = wmean(p);
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let var: f64 = (0..m).map(|i| wbar[i] * (x[(i, j)] - means[j]).powi(2)).sum();
            if var > 1e-24 * (1.0 + means[j] * means[j]) {
                var.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let active: Vec<usize> = (0..p).filter(|&j| scales[j] > 0.0).collect();
    let k = active.len();

    let z = |i: usize, a: usize| {
        let j = active[a];
        (x[(i, j)] - means[j]) / scales[j]
    };
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..m {
        let zi: Vec<f64> = (0..k).map(|a| z(i, a)).collect();
        let yi = x[(i, p)] - y_mean;
        for a in 0..k {
            rhs[a] += wbar[i] * zi[a] * yi;
            for b in a..k {
                gram[(a, b)] += wbar[i] * zi[a] * zi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    if ridge_penalty == 0.0 && k > 0 {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().fold(0.0f64, |acc, v| acc.max(*v));
        let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
        if min <= 1e-10 * max.max(1e-300) {
            return Err(SurrogateError::SingularSystem);
        }
    }
    for a in 0..k {
        gram[(a, a)] += ridge_penalty;
    }
    let solved = if k == 0 {
        DVector::zeros(0)
    } else {
        Cholesky::new(gram)
            .ok_or(SurrogateError::SingularSystem)?
            .solve(&rhs)
    };
    let mut coefficients = vec![0.0; p];
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = solved[a];
    }
    Ok(SurrogateFit {
        feature_names: local.names[..p].to_vec(),
        coefficients,
        intercept: y_mean,
        ridge_penalty,
        means,
        scales,
    })
}

/// All features by `|coefficient|` descending, ties by feature index.
pub fn rank_surrogate(fit: &SurrogateFit) -> FeatureRanking {
    FeatureRanking::from_weights(
        fit.feature_names
            .iter()
            .zip(&fit.coefficients)
            .enumerate()
            .map(|(j, (name, &w))| (j, name.as_str(), w)),
        true,
    )
}
