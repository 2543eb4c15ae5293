//! Neighbourhood sampling around a query instance, kernel similarity weights and
//! assembly of the local dataset (features plus predicted score).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureStats;

/// Name of the output node appended to the local dataset.
pub const OUTPUT_NODE: &str = "O1";

#[derive(Debug, Error, PartialEq)]
pub enum PerturbationError {
    #[error("expected {expected} features, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("kernel width must be positive, got {0}")]
    ZeroWidth(f64),
    #[error("length mismatch: {samples} samples but {scores} scores")]
    LengthMismatch { samples: usize, scores: usize },
    #[error("invalid perturbation config: {0}")]
    BadConfig(String),
}

/// Kernel width; serialized as the string `"auto"` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelWidth {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KernelWidthRepr {
    Number(f64),
    Text(String),
}

impl Serialize for KernelWidth {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            KernelWidth::Auto => KernelWidthRepr::Text("auto".into()),
            KernelWidth::Fixed(w) => KernelWidthRepr::Number(w),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KernelWidth {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match KernelWidthRepr::deserialize(deserializer)? {
            KernelWidthRepr::Number(w) => Ok(KernelWidth::Fixed(w)),
            KernelWidthRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl KernelWidth {
    /// Resolves `Auto` to `0.75 * sqrt(p)`.
    pub fn resolve(self, p: usize) -> f64 {
        match self {
            KernelWidth::Auto => 0.75 * (p as f64).sqrt(),
            KernelWidth::Fixed(w) => w,
        }
    }
}

impl std::str::FromStr for KernelWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KernelWidth::Auto);
        }
        s.parse::<f64>()
            .map(KernelWidth::Fixed)
            .map_err(|e| format!("kernel width '{s}': {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub m: usize,
    pub kernel_width: KernelWidth,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            m: 5000,
            kernel_width: KernelWidth::Auto,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), PerturbationError> {
        if self.m < 10 {
            return Err(PerturbationError::BadConfig(format!("m = {} < 10", self.m)));
        }
        if let KernelWidth::Fixed(w) = self.kernel_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(PerturbationError::ZeroWidth(w));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(PerturbationError::BadConfig(format!(
                "noise_scale {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// The perturbed neighbourhood of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub base_instance: Vec<f64>,
    pub samples: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
    pub kernel_width: f64,
}

/// Features plus the score column (named [`OUTPUT_NODE`]) as the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

impl LocalDataset {
    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.data.ncols()
    }
}

fn check_width(expected: usize, got: usize) -> Result<(), PerturbationError> {
    if expected != got {
        return Err(PerturbationError::WidthMismatch { expected, got });
    }
    Ok(())
}

/// Draws `cfg.m` rows `instance + eps`, `eps[j] ~ N(0, (noise_scale * std_j)^2)`.
///
/// Row `i` uses its own ChaCha stream (`seed`, stream `i`), so the output does
/// not depend on how rows are scheduled across threads.
pub fn generate(
    instance: &[f64],
    stats: &FeatureStats,
    cfg: &PerturbationConfig,
) -> Result<DMatrix<f64>, PerturbationError> {
    cfg.validate()?;
    let p = stats.width();
    check_width(p, instance.len())?;
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            if stats.constant[j] {
                0.0
            } else {
                cfg.noise_scale * stats.stdevs[j]
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            (0..p)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if scales[j] == 0.0 {
                        instance[j]
                    } else {
                        instance[j] + scales[j] * z
                    }
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(cfg.m, p, |i, j| rows[i][j]))
}

/// `exp(-d^2 / width^2)` with `d` the Euclidean distance in standardized space.
pub fn kernel_weights(
    instance: &[f64],
    samples: &DMatrix<f64>,
    stats: &FeatureStats,
    width: f64,
) -> Result<Vec<f64>, PerturbationError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(PerturbationError::ZeroWidth(width));
    }
    let p = stats.width();
    check_width(p, instance.len())?;
    if samples.nrows() > 0 {
        check_width(p, samples.ncols())?;
    }
    let base: Vec<f64> = (0..p).map(|j| stats.standardize(j, instance[j])).collect();
    Ok((0..samples.nrows())
        .map(|i| {
            let d2: f64 = (0..p)
                .map(|j| {
                    let diff = stats.standardize(j, samples[(i, j)]) - base[j];
                    diff * diff
                })
                .sum();
            (-d2 / (width * width)).exp()
        })
        .collect())
}

pub fn assemble_local(
    feature_names: &[String],
    samples: &DMatrix<f64>,
    scores: &[f64],
) -> Result<LocalDataset, PerturbationError> {
    if samples.nrows() != scores.len() {
        return Err(PerturbationError::LengthMismatch {
            samples: samples.nrows(),
            scores: scores.len(),
        });
    }
    let p = feature_names.len();
    if samples.nrows() > 0 {
        check_width(p, samples.ncols())?;
    }
    let data = DMatrix::from_fn(samples.nrows(), p + 1, |i, j| {
        if j == p {
            scores[i]
        } else {
            samples[(i, j)]
        }
    });
    let mut names = feature_names.to_vec();
    names.push(OUTPUT_NODE.to_string());
    Ok(LocalDataset { names, data })
}

/// Samples, weights and scores for one instance in one pass.
pub fn perturb<F, E>(
    instance: &[f64],
    stats: &FeatureStats,
    cfg: &PerturbationConfig,
    score: F,
) -> Result<PerturbationSet, E>
where
    F: FnOnce(&DMatrix<f64>) -> Result<Vec<f64>, E>,
    E: From<PerturbationError>,
{
    let samples = generate(instance, stats, cfg)?;
    let width = cfg.kernel_width.resolve(stats.width());
    let weights = kernel_weights(instance, &samples, stats, width)?;
    let scores = score(&samples)?;
    if scores.len() != samples.nrows() {
        return Err(PerturbationError::LengthMismatch {
            samples: samples.nrows(),
            scores: scores.len(),
        }
        .into());
    }
    Ok(PerturbationSet {
        base_instance: instance.to_vec(),
        samples,
        weights,
        scores,
        kernel_width: width,
    })
}
