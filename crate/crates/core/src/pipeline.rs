//! End-to-end orchestration: perturb an instance, estimate the sparse
//! precision matrix of the local dataset, and derive the explanation. The
//! stability study repeats this with consecutive seeds and scores the
//! surrogate baseline on the very same perturbation sets.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureStats;
use crate::explanation::{
    build_explanation, extract_path, rank_features, ExplanationError, ExplanationGraph,
    ExplanationMetadata, FeatureRanking, DEFAULT_STOP_THRESHOLD,
};
use crate::glasso::{
    lambda_grid, select_model, weighted_correlation, GlassoError, GlassoResult, SolverOptions,
};
use crate::lime::{fit_surrogate, rank_surrogate, SurrogateError};
use crate::network::{partial_correlations, NetworkError};
use crate::perturbation::{
    assemble_local, perturb, LocalDataset, PerturbationConfig, PerturbationError, PerturbationSet,
};
use crate::predictor::{Predictor, PredictorError};
use crate::stability::{
    compare_methods, stability_report, ComparisonSummary, Method, StabilityError, StabilityReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Glasso(#[from] GlassoError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Explanation(#[from] ExplanationError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassoSettings {
    pub grid_size: usize,
    /// `lambda_min / lambda_max`.
    pub ratio: f64,
    /// EBIC gamma in [0, 0.5].
    pub gamma: f64,
    pub solver: SolverOptions,
    /// Use the kernel weights in the correlation estimate; `false` treats all
    /// perturbed samples equally.
    pub weighted: bool,
}

impl Default for GlassoSettings {
    fn default() -> Self {
        Self {
            grid_size: 100,
            ratio: 0.01,
            gamma: 0.5,
            solver: SolverOptions::default(),
            weighted: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub perturbation: PerturbationConfig,
    pub glasso: GlassoSettings,
    pub stop_threshold: f64,
    /// Ridge penalty of the linear surrogate.
    pub ridge_penalty: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            perturbation: PerturbationConfig::default(),
            glasso: GlassoSettings::default(),
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            ridge_penalty: 1e-3,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.perturbation.validate()?;
        let g = &self.glasso;
        if g.grid_size < 2 {
            return Err(PipelineError::Config(format!("grid_size {} < 2", g.grid_size)));
        }
        if !(g.ratio > 0.0 && g.ratio < 1.0) {
            return Err(PipelineError::Config(format!("ratio {} outside (0, 1)", g.ratio)));
        }
        if !(0.0..=0.5).contains(&g.gamma) {
            return Err(PipelineError::Config(format!("gamma {} outside [0, 0.5]", g.gamma)));
        }
        if !(g.solver.tol.is_finite() && g.solver.tol > 0.0) || g.solver.max_iter == 0 {
            return Err(PipelineError::Config(format!(
                "solver tol {} / max_iter {}",
                g.solver.tol, g.solver.max_iter
            )));
        }
        if !(self.stop_threshold.is_finite() && self.stop_threshold >= 0.0) {
            return Err(PipelineError::Config(format!(
                "stop_threshold {}",
                self.stop_threshold
            )));
        }
        if !(self.ridge_penalty.is_finite() && self.ridge_penalty >= 0.0) {
            return Err(PipelineError::Config(format!(
                "ridge_penalty {}",
                self.ridge_penalty
            )));
        }
        Ok(())
    }
}

/// Everything produced by one explanation run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub graph: ExplanationGraph,
    pub glasso: GlassoResult,
    pub perturbations: PerturbationSet,
    pub local: LocalDataset,
}

/// Explains one instance from an already scored perturbation set.
/// `instance_score` is the black-box score of the unperturbed instance.
pub fn explain_from_set(
    feature_names: &[String],
    set: PerturbationSet,
    instance_score: f64,
    cfg: &ExplainConfig,
    instance_id: &str,
    run: usize,
) -> Result<RunOutput, PipelineError> {
    let local = assemble_local(feature_names, &set.samples, &set.scores)?;
    let uniform;
    let weights: &[f64] = if cfg.glasso.weighted {
        &set.weights
    } else {
        uniform = vec![1.0; set.weights.len()];
        &uniform
    };
    let cov = weighted_correlation(&local, weights)?;
    let grid = lambda_grid(&cov, cfg.glasso.grid_size, cfg.glasso.ratio)?;
    let glasso = select_model(&cov, &grid.values, cfg.glasso.gamma, &cfg.glasso.solver)?;
    let network = partial_correlations(&glasso.selected.k, local.names.clone())?;
    let ranking = rank_features(&network);
    let path = extract_path(&network, cfg.stop_threshold);
    let metadata = ExplanationMetadata {
        instance_id: instance_id.to_string(),
        run,
        seed: cfg.perturbation.seed,
        lambda: glasso.selected.lambda,
        gamma: cfg.glasso.gamma,
        m: cfg.perturbation.m,
        kernel_width: set.kernel_width,
        stop_threshold: cfg.stop_threshold,
        n_effective: glasso.covariance.n_effective,
        instance_score,
    };
    let graph = build_explanation(network, ranking, path, metadata)?;
    Ok(RunOutput {
        graph,
        glasso,
        perturbations: set,
        local,
    })
}

/// Perturbs `instance`, scores the samples with `predictor` and explains it.
pub fn explain_instance(
    predictor: &Predictor,
    stats: &FeatureStats,
    feature_names: &[String],
    instance: &[f64],
    cfg: &ExplainConfig,
    instance_id: &str,
    run: usize,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if predictor.width() != feature_names.len() {
        return Err(PipelineError::Config(format!(
            "predictor expects {} features, dataset has {}",
            predictor.width(),
            feature_names.len()
        )));
    }
    let set = perturb(instance, stats, &cfg.perturbation, |rows| {
        predictor.score_batch(rows).map_err(PipelineError::from)
    })?;
    let base = DMatrix::from_row_slice(1, instance.len(), instance);
    let instance_score = predictor.score_batch(&base)?[0];
    explain_from_set(feature_names, set, instance_score, cfg, instance_id, run)
}

/// Full-length surrogate ranking on the run's local dataset and kernel weights.
pub fn lime_ranking(run: &RunOutput, ridge_penalty: f64) -> Result<FeatureRanking, PipelineError> {
    let fit = fit_surrogate(&run.local, &run.perturbations.weights, ridge_penalty)?;
    Ok(rank_surrogate(&fit))
}

#[derive(Debug, Clone)]
pub struct StudyRun {
    pub output: RunOutput,
    pub glime_ranking: FeatureRanking,
    pub lime_ranking: FeatureRanking,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub runs: Vec<StudyRun>,
    pub glime: StabilityReport,
    pub lime: StabilityReport,
    pub summary: ComparisonSummary,
}

/// Repeats the explanation `runs` times with seeds `base_seed + run` and
/// compares the stability of both methods. Runs execute in parallel; the
/// result does not depend on scheduling.
pub fn stability_study(
    predictor: &Predictor,
    stats: &FeatureStats,
    feature_names: &[String],
    instance: &[f64],
    cfg: &ExplainConfig,
    observation_id: &str,
    runs: usize,
) -> Result<StudyOutcome, PipelineError> {
    if runs < 2 {
        return Err(PipelineError::Config(format!(
            "runs per observation must be at least 2, got {runs}"
        )));
    }
    cfg.validate()?;
    let base_seed = cfg.perturbation.seed;
    let results: Vec<Result<StudyRun, PipelineError>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut run_cfg = *cfg;
            run_cfg.perturbation.seed = base_seed.wrapping_add(run as u64);
            let output = explain_instance(
                predictor,
                stats,
                feature_names,
                instance,
                &run_cfg,
                observation_id,
                run,
            )?;
            let lime = lime_ranking(&output, cfg.ridge_penalty)?;
            let glime = output.graph.ranking.padded(feature_names);
            Ok(StudyRun {
                output,
                glime_ranking: glime,
                lime_ranking: lime,
            })
        })
        .collect();
    let runs: Vec<StudyRun> = results.into_iter().collect::<Result<_, _>>()?;
    let g: Vec<FeatureRanking> = runs.iter().map(|r| r.glime_ranking.clone()).collect();
    let l: Vec<FeatureRanking> = runs.iter().map(|r| r.lime_ranking.clone()).collect();
    let glime = stability_report(&g, Method::Glime, observation_id)?;
    let lime = stability_report(&l, Method::Lime, observation_id)?;
    let summary = compare_methods(&glime, &lime)?;
    Ok(StudyOutcome {
        runs,
        glime,
        lime,
        summary,
    })
}
