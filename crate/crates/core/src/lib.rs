//! Graphical local explanations for black-box tabular classifiers.
//!
//! An instance is perturbed, the black box scores the perturbations, and a
//! sparse Gaussian graphical model is fitted to the weighted local dataset by
//! the graphical lasso with EBIC model selection. The resulting
//! partial-correlation network ranks the features linked to the prediction
//! and exposes a greedy influence path. A weighted linear surrogate serves as
//! the baseline, and Kendall's tau-b across repeated runs measures stability.

pub mod data;
pub mod explanation;
pub mod export;
pub mod glasso;
pub mod lime;
pub mod network;
pub mod perturbation;
pub mod pipeline;
pub mod predictor;
pub mod stability;
pub mod synthetic;

use thiserror::Error;

/// Failure category reported by the command-line interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Predictor,
    Estimation,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Predictor => "predictor",
            Category::Estimation => "estimation",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Predictor => 4,
            Category::Estimation => 5,
            Category::Io => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Predictor(#[from] predictor::PredictorError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> Category {
        use pipeline::PipelineError as P;
        match self {
            Error::Config(_) => Category::Config,
            Error::Data(data::DataError::UnknownColumn(_)) => Category::Config,
            Error::Data(data::DataError::BadFraction(_)) => Category::Config,
            Error::Data(data::DataError::Io(_)) => Category::Io,
            Error::Data(_) => Category::Data,
            Error::Predictor(predictor::PredictorError::BadConfig(_)) => Category::Config,
            Error::Predictor(_) => Category::Predictor,
            Error::Pipeline(P::Config(_)) => Category::Config,
            Error::Pipeline(P::Perturbation(perturbation::PerturbationError::BadConfig(_)))
            | Error::Pipeline(P::Perturbation(perturbation::PerturbationError::ZeroWidth(_))) => {
                Category::Config
            }
            Error::Pipeline(P::Predictor(predictor::PredictorError::BadConfig(_))) => {
                Category::Config
            }
            Error::Pipeline(P::Predictor(_)) => Category::Predictor,
            Error::Pipeline(_) => Category::Estimation,
            Error::Io { .. } => Category::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
