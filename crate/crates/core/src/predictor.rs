//! Black-box score functions: a built-in RBF kernel logistic classifier and a
//! line-oriented protocol for predictors hosted in another process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{stats_of, FeatureStats, TabularDataset};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("training data has no target column")]
    NoTarget,
    #[error("training target contains a single class")]
    SingleClass,
    #[error("need at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid classifier config: {0}")]
    BadConfig(String),
    #[error("expected {expected} features, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("failed to spawn predictor: {0}")]
    SpawnFailure(String),
    #[error("predictor did not complete the handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("malformed predictor response: {0}")]
    MalformedResponse(String),
    #[error("external predictor protocol failure: {0}")]
    ExternalProtocolError(String),
}

/// Hyperparameters of the built-in kernel logistic classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelClassifierConfig {
    /// RBF bandwidth on standardized features. `None` means `1 / p`.
    pub gamma_rbf: Option<f64>,
    pub l2_penalty: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for KernelClassifierConfig {
    fn default() -> Self {
        Self {
            gamma_rbf: None,
            l2_penalty: 1e-3,
            max_iterations: 5000,
            tolerance: 1e-4,
        }
    }
}

impl KernelClassifierConfig {
    fn validate(&self) -> Result<(), PredictorError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if let Some(g) = self.gamma_rbf {
            if !positive(g) {
                return Err(PredictorError::BadConfig(format!("gamma_rbf {g}")));
            }
        }
        if !positive(self.l2_penalty) {
            return Err(PredictorError::BadConfig(format!(
                "l2_penalty {}",
                self.l2_penalty
            )));
        }
        if self.max_iterations == 0 {
            return Err(PredictorError::BadConfig("max_iterations 0".into()));
        }
        if !positive(self.tolerance) {
            return Err(PredictorError::BadConfig(format!(
                "tolerance {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Outcome of the gradient-descent fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// L2-regularized kernel logistic regression with an RBF kernel.
///
/// The decision function is `f(x) = sum_i alpha_i (k(x, c_i) + 1)`; the unit
/// offset in the kernel plays the role of the intercept.
#[derive(Debug, Clone)]
pub struct KernelLogistic {
    stats: FeatureStats,
    centers: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    gamma: f64,
    report: TrainReport,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-y f))` for labels in {0, 1}.
fn logistic_loss(f: f64, y: f64) -> f64 {
    let z = if y > 0.5 { f } else { -f };
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KernelLogistic {
    pub fn train(
        train: &TabularDataset,
        cfg: &KernelClassifierConfig,
    ) -> Result<Self, PredictorError> {
        cfg.validate()?;
        let target = train.target().ok_or(PredictorError::NoTarget)?;
        let n = train.n_rows();
        if n < 10 {
            return Err(PredictorError::TooFewRows { needed: 10, got: n });
        }
        let positives = target.iter().filter(|&&y| y == 1).count();
        if positives == 0 || positives == n {
            return Err(PredictorError::SingleClass);
        }
        let p = train.n_features();
        let stats = stats_of(train.rows()).expect("n >= 10");
        let gamma = cfg.gamma_rbf.unwrap_or(1.0 / p as f64);
        let centers: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..p)
                    .map(|j| stats.standardize(j, train.rows()[(i, j)]))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = target.iter().map(|&v| v as f64).collect();

        let gram: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, k) = (idx / n, idx % n);
                (-gamma * sq_dist(&centers[i], &centers[k])).exp() + 1.0
            })
            .collect();
        let matvec = |v: &[f64]| -> Vec<f64> {
            gram.par_chunks(n)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        };

        // Spectral norm of the (PSD) Gram matrix by power iteration.
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut norm = 0.0;
        for _ in 0..100 {
            let w = matvec(&v);
            let len = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len == 0.0 {
                break;
            }
            let converged = (len - norm).abs() <= 1e-10 * len;
            norm = len;
            v = w.into_iter().map(|x| x / len).collect();
            if converged {
                break;
            }
        }
        let lambda = cfg.l2_penalty;
        // Step size from the curvature bound of the kernel-preconditioned gradient.
        let step = 1.0 / (norm / (4.0 * n as f64) + lambda);

        let objective = |alpha: &[f64], f: &[f64]| -> f64 {
            let data: f64 = f.iter().zip(&y).map(|(&fi, &yi)| logistic_loss(fi, yi)).sum::<f64>()
                / n as f64;
            let reg: f64 = alpha.iter().zip(f).map(|(a, fi)| a * fi).sum::<f64>();
            data + 0.5 * lambda * reg
        };

        let mut alpha = vec![0.0; n];
        let mut f = vec![0.0; n];
        let initial_loss = objective(&alpha, &f);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            // Gradient of the objective preconditioned by the inverse Gram matrix.
            let grad: Vec<f64> = f
                .iter()
                .zip(&y)
                .zip(&alpha)
                .map(|((&fi, &yi), &ai)| (sigmoid(fi) - yi) / n as f64 + lambda * ai)
                .collect();
            let scaled = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) * n as f64;
            if scaled < cfg.tolerance {
                converged = true;
                break;
            }
            for (a, g) in alpha.iter_mut().zip(&grad) {
                *a -= step * g;
            }
            f = matvec(&alpha);
            iterations += 1;
        }
        let final_loss = objective(&alpha, &f);
        Ok(Self {
            stats,
            centers,
            alpha,
            gamma,
            report: TrainReport {
                iterations,
                converged,
                initial_loss,
                final_loss,
            },
        })
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn width(&self) -> usize {
        self.stats.width()
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &x)| self.stats.standardize(j, x))
            .collect();
        let f: f64 = self
            .centers
            .iter()
            .zip(&self.alpha)
            .map(|(c, a)| a * ((-self.gamma * sq_dist(c, &z)).exp() + 1.0))
            .sum();
        sigmoid(f)
    }

    pub fn score_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, PredictorError> {
        check_width(self.width(), rows)?;
        Ok((0..rows.nrows())
            .into_par_iter()
            .map(|i| {
                let row: Vec<f64> = rows.row(i).iter().copied().collect();
                self.score_row(&row)
            })
            .collect())
    }
}

fn check_width(expected: usize, rows: &DMatrix<f64>) -> Result<(), PredictorError> {
    if rows.nrows() > 0 && rows.ncols() != expected {
        return Err(PredictorError::WidthMismatch {
            expected,
            got: rows.ncols(),
        });
    }
    Ok(())
}

/// Timeouts for the external predictor protocol.
#[derive(Debug, Clone, Copy)]
pub struct ExternalTimeouts {
    pub handshake: Duration,
    pub response: Duration,
}

impl Default for ExternalTimeouts {
    fn default() -> Self {
        Self {
            handshake: Duration::from_secs(10),
            response: Duration::from_secs(120),
        }
    }
}

struct ExternalProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

/// A predictor running as a child process, spoken to over stdin/stdout.
///
/// Protocol: `HELLO glime-predictor 1` / `READY <p>`; per batch `SCORE <m>`
/// followed by `m` rows of comma-separated decimals, answered by `m` lines each
/// holding one score in [0, 1]; `BYE` on shutdown.
pub struct ExternalPredictor {
    width: usize,
    timeouts: ExternalTimeouts,
    process: Mutex<ExternalProcess>,
}

impl std::fmt::Debug for ExternalPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPredictor")
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ExternalProcess {
    fn send(&mut self, text: &str) -> Result<(), PredictorError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| PredictorError::ExternalProtocolError("stdin closed".into()))?;
        stdin
            .write_all(text.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| PredictorError::ExternalProtocolError(format!("write failed: {e}")))
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, PredictorError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line.trim_end_matches(['\r', '\n']).to_string()),
            Ok(Err(e)) => Err(PredictorError::ExternalProtocolError(format!(
                "read failed: {e}"
            ))),
            Err(RecvTimeoutError::Timeout) => Err(PredictorError::ExternalProtocolError(format!(
                "no response within {timeout:?}"
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(PredictorError::ExternalProtocolError(
                "predictor process closed its output".into(),
            )),
        }
    }
}

impl ExternalPredictor {
    pub fn connect(command: &str, timeouts: ExternalTimeouts) -> Result<Self, PredictorError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictorError::SpawnFailure(e.to_string()))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| PredictorError::SpawnFailure("no stdout pipe".into()))?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut process = ExternalProcess {
            child,
            stdin,
            lines: rx,
        };
        let handshake = (|| {
            process.send("HELLO glime-predictor 1\n")?;
            let reply = match process.lines.recv_timeout(timeouts.handshake) {
                Ok(Ok(line)) => line,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(PredictorError::HandshakeTimeout(timeouts.handshake))
                }
                _ => {
                    return Err(PredictorError::ExternalProtocolError(
                        "predictor exited during handshake".into(),
                    ))
                }
            };
            let mut parts = reply.split_whitespace();
            match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
                (Some("READY"), Some(Ok(p)), None) if p > 0 => Ok(p),
                _ => Err(PredictorError::MalformedResponse(reply.clone())),
            }
        })();
        match handshake {
            Ok(width) => Ok(Self {
                width,
                timeouts,
                process: Mutex::new(process),
            }),
            Err(e) => {
                let _ = process.child.kill();
                let _ = process.child.wait();
                Err(e)
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn score_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, PredictorError> {
        check_width(self.width, rows)?;
        let m = rows.nrows();
        if m == 0 {
            return Ok(Vec::new());
        }
        let mut proc = self.process.lock().unwrap_or_else(|e| e.into_inner());
        let mut payload = format!("SCORE {m}\n");
        for i in 0..m {
            let line: Vec<String> = rows.row(i).iter().map(|v| format!("{v:?}")).collect();
            payload.push_str(&line.join(","));
            payload.push('\n');
        }
        proc.send(&payload)?;
        let mut scores = Vec::with_capacity(m);
        for _ in 0..m {
            let line = proc.recv(self.timeouts.response)?;
            let score = line
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|s| s.is_finite() && (0.0..=1.0).contains(s))
                .ok_or_else(|| PredictorError::MalformedResponse(line.clone()))?;
            scores.push(score);
        }
        Ok(scores)
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        let proc = self.process.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = proc.send("BYE\n");
        proc.stdin.take();
        // Give a well-behaved child a moment to exit on its own.
        for _ in 0..50 {
            if let Ok(Some(_)) = proc.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = proc.child.kill();
        let _ = proc.child.wait();
    }
}

/// Opaque score function consumed by the explainer.
#[derive(Debug)]
pub enum Predictor {
    Builtin(KernelLogistic),
    External(ExternalPredictor),
}

impl Predictor {
    pub fn train_builtin(
        train: &TabularDataset,
        cfg: &KernelClassifierConfig,
    ) -> Result<Self, PredictorError> {
        KernelLogistic::train(train, cfg).map(Predictor::Builtin)
    }

    pub fn connect_external(command: &str) -> Result<Self, PredictorError> {
        ExternalPredictor::connect(command, ExternalTimeouts::default()).map(Predictor::External)
    }

    pub fn width(&self) -> usize {
        match self {
            Predictor::Builtin(m) => m.width(),
            Predictor::External(e) => e.width(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Builtin(_) => "builtin_kernel",
            Predictor::External(_) => "external_process",
        }
    }

    pub fn score_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, PredictorError> {
        match self {
            Predictor::Builtin(m) => m.score_batch(rows),
            Predictor::External(e) => e.score_batch(rows),
        }
    }
}
