//! Rank-stability of repeated explanations: Kendall's tau-b between rankings,
//! pairwise tau matrices per observation, and method comparison.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::explanation::FeatureRanking;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("rankings are over different items: {0}")]
    ItemMismatch(String),
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("observation mismatch: '{0}' vs '{1}'")]
    ObservationMismatch(String, String),
    #[error("mean tau undefined for {0}")]
    UndefinedMean(String),
}

fn tau_from_counts(numerator: i64, untied_a: i64, untied_b: i64) -> Option<f64> {
    if untied_a == 0 || untied_b == 0 {
        return None;
    }
    Some(numerator as f64 / ((untied_a as f64) * (untied_b as f64)).sqrt())
}

fn tie_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions removed.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b between paired rank vectors, `O(n log n)`. Ties are equal
/// values. Returns `Ok(None)` when either side is entirely tied.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<Option<f64>, StabilityError> {
    if a.len() != b.len() {
        return Err(StabilityError::ItemMismatch(format!(
            "{} vs {} items",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(StabilityError::ItemMismatch("NaN rank".into()));
    }
    let n = a.len() as i64;
    let total = n * (n - 1) / 2;
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let mut ties_a = 0i64;
    let mut ties_joint = 0i64;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && a[idx[end]] == a[idx[start]] {
            end += 1;
        }
        let t = (end - start) as i64;
        ties_a += t * (t - 1) / 2;
        let group: Vec<f64> = idx[start..end].iter().map(|&i| b[i]).collect();
        ties_joint += tie_pairs(&group);
        start = end;
    }
    let mut bs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = Vec::with_capacity(bs.len());
    let swaps = merge_count(&mut bs, &mut buf);
    let ties_b = tie_pairs(&bs);

    let numerator = total - ties_a - ties_b + ties_joint - 2 * swaps;
    Ok(tau_from_counts(numerator, total - ties_a, total - ties_b))
}

/// Rank positions keyed by feature: ranked (nonzero) entries take positions
/// 1, 2, ...; every zero-weight entry shares the next position.
fn rank_positions(r: &FeatureRanking) -> HashMap<&str, f64> {
    let nonzero = r.entries.iter().filter(|e| e.weight != 0.0).count();
    let mut pos = 0usize;
    r.entries
        .iter()
        .map(|e| {
            if e.weight != 0.0 {
                pos += 1;
                (e.feature.as_str(), pos as f64)
            } else {
                (e.feature.as_str(), (nonzero + 1) as f64)
            }
        })
        .collect()
}

/// Tau-b between two full-length rankings over the same features.
pub fn ranking_tau_b(a: &FeatureRanking, b: &FeatureRanking) -> Result<Option<f64>, StabilityError> {
    let pa = rank_positions(a);
    let pb = rank_positions(b);
    if pa.len() != a.len() || pb.len() != b.len() {
        return Err(StabilityError::ItemMismatch("duplicate feature in ranking".into()));
    }
    if pa.len() != pb.len() || pa.keys().any(|k| !pb.contains_key(k)) {
        return Err(StabilityError::ItemMismatch(format!(
            "{:?} vs {:?}",
            a.features(),
            b.features()
        )));
    }
    let mut keys: Vec<&str> = pa.keys().copied().collect();
    keys.sort_unstable();
    let va: Vec<f64> = keys.iter().map(|k| pa[k]).collect();
    let vb: Vec<f64> = keys.iter().map(|k| pb[k]).collect();
    kendall_tau_b(&va, &vb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Glime,
    Lime,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Glime => "glime",
            Method::Lime => "lime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub method: Method,
    pub observation_id: String,
    pub runs: usize,
    /// Pairwise tau-b; `None` where undefined. Diagonal is 1.
    pub tau_matrix: Vec<Vec<Option<f64>>>,
    pub mean_tau: Option<f64>,
    pub undefined_pairs: usize,
}

pub fn stability_report(
    rankings: &[FeatureRanking],
    method: Method,
    observation_id: &str,
) -> Result<StabilityReport, StabilityError> {
    let r = rankings.len();
    if r < 2 {
        return Err(StabilityError::TooFewRuns(r));
    }
    let mut tau_matrix = vec![vec![Some(1.0); r]; r];
    let mut defined = Vec::new();
    let mut undefined_pairs = 0;
    for i in 0..r {
        for j in i + 1..r {
            let t = ranking_tau_b(&rankings[i], &rankings[j])?;
            tau_matrix[i][j] = t;
            tau_matrix[j][i] = t;
            match t {
                Some(v) => defined.push(v),
                None => undefined_pairs += 1,
            }
        }
    }
    // Summing in sorted order makes the mean independent of run order.
    defined.sort_by(f64::total_cmp);
    let mean_tau = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(StabilityReport {
        method,
        observation_id: observation_id.to_string(),
        runs: r,
        tau_matrix,
        mean_tau,
        undefined_pairs,
    })
}

fn run_label(obs: &str, i: usize, r: usize) -> String {
    if r <= 26 {
        format!("{obs}{}", (b'A' + i as u8) as char)
    } else {
        format!("{obs}-{}", i + 1)
    }
}

impl StabilityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Tau matrix with run labels (e.g. `1A`..`1J`), three decimals, `NA` when undefined.
    pub fn tau_csv(&self) -> String {
        let labels: Vec<String> = (0..self.runs)
            .map(|i| run_label(&self.observation_id, i, self.runs))
            .collect();
        let mut out = String::new();
        for l in &labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.tau_matrix.iter().enumerate() {
            out.push_str(&labels[i]);
            for v in row {
                match v {
                    Some(t) => out.push_str(&format!(",{t:.3}")),
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Glime,
    Lime,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub observation_id: String,
    pub glime_mean_tau: f64,
    pub lime_mean_tau: f64,
    /// gLIME minus LIME.
    pub difference: f64,
    pub winner: Winner,
}

pub fn compare_methods(
    glime: &StabilityReport,
    lime: &StabilityReport,
) -> Result<ComparisonSummary, StabilityError> {
    if glime.observation_id != lime.observation_id {
        return Err(StabilityError::ObservationMismatch(
            glime.observation_id.clone(),
            lime.observation_id.clone(),
        ));
    }
    let g = glime
        .mean_tau
        .ok_or_else(|| StabilityError::UndefinedMean("glime".into()))?;
    let l = lime
        .mean_tau
        .ok_or_else(|| StabilityError::UndefinedMean("lime".into()))?;
    let winner = if g > l {
        Winner::Glime
    } else if l > g {
        Winner::Lime
    } else {
        Winner::Tie
    };
    Ok(ComparisonSummary {
        observation_id: glime.observation_id.clone(),
        glime_mean_tau: g,
        lime_mean_tau: l,
        difference: g - l,
        winner,
    })
}
