//! Explanation artifacts derived from a partial-correlation network: the
//! feature ranking against the output node, the greedy influence path, and the
//! assembled explanation graph with its JSON form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{edge_list, NetworkError, PartialCorrelationNetwork};

/// Default stop threshold for the influence path.
pub const DEFAULT_STOP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ExplanationError {
    #[error("inconsistent explanation components: {0}")]
    InconsistentComponents(String),
    #[error("malformed explanation document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub feature: String,
    #[serde(skip)]
    pub index: usize,
    #[serde(rename = "w")]
    pub weight: f64,
}

/// Features ordered by absolute weight, strongest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureRanking {
    pub entries: Vec<RankEntry>,
}

impl FeatureRanking {
    /// Orders `(index, name, weight)` triples by `|weight|` descending, ties
    /// by index ascending, dropping exact zeros unless `keep_zeros`.
    pub fn from_weights<'a, I>(items: I, keep_zeros: bool) -> Self
    where
        I: IntoIterator<Item = (usize, &'a str, f64)>,
    {
        let mut entries: Vec<RankEntry> = items
            .into_iter()
            .filter(|(_, _, w)| keep_zeros || *w != 0.0)
            .map(|(index, name, weight)| RankEntry {
                feature: name.to_string(),
                index,
                weight,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.weight
                .abs()
                .total_cmp(&a.weight.abs())
                .then(a.index.cmp(&b.index))
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn features(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.feature.as_str()).collect()
    }

    /// Full-length ranking over `feature_names`: the ranked entries followed by
    /// every missing feature with weight 0, in index order.
    pub fn padded(&self, feature_names: &[String]) -> FeatureRanking {
        let mut entries = self.entries.clone();
        for (index, name) in feature_names.iter().enumerate() {
            if !entries.iter().any(|e| e.index == index) {
                entries.push(RankEntry {
                    feature: name.clone(),
                    index,
                    weight: 0.0,
                });
            }
        }
        FeatureRanking { entries }
    }
}

/// Features directly connected to the output node, by `|W_{j,O1}|`.
pub fn rank_features(net: &PartialCorrelationNetwork) -> FeatureRanking {
    let out = net.output_index();
    let names = net.node_names();
    FeatureRanking::from_weights(
        (0..out).map(|j| (j, names[j].as_str(), net.weight(j, out))),
        false,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BelowThreshold,
    AllVisited,
    DeadEnd,
}

/// Greedy strongest-edge walk starting at the output node.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluencePath {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub stop_reason: StopReason,
}

pub fn extract_path(net: &PartialCorrelationNetwork, stop_threshold: f64) -> InfluencePath {
    let q = net.n_nodes();
    let mut visited = vec![false; q];
    let mut current = net.output_index();
    visited[current] = true;
    let mut nodes = vec![current];
    let mut weights = Vec::new();
    let stop_reason = loop {
        if nodes.len() == q {
            break StopReason::AllVisited;
        }
        let mut best: Option<(usize, f64)> = None;
        for next in 0..q {
            let w = net.weight(current, next);
            if visited[next] || w == 0.0 {
                continue;
            }
            if best.is_none_or(|(_, bw)| w.abs() > bw.abs()) {
                best = Some((next, w));
            }
        }
        match best {
            None => break StopReason::DeadEnd,
            Some((_, w)) if w.abs() < stop_threshold => break StopReason::BelowThreshold,
            Some((next, w)) => {
                visited[next] = true;
                nodes.push(next);
                weights.push(w);
                current = next;
            }
        }
    };
    InfluencePath {
        nodes,
        weights,
        stop_reason,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMetadata {
    pub instance_id: String,
    pub run: usize,
    pub seed: u64,
    pub lambda: f64,
    pub gamma: f64,
    pub m: usize,
    pub kernel_width: f64,
    pub stop_threshold: f64,
    pub n_effective: f64,
    pub instance_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationGraph {
    pub network: PartialCorrelationNetwork,
    pub ranking: FeatureRanking,
    pub path: InfluencePath,
    pub metadata: ExplanationMetadata,
}

pub fn build_explanation(
    network: PartialCorrelationNetwork,
    ranking: FeatureRanking,
    path: InfluencePath,
    metadata: ExplanationMetadata,
) -> Result<ExplanationGraph, ExplanationError> {
    if rank_features(&network) != ranking {
        return Err(ExplanationError::InconsistentComponents(
            "ranking does not match the network".into(),
        ));
    }
    if extract_path(&network, metadata.stop_threshold) != path {
        return Err(ExplanationError::InconsistentComponents(
            "path does not match the network".into(),
        ));
    }
    Ok(ExplanationGraph {
        network,
        ranking,
        path,
        metadata,
    })
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    i: usize,
    j: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct PathDoc {
    nodes: Vec<String>,
    weights: Vec<f64>,
    stop_reason: StopReason,
}

#[derive(Serialize, Deserialize)]
struct ExplanationDoc {
    nodes: Vec<String>,
    edges: Vec<EdgeDoc>,
    ranking: Vec<RankEntry>,
    path: PathDoc,
    metadata: ExplanationMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    viz_threshold: Option<f64>,
}

impl ExplanationGraph {
    /// Pretty JSON with keys in a fixed order; edges are unfiltered.
    pub fn to_json(&self) -> String {
        self.to_json_with_threshold(None)
    }

    /// As [`ExplanationGraph::to_json`], recording a display threshold.
    pub fn to_json_with_threshold(&self, viz_threshold: Option<f64>) -> String {
        let names = self.network.node_names();
        let doc = ExplanationDoc {
            nodes: names.to_vec(),
            edges: edge_list(&self.network, 0.0)
                .into_iter()
                .map(|e| EdgeDoc {
                    i: e.i,
                    j: e.j,
                    w: e.weight,
                })
                .collect(),
            ranking: self.ranking.entries.clone(),
            path: PathDoc {
                nodes: self.path.nodes.iter().map(|&n| names[n].clone()).collect(),
                weights: self.path.weights.clone(),
                stop_reason: self.path.stop_reason,
            },
            metadata: self.metadata.clone(),
            viz_threshold,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }

    /// Parses [`ExplanationGraph::to_json`] output and re-validates that the
    /// stored ranking and path follow from the stored network.
    pub fn from_json(text: &str) -> Result<Self, ExplanationError> {
        let doc: ExplanationDoc =
            serde_json::from_str(text).map_err(|e| ExplanationError::Malformed(e.to_string()))?;
        let q = doc.nodes.len();
        if q == 0 {
            return Err(ExplanationError::Malformed("no nodes".into()));
        }
        let mut w = DMatrix::zeros(q, q);
        for e in &doc.edges {
            if e.i >= q || e.j >= q || e.i == e.j {
                return Err(ExplanationError::Malformed(format!("bad edge ({}, {})", e.i, e.j)));
            }
            let (a, b) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            w[(a, b)] = e.w;
        }
        let network = PartialCorrelationNetwork::from_weights(doc.nodes.clone(), w)?;
        let index_of = |name: &str| {
            doc.nodes
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ExplanationError::Malformed(format!("unknown node '{name}'")))
        };
        let mut ranking = FeatureRanking::default();
        for mut entry in doc.ranking {
            entry.index = index_of(&entry.feature)?;
            ranking.entries.push(entry);
        }
        let path = InfluencePath {
            nodes: doc
                .path
                .nodes
                .iter()
                .map(|n| index_of(n))
                .collect::<Result<_, _>>()?,
            weights: doc.path.weights,
            stop_reason: doc.path.stop_reason,
        };
        build_explanation(network, ranking, path, doc.metadata)
    }
}
