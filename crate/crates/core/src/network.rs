//! Partial-correlation network derived from a precision matrix.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("precision diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("{names} node names for a {dim}x{dim} matrix")]
    NameMismatch { names: usize, dim: usize },
}

/// Symmetric weight matrix `W_ij = -K_ij / sqrt(K_ii K_jj)` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelationNetwork {
    node_names: Vec<String>,
    weights: DMatrix<f64>,
}

impl PartialCorrelationNetwork {
    /// Builds a network from an explicit weight matrix. The matrix is
    /// symmetrized from its upper triangle, the diagonal zeroed and entries
    /// clamped to [-1, 1].
    pub fn from_weights(node_names: Vec<String>, mut weights: DMatrix<f64>) -> Result<Self, NetworkError> {
        let q = weights.nrows();
        if node_names.len() != q || weights.ncols() != q {
            return Err(NetworkError::NameMismatch {
                names: node_names.len(),
                dim: q,
            });
        }
        for a in 0..q {
            weights[(a, a)] = 0.0;
            for b in a + 1..q {
                let v = weights[(a, b)].clamp(-1.0, 1.0);
                weights[(a, b)] = v;
                weights[(b, a)] = v;
            }
        }
        Ok(Self { node_names, weights })
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_nodes(&self) -> usize {
        self.node_names.len()
    }

    /// Index of the output node (always last).
    pub fn output_index(&self) -> usize {
        self.n_nodes() - 1
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[(a, b)]
    }

    /// Adjacency matrix as CSV: header row and column of node names, three decimals.
    pub fn adjacency_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.node_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (a, name) in self.node_names.iter().enumerate() {
            out.push_str(name);
            for b in 0..self.n_nodes() {
                let v = self.weights[(a, b)];
                // Avoid printing "-0.000".
                let v = if v.abs() < 0.0005 { 0.0 } else { v };
                out.push_str(&format!(",{v:.3}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn partial_correlations(
    k: &DMatrix<f64>,
    node_names: Vec<String>,
) -> Result<PartialCorrelationNetwork, NetworkError> {
    let q = k.nrows();
    if node_names.len() != q || k.ncols() != q {
        return Err(NetworkError::NameMismatch {
            names: node_names.len(),
            dim: q,
        });
    }
    for a in 0..q {
        let v = k[(a, a)];
        if !(v > 0.0) {
            return Err(NetworkError::NonPositiveDiagonal { index: a, value: v });
        }
    }
    let w = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            return 0.0;
        }
        // Read the upper triangle only so that W is exactly symmetric.
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let kij = k[(lo, hi)];
        if kij == 0.0 {
            0.0
        } else {
            -kij / (k[(lo, lo)] * k[(hi, hi)]).sqrt()
        }
    });
    PartialCorrelationNetwork::from_weights(node_names, w)
}

/// An undirected weighted edge `(i, j)` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Nonzero edges with `|w| >= min_abs_weight`, strongest first; ties by `(i, j)`.
pub fn edge_list(net: &PartialCorrelationNetwork, min_abs_weight: f64) -> Vec<Edge> {
    let q = net.n_nodes();
    let mut edges = Vec::new();
    for i in 0..q {
        for j in i + 1..q {
            let w = net.weight(i, j);
            if w != 0.0 && w.abs() >= min_abs_weight {
                edges.push(Edge { i, j, weight: w });
            }
        }
    }
    edges.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
    edges
}
