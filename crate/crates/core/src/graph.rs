//! Prior-knowledge graphs over training instances and their incidence operator.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Weighted undirected graph with canonical edges (`i < j`, no duplicates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl PriorGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of connected components (isolated nodes included).
    pub fn component_count(&self) -> usize {
        let mut ds = crate::tree::DisjointSet::new(self.n);
        for e in &self.edges {
            ds.union(e.i, e.j);
        }
        ds.component_count()
    }

    /// Weighted sum of edge-wise Euclidean norms of column differences.
    pub fn fusion_penalty(&self, theta: ArrayView2<'_, f64>) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let d: f64 = theta
                    .column(e.i)
                    .iter()
                    .zip(theta.column(e.j).iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                e.w * d.sqrt()
            })
            .sum()
    }
}

/// Chains instances in order of their black-box predictions: each pair of
/// neighbours in the ascending sort (ties by index) gets weight 1.
pub fn prediction_chain_graph(predictions: &[f64]) -> Result<PriorGraph> {
    let n = predictions.len();
    if n < 2 {
        return Err(MameError::invalid("prediction chain needs at least 2 instances"));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(MameError::invalid("non-finite prediction in chain construction"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]).then(a.cmp(&b)));
    let edges = order
        .windows(2)
        .map(|w| Edge {
            i: w[0].min(w[1]),
            j: w[0].max(w[1]),
            w: 1.0,
        })
        .collect();
    Ok(PriorGraph { n, edges })
}

/// Validates user-supplied edges and canonicalizes them to `i < j`.
pub fn side_info_graph(edges: &[(usize, usize, f64)], n: usize) -> Result<PriorGraph> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(edges.len());
    for (row, &(a, b, w)) in edges.iter().enumerate() {
        if a >= n || b >= n {
            return Err(MameError::invalid(format!("edge {row}: index out of range for n = {n}")));
        }
        if a == b {
            return Err(MameError::invalid(format!("edge {row}: self-loop on {a}")));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(MameError::invalid(format!("edge {row}: weight must be positive, got {w}")));
        }
        let (i, j) = (a.min(b), a.max(b));
        if !seen.insert((i, j)) {
            return Err(MameError::invalid(format!("edge {row}: duplicate pair ({i}, {j})")));
        }
        out.push(Edge { i, j, w });
    }
    let g = PriorGraph { n, edges: out };
    let parts = g.component_count();
    if parts > 1 {
        log::warn!("prior graph has {parts} connected components; the explanation tree will be a forest");
    }
    Ok(g)
}

/// Reads an `i,j,w` side-information CSV (header optional).
pub fn load_side_info(path: impl AsRef<Path>, n: usize) -> Result<PriorGraph> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| MameError::invalid(e.to_string()))?;
    let mut edges = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| MameError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
        if row == 0 && record.get(0).is_some_and(|c| c.parse::<usize>().is_err()) {
            continue;
        }
        let bad = |msg: &str| MameError::Parse {
            line,
            message: format!("side-info row {line}: {msg}"),
        };
        if record.len() != 3 {
            return Err(bad(&format!("expected 3 cells, found {}", record.len())));
        }
        let i = record[0].parse::<usize>().map_err(|_| bad("bad index i"))?;
        let j = record[1].parse::<usize>().map_err(|_| bad("bad index j"))?;
        let w = record[2].parse::<f64>().map_err(|_| bad("bad weight"))?;
        edges.push((i, j, w));
    }
    side_info_graph(&edges, n).map_err(|e| match e {
        MameError::InvalidInput(msg) => MameError::InvalidInput(format!("side-info: {msg}")),
        other => other,
    })
}

/// Signed incidence operator `D` (`n x |E|`): column `l` of `Theta D` is
/// `theta_i - theta_j` for edge `l = (i, j)`.
#[derive(Debug, Clone)]
pub struct Incidence {
    n: usize,
    edges: Vec<(usize, usize)>,
}

pub fn incidence(g: &PriorGraph) -> Result<Incidence> {
    if g.edges.is_empty() {
        return Err(MameError::invalid("prior graph has no edges; nothing would ever fuse"));
    }
    Ok(Incidence {
        n: g.n,
        edges: g.edges.iter().map(|e| (e.i, e.j)).collect(),
    })
}

impl Incidence {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn endpoints(&self, l: usize) -> (usize, usize) {
        self.edges[l]
    }

    pub fn dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.edges.len()));
        for (l, &(i, j)) in self.edges.iter().enumerate() {
            d[[i, l]] = 1.0;
            d[[j, l]] = -1.0;
        }
        d
    }

    /// `Theta D` for `Theta` of shape `q x n`.
    pub fn apply(&self, theta: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((theta.nrows(), self.edges.len()));
        for (l, &(i, j)) in self.edges.iter().enumerate() {
            let mut col = out.column_mut(l);
            col.assign(&theta.column(i));
            col -= &theta.column(j);
        }
        out
    }

    /// `M D^T` for `M` of shape `q x |E|`.
    pub fn apply_transpose(&self, m: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((m.nrows(), self.n));
        for (l, &(i, j)) in self.edges.iter().enumerate() {
            let col = m.column(l);
            out.column_mut(i).scaled_add(1.0, &col);
            out.column_mut(j).scaled_add(-1.0, &col);
        }
        out
    }
}
