//! Graph data model: sparse adjacency, labeled graphs, synthetic graphs,
//! splits and label statistics.

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Compressed sparse row matrix of `f64`.
///
/// Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are an error.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(validation(format!(
                    "entry ({r},{c}) outside {rows}x{cols} matrix"
                )));
            }
            if last == Some((r, c)) {
                return Err(validation(format!("duplicate entry ({r},{c})")));
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Iterates all stored `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, &triplets).expect("transpose of a valid matrix")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// `self · dense`.
    pub fn matmul_dense(&self, dense: &Array2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(validation(format!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.cols];
        for (new, &old) in keep.iter().enumerate() {
            position[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for (c, v) in self.row(old_r) {
                if position[c] != usize::MAX {
                    triplets.push((new_r, position[c], v));
                }
            }
        }
        Self::from_triplets(keep.len(), keep.len(), &triplets).expect("submatrix of a valid matrix")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" => Ok(SplitRole::Val),
            "test" => Ok(SplitRole::Test),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

/// Sorted node ids carrying one split role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    pub role: SplitRole,
    pub indices: Vec<usize>,
}

/// Original graph `(A, X, Y)` with its train/val/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    adjacency: CsrMatrix,
    features: Array2<f64>,
    labels: Array2<f64>,
    split: Vec<SplitRole>,
}

impl LabeledGraph {
    /// Builds and validates a graph from an undirected edge list.
    ///
    /// Each edge is given once (either orientation) and stored in both
    /// directions. Zero-weight edges are dropped.
    pub fn new(
        edges: &[(usize, usize, f64)],
        features: Array2<f64>,
        labels: Array2<f64>,
        split: Vec<SplitRole>,
    ) -> Result<Self> {
        let n = features.nrows();
        let adjacency = symmetric_from_edges(n, edges)?;
        let graph = Self { adjacency, features, labels, split };
        graph.validate_shapes()?;
        if !graph.labels.iter().any(|&v| v == 1.0) {
            return Err(validation("no class has a positive node"));
        }
        if !graph.split.contains(&SplitRole::Train) {
            return Err(validation("train split is empty"));
        }
        Ok(graph)
    }

    fn validate_shapes(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.nrows() != n {
            return Err(validation(format!(
                "features have {n} rows but labels have {}",
                self.labels.nrows()
            )));
        }
        if self.split.len() != n {
            return Err(validation(format!(
                "{n} nodes but {} split tags",
                self.split.len()
            )));
        }
        if self.adjacency.rows() != n || self.adjacency.cols() != n {
            return Err(validation("adjacency size does not match node count"));
        }
        check_binary(&self.labels)?;
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(validation("non-finite feature value"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.labels.ncols()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn split(&self) -> &[SplitRole] {
        &self.split
    }

    pub fn split_mask(&self, role: SplitRole) -> SplitMask {
        let indices = self
            .split
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == role)
            .map(|(i, _)| i)
            .collect();
        SplitMask { role, indices }
    }

    /// Undirected edges with `src < dst`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency.triplets().filter(|&(r, c, _)| r < c).collect()
    }

    /// Neighbour ids of `node` (excluding itself).
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(node).map(|(c, _)| c)
    }
}

pub(crate) fn check_binary(labels: &Array2<f64>) -> Result<()> {
    if let Some(((r, c), v)) = labels.indexed_iter().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(validation(format!("label ({r},{c}) = {v} is not binary")));
    }
    Ok(())
}

fn symmetric_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<CsrMatrix> {
    let mut seen = HashSet::new();
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for &(a, b, w) in edges {
        if a >= n || b >= n {
            return Err(validation(format!("edge ({a},{b}) references a node outside 0..{n}")));
        }
        if a == b {
            return Err(validation(format!("self-loop on node {a}")));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(validation(format!("edge ({a},{b}) has invalid weight {w}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(validation(format!("duplicate edge ({a},{b})")));
        }
        if w == 0.0 {
            continue;
        }
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Whether the synthetic graph carries a learned adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureMode {
    Learned,
    Graphless,
}

/// Condensed graph `(A', X', Y')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGraph {
    features: Array2<f64>,
    labels: Array2<f64>,
    adjacency: Option<Array2<f64>>,
}

impl SyntheticGraph {
    /// Validates the synthetic-graph invariants: at least one node, binary
    /// labels, and (when present) a symmetric adjacency in `[0,1]` with unit
    /// diagonal.
    pub fn new(features: Array2<f64>, labels: Array2<f64>, adjacency: Option<Array2<f64>>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(validation("synthetic graph needs at least one node"));
        }
        if labels.nrows() != n {
            return Err(validation("synthetic labels and features disagree on N'"));
        }
        check_binary(&labels)?;
        if let Some(a) = &adjacency {
            if a.dim() != (n, n) {
                return Err(validation(format!("synthetic adjacency is {:?}, expected {n}x{n}", a.dim())));
            }
            for i in 0..n {
                if a[[i, i]] != 1.0 {
                    return Err(validation(format!("synthetic adjacency diagonal ({i},{i}) is not 1")));
                }
                for j in 0..n {
                    let v = a[[i, j]];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(validation(format!("synthetic adjacency ({i},{j}) = {v} outside [0,1]")));
                    }
                    if v != a[[j, i]] {
                        return Err(validation(format!("synthetic adjacency asymmetric at ({i},{j})")));
                    }
                }
            }
        }
        Ok(Self { features, labels, adjacency })
    }

    pub fn n_prime(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn adjacency(&self) -> Option<&Array2<f64>> {
        self.adjacency.as_ref()
    }

    pub fn structure_mode(&self) -> StructureMode {
        if self.adjacency.is_some() {
            StructureMode::Learned
        } else {
            StructureMode::Graphless
        }
    }
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` with unit self-loops.
pub fn normalize_adjacency(graph: &LabeledGraph) -> CsrMatrix {
    normalize_with_self_loops(graph.adjacency())
}

pub(crate) fn normalize_with_self_loops(adjacency: &CsrMatrix) -> CsrMatrix {
    let n = adjacency.rows();
    let mut triplets: Vec<(usize, usize, f64)> = adjacency.triplets().filter(|&(r, c, _)| r != c).collect();
    triplets.extend((0..n).map(|i| (i, i, 1.0 + adjacency.get(i, i))));
    let with_loops = CsrMatrix::from_triplets(n, n, &triplets).expect("valid adjacency");
    let degree = with_loops.degrees();
    let scaled: Vec<_> = with_loops
        .triplets()
        .map(|(r, c, v)| (r, c, v / (degree[r] * degree[c]).sqrt()))
        .collect();
    CsrMatrix::from_triplets(n, n, &scaled).expect("valid adjacency")
}

/// Per-class positive fraction `p_k = (1/N) Σ_i Y_{i,k}`.
pub fn label_distribution(labels: &Array2<f64>) -> Array1<f64> {
    let n = labels.nrows();
    if n == 0 {
        return Array1::zeros(labels.ncols());
    }
    labels.sum_axis(Axis(0)) / n as f64
}

/// Node sets per class; a node joins every class whose label bit is set.
pub fn class_node_sets(labels: &Array2<f64>) -> Vec<Vec<usize>> {
    (0..labels.ncols())
        .map(|k| {
            labels
                .column(k)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Subgraph induced by `indices`, relabeled in the given order.
pub fn induced_subgraph(graph: &LabeledGraph, indices: &[usize]) -> Result<LabeledGraph> {
    let n = graph.n();
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(validation(format!("node {i} outside 0..{n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(validation(format!("duplicate node {i}")));
        }
    }
    let adjacency = graph.adjacency.submatrix(indices);
    let features = graph.features.select(Axis(0), indices);
    let labels = graph.labels.select(Axis(0), indices);
    let split = indices.iter().map(|&i| graph.split[i]).collect();
    Ok(LabeledGraph { adjacency, features, labels, split })
}
