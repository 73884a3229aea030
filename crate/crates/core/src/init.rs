//! Initial synthetic graphs: coreset selection (random, herding, k-center)
//! and label sampling from class frequencies.
//!
//! Coreset strategies select from the training nodes that carry at least
//! one label, so every synthetic label row is non-empty and no held-out
//! label leaks into the condensed graph.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::graph::{induced_subgraph, label_distribution, LabeledGraph, SplitRole, SyntheticGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Herding,
    KCenter,
    Probability,
}

impl std::str::FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(InitKind::Random),
            "herding" => Ok(InitKind::Herding),
            "kcenter" => Ok(InitKind::KCenter),
            "prob" | "probability" => Ok(InitKind::Probability),
            other => Err(format!("unknown initializer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitStrategy {
    pub kind: InitKind,
    /// Keep the induced subgraph of the selected nodes as `A'`.
    pub use_subgraph_structure: bool,
    pub seed: u64,
}

impl InitStrategy {
    pub fn validate(&self) -> Result<()> {
        if self.kind == InitKind::Probability && self.use_subgraph_structure {
            return Err(config("probability initialization has no subgraph to keep"));
        }
        Ok(())
    }
}

/// An initial synthetic graph and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub synthetic: SyntheticGraph,
    /// Original node behind each synthetic row (selected node, or the
    /// feature source for probability initialization).
    pub source_nodes: Vec<usize>,
    /// Covering radius, for k-center.
    pub radius: Option<f64>,
}

/// Training nodes with at least one positive label, ascending.
pub fn candidate_pool(graph: &LabeledGraph) -> Vec<usize> {
    graph
        .split_mask(SplitRole::Train)
        .indices
        .into_iter()
        .filter(|&i| graph.labels().row(i).iter().any(|&v| v == 1.0))
        .collect()
}

fn check_size(n_prime: usize, available: usize) -> Result<()> {
    if n_prime == 0 || n_prime > available {
        return Err(config(format!(
            "N' = {n_prime} must lie in 1..={available} (labeled training nodes)"
        )));
    }
    Ok(())
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy herding over the rows of `features`: each step adds the unused
/// row that brings the selected mean closest to the overall mean. Ties go
/// to the lowest row.
pub fn herding_select(features: &Array2<f64>, n_prime: usize) -> Vec<usize> {
    let n = features.nrows();
    let target = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(features.ncols()));
    let mut running = Array1::<f64>::zeros(features.ncols());
    let mut used = vec![false; n];
    let mut chosen = Vec::with_capacity(n_prime);
    for step in 0..n_prime.min(n) {
        let count = (step + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let candidate = (&running + &features.row(i)) / count;
            let dist = squared_distance(candidate.view(), target.view());
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, i));
            }
        }
        let (_, pick) = best.expect("unused rows remain");
        used[pick] = true;
        running += &features.row(pick);
        chosen.push(pick);
    }
    chosen
}

/// Farthest-first traversal starting from the row nearest the mean.
///
/// Returns the centers in selection order and the covering radius
/// `max_i min_j ‖x_i − x_{c_j}‖`.
pub fn kcenter_select(features: &Array2<f64>, n_prime: usize) -> (Vec<usize>, f64) {
    let n = features.nrows();
    if n == 0 || n_prime == 0 {
        return (Vec::new(), 0.0);
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let first = argmin((0..n).map(|i| squared_distance(features.row(i), mean.view())));
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(features.row(i), features.row(first))).collect();
    let mut selected = vec![false; n];
    selected[first] = true;
    let mut centers = vec![first];
    while centers.len() < n_prime.min(n) {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !selected[i]) {
            if best.is_none_or(|(b, _)| nearest[i] > b) {
                best = Some((nearest[i], i));
            }
        }
        let (_, pick) = best.expect("unselected rows remain");
        selected[pick] = true;
        centers.push(pick);
        for i in 0..n {
            nearest[i] = nearest[i].min(squared_distance(features.row(i), features.row(pick)));
        }
    }
    let radius = nearest.iter().copied().fold(0.0, f64::max).sqrt();
    (centers, radius)
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in values.enumerate() {
        if v < best.0 {
            best = (v, i);
        }
    }
    best.1
}

fn coreset(graph: &LabeledGraph, nodes: Vec<usize>, subgraph: bool, radius: Option<f64>) -> Result<Initialization> {
    let sub = induced_subgraph(graph, &nodes)?;
    let adjacency = subgraph.then(|| {
        let mut dense = sub.adjacency().to_dense();
        let max = dense.iter().copied().fold(0.0, f64::max);
        if max > 1.0 {
            dense /= max;
        }
        dense.diag_mut().fill(1.0);
        dense
    });
    let synthetic = SyntheticGraph::new(sub.features().clone(), sub.labels().clone(), adjacency)?;
    Ok(Initialization { synthetic, source_nodes: nodes, radius })
}

/// Uniform selection without replacement.
pub fn init_random(graph: &LabeledGraph, n_prime: usize, seed: u64, subgraph: bool) -> Result<Initialization> {
    let pool = candidate_pool(graph);
    check_size(n_prime, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = index::sample(&mut rng, pool.len(), n_prime).into_iter().map(|i| pool[i]).collect();
    coreset(graph, nodes, subgraph, None)
}

pub fn init_herding(graph: &LabeledGraph, n_prime: usize, subgraph: bool) -> Result<Initialization> {
    let pool = candidate_pool(graph);
    check_size(n_prime, pool.len())?;
    let features = graph.features().select(Axis(0), &pool);
    let nodes = herding_select(&features, n_prime).into_iter().map(|i| pool[i]).collect();
    coreset(graph, nodes, subgraph, None)
}

pub fn init_kcenter(graph: &LabeledGraph, n_prime: usize, subgraph: bool) -> Result<Initialization> {
    let pool = candidate_pool(graph);
    check_size(n_prime, pool.len())?;
    let features = graph.features().select(Axis(0), &pool);
    let (centers, radius) = kcenter_select(&features, n_prime);
    let nodes = centers.into_iter().map(|i| pool[i]).collect();
    coreset(graph, nodes, subgraph, Some(radius))
}

const RESAMPLE_LIMIT: usize = 100;

/// Draws one multi-hot row with bit `k` set with probability `p[k]`,
/// resampling empty rows and finally forcing the most frequent class.
pub fn sample_label_row(p: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    for _ in 0..=RESAMPLE_LIMIT {
        let row: Vec<f64> = p.iter().map(|&pk| (rng.random::<f64>() < pk) as u8 as f64).collect();
        if row.iter().any(|&v| v == 1.0) {
            return row;
        }
    }
    let mut row = vec![0.0; p.len()];
    row[argmin(p.iter().map(|&v| -v))] = 1.0;
    row
}

/// Cosine similarity with `0` for a zero vector.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Index of the row of `labels` most cosine-similar to `target`
/// (lowest index on ties).
pub fn best_label_match(labels: &Array2<f64>, target: ArrayView1<'_, f64>) -> usize {
    argmin(labels.rows().into_iter().map(|row| -cosine(row, target)))
}

/// Labels drawn from the training class frequencies; each synthetic node
/// copies the features of its best label match among training nodes.
pub fn init_probability(graph: &LabeledGraph, n_prime: usize, seed: u64) -> Result<Initialization> {
    if n_prime == 0 {
        return Err(config("N' must be at least 1"));
    }
    let train = graph.split_mask(SplitRole::Train).indices;
    let train_labels = graph.labels().select(Axis(0), &train);
    let p = label_distribution(&train_labels);
    if p.iter().all(|&v| v == 0.0) {
        return Err(config("every class frequency is zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = graph.k();
    let mut labels = Array2::zeros((n_prime, k));
    let mut features = Array2::zeros((n_prime, graph.d()));
    let mut sources = Vec::with_capacity(n_prime);
    for j in 0..n_prime {
        let row = Array1::from(sample_label_row(p.as_slice().expect("contiguous"), &mut rng));
        let source = train[best_label_match(&train_labels, row.view())];
        labels.row_mut(j).assign(&row);
        features.row_mut(j).assign(&graph.features().row(source));
        sources.push(source);
    }
    let synthetic = SyntheticGraph::new(features, labels, None)?;
    Ok(Initialization { synthetic, source_nodes: sources, radius: None })
}

pub fn initialize(graph: &LabeledGraph, n_prime: usize, strategy: &InitStrategy) -> Result<Initialization> {
    strategy.validate()?;
    let subgraph = strategy.use_subgraph_structure;
    match strategy.kind {
        InitKind::Random => init_random(graph, n_prime, strategy.seed, subgraph),
        InitKind::Herding => init_herding(graph, n_prime, subgraph),
        InitKind::KCenter => init_kcenter(graph, n_prime, subgraph),
        InitKind::Probability => init_probability(graph, n_prime, strategy.seed),
    }
}
