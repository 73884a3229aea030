//! Planted multi-label stochastic block model for desk-scale experiments.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::graph::{LabeledGraph, SplitRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub classes: usize,
    /// Probability of joining each secondary community.
    pub overlap: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl PlantedConfig {
    pub fn new(nodes: usize, classes: usize, overlap: f64, seed: u64) -> Self {
        PlantedConfig { nodes, classes, overlap, p_in: 0.2, p_out: 0.02, feature_dim: 16, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.nodes < self.classes {
            return Err(config(format!(
                "need nodes >= classes >= 2 (got {} nodes, {} classes)",
                self.nodes, self.classes
            )));
        }
        for (name, p) in [("overlap", self.overlap), ("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.feature_dim < self.classes {
            return Err(config("feature_dim must be at least the number of classes"));
        }
        Ok(())
    }
}

/// A planted graph together with each node's primary community.
#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub graph: LabeledGraph,
    pub blocks: Vec<usize>,
}

/// Nodes get a uniform primary community plus each other community with
/// probability `overlap`. Edges follow the primary communities; the first
/// `classes` feature dimensions are the label indicator plus unit noise and
/// the rest are pure noise. Split is 60/20/20 over a random permutation.
pub fn make_planted_dataset(cfg: &PlantedConfig) -> Result<PlantedDataset> {
    cfg.validate()?;
    let (n, k) = (cfg.nodes, cfg.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let blocks: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut labels = Array2::<f64>::zeros((n, k));
    for (i, &b) in blocks.iter().enumerate() {
        for c in 0..k {
            if c == b || rng.random::<f64>() < cfg.overlap {
                labels[[i, c]] = 1.0;
            }
        }
    }

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if blocks[i] == blocks[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }

    let mut features = Array2::<f64>::zeros((n, cfg.feature_dim));
    for ((i, j), x) in features.indexed_iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *x = if j < k { labels[[i, j]] + noise } else { noise };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let mut split = vec![SplitRole::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            SplitRole::Train
        } else if rank < n_train + n_val {
            SplitRole::Val
        } else {
            SplitRole::Test
        };
    }

    let graph = LabeledGraph::new(&edges, features, labels, split)?;
    Ok(PlantedDataset { graph, blocks })
}
