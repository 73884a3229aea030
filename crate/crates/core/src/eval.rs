//! Train-on-synthetic, test-on-original evaluation, F1 metrics and label
//! statistics.

use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{validation, Result};
use crate::graph::{check_binary, label_distribution, normalize_adjacency, LabeledGraph, SplitRole, SyntheticGraph};
use crate::losses::LossSpec;
use crate::models::{gnn_forward_var, normalize_dense, Architecture, GnnParams, PropVar, Propagation};

/// `1` where `z > 0`; a row with no positive logit gets its argmax set.
pub fn predict_labels(logits: &Array2<f64>) -> Array2<f64> {
    let mut pred = threshold_labels(logits);
    for (mut row, z) in pred.rows_mut().into_iter().zip(logits.rows()) {
        if row.sum() == 0.0 && !z.is_empty() {
            let mut best = 0;
            for (k, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = k;
                }
            }
            row[best] = 1.0;
        }
    }
    pred
}

/// `1` where `z > 0`, with no forced positive.
pub fn threshold_labels(logits: &Array2<f64>) -> Array2<f64> {
    logits.mapv(|z| (z > 0.0) as u8 as f64)
}

fn check_pair(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(validation(format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    check_binary(pred)?;
    check_binary(truth)
}

/// `(TP, FP, FN)` of one column, or pooled over all when `class` is `None`.
fn confusion(pred: &Array2<f64>, truth: &Array2<f64>, class: Option<usize>) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for ((_, k), (&p, &t)) in pred.indexed_iter().zip(truth.iter()).map(|((idx, p), t)| (idx, (p, t))) {
        if class.is_some_and(|c| c != k) {
            continue;
        }
        match (p == 1.0, t == 1.0) {
            (true, true) => counts.0 += 1,
            (true, false) => counts.1 += 1,
            (false, true) => counts.2 += 1,
            (false, false) => {}
        }
    }
    counts
}

/// `2PR/(P+R)`; `1` when there is nothing to predict and nothing predicted.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Pooled F1 over every (node, class) entry. Two all-zero matrices score 1.
pub fn f1_micro(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    check_pair(pred, truth)?;
    let (tp, fp, fn_) = confusion(pred, truth, None);
    Ok(f1_from_counts(tp, fp, fn_))
}

/// F1 of each class; a class absent from both matrices scores 1.
pub fn per_class_f1(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    Ok((0..pred.ncols())
        .map(|k| {
            let (tp, fp, fn_) = confusion(pred, truth, Some(k));
            f1_from_counts(tp, fp, fn_)
        })
        .collect())
}

/// Unweighted mean of [`per_class_f1`].
pub fn f1_macro(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    let scores = per_class_f1(pred, truth)?;
    if scores.is_empty() {
        return Err(validation("macro F1 needs at least one class"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Row-normalized co-occurrence `P(i,j) = M(i,j)/N_i` and `L_o = Diag(P) − P`.
pub fn label_correlation(labels: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    check_binary(labels)?;
    let m = labels.t().dot(labels);
    let k = m.nrows();
    let p = Array2::from_shape_fn((k, k), |(i, j)| if m[[i, i]] > 0.0 { m[[i, j]] / m[[i, i]] } else { 0.0 });
    let lo = Array2::from_diag(&p.diag()) - &p;
    Ok((p, lo))
}

/// Per-class positive fractions of each label matrix, side by side.
pub fn class_distribution_report(original: &Array2<f64>, synthetic: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if original.ncols() != synthetic.ncols() {
        return Err(validation(format!("{} vs {} classes", original.ncols(), synthetic.ncols())));
    }
    Ok((label_distribution(original).to_vec(), label_distribution(synthetic).to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub architecture: Architecture,
    pub loss: LossSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    /// Worker threads for independent seeds.
    pub jobs: usize,
    /// Give rows with no positive logit their argmax class.
    pub force_positive: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Gcn2 { hidden: 64 },
            loss: LossSpec::default(),
            epochs: 200,
            learning_rate: 1e-2,
            seeds: (0..5).collect(),
            jobs: 1,
            force_positive: true,
        }
    }
}

/// What the evaluation model is trained on.
#[derive(Debug, Clone, Copy)]
pub enum TrainingData<'a> {
    Synthetic(&'a SyntheticGraph),
    /// The original graph's training split.
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainedOn {
    Synthetic,
    Whole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_class_f1: Vec<f64>,
    /// Epoch whose weights were tested (1-based).
    pub selected_epoch: usize,
}

/// Test-split metrics averaged over seeds plus label statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_class_f1: Vec<f64>,
    pub trained_on: TrainedOn,
    pub seeds_used: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub label_correlation_original: Vec<Vec<f64>>,
    pub label_correlation_synthetic: Option<Vec<Vec<f64>>>,
    pub class_dist_original: Vec<f64>,
    pub class_dist_synthetic: Option<Vec<f64>>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Adam with the usual `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
struct Adam {
    rate: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    fn new(rate: f64, params: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self { rate, step: 0, m: zeros.clone(), v: zeros }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            m.zip_mut_with(g, |m, &g| *m = B1 * *m + (1.0 - B1) * g);
            v.zip_mut_with(g, |v, &g| *v = B2 * *v + (1.0 - B2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= self.rate * (m / c1) / ((v / c2).sqrt() + 1e-8);
            });
        }
    }
}

/// Fixed inputs shared by every seed.
struct Prepared {
    train_prop: TrainProp,
    train_x: Array2<f64>,
    train_y: Array2<f64>,
    /// Rows of the training graph that carry the loss.
    train_rows: Option<Vec<usize>>,
}

enum TrainProp {
    Identity,
    Dense(Array2<f64>),
    Original,
}

fn train_one(
    original: &LabeledGraph,
    normalized: &crate::graph::CsrMatrix,
    prepared: &Prepared,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<SeedResult> {
    let (d, k) = (original.d(), original.k());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = GnnParams::init(cfg.architecture, d, k, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, &params.weights);
    let val = original.split_mask(SplitRole::Val).indices;
    let test = original.split_mask(SplitRole::Test).indices;
    let full = Propagation::Sparse(normalized);
    let score = |p: &GnnParams, rows: &[usize]| -> Result<(Array2<f64>, Array2<f64>)> {
        let logits = p.forward(&full, original.features())?.select(Axis(0), rows);
        let pred = if cfg.force_positive { predict_labels(&logits) } else { threshold_labels(&logits) };
        Ok((pred, original.labels().select(Axis(0), rows)))
    };

    let mut best: Option<(f64, usize, GnnParams)> = None;
    for epoch in 1..=cfg.epochs {
        let tape = Tape::new();
        let weights: Vec<Var<'_>> = params.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let prop = match &prepared.train_prop {
            TrainProp::Identity => PropVar::Identity,
            TrainProp::Dense(a) => PropVar::Dense(tape.constant(a.clone())),
            TrainProp::Original => PropVar::Sparse(Rc::new(normalized.clone())),
        };
        let mut logits = gnn_forward_var(cfg.architecture, &weights, &prop, tape.constant(prepared.train_x.clone()))?;
        if let Some(rows) = &prepared.train_rows {
            logits = logits.gather_rows(&Rc::new(rows.clone()))?;
        }
        let loss = cfg.loss.apply(logits, &prepared.train_y)?;
        if !loss.item().is_finite() {
            return Err(crate::Error::Divergence(format!("evaluation loss {} at epoch {epoch}", loss.item())));
        }
        let grads: Vec<Array2<f64>> =
            tape.grad(loss, &weights)?.iter().map(|g| g.value().as_ref().clone()).collect();
        adam.update(&mut params.weights, &grads);

        if !val.is_empty() {
            let (pred, truth) = score(&params, &val)?;
            let f1 = f1_micro(&pred, &truth)?;
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, params.clone()));
            }
        }
    }
    let (selected_epoch, chosen) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => (cfg.epochs, params),
    };
    let (pred, truth) = score(&chosen, &test)?;
    Ok(SeedResult {
        seed,
        f1_micro: f1_micro(&pred, &truth)?,
        f1_macro: f1_macro(&pred, &truth)?,
        per_class_f1: per_class_f1(&pred, &truth)?,
        selected_epoch,
    })
}

/// Trains a fresh model per seed on `data`, selects by F1-micro on the
/// original validation split (last epoch when there is none), and reports
/// original test-split metrics averaged over seeds.
pub fn train_eval_pipeline(original: &LabeledGraph, data: TrainingData<'_>, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.seeds.is_empty() || cfg.epochs == 0 {
        return Err(validation("evaluation needs at least one seed and one epoch"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(validation("learning rate must be positive"));
    }
    if original.split_mask(SplitRole::Test).indices.is_empty() {
        return Err(validation("original graph has no test nodes"));
    }
    cfg.loss.validate(original.k())?;
    let prepared = match data {
        TrainingData::Synthetic(s) => {
            if s.features().ncols() != original.d() || s.labels().ncols() != original.k() {
                return Err(validation(format!(
                    "synthetic graph is {}-dimensional with {} classes; original is {}-dimensional with {}",
                    s.features().ncols(),
                    s.labels().ncols(),
                    original.d(),
                    original.k()
                )));
            }
            Prepared {
                train_prop: match s.adjacency() {
                    Some(a) => TrainProp::Dense(normalize_dense(a)?),
                    None => TrainProp::Identity,
                },
                train_x: s.features().clone(),
                train_y: s.labels().clone(),
                train_rows: None,
            }
        }
        TrainingData::Whole => {
            let train = original.split_mask(SplitRole::Train).indices;
            Prepared {
                train_prop: TrainProp::Original,
                train_x: original.features().clone(),
                train_y: original.labels().select(Axis(0), &train),
                train_rows: Some(train),
            }
        }
    };
    let normalized = normalize_adjacency(original);

    let jobs = cfg.jobs.clamp(1, cfg.seeds.len());
    let chunk = cfg.seeds.len().div_ceil(jobs);
    let results: Vec<Result<SeedResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .chunks(chunk)
            .map(|seeds| {
                let (prepared, normalized) = (&prepared, &normalized);
                scope.spawn(move || {
                    seeds.iter().map(|&s| train_one(original, normalized, prepared, cfg, s)).collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let per_seed = results.into_iter().collect::<Result<Vec<_>>>()?;

    let count = per_seed.len() as f64;
    let mut per_class = vec![0.0; original.k()];
    for r in &per_seed {
        for (acc, v) in per_class.iter_mut().zip(&r.per_class_f1) {
            *acc += v;
        }
    }
    per_class.iter_mut().for_each(|v| *v /= count);

    let (p_original, _) = label_correlation(original.labels())?;
    let (trained_on, corr_synthetic, dist_synthetic) = match data {
        TrainingData::Synthetic(s) => {
            let (p, _) = label_correlation(s.labels())?;
            (TrainedOn::Synthetic, Some(rows_of(&p)), Some(label_distribution(s.labels()).to_vec()))
        }
        TrainingData::Whole => (TrainedOn::Whole, None, None),
    };
    Ok(EvalReport {
        f1_micro: per_seed.iter().map(|r| r.f1_micro).sum::<f64>() / count,
        f1_macro: per_seed.iter().map(|r| r.f1_macro).sum::<f64>() / count,
        per_class_f1: per_class,
        trained_on,
        seeds_used: cfg.seeds.clone(),
        per_seed,
        label_correlation_original: rows_of(&p_original),
        label_correlation_synthetic: corr_synthetic,
        class_dist_original: label_distribution(original.labels()).to_vec(),
        class_dist_synthetic: dist_synthetic,
    })
}
