//! Multi-label objectives and class weighting.
//!
//! Every loss reduces by the mean over its entries. The tape variants
//! (`*_var`) are what the condensation drivers and evaluation training use;
//! the plain variants evaluate the same expressions on a throwaway tape.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{validation, Result};
use crate::graph::check_binary;

/// Probability clamp applied before logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    SoftMargin,
    Ce,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "softmargin" => Ok(LossKind::SoftMargin),
            "ce" => Ok(LossKind::Ce),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

/// Objective selection plus optional class weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Positive-class weights `ω`; only the BCE objective uses them.
    pub class_weights: Option<Vec<f64>>,
    /// Scale per-class matching terms by `α_c = N_c / N_max`.
    pub classwise: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { kind: LossKind::Bce, class_weights: None, classwise: false }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(w) = &self.class_weights {
            if w.len() != k {
                return Err(validation(format!("{} class weights for {k} classes", w.len())));
            }
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(validation("class weights must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Applies the configured objective to tape logits.
    pub fn apply<'t>(&self, logits: Var<'t>, labels: &Array2<f64>) -> Result<Var<'t>> {
        match self.kind {
            LossKind::Bce => bce_var(logits, labels, self.class_weights.as_deref()),
            LossKind::SoftMargin => softmargin_var(logits, labels),
            LossKind::Ce => cross_entropy_var(logits, &single_label_classes(labels)?),
        }
    }
}

fn check_pair(op: &str, logits: (usize, usize), labels: &Array2<f64>) -> Result<()> {
    if logits != labels.dim() {
        return Err(validation(format!("{op}: logits {logits:?} vs labels {:?}", labels.dim())));
    }
    check_binary(labels)
}

/// Class ids of a one-hot label matrix; multi-hot or empty rows are rejected.
pub fn single_label_classes(labels: &Array2<f64>) -> Result<Vec<usize>> {
    check_binary(labels)?;
    labels
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let positives: Vec<usize> =
                row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(k, _)| k).collect();
            match positives.as_slice() {
                [k] => Ok(*k),
                _ => Err(validation(format!(
                    "cross-entropy needs exactly one label per node; node {i} has {}",
                    positives.len()
                ))),
            }
        })
        .collect()
}

/// Weighted binary cross-entropy on sigmoid probabilities:
/// mean of `−[ω_k·y·log σ(z) + (1−y)·log(1−σ(z))]`.
pub fn bce_var<'t>(logits: Var<'t>, labels: &Array2<f64>, weights: Option<&[f64]>) -> Result<Var<'t>> {
    check_pair("bce", logits.shape(), labels)?;
    let tape = logits.tape();
    let k = labels.ncols();
    let omega = weights.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; k]);
    if omega.len() != k {
        return Err(validation(format!("{} class weights for {k} classes", omega.len())));
    }
    let omega = Array1::from(omega);
    let positive = tape.constant(labels * &omega.view().insert_axis(Axis(0)));
    let negative = tape.constant(labels.mapv(|y| 1.0 - y));
    let p = logits.sigmoid().clamp(PROB_EPS, 1.0 - PROB_EPS);
    let log_p = p.log()?;
    let log_q = p.affine(-1.0, 1.0).log()?;
    let per_entry = positive.mul(log_p)?.add(negative.mul(log_q)?)?;
    Ok(per_entry.mean().neg())
}

/// Soft-margin loss `log(1 + exp(−z·ỹ))` with targets remapped to `ỹ = 2y − 1`.
pub fn softmargin_var<'t>(logits: Var<'t>, labels: &Array2<f64>) -> Result<Var<'t>> {
    check_pair("softmargin", logits.shape(), labels)?;
    let signs = logits.tape().constant(labels.mapv(|y| 1.0 - 2.0 * y));
    Ok(logits.mul(signs)?.softplus().mean())
}

/// Mean `−log softmax(z)_{class}` over nodes.
pub fn cross_entropy_var<'t>(logits: Var<'t>, classes: &[usize]) -> Result<Var<'t>> {
    let (n, c) = logits.shape();
    if classes.len() != n {
        return Err(validation(format!("{} class ids for {n} rows", classes.len())));
    }
    let mut one_hot = Array2::zeros((n, c));
    for (i, &k) in classes.iter().enumerate() {
        if k >= c {
            return Err(validation(format!("class {k} out of range for {c} logits")));
        }
        one_hot[[i, k]] = 1.0;
    }
    let picked = logits.mul(logits.tape().constant(one_hot))?.sum_axis(1);
    Ok(logits.logsumexp_rows().sub(picked)?.mean())
}

fn evaluate(f: impl for<'t> FnOnce(Var<'t>) -> Result<Var<'t>>, logits: &Array2<f64>) -> Result<f64> {
    let tape = Tape::new();
    let z = tape.constant(logits.clone());
    Ok(f(z)?.item())
}

pub fn bce_loss(logits: &Array2<f64>, labels: &Array2<f64>, weights: Option<&[f64]>) -> Result<f64> {
    evaluate(|z| bce_var(z, labels, weights), logits)
}

pub fn softmargin_loss(logits: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    evaluate(|z| softmargin_var(z, labels), logits)
}

pub fn cross_entropy_loss(logits: &Array2<f64>, classes: &[usize]) -> Result<f64> {
    evaluate(|z| cross_entropy_var(z, classes), logits)
}

fn class_counts(labels: &Array2<f64>) -> Vec<f64> {
    labels.sum_axis(Axis(0)).to_vec()
}

/// `α_c = N_c / N_max`; all zeros when every class is empty.
pub fn classwise_coefficients(labels: &Array2<f64>) -> Vec<f64> {
    let counts = class_counts(labels);
    let max = counts.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c / max).collect()
}

/// `ω_k = negatives / max(positives, 1)`, clamped to `[0.1, 10]`.
pub fn positive_class_weights(labels: &Array2<f64>) -> Vec<f64> {
    let n = labels.nrows() as f64;
    class_counts(labels)
        .into_iter()
        .map(|pos| ((n - pos) / pos.max(1.0)).clamp(0.1, 10.0))
        .collect()
}
