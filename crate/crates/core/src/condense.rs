//! Condensation drivers: gradient matching (GCond), distribution matching
//! (GCDM) and structure broadcasting (SGDD), with their distances.
//!
//! All three share one alternating schedule. Inner step `t` of an outer
//! restart is a feature step when `t mod (τ₁+τ₂) < τ₁` and a structure step
//! otherwise; graphless runs only take feature steps. Every update is plain
//! gradient descent at the configured rate. Labels `Y'` stay frozen after
//! initialization.

use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sym_eigen, Tape, Var};
use crate::error::{config, validation, Error, Result};
use crate::graph::{
    class_node_sets, normalize_adjacency, CsrMatrix, LabeledGraph, SplitRole, StructureMode, SyntheticGraph,
};
use crate::init::{initialize, InitKind, InitStrategy};
use crate::losses::{classwise_coefficients, LossSpec};
use crate::models::{
    gnn_forward_var, infer_structure_var, normalize_dense, normalize_dense_var, sgdd_generate_var,
    threshold_adjacency, with_unit_diagonal_var, Architecture, GnnParams, PropVar, Propagation, SgddGenerator,
    StructureGenerator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gcond,
    Gcdm,
    Sgdd,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gcond" => Ok(Method::Gcond),
            "gcdm" => Ok(Method::Gcdm),
            "sgdd" => Ok(Method::Sgdd),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondenseConfig {
    pub method: Method,
    /// Condensation ratio; `N' = max(1, round(c_rate · n))`.
    pub c_rate: f64,
    pub outer_restarts: usize,
    pub inner_steps: usize,
    /// `τ₁`
    pub feature_steps: usize,
    /// `τ₂`
    pub structure_steps: usize,
    /// `τ_θ`
    pub model_steps: usize,
    /// `η₁`
    pub eta_features: f64,
    /// `η₂`
    pub eta_structure: f64,
    /// `η_θ`
    pub eta_model: f64,
    pub loss: LossSpec,
    pub init: InitStrategy,
    pub structure_mode: StructureMode,
    pub sgdd_alpha: f64,
    pub sgdd_beta: f64,
    pub delta: f64,
    pub seed: u64,
    /// Surrogate GNN whose gradients or embeddings are matched.
    pub surrogate: Architecture,
    pub generator_hidden: usize,
    /// Node cap for one original-graph class batch.
    pub batch_cap: usize,
    /// Largest original graph SGDD will eigendecompose densely.
    pub sgdd_max_nodes: usize,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            method: Method::Gcond,
            c_rate: 0.1,
            outer_restarts: 5,
            inner_steps: 50,
            feature_steps: 10,
            structure_steps: 5,
            model_steps: 3,
            eta_features: 1e-2,
            eta_structure: 1e-3,
            eta_model: 1e-2,
            loss: LossSpec::default(),
            init: InitStrategy { kind: InitKind::KCenter, use_subgraph_structure: false, seed: 0 },
            structure_mode: StructureMode::Learned,
            sgdd_alpha: 0.1,
            sgdd_beta: 0.01,
            delta: 0.5,
            seed: 0,
            surrogate: Architecture::Gcn2 { hidden: 16 },
            generator_hidden: 16,
            batch_cap: 256,
            sgdd_max_nodes: 20_000,
        }
    }
}

impl CondenseConfig {
    pub fn n_prime(&self, n: usize) -> usize {
        ((self.c_rate * n as f64).round() as usize).max(1)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.c_rate > 0.0 && self.c_rate <= 1.0) {
            return Err(config(format!("c-rate {} outside (0, 1]", self.c_rate)));
        }
        let graphless = self.structure_mode == StructureMode::Graphless;
        for (name, v) in [
            ("outer restarts", self.outer_restarts),
            ("inner steps", self.inner_steps),
            ("feature steps", self.feature_steps),
            ("model steps", self.model_steps),
            ("generator hidden size", self.generator_hidden),
            ("batch cap", self.batch_cap),
        ] {
            if v == 0 {
                return Err(config(format!("{name} must be at least 1")));
            }
        }
        if self.structure_steps == 0 && !graphless {
            return Err(config("structure steps may only be 0 in graphless mode"));
        }
        for (name, v) in [("eta1", self.eta_features), ("eta2", self.eta_structure), ("eta-theta", self.eta_model)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.sgdd_alpha), ("beta", self.sgdd_beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(config(format!("threshold {} outside [0, 1)", self.delta)));
        }
        if let Architecture::Gcn2 { hidden: 0 } = self.surrogate {
            return Err(config("surrogate hidden size must be at least 1"));
        }
        self.loss.validate(k)?;
        self.init.validate()
    }

    fn phase(&self, step: usize) -> Phase {
        if self.structure_mode == StructureMode::Graphless
            || step % (self.feature_steps + self.structure_steps) < self.feature_steps
        {
            Phase::Features
        } else {
            Phase::Structure
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Features,
    Structure,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Features => "features",
            Phase::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub step: usize,
    pub phase: Phase,
    /// Objective minimized at this step.
    pub loss: f64,
    /// Unweighted per-class matching terms (0 for skipped classes).
    pub class_losses: Vec<f64>,
}

/// One record per inner step of every outer restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchTrace {
    pub records: Vec<TraceRecord>,
    pub wall_seconds: f64,
}

/// Per-column `1 − cos` summed over all parameter matrices. Zero/zero
/// column pairs contribute 0 and zero/nonzero pairs contribute 1.
pub fn gradient_match_distance(synthetic: &[Array2<f64>], original: &[Array2<f64>]) -> Result<f64> {
    check_aligned(synthetic.iter().map(|g| g.dim()), original)?;
    let mut total = 0.0;
    for (gs, go) in synthetic.iter().zip(original) {
        for (cs, co) in gs.columns().into_iter().zip(go.columns()) {
            let (ss, so) = (cs.dot(&cs), co.dot(&co));
            total += match (ss == 0.0, so == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                // One square root keeps identical columns at exactly cos = 1.
                (false, false) => 1.0 - cs.dot(&co) / (ss * so).sqrt(),
            };
        }
    }
    Ok(total)
}

fn check_aligned(shapes: impl ExactSizeIterator<Item = (usize, usize)>, original: &[Array2<f64>]) -> Result<()> {
    if shapes.len() != original.len() {
        return Err(validation(format!("{} vs {} gradient matrices", shapes.len(), original.len())));
    }
    for (i, (s, o)) in shapes.zip(original).enumerate() {
        if s != o.dim() {
            return Err(validation(format!("gradient {i}: {s:?} vs {:?}", o.dim())));
        }
    }
    Ok(())
}

/// [`gradient_match_distance`] on the tape against a constant original side.
pub fn gradient_match_distance_var<'t>(synthetic: &[Var<'t>], original: &[Array2<f64>]) -> Result<Var<'t>> {
    check_aligned(synthetic.iter().map(|g| g.shape()), original)?;
    let tape = match synthetic.first() {
        Some(g) => g.tape(),
        None => return Err(validation("no gradients to match")),
    };
    let mut active = 0usize;
    let mut cos_total = tape.scalar(0.0);
    for (gs, go) in synthetic.iter().zip(original) {
        let gs_value = gs.value();
        let cols = go.ncols();
        let mut sq_o = Array2::zeros((1, cols));
        let mut both = Array2::zeros((1, cols));
        for c in 0..cols {
            let ss = gs_value.column(c).dot(&gs_value.column(c));
            let so = go.column(c).dot(&go.column(c));
            if ss != 0.0 || so != 0.0 {
                active += 1;
            }
            if ss != 0.0 && so != 0.0 {
                both[[0, c]] = 1.0;
            }
            sq_o[[0, c]] = so;
        }
        let dot = gs.mul(tape.constant(go.clone()))?.sum_axis(0);
        // Clamping only touches zero columns, which the mask drops.
        let norms = gs
            .mul(*gs)?
            .sum_axis(0)
            .mul(tape.constant(sq_o))?
            .clamp(f64::MIN_POSITIVE, f64::INFINITY)
            .pow(0.5)?;
        let cos = dot.div(norms)?.mul(tape.constant(both))?;
        cos_total = cos_total.add(cos.sum())?;
    }
    Ok(tape.scalar(active as f64).sub(cos_total)?)
}

/// Original-graph nodes used for one class's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBatch {
    pub class: usize,
    /// Closed neighborhood of the targets, ascending.
    pub nodes: Vec<usize>,
    /// Positions in `nodes` of the labeled training targets.
    pub targets: Vec<usize>,
}

/// Per class: training nodes carrying the label, added in shuffled order
/// together with their neighbors while the union stays within `cap`.
/// Empty classes yield `None`.
pub fn class_batches(graph: &LabeledGraph, cap: usize, rng: &mut ChaCha8Rng) -> Vec<Option<ClassBatch>> {
    let train = graph.split_mask(SplitRole::Train).indices;
    let train_labels = graph.labels().select(Axis(0), &train);
    class_node_sets(&train_labels)
        .into_iter()
        .enumerate()
        .map(|(class, members)| {
            let mut order: Vec<usize> = members.into_iter().map(|i| train[i]).collect();
            order.shuffle(rng);
            build_batch(graph, class, &order, cap)
        })
        .collect()
}

fn build_batch(graph: &LabeledGraph, class: usize, order: &[usize], cap: usize) -> Option<ClassBatch> {
    let mut in_batch = vec![false; graph.n()];
    let mut size = 0usize;
    let mut targets = Vec::new();
    for &t in order {
        let fresh: Vec<usize> =
            std::iter::once(t).chain(graph.neighbors(t)).filter(|&v| !in_batch[v]).collect();
        let admitted: &[usize] = if size + fresh.len() <= cap {
            &fresh
        } else if targets.is_empty() {
            // A lone hub larger than the cap keeps a truncated neighborhood.
            &fresh[..cap.min(fresh.len())]
        } else {
            continue;
        };
        for &v in admitted {
            in_batch[v] = true;
        }
        size += admitted.len();
        targets.push(t);
    }
    if targets.is_empty() {
        return None;
    }
    let nodes: Vec<usize> = (0..graph.n()).filter(|&v| in_batch[v]).collect();
    let targets = targets.iter().map(|t| nodes.binary_search(t).expect("target in batch")).collect();
    Some(ClassBatch { class, nodes, targets })
}

/// Surrogate gradients `∇_θ L` on an original class batch.
pub fn batch_gradient(
    graph: &LabeledGraph,
    normalized: &CsrMatrix,
    batch: &ClassBatch,
    theta: &GnnParams,
    loss: &LossSpec,
) -> Result<Vec<Array2<f64>>> {
    let tape = Tape::new();
    let prop = PropVar::Sparse(Rc::new(normalized.submatrix(&batch.nodes)));
    let weights: Vec<Var<'_>> = theta.weights.iter().map(|w| tape.leaf(w.clone())).collect();
    let x = tape.constant(graph.features().select(Axis(0), &batch.nodes));
    let logits = gnn_forward_var(theta.architecture, &weights, &prop, x)?;
    let targets = Rc::new(batch.targets.clone());
    let labels = graph.labels().select(Axis(0), &batch.targets.iter().map(|&p| batch.nodes[p]).collect::<Vec<_>>());
    let l = loss.apply(logits.gather_rows(&targets)?, &labels)?;
    Ok(tape.grad(l, &weights)?.iter().map(|g| g.value().as_ref().clone()).collect())
}

/// Learnable synthetic structure.
#[derive(Debug, Clone)]
enum Structure {
    Graphless,
    Pairwise(StructureGenerator),
    Coordinates { generator: SgddGenerator, z: Array2<f64> },
}

impl Structure {
    fn params(&self) -> Vec<Array2<f64>> {
        match self {
            Structure::Graphless => Vec::new(),
            Structure::Pairwise(g) => g.params(),
            Structure::Coordinates { generator, .. } => generator.params(),
        }
    }

    fn set_params(&mut self, params: Vec<Array2<f64>>) {
        match self {
            Structure::Graphless => {}
            Structure::Pairwise(g) => g.set_params(params),
            Structure::Coordinates { generator, .. } => generator.set_params(params),
        }
    }

    /// Soft adjacency before the unit diagonal is imposed.
    fn soft<'t>(&self, params: &[Var<'t>], x: Var<'t>, y: &Array2<f64>) -> Result<Option<Var<'t>>> {
        let tape = x.tape();
        Ok(match self {
            Structure::Graphless => None,
            Structure::Pairwise(_) => Some(infer_structure_var(params, x)?),
            Structure::Coordinates { z, .. } => {
                Some(sgdd_generate_var(params, tape.constant(z.clone()), x, tape.constant(y.clone()))?)
            }
        })
    }
}

fn propagation<'t>(soft: Option<Var<'t>>) -> Result<PropVar<'t>> {
    Ok(match soft {
        None => PropVar::Identity,
        Some(a) => PropVar::Dense(normalize_dense_var(with_unit_diagonal_var(a)?)?),
    })
}

/// Synthetic rows per class plus their label blocks.
struct SyntheticClasses {
    rows: Vec<Rc<Vec<usize>>>,
    labels: Vec<Array2<f64>>,
}

impl SyntheticClasses {
    fn new(y: &Array2<f64>) -> Self {
        let rows: Vec<Rc<Vec<usize>>> = class_node_sets(y).into_iter().map(Rc::new).collect();
        let labels = rows.iter().map(|r| y.select(Axis(0), r)).collect();
        Self { rows, labels }
    }
}

/// `Σ_c α_c · D(∇_θ L(S_c), ∇_θ L(G_c))`, with per-class terms.
#[allow(clippy::too_many_arguments)]
fn matching_objective<'t>(
    x: Var<'t>,
    prop: &PropVar<'t>,
    theta: &GnnParams,
    classes: &SyntheticClasses,
    originals: &[Option<Vec<Array2<f64>>>],
    alphas: &[f64],
    loss: &LossSpec,
) -> Result<(Var<'t>, Vec<f64>)> {
    let tape = x.tape();
    let weights: Vec<Var<'t>> = theta.weights.iter().map(|w| tape.leaf(w.clone())).collect();
    let logits = gnn_forward_var(theta.architecture, &weights, prop, x)?;
    let mut total = tape.scalar(0.0);
    let mut per_class = vec![0.0; alphas.len()];
    for c in 0..alphas.len() {
        let Some(original) = &originals[c] else { continue };
        if alphas[c] == 0.0 || classes.rows[c].is_empty() {
            continue;
        }
        let l = loss.apply(logits.gather_rows(&classes.rows[c])?, &classes.labels[c])?;
        let synthetic = tape.grad(l, &weights)?;
        let dist = gradient_match_distance_var(&synthetic, original)?;
        per_class[c] = dist.item();
        total = total.add(dist.scale(alphas[c]))?;
    }
    Ok((total, per_class))
}

/// Matching loss and its gradient with respect to `X'` for a fixed
/// surrogate and fixed class batches.
#[allow(clippy::too_many_arguments)]
pub fn gcond_matching_loss(
    graph: &LabeledGraph,
    batches: &[Option<ClassBatch>],
    synthetic_labels: &Array2<f64>,
    synthetic_features: &Array2<f64>,
    generator: Option<&StructureGenerator>,
    theta: &GnnParams,
    loss: &LossSpec,
    alphas: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let normalized = normalize_adjacency(graph);
    let originals = batches
        .iter()
        .map(|b| b.as_ref().map(|b| batch_gradient(graph, &normalized, b, theta, loss)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let tape = Tape::new();
    let x = tape.leaf(synthetic_features.clone());
    let soft = match generator {
        Some(g) => {
            let params: Vec<Var<'_>> = g.params().into_iter().map(|p| tape.constant(p)).collect();
            Some(infer_structure_var(&params, x)?)
        }
        None => None,
    };
    let prop = propagation(soft)?;
    let classes = SyntheticClasses::new(synthetic_labels);
    let (total, _) = matching_objective(x, &prop, theta, &classes, &originals, alphas, loss)?;
    let grad = tape.grad(total, &[x])?;
    Ok((total.item(), grad[0].value().as_ref().clone()))
}

const QUANTILES: usize = 32;

/// Interpolation weights mapping `n` ascending eigenvalues to quantiles at
/// `j/31`, `j = 0..32`.
fn quantile_weights(n: usize) -> Array2<f64> {
    let mut w = Array2::zeros((QUANTILES, n));
    for j in 0..QUANTILES {
        let pos = j as f64 / (QUANTILES - 1) as f64 * (n - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 1);
        let frac = pos - lo as f64;
        w[[j, lo]] += 1.0 - frac;
        if frac > 0.0 {
            w[[j, lo + 1]] += frac;
        }
    }
    w
}

/// Ascending normalized-Laplacian eigenvalues `eig(I − D^{-1/2} A D^{-1/2})`
/// on the tape; the diagonal of `a` is ignored and isolated nodes get
/// `L_ii = 0`.
fn laplacian_spectrum_var(a: Var<'_>) -> Result<Var<'_>> {
    let tape = a.tape();
    let n = a.shape().0;
    let off = a.mul(tape.constant(Array2::from_shape_fn((n, n), |(i, j)| (i != j) as u8 as f64)))?;
    let degree = off.sum_axis(1);
    let connected = Array2::from_diag(&degree.value().column(0).mapv(|d| (d > 0.0) as u8 as f64));
    let inv_sqrt = degree.clamp(f64::MIN_POSITIVE, f64::INFINITY).pow(-0.5)?;
    let normalized = off.mul(inv_sqrt.matmul(inv_sqrt.t())?)?;
    tape.constant(connected).sub(normalized)?.sym_eigvals()
}

fn check_symmetric(name: &str, a: &Array2<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(validation(format!("{name} adjacency is not square")));
    }
    if a.iter().zip(a.t().iter()).any(|(x, y)| x != y) {
        return Err(validation(format!("{name} adjacency is not symmetric")));
    }
    if a.iter().any(|&v| !(v >= 0.0)) {
        return Err(validation(format!("{name} adjacency has negative or NaN entries")));
    }
    Ok(())
}

/// Quantile vector of the normalized-Laplacian spectrum of `a`.
pub fn laplacian_quantiles(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_symmetric("graph", a)?;
    let tape = Tape::new();
    let eig = laplacian_spectrum_var(tape.constant(a.clone()))?;
    Ok(quantile_weights(a.nrows()).dot(eig.value().as_ref()))
}

fn led_var<'t>(synthetic: Var<'t>, original_quantiles: &Array2<f64>) -> Result<Var<'t>> {
    let tape = synthetic.tape();
    let q = tape.constant(quantile_weights(synthetic.shape().0)).matmul(laplacian_spectrum_var(synthetic)?)?;
    let diff = q.sub(tape.constant(original_quantiles.clone()))?;
    Ok(diff.mul(diff)?.mean())
}

/// Laplacian-energy-distribution distance: mean squared difference of the
/// two normalized-Laplacian spectra sampled at 32 evenly spaced quantiles.
/// Diagonals (self-loops) are ignored.
pub fn led_distance(original: &Array2<f64>, synthetic: &Array2<f64>) -> Result<f64> {
    check_symmetric("synthetic", synthetic)?;
    let q = laplacian_quantiles(original)?;
    let tape = Tape::new();
    Ok(led_var(tape.constant(synthetic.clone()), &q)?.item())
}

/// `α·LED(A, A') + β·‖A'‖_F` over the off-diagonal part of `A'`.
fn structure_regularizer<'t>(soft: Var<'t>, original_quantiles: &Array2<f64>, alpha: f64, beta: f64) -> Result<Var<'t>> {
    let tape = soft.tape();
    let n = soft.shape().0;
    let mut total = tape.scalar(0.0);
    if alpha > 0.0 {
        total = total.add(led_var(soft, original_quantiles)?.scale(alpha))?;
    }
    if beta > 0.0 {
        let off = soft.mul(tape.constant(Array2::from_shape_fn((n, n), |(i, j)| (i != j) as u8 as f64)))?;
        let frob = off.mul(off)?.sum().clamp(f64::MIN_POSITIVE, f64::INFINITY).pow(0.5)?;
        total = total.add(frob.scale(beta))?;
    }
    Ok(total)
}

fn ensure_finite(what: &str, outer: usize, step: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} became {value} at restart {outer}, step {step}")))
    }
}

fn descend(params: &mut Array2<f64>, grad: &Array2<f64>, rate: f64) {
    params.scaled_add(-rate, grad);
}

/// Shared run state: initial synthetic graph, structure model, RNG.
struct Run<'g> {
    graph: &'g LabeledGraph,
    cfg: &'g CondenseConfig,
    normalized: CsrMatrix,
    x: Array2<f64>,
    y: Array2<f64>,
    structure: Structure,
    rng: ChaCha8Rng,
    trace: Vec<TraceRecord>,
    started: Instant,
}

impl<'g> Run<'g> {
    fn new(graph: &'g LabeledGraph, cfg: &'g CondenseConfig, coordinates: bool) -> Result<Self> {
        cfg.validate(graph.k())?;
        let n_prime = cfg.n_prime(graph.n());
        let init = initialize(graph, n_prime, &cfg.init)?;
        let x = init.synthetic.features().clone();
        let y = init.synthetic.labels().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let structure = match (cfg.structure_mode, coordinates) {
            (StructureMode::Graphless, _) => Structure::Graphless,
            (StructureMode::Learned, false) => {
                Structure::Pairwise(StructureGenerator::init(graph.d(), cfg.generator_hidden, &mut rng))
            }
            (StructureMode::Learned, true) => {
                let generator = SgddGenerator::init(n_prime, graph.d(), graph.k(), cfg.generator_hidden, &mut rng);
                let z = Array2::from_shape_simple_fn((n_prime, n_prime), || StandardNormal.sample(&mut rng));
                Structure::Coordinates { generator, z }
            }
        };
        Ok(Self {
            graph,
            cfg,
            normalized: normalize_adjacency(graph),
            x,
            y,
            structure,
            rng,
            trace: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Leaves for whichever side the phase updates; the other is constant.
    fn leaves<'t>(&self, tape: &'t Tape, phase: Phase) -> (Var<'t>, Vec<Var<'t>>) {
        let learn_x = phase == Phase::Features;
        let x = if learn_x { tape.leaf(self.x.clone()) } else { tape.constant(self.x.clone()) };
        let params = self
            .structure
            .params()
            .into_iter()
            .map(|p| if learn_x { tape.constant(p) } else { tape.leaf(p) })
            .collect();
        (x, params)
    }

    fn apply_step<'t>(&mut self, tape: &'t Tape, objective: Var<'t>, x: Var<'t>, params: &[Var<'t>], phase: Phase) -> Result<()> {
        match phase {
            Phase::Features => {
                let g = tape.grad(objective, &[x])?;
                descend(&mut self.x, &g[0].value(), self.cfg.eta_features);
            }
            Phase::Structure => {
                let grads = tape.grad(objective, params)?;
                let mut updated = self.structure.params();
                for (p, g) in updated.iter_mut().zip(&grads) {
                    descend(p, &g.value(), self.cfg.eta_structure);
                }
                self.structure.set_params(updated);
            }
        }
        Ok(())
    }

    fn record(&mut self, outer: usize, step: usize, phase: Phase, loss: f64, class_losses: Vec<f64>) -> Result<()> {
        ensure_finite("matching loss", outer, step, loss)?;
        self.trace.push(TraceRecord { outer, step, phase, loss, class_losses });
        Ok(())
    }

    /// `τ_θ` descent steps of the surrogate on the current synthetic graph.
    fn train_surrogate(&self, theta: &mut GnnParams) -> Result<()> {
        for _ in 0..self.cfg.model_steps {
            let tape = Tape::new();
            let x = tape.constant(self.x.clone());
            let params: Vec<Var<'_>> = self.structure.params().into_iter().map(|p| tape.constant(p)).collect();
            let prop = propagation(self.structure.soft(&params, x, &self.y)?)?;
            let weights: Vec<Var<'_>> = theta.weights.iter().map(|w| tape.leaf(w.clone())).collect();
            let logits = gnn_forward_var(theta.architecture, &weights, &prop, x)?;
            let l = self.cfg.loss.apply(logits, &self.y)?;
            for (w, g) in theta.weights.iter_mut().zip(tape.grad(l, &weights)?) {
                descend(w, &g.value(), self.cfg.eta_model);
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<(SyntheticGraph, MatchTrace)> {
        let tape = Tape::new();
        let x = tape.constant(self.x.clone());
        let params: Vec<Var<'_>> = self.structure.params().into_iter().map(|p| tape.constant(p)).collect();
        let adjacency = match self.structure.soft(&params, x, &self.y)? {
            Some(soft) => Some(threshold_adjacency(&soft.value(), self.cfg.delta)?),
            None => None,
        };
        let synthetic = SyntheticGraph::new(self.x, self.y, adjacency)?;
        let trace = MatchTrace { records: self.trace, wall_seconds: self.started.elapsed().as_secs_f64() };
        Ok((synthetic, trace))
    }
}

/// Gradient matching with alternating feature/structure updates. With
/// `regularizer = Some((quantiles, α, β))` structure steps also minimize
/// the SGDD terms.
fn matching_loop(run: &mut Run<'_>, regularizer: Option<(&Array2<f64>, f64, f64)>) -> Result<()> {
    let cfg = run.cfg;
    let (d, k) = (run.graph.d(), run.graph.k());
    let alphas = if cfg.loss.classwise {
        let train = run.graph.split_mask(SplitRole::Train).indices;
        classwise_coefficients(&run.graph.labels().select(Axis(0), &train))
    } else {
        vec![1.0; k]
    };
    let classes = SyntheticClasses::new(&run.y);
    for outer in 0..cfg.outer_restarts {
        let mut theta = GnnParams::init(cfg.surrogate, d, k, &mut run.rng);
        for step in 0..cfg.inner_steps {
            let phase = cfg.phase(step);
            let batches = class_batches(run.graph, cfg.batch_cap, &mut run.rng);
            let originals = batches
                .iter()
                .map(|b| b.as_ref().map(|b| batch_gradient(run.graph, &run.normalized, b, &theta, &cfg.loss)).transpose())
                .collect::<Result<Vec<_>>>()?;

            let tape = Tape::new();
            let (x, params) = run.leaves(&tape, phase);
            let soft = run.structure.soft(&params, x, &run.y)?;
            let prop = propagation(soft)?;
            let (mut objective, per_class) =
                matching_objective(x, &prop, &theta, &classes, &originals, &alphas, &cfg.loss)?;
            if let (Phase::Structure, Some((quantiles, alpha, beta)), Some(soft)) = (phase, regularizer, soft) {
                objective = objective.add(structure_regularizer(soft, quantiles, alpha, beta)?)?;
            }
            run.record(outer, step, phase, objective.item(), per_class)?;
            run.apply_step(&tape, objective, x, &params, phase)?;
            ensure_finite("synthetic features", outer, step, run.x.sum())?;
            run.train_surrogate(&mut theta)?;
        }
    }
    Ok(())
}

/// Multi-label gradient matching with a pairwise structure generator.
pub fn gcond_condense(graph: &LabeledGraph, cfg: &CondenseConfig) -> Result<(SyntheticGraph, MatchTrace)> {
    let mut run = Run::new(graph, cfg, false)?;
    matching_loop(&mut run, None)?;
    run.finish()
}

/// Gradient matching with the coordinate-based generator `A' = GEN(Z ⊕ X' ⊕ Y')`
/// and no structure regularizer.
pub fn gcond_with_generator(graph: &LabeledGraph, cfg: &CondenseConfig) -> Result<(SyntheticGraph, MatchTrace)> {
    let mut run = Run::new(graph, cfg, true)?;
    matching_loop(&mut run, None)?;
    run.finish()
}

/// Structure broadcasting: gradient matching through the coordinate-based
/// generator, with structure steps also minimizing
/// `α·LED(A, A') + β·‖A'‖_F`.
pub fn sgdd_condense(graph: &LabeledGraph, cfg: &CondenseConfig) -> Result<(SyntheticGraph, MatchTrace)> {
    if graph.n() > cfg.sgdd_max_nodes {
        return Err(Error::ScaleUnsupported(format!(
            "sgdd needs a dense eigendecomposition of the original graph; {} nodes exceeds the {} node ceiling",
            graph.n(),
            cfg.sgdd_max_nodes
        )));
    }
    let mut run = Run::new(graph, cfg, true)?;
    let quantiles = if cfg.structure_mode == StructureMode::Learned && cfg.sgdd_alpha > 0.0 {
        laplacian_quantiles(&graph.adjacency().to_dense())?
    } else {
        Array2::zeros((QUANTILES, 1))
    };
    matching_loop(&mut run, Some((&quantiles, cfg.sgdd_alpha, cfg.sgdd_beta)))?;
    run.finish()
}

/// Per-class means of original training-node rows of `embeddings`.
fn original_class_means(graph: &LabeledGraph, embeddings: &Array2<f64>) -> Vec<Option<Array2<f64>>> {
    let train = graph.split_mask(SplitRole::Train).indices;
    let labels = graph.labels().select(Axis(0), &train);
    class_node_sets(&labels)
        .into_iter()
        .map(|members| {
            let rows: Vec<usize> = members.iter().map(|&i| train[i]).collect();
            embeddings.select(Axis(0), &rows).mean_axis(Axis(0)).map(|m| m.insert_axis(Axis(0)))
        })
        .collect()
}

/// `r_c = |V'_c| / Σ|V'_c|`.
fn class_ratios(y: &Array2<f64>) -> Result<Vec<f64>> {
    let counts = y.sum_axis(Axis(0));
    let total = counts.sum();
    if total == 0.0 {
        return Err(validation("every class is empty on the synthetic side"));
    }
    Ok(counts.iter().map(|&c| c / total).collect())
}

fn gcdm_objective<'t>(
    embeddings: Var<'t>,
    classes: &SyntheticClasses,
    means: &[Option<Array2<f64>>],
    ratios: &[f64],
) -> Result<(Var<'t>, Vec<f64>)> {
    let tape = embeddings.tape();
    let mut total = tape.scalar(0.0);
    let mut per_class = vec![0.0; ratios.len()];
    for c in 0..ratios.len() {
        let (Some(mean), rows) = (&means[c], &classes.rows[c]) else { continue };
        if rows.is_empty() {
            continue;
        }
        let synthetic_mean = embeddings.gather_rows(rows)?.sum_axis(0).scale(1.0 / rows.len() as f64);
        let diff = synthetic_mean.sub(tape.constant(mean.clone()))?;
        let term = diff.mul(diff)?.sum();
        per_class[c] = term.item();
        total = total.add(term.scale(ratios[c]))?;
    }
    Ok((total, per_class))
}

/// Class-ratio-weighted squared distance between original and synthetic
/// class-mean embeddings under one surrogate.
pub fn gcdm_distance(graph: &LabeledGraph, synthetic: &SyntheticGraph, theta: &GnnParams) -> Result<f64> {
    if graph.k() != synthetic.labels().ncols() || graph.d() != synthetic.features().ncols() {
        return Err(validation("original and synthetic graphs disagree on dimensions"));
    }
    let ratios = class_ratios(synthetic.labels())?;
    let normalized = normalize_adjacency(graph);
    let means = original_class_means(graph, &theta.forward(&Propagation::Sparse(&normalized), graph.features())?);
    let dense = synthetic.adjacency().map(normalize_dense).transpose()?;
    let prop = match &dense {
        Some(a) => Propagation::Dense(a),
        None => Propagation::Identity,
    };
    let embeddings = theta.forward(&prop, synthetic.features())?;
    let tape = Tape::new();
    let classes = SyntheticClasses::new(synthetic.labels());
    Ok(gcdm_objective(tape.constant(embeddings), &classes, &means, &ratios)?.0.item())
}

/// Distribution matching; each restart draws a fresh random surrogate.
pub fn gcdm_condense(graph: &LabeledGraph, cfg: &CondenseConfig) -> Result<(SyntheticGraph, MatchTrace)> {
    let mut run = Run::new(graph, cfg, false)?;
    let ratios = class_ratios(&run.y)?;
    let classes = SyntheticClasses::new(&run.y);
    for outer in 0..cfg.outer_restarts {
        let theta = GnnParams::init(cfg.surrogate, graph.d(), graph.k(), &mut run.rng);
        let original = theta.forward(&Propagation::Sparse(&run.normalized), graph.features())?;
        let means = original_class_means(graph, &original);
        let weights: Vec<Array2<f64>> = theta.weights.clone();
        for step in 0..cfg.inner_steps {
            let phase = cfg.phase(step);
            let tape = Tape::new();
            let (x, params) = run.leaves(&tape, phase);
            let prop = propagation(run.structure.soft(&params, x, &run.y)?)?;
            let w: Vec<Var<'_>> = weights.iter().map(|w| tape.constant(w.clone())).collect();
            let embeddings = gnn_forward_var(theta.architecture, &w, &prop, x)?;
            let (objective, per_class) = gcdm_objective(embeddings, &classes, &means, &ratios)?;
            run.record(outer, step, phase, objective.item(), per_class)?;
            run.apply_step(&tape, objective, x, &params, phase)?;
            ensure_finite("synthetic features", outer, step, run.x.sum())?;
        }
    }
    run.finish()
}

/// Dispatches on `cfg.method`.
pub fn condense(graph: &LabeledGraph, cfg: &CondenseConfig) -> Result<(SyntheticGraph, MatchTrace)> {
    match cfg.method {
        Method::Gcond => gcond_condense(graph, cfg),
        Method::Gcdm => gcdm_condense(graph, cfg),
        Method::Sgdd => sgdd_condense(graph, cfg),
    }
}

/// Ascending normalized-Laplacian eigenvalues of a dense adjacency
/// (diagonal ignored).
pub fn laplacian_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    check_symmetric("graph", a)?;
    let n = a.nrows();
    let mut off = a.clone();
    off.diag_mut().fill(0.0);
    let degree = off.sum_axis(Axis(1));
    let lap = Array2::from_shape_fn((n, n), |(i, j)| {
        let scale = degree[i] * degree[j];
        let norm = if scale > 0.0 { off[[i, j]] / scale.sqrt() } else { 0.0 };
        let diag = if i == j && degree[i] > 0.0 { 1.0 } else { 0.0 };
        diag - norm
    });
    Ok(sym_eigen(&lap).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_oracle;
    use crate::planted::{make_planted_dataset, PlantedConfig};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_config(method: Method) -> CondenseConfig {
        CondenseConfig {
            method,
            outer_restarts: 2,
            inner_steps: 6,
            feature_steps: 2,
            structure_steps: 1,
            model_steps: 1,
            ..CondenseConfig::default()
        }
    }

    fn planted(n: usize) -> LabeledGraph {
        make_planted_dataset(&PlantedConfig::new(n, 3, 0.3, 0)).unwrap().graph
    }

    #[test]
    fn distance_examples() {
        let g = array![[1.0, 2.0], [3.0, -1.0]];
        assert_eq!(gradient_match_distance(&[g.clone()], &[g.clone()]).unwrap(), 0.0);
        assert_close!(gradient_match_distance(&[g.clone()], &[-&g]).unwrap(), 4.0, 1e-12);
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(gradient_match_distance(&[a], &[b]).unwrap(), 2.0);
        let zero = Array2::zeros((2, 2));
        assert_eq!(gradient_match_distance(&[zero.clone()], &[zero.clone()]).unwrap(), 0.0);
        assert_eq!(gradient_match_distance(&[zero], &[g.clone()]).unwrap(), 2.0);
        assert!(gradient_match_distance(&[g.clone()], &[Array2::zeros((3, 2))]).is_err());
        assert!(gradient_match_distance(&[g.clone()], &[]).is_err());
    }

    #[test]
    fn tape_distance_agrees_with_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        a.column_mut(1).fill(0.0);
        let tape = Tape::new();
        let v = gradient_match_distance_var(&[tape.leaf(a.clone())], &[b.clone()]).unwrap();
        assert_close!(v.item(), gradient_match_distance(&[a.clone()], &[b.clone()]).unwrap(), 1e-14);
        let g = tape.grad(v, &[]).unwrap();
        assert!(g.is_empty());
        let tape = Tape::new();
        let leaf = tape.leaf(a.clone());
        let v = gradient_match_distance_var(&[leaf], &[b.clone()]).unwrap();
        let g = tape.grad(v, &[leaf]).unwrap()[0].value().as_ref().clone();
        assert!(g.iter().all(|v| v.is_finite()));
        let fd = finite_difference_oracle(
            |p| {
                let mut p = p.clone();
                p.column_mut(1).fill(0.0);
                gradient_match_distance(&[p], &[b.clone()]).unwrap()
            },
            &a,
            1e-6,
        );
        for r in 0..4 {
            for c in [0, 2] {
                assert_close!(g[[r, c]], fd[[r, c]], 1e-7);
            }
        }
    }

    #[test]
    fn batches_hold_every_label_once() {
        let g = planted(60);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batches = class_batches(&g, 256, &mut rng);
        let mut seen = vec![0usize; g.n()];
        for b in batches.iter().flatten() {
            for &p in &b.targets {
                let node = b.nodes[p];
                assert_eq!(g.labels()[[node, b.class]], 1.0);
                assert_eq!(g.split()[node], SplitRole::Train);
                seen[node] += 1;
            }
            for &p in &b.targets {
                for v in g.neighbors(b.nodes[p]) {
                    assert!(b.nodes.binary_search(&v).is_ok());
                }
            }
        }
        for i in g.split_mask(SplitRole::Train).indices {
            assert_eq!(seen[i] as f64, g.labels().row(i).sum(), "node {i}");
        }
    }

    #[test]
    fn batch_cap_is_respected() {
        let g = planted(200);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for b in class_batches(&g, 20, &mut rng).into_iter().flatten() {
            assert!(b.nodes.len() <= 20);
            assert!(!b.targets.is_empty());
        }
    }

    fn five_node_instance(seed: u64) -> (LabeledGraph, Array2<f64>, Array2<f64>, StructureGenerator, GnnParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let labels = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (0, 4, 1.0)];
        let g = LabeledGraph::new(&edges, features, labels, vec![SplitRole::Train; 5]).unwrap();
        let xs = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let ys = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let generator = StructureGenerator::init(3, 4, &mut rng);
        let theta = GnnParams::init(Architecture::Gcn2 { hidden: 4 }, 3, 2, &mut rng);
        (g, xs, ys, generator, theta)
    }

    #[test]
    fn matching_loss_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (g, xs, ys, generator, theta) = five_node_instance(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = class_batches(&g, 256, &mut rng);
            let loss = LossSpec::default();
            let f = |x: &Array2<f64>| {
                gcond_matching_loss(&g, &batches, &ys, x, Some(&generator), &theta, &loss, &[1.0, 1.0]).unwrap()
            };
            let (_, grad) = f(&xs);
            let fd = finite_difference_oracle(|x| f(x).0, &xs, 1e-5);
            let err = (&grad - &fd).mapv(|v| v * v).sum().sqrt() / fd.mapv(|v| v * v).sum().sqrt().max(1e-8);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn equal_class_sizes_make_weights_exact() {
        let (g, xs, ys, generator, theta) = five_node_instance(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = class_batches(&g, 256, &mut rng);
        let labels = g.labels();
        let alphas = classwise_coefficients(labels);
        assert_eq!(alphas, vec![1.0, 1.0]);
        let loss = LossSpec::default();
        let weighted = gcond_matching_loss(&g, &batches, &ys, &xs, Some(&generator), &theta, &loss, &alphas).unwrap();
        let plain = gcond_matching_loss(&g, &batches, &ys, &xs, Some(&generator), &theta, &loss, &[1.0, 1.0]).unwrap();
        assert_eq!(weighted, plain);
    }

    #[test]
    fn led_examples() {
        let k3 = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let empty = Array2::<f64>::zeros((3, 3));
        assert_eq!(led_distance(&k3, &k3).unwrap(), 0.0);
        let eig = laplacian_eigenvalues(&k3).unwrap();
        assert_close!(eig[0], 0.0, 1e-12);
        assert_close!(eig[1], 1.5, 1e-12);
        assert_close!(eig[2], 1.5, 1e-12);
        assert_eq!(laplacian_eigenvalues(&empty).unwrap(), vec![0.0; 3]);
        // Quantile j/31 of [0, 1.5, 1.5] is 1.5·min(2j/31, 1).
        let expected = (0..32).map(|j| (1.5 * (2.0 * j as f64 / 31.0).min(1.0)).powi(2)).sum::<f64>() / 32.0;
        assert_close!(led_distance(&empty, &k3).unwrap(), expected, 1e-12);
        assert!(led_distance(&k3, &array![[0.0, 1.0], [0.5, 0.0]]).is_err());
    }

    #[test]
    fn led_ignores_node_order() {
        let g = planted(30);
        let a = g.adjacency().to_dense();
        let perm: Vec<usize> = (0..30).rev().collect();
        let p = a.select(Axis(0), &perm).select(Axis(1), &perm);
        assert!(led_distance(&a, &p).unwrap() < 1e-20);
    }

    #[test]
    fn gcdm_distance_examples() {
        let g = planted(40);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta = GnnParams::init(Architecture::Gcn2 { hidden: 8 }, g.d(), g.k(), &mut rng);
        let all_train =
            LabeledGraph::new(&g.edges(), g.features().clone(), g.labels().clone(), vec![SplitRole::Train; 40]).unwrap();
        let mut dense = g.adjacency().to_dense();
        dense.diag_mut().fill(1.0);
        let copy = SyntheticGraph::new(g.features().clone(), g.labels().clone(), Some(dense)).unwrap();
        assert!(gcdm_distance(&all_train, &copy, &theta).unwrap() < 1e-9);
        let zeros = GnnParams::zeros(Architecture::Gcn2 { hidden: 8 }, g.d(), g.k());
        assert_eq!(gcdm_distance(&g, &copy, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn gcdm_single_class_offset() {
        let g = LabeledGraph::new(&[], array![[1.0], [3.0]], array![[1.0], [1.0]], vec![SplitRole::Train; 2]).unwrap();
        let s = SyntheticGraph::new(array![[3.0]], array![[1.0]], None).unwrap();
        let theta = GnnParams { architecture: Architecture::Sgc { hops: 1 }, weights: vec![array![[1.0]]] };
        assert_close!(gcdm_distance(&g, &s, &theta).unwrap(), 1.0, 1e-12);
        let empty = SyntheticGraph::new(array![[3.0]], array![[1.0]], None).unwrap();
        let g2 = LabeledGraph::new(&[], array![[1.0]], array![[1.0]], vec![SplitRole::Train]).unwrap();
        assert!(gcdm_distance(&g2, &empty, &theta).is_ok());
    }

    fn check_contract(s: &SyntheticGraph, delta: f64) {
        let a = s.adjacency().expect("learned structure");
        for ((i, j), &v) in a.indexed_iter() {
            assert_eq!(v, a[[j, i]]);
            assert!((0.0..=1.0).contains(&v));
            if i == j {
                assert_eq!(v, 1.0);
            } else {
                assert!(v == 0.0 || v > delta);
            }
        }
    }

    #[test]
    fn drivers_are_deterministic_and_valid() {
        let g = planted(90);
        for method in [Method::Gcond, Method::Gcdm, Method::Sgdd] {
            let cfg = small_config(method);
            let (a, ta) = condense(&g, &cfg).unwrap();
            let (b, tb) = condense(&g, &cfg).unwrap();
            assert_eq!(a, b, "{method:?}");
            assert_eq!(ta.records, tb.records);
            assert_eq!(ta.records.len(), cfg.outer_restarts * cfg.inner_steps);
            assert_eq!(a.n_prime(), 9);
            check_contract(&a, cfg.delta);
        }
    }

    #[test]
    fn graphless_runs_have_no_structure() {
        let g = planted(60);
        let cfg = CondenseConfig {
            structure_mode: StructureMode::Graphless,
            structure_steps: 0,
            ..small_config(Method::Gcond)
        };
        let (s, trace) = gcond_condense(&g, &cfg).unwrap();
        assert!(s.adjacency().is_none());
        assert!(trace.records.iter().all(|r| r.phase == Phase::Features));
        let bad = CondenseConfig { structure_steps: 0, ..small_config(Method::Gcond) };
        assert!(matches!(gcond_condense(&g, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn sgdd_without_regularizer_is_gcond_with_generator() {
        let g = planted(60);
        let cfg = CondenseConfig { sgdd_alpha: 0.0, sgdd_beta: 0.0, ..small_config(Method::Sgdd) };
        let (a, ta) = sgdd_condense(&g, &cfg).unwrap();
        let (b, tb) = gcond_with_generator(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.records, tb.records);
    }

    #[test]
    fn sgdd_refuses_large_graphs() {
        let g = planted(60);
        let cfg = CondenseConfig { sgdd_max_nodes: 50, ..small_config(Method::Sgdd) };
        assert!(matches!(sgdd_condense(&g, &cfg), Err(Error::ScaleUnsupported(_))));
    }

    #[test]
    fn config_validation() {
        let g = planted(30);
        for cfg in [
            CondenseConfig { c_rate: 0.0, ..CondenseConfig::default() },
            CondenseConfig { c_rate: 1.5, ..CondenseConfig::default() },
            CondenseConfig { eta_features: 0.0, ..CondenseConfig::default() },
            CondenseConfig { sgdd_alpha: -1.0, ..CondenseConfig::default() },
            CondenseConfig { delta: 1.0, ..CondenseConfig::default() },
            CondenseConfig { inner_steps: 0, ..CondenseConfig::default() },
        ] {
            assert!(matches!(condense(&g, &cfg), Err(Error::Config(_))), "{cfg:?}");
        }
        assert_eq!(CondenseConfig::default().n_prime(300), 30);
        assert_eq!(CondenseConfig { c_rate: 0.001, ..CondenseConfig::default() }.n_prime(300), 1);
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_zero_iff_proportional(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            scales in proptest::collection::vec(0.1f64..3.0, 2),
            b in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            let a = Array2::from_shape_vec((3, 2), a).unwrap();
            let b = Array2::from_shape_vec((3, 2), b).unwrap();
            let ab = gradient_match_distance(&[a.clone()], &[b.clone()]).unwrap();
            let ba = gradient_match_distance(&[b.clone()], &[a.clone()]).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            let mut scaled = a.clone();
            for (c, s) in scales.iter().enumerate() {
                scaled.column_mut(c).mapv_inplace(|v| v * s);
            }
            prop_assert!(gradient_match_distance(&[a.clone()], &[scaled]).unwrap().abs() < 1e-12);
            // Direct cosine oracle.
            let oracle: f64 = (0..2).map(|c| {
                let (x, y) = (a.column(c), b.column(c));
                1.0 - x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
            }).sum();
            prop_assert!((ab - oracle).abs() <= 1e-12);
        }
    }
}
