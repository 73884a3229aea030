//! Surrogate GNNs, the feature-to-structure generator and the
//! coordinate-based structure generator.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config, validation, Result};
use crate::graph::CsrMatrix;

/// GNN family used for matching and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Architecture {
    /// `Â^hops · X · W`
    Sgc { hops: usize },
    /// `Â · relu(Â · X · W₁) · W₂`
    Gcn2 { hidden: usize },
}

impl Architecture {
    pub fn weight_shapes(&self, d: usize, k: usize) -> Vec<(usize, usize)> {
        match *self {
            Architecture::Sgc { .. } => vec![(d, k)],
            Architecture::Gcn2 { hidden } => vec![(d, hidden), (hidden, k)],
        }
    }
}

fn uniform_fan_in(rng: &mut impl Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Weights `θ` of a GNN.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub architecture: Architecture,
    pub weights: Vec<Array2<f64>>,
}

impl GnnParams {
    /// Uniform in `[−1/√fan_in, 1/√fan_in]`.
    pub fn init(architecture: Architecture, d: usize, k: usize, rng: &mut impl Rng) -> Self {
        let weights = architecture
            .weight_shapes(d, k)
            .into_iter()
            .map(|shape| uniform_fan_in(rng, shape, shape.0))
            .collect();
        Self { architecture, weights }
    }

    pub fn zeros(architecture: Architecture, d: usize, k: usize) -> Self {
        let weights = architecture.weight_shapes(d, k).into_iter().map(Array2::zeros).collect();
        Self { architecture, weights }
    }

    /// Logits on `features` under `propagation`.
    pub fn forward(&self, propagation: &Propagation<'_>, features: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let prop = PropVar::constant(&tape, propagation);
        let weights: Vec<Var<'_>> = self.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let x = tape.constant(features.clone());
        Ok(gnn_forward_var(self.architecture, &weights, &prop, x)?.value().as_ref().clone())
    }
}

/// A propagation operator outside any tape.
#[derive(Debug, Clone, Copy)]
pub enum Propagation<'a> {
    /// Graphless mode: features are not mixed.
    Identity,
    Sparse(&'a CsrMatrix),
    /// Dense, already normalized.
    Dense(&'a Array2<f64>),
}

/// A propagation operator recorded on a tape.
#[derive(Debug, Clone)]
pub enum PropVar<'t> {
    Identity,
    Sparse(Rc<CsrMatrix>),
    Dense(Var<'t>),
}

impl<'t> PropVar<'t> {
    pub fn constant(tape: &'t Tape, propagation: &Propagation<'_>) -> Self {
        match *propagation {
            Propagation::Identity => PropVar::Identity,
            Propagation::Sparse(m) => PropVar::Sparse(Rc::new(m.clone())),
            Propagation::Dense(m) => PropVar::Dense(tape.constant(m.clone())),
        }
    }

    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            PropVar::Identity => Ok(x),
            PropVar::Sparse(m) => {
                if m.cols() != x.shape().0 {
                    return Err(validation(format!(
                        "propagation is {}x{} but features have {} rows",
                        m.rows(),
                        m.cols(),
                        x.shape().0
                    )));
                }
                x.tape().spmm(m, x)
            }
            PropVar::Dense(a) => a.matmul(x),
        }
    }
}

/// GNN forward pass on the tape.
pub fn gnn_forward_var<'t>(
    architecture: Architecture,
    weights: &[Var<'t>],
    propagation: &PropVar<'t>,
    features: Var<'t>,
) -> Result<Var<'t>> {
    match (architecture, weights) {
        (Architecture::Sgc { hops }, [w]) => {
            let mut h = features;
            for _ in 0..hops {
                h = propagation.apply(h)?;
            }
            h.matmul(*w)
        }
        (Architecture::Gcn2 { .. }, [w1, w2]) => {
            let hidden = propagation.apply(features.matmul(*w1)?)?.relu();
            propagation.apply(hidden.matmul(*w2)?)
        }
        _ => Err(validation(format!(
            "{architecture:?} expects {} weight matrices, got {}",
            match architecture {
                Architecture::Sgc { .. } => 1,
                Architecture::Gcn2 { .. } => 2,
            },
            weights.len()
        ))),
    }
}

/// `D^{-1/2} A D^{-1/2}` for a dense adjacency that already carries its
/// self-loops (unit diagonal).
pub fn normalize_dense_var(adjacency: Var<'_>) -> Result<Var<'_>> {
    let inv_sqrt = adjacency.sum_axis(1).pow(-0.5)?;
    adjacency.mul(inv_sqrt.matmul(inv_sqrt.t())?)
}

pub fn normalize_dense(adjacency: &Array2<f64>) -> Result<Array2<f64>> {
    let tape = Tape::new();
    let out = normalize_dense_var(tape.constant(adjacency.clone()))?;
    Ok(out.value().as_ref().clone())
}

/// Overwrites the diagonal with ones.
pub fn with_unit_diagonal_var(adjacency: Var<'_>) -> Result<Var<'_>> {
    let n = adjacency.shape().0;
    let tape = adjacency.tape();
    let off = tape.constant(Array2::from_shape_fn((n, n), |(i, j)| (i != j) as u8 as f64));
    adjacency.mul(off)?.add(tape.constant(Array2::eye(n)))
}

/// `g_φ`: a two-layer MLP scoring concatenated feature pairs `[xᵢ; xⱼ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureGenerator {
    /// `2d × h`
    pub w1: Array2<f64>,
    /// `1 × h`
    pub b1: Array2<f64>,
    /// `h × 1`
    pub w2: Array2<f64>,
    /// `1 × 1`
    pub b2: Array2<f64>,
}

impl StructureGenerator {
    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: uniform_fan_in(rng, (2 * d, hidden), 2 * d),
            b1: uniform_fan_in(rng, (1, hidden), 2 * d),
            w2: uniform_fan_in(rng, (hidden, 1), hidden),
            b2: uniform_fan_in(rng, (1, 1), hidden),
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((2 * d, hidden)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((hidden, 1)),
            b2: Array2::zeros((1, 1)),
        }
    }

    pub fn params(&self) -> Vec<Array2<f64>> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    pub fn set_params(&mut self, params: Vec<Array2<f64>>) {
        let [w1, b1, w2, b2]: [Array2<f64>; 4] = params.try_into().expect("four generator tensors");
        *self = Self { w1, b1, w2, b2 };
    }
}

/// Soft adjacency `σ((mlp([xᵢ;xⱼ]) + mlp([xⱼ;xᵢ]))/2)` on the tape.
///
/// `params` are `[w1, b1, w2, b2]` as in [`StructureGenerator`].
pub fn infer_structure_var<'t>(params: &[Var<'t>], features: Var<'t>) -> Result<Var<'t>> {
    let [w1, b1, w2, b2] = params else {
        return Err(validation("structure generator expects four tensors"));
    };
    let (n, d) = features.shape();
    if w1.shape().0 != 2 * d {
        return Err(validation(format!("generator input {} but features have {d} columns", w1.shape().0)));
    }
    // The first layer splits over the two halves of [xᵢ; xⱼ].
    let left = features.matmul(w1.slice_rows(0, d)?)?;
    let right = features.matmul(w1.slice_rows(d, d)?)?;
    let rows = Rc::new((0..n * n).map(|p| p / n).collect::<Vec<_>>());
    let cols = Rc::new((0..n * n).map(|p| p % n).collect::<Vec<_>>());
    let hidden = left.gather_rows(&rows)?.add(right.gather_rows(&cols)?)?.add(*b1)?.relu();
    let scores = hidden.matmul(*w2)?.add(*b2)?.reshape(n, n)?;
    Ok(scores.add(scores.t())?.scale(0.5).sigmoid())
}

pub fn infer_structure(generator: &StructureGenerator, features: &Array2<f64>) -> Result<Array2<f64>> {
    let tape = Tape::new();
    let params: Vec<Var<'_>> = generator.params().into_iter().map(|p| tape.constant(p)).collect();
    let out = infer_structure_var(&params, tape.constant(features.clone()))?;
    Ok(out.value().as_ref().clone())
}

/// Zeroes entries `≤ delta`, keeps the rest, and sets a unit diagonal.
pub fn threshold_adjacency(soft: &Array2<f64>, delta: f64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(config(format!("threshold {delta} outside [0,1)")));
    }
    let mut out = soft.mapv(|v| if v > delta { v } else { 0.0 });
    out.diag_mut().fill(1.0);
    Ok(out)
}

/// Generator `GEN(Z ⊕ X' ⊕ Y'; Φ)` mapping each synthetic node's row to a
/// row of structure scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SgddGenerator {
    /// `(N' + d + K) × h`
    pub w1: Array2<f64>,
    /// `1 × h`
    pub b1: Array2<f64>,
    /// `h × N'`
    pub w2: Array2<f64>,
    /// `1 × N'`
    pub b2: Array2<f64>,
}

impl SgddGenerator {
    pub fn init(n_prime: usize, d: usize, k: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = n_prime + d + k;
        Self {
            w1: uniform_fan_in(rng, (input, hidden), input),
            b1: uniform_fan_in(rng, (1, hidden), input),
            w2: uniform_fan_in(rng, (hidden, n_prime), hidden),
            b2: uniform_fan_in(rng, (1, n_prime), hidden),
        }
    }

    pub fn zeros(n_prime: usize, d: usize, k: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((n_prime + d + k, hidden)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((hidden, n_prime)),
            b2: Array2::zeros((1, n_prime)),
        }
    }

    pub fn params(&self) -> Vec<Array2<f64>> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    pub fn set_params(&mut self, params: Vec<Array2<f64>>) {
        let [w1, b1, w2, b2]: [Array2<f64>; 4] = params.try_into().expect("four generator tensors");
        *self = Self { w1, b1, w2, b2 };
    }
}

/// Symmetrized, sigmoid-squashed scores of the row-wise network over
/// `[Z | X' | Y']`.
pub fn sgdd_generate_var<'t>(
    params: &[Var<'t>],
    coordinates: Var<'t>,
    features: Var<'t>,
    labels: Var<'t>,
) -> Result<Var<'t>> {
    let [w1, b1, w2, b2] = params else {
        return Err(validation("structure generator expects four tensors"));
    };
    let n = coordinates.shape().0;
    if coordinates.shape().1 != n || features.shape().0 != n || labels.shape().0 != n {
        return Err(validation(format!(
            "generator inputs disagree on N': Z {:?}, X' {:?}, Y' {:?}",
            coordinates.shape(),
            features.shape(),
            labels.shape()
        )));
    }
    let input = coordinates.tape().concat_cols(&[coordinates, features, labels])?;
    let hidden = input.matmul(*w1)?.add(*b1)?.relu();
    let scores = hidden.matmul(*w2)?.add(*b2)?;
    if scores.shape() != (n, n) {
        return Err(validation(format!("generator emits {:?} for N' = {n}", scores.shape())));
    }
    Ok(scores.add(scores.t())?.scale(0.5).sigmoid())
}

pub fn sgdd_generate(
    generator: &SgddGenerator,
    coordinates: &Array2<f64>,
    features: &Array2<f64>,
    labels: &Array2<f64>,
) -> Result<Array2<f64>> {
    let tape = Tape::new();
    let params: Vec<Var<'_>> = generator.params().into_iter().map(|p| tape.constant(p)).collect();
    let out = sgdd_generate_var(
        &params,
        tape.constant(coordinates.clone()),
        tape.constant(features.clone()),
        tape.constant(labels.clone()),
    )?;
    Ok(out.value().as_ref().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_oracle;
    use crate::graph::{normalize_adjacency, LabeledGraph, SplitRole};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sgc_identity_case() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let params = GnnParams { architecture: Architecture::Sgc { hops: 0 }, weights: vec![Array2::eye(2)] };
        assert_eq!(params.forward(&Propagation::Identity, &x).unwrap(), x);
    }

    #[test]
    fn gcn_zero_weights() {
        let params = GnnParams::zeros(Architecture::Gcn2 { hidden: 3 }, 2, 2);
        let out = params.forward(&Propagation::Identity, &array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn sgc_one_hop_two_nodes() {
        let g = LabeledGraph::new(&[(0, 1, 1.0)], array![[1.0], [0.0]], array![[1.0], [0.0]], vec![SplitRole::Train; 2])
            .unwrap();
        let a = normalize_adjacency(&g);
        let params = GnnParams { architecture: Architecture::Sgc { hops: 1 }, weights: vec![array![[1.0]]] };
        let out = params.forward(&Propagation::Sparse(&a), g.features()).unwrap();
        assert_eq!(out, array![[0.5], [0.5]]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let params = GnnParams::zeros(Architecture::Gcn2 { hidden: 3 }, 4, 2);
        assert!(params.forward(&Propagation::Identity, &Array2::zeros((2, 3))).is_err());
        let a = CsrMatrix::identity(3);
        let params = GnnParams::zeros(Architecture::Gcn2 { hidden: 3 }, 2, 2);
        assert!(params.forward(&Propagation::Sparse(&a), &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn structure_examples() {
        let x = array![[0.3, -1.0], [2.0, 0.5], [1.0, 1.0]];
        let out = infer_structure(&StructureGenerator::zeros(2, 4), &x).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let generator = StructureGenerator::init(2, 4, &mut rng);
        let same = Array2::from_shape_fn((3, 2), |(_, j)| j as f64 + 0.25);
        let out = infer_structure(&generator, &same).unwrap();
        assert!(out.iter().all(|&v| v == out[[0, 0]]));

        let out = infer_structure(&generator, &x).unwrap();
        assert_eq!(out, out.t());
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn threshold_examples() {
        let soft = array![[0.9, 0.4], [0.4, 0.9]];
        assert_eq!(threshold_adjacency(&soft, 0.5).unwrap(), array![[1.0, 0.0], [0.0, 1.0]]);
        let soft = array![[0.9, 0.6], [0.6, 0.2]];
        assert_eq!(threshold_adjacency(&soft, 0.5).unwrap(), array![[1.0, 0.6], [0.6, 1.0]]);
        let soft = array![[0.0, 0.01], [0.01, 0.0]];
        assert_eq!(threshold_adjacency(&soft, 0.0).unwrap(), array![[1.0, 0.01], [0.01, 1.0]]);
        assert!(matches!(threshold_adjacency(&soft, 1.0), Err(crate::Error::Config(_))));
        assert!(matches!(threshold_adjacency(&soft, -0.1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn sgdd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random(&mut rng, (4, 4));
        let x = random(&mut rng, (4, 3));
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        let zero = SgddGenerator::zeros(4, 3, 2, 6);
        assert!(sgdd_generate(&zero, &z, &x, &y).unwrap().iter().all(|&v| v == 0.5));
        let generator = SgddGenerator::init(4, 3, 2, 6, &mut rng);
        let out = sgdd_generate(&generator, &z, &x, &y).unwrap();
        assert_eq!(out, out.t());
        assert_eq!(out, sgdd_generate(&generator, &z, &x, &y).unwrap());
        assert!(sgdd_generate(&generator, &z, &x.slice(ndarray::s![..3, ..]).to_owned(), &y).is_err());
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = LabeledGraph::new(
                &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 0.5)],
                random(&mut rng, (4, 3)),
                array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 1.0]],
                vec![SplitRole::Train; 4],
            )
            .unwrap();
            let a = normalize_adjacency(&g);
            for arch in [Architecture::Gcn2 { hidden: 3 }, Architecture::Sgc { hops: 2 }] {
                let params = GnnParams::init(arch, 3, 2, &mut rng);
                let probe = random(&mut rng, (4, 2));
                let loss_of = |weights: &[Array2<f64>]| {
                    let p = GnnParams { architecture: arch, weights: weights.to_vec() };
                    (p.forward(&Propagation::Sparse(&a), g.features()).unwrap() * &probe).mapv(f64::tanh).sum()
                };
                let tape = Tape::new();
                let leaves: Vec<_> = params.weights.iter().map(|w| tape.leaf(w.clone())).collect();
                let prop = PropVar::constant(&tape, &Propagation::Sparse(&a));
                let out = gnn_forward_var(arch, &leaves, &prop, tape.constant(g.features().clone())).unwrap();
                let loss = out.mul(tape.constant(probe.clone())).unwrap();
                // tanh(u) = 2σ(2u) − 1
                let loss = loss.scale(2.0).sigmoid().affine(2.0, -1.0).sum();
                tape.backward(loss).unwrap();
                for (k, leaf) in leaves.iter().enumerate() {
                    let numeric = finite_difference_oracle(
                        |w| {
                            let mut ws = params.weights.clone();
                            ws[k] = w.clone();
                            loss_of(&ws)
                        },
                        &params.weights[k],
                        1e-5,
                    );
                    let analytic = leaf.grad().unwrap();
                    let err = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt()
                        / numeric.mapv(|v| v * v).sum().sqrt().max(1e-8);
                    assert!(err < 1e-5, "{arch:?} weight {k}: {err}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn graphless_equals_identity_operator(seed in 0u64..1000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, (n, 3));
            for arch in [Architecture::Gcn2 { hidden: 4 }, Architecture::Sgc { hops: 2 }] {
                let params = GnnParams::init(arch, 3, 2, &mut rng);
                let eye = CsrMatrix::identity(n);
                prop_assert_eq!(
                    params.forward(&Propagation::Identity, &x).unwrap(),
                    params.forward(&Propagation::Sparse(&eye), &x).unwrap()
                );
            }
        }

        #[test]
        fn inferred_structure_is_symmetric_in_unit_interval(seed in 0u64..1000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let generator = StructureGenerator::init(3, 5, &mut rng);
            let out = infer_structure(&generator, &random(&mut rng, (n, 3))).unwrap();
            prop_assert_eq!(&out, &out.t().to_owned());
            prop_assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn threshold_is_idempotent_and_symmetric(seed in 0u64..1000, n in 1usize..7, delta in 0.0f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let soft = (&raw + &raw.t()) / 2.0;
            let once = threshold_adjacency(&soft, delta).unwrap();
            prop_assert_eq!(&once, &once.t().to_owned());
            prop_assert_eq!(threshold_adjacency(&once, delta).unwrap(), once);
        }
    }
}
