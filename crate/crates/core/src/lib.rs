//! Multi-label graph dataset condensation.
//!
//! Condenses a large multi-label graph `(A, X, Y)` into a small synthetic
//! graph `(A', X', Y')` so that a GNN trained on the synthetic graph performs
//! close to one trained on the original. Three drivers are provided:
//!
//! * gradient matching with a learned structure generator ([`condense::gcond_condense`]),
//! * class-conditional distribution matching ([`condense::gcdm_condense`]),
//! * structure broadcasting with Laplacian-spectrum supervision ([`condense::sgdd_condense`]).
//!
//! Synthetic graphs are initialized by coreset selection (random, herding,
//! k-center) or by sampling multi-hot labels from the class frequencies
//! ([`init`]), and trained with multi-label objectives ([`losses`]).
//! [`eval`] trains fresh models on the condensed graph and scores them on
//! the original test split.


pub mod autodiff;
pub mod condense;
pub mod error;
pub mod eval;
pub mod graph;
pub mod init;
pub mod io;
pub mod losses;
pub mod models;
pub mod planted;

pub use error::{Error, Result};
pub use graph::{CsrMatrix, LabeledGraph, SplitMask, SplitRole, StructureMode, SyntheticGraph};
