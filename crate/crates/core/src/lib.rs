//! Weight selection for synchronous average consensus by Schatten p-norm
//! (trace) minimization, with baseline heuristics, a desk-scale fastest
//! averaging oracle, a message-level distributed simulator, convergence
//! repair and misbehaving-node detection.

pub mod consensus;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod robustness;
pub mod schatten;
pub mod spectral;
pub mod weightsel;

pub use error::{Error, Result};
