//! Baseline link-weight rules (max degree, local degree, optimal constant)
//! and the map from per-link weights to the full weight matrix.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{symmetric_eigenvalues, WeightMatrix};

/// Per-link weights indexed by the graph's canonical edge index.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Self {
        WeightVector { w }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn get(&self, l: usize) -> f64 {
        self.w[l]
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(w: Vec<f64>) -> Self {
        WeightVector::new(w)
    }
}

/// Self-weight of node i given link weights: 1 minus the sum of the
/// incident link weights, folded in ascending neighbor order. The
/// distributed protocol reproduces this fold exactly.
pub fn self_weight(g: &Graph, w: &WeightVector, i: usize) -> f64 {
    let mut s = 0.0;
    for &(_, l) in g.incident(i) {
        s += w.get(l);
    }
    1.0 - s
}

/// W = I - Incidence * diag(w) * Incidence^T: symmetric with unit row sums,
/// link weights on edges and the induced self-weights on the diagonal.
pub fn weights_to_matrix(g: &Arc<Graph>, w: &WeightVector) -> Result<WeightMatrix> {
    if w.len() != g.edge_count() {
        return Err(Error::WeightLengthMismatch {
            got: w.len(),
            expected: g.edge_count(),
        });
    }
    let n = g.node_count();
    let mut m = Array2::zeros((n, n));
    for (l, &(u, v)) in g.edges().iter().enumerate() {
        m[[u, v]] = w.get(l);
        m[[v, u]] = w.get(l);
    }
    for i in 0..n {
        m[[i, i]] = self_weight(g, w, i);
    }
    WeightMatrix::new(g.clone(), m)
}

/// Max-degree rule: every link gets 1/(Delta + 1).
pub fn max_degree_weights(g: &Graph) -> Result<WeightVector> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let w = 1.0 / (g.max_degree() as f64 + 1.0);
    Ok(WeightVector::new(vec![w; g.edge_count()]))
}

/// Local-degree (metropolis) rule: link (i, j) gets
/// 1/(max(d_i, d_j) + 1).
pub fn local_degree_weights(g: &Graph) -> Result<WeightVector> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let w = g
        .edges()
        .iter()
        .map(|&(i, j)| 1.0 / (g.degree(i).max(g.degree(j)) as f64 + 1.0))
        .collect();
    Ok(WeightVector::new(w))
}

/// Optimal constant rule: every link gets 2/(lambda_1(L) + lambda_{n-1}(L)),
/// from the graph Laplacian spectrum. Needs a connected graph so the
/// second-smallest Laplacian eigenvalue is positive.
pub fn optimal_constant_weights(g: &Graph) -> Result<WeightVector> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let vals = symmetric_eigenvalues(&g.laplacian())?;
    let n = g.node_count();
    let lambda_1 = vals[0];
    let lambda_n1 = vals[n - 2];
    if lambda_n1 <= 1e-12 {
        return Err(Error::Disconnected);
    }
    let w = 2.0 / (lambda_1 + lambda_n1);
    Ok(WeightVector::new(vec![w; g.edge_count()]))
}
