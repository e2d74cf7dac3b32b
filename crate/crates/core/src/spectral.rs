//! Dense symmetric eigenvalue computation and spectral diagnostics for
//! weight matrices: mu, rho, the spectral gap, tau, Schatten norms and the
//! convergence conditions of the averaging iteration.

use std::sync::Arc;

use ndarray::Array2;

use crate::dense::{self, mat_power};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Symmetric weight matrix tied to its graph. Off-graph entries are zero,
/// the diagonal carries the self-weights.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    graph: Arc<Graph>,
    w: Array2<f64>,
}

impl WeightMatrix {
    /// Wrap a dense matrix, checking shape, symmetry and the sparsity
    /// pattern of the graph.
    pub fn new(graph: Arc<Graph>, w: Array2<f64>) -> Result<Self> {
        let n = graph.node_count();
        if w.dim() != (n, n) {
            return Err(Error::NotSquare {
                rows: w.nrows(),
                cols: w.ncols(),
            });
        }
        dense::require_symmetric(&w)?;
        for i in 0..n {
            for j in (i + 1)..n {
                if w[[i, j]] != 0.0 && graph.edge_between(i, j).is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "nonzero weight on non-edge ({i}, {j})"
                    )));
                }
            }
        }
        Ok(WeightMatrix { graph, w })
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.graph.node_count()
    }

    /// Tr(W^p) for even p >= 2, by p-1 dense multiplications.
    pub fn trace_power(&self, p: usize) -> Result<f64> {
        trace_power_dense(&self.w, p)
    }

    /// Second largest eigenvalue in module, max(lambda_2, -lambda_n).
    pub fn mu(&self) -> Result<f64> {
        Ok(spectral_report(self)?.mu)
    }
}

/// Eigen decomposition of a symmetric matrix: `values` ascending,
/// `vectors` orthonormal with column k paired to `values[k]`.
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Full symmetric eigen decomposition via Householder tridiagonalization
/// followed by implicit-shift QL (EISPACK tred2/tql2 lineage).
pub fn symmetric_eigen(m: &Array2<f64>) -> Result<SymmetricEigen> {
    dense::require_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Array2::zeros((0, 0)),
        });
    }
    // Work on the symmetrized copy so tiny input asymmetry cannot leak in.
    let mut v = Array2::zeros((n, n));
    for i in 0..n {
        v[[i, i]] = m[[i, i]];
        for j in (i + 1)..n {
            let x = 0.5 * (m[[i, j]] + m[[j, i]]);
            v[[i, j]] = x;
            v[[j, i]] = x;
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;
    Ok(SymmetricEigen {
        values: d,
        vectors: v,
    })
}

/// All eigenvalues of a symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Result<Vec<f64>> {
    let mut vals = symmetric_eigen(m)?.values;
    vals.reverse();
    Ok(vals)
}

/// Householder reduction to tridiagonal form with accumulation of the
/// orthogonal transform in `v`.
fn tred2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let delta = f * e[k] + g * d[k];
                    v[[k, j]] -= delta;
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    let delta = g * d[k];
                    v[[k, j]] -= delta;
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on the tridiagonal (d, e), updating the accumulated
/// vectors; sorts the pairs ascending on exit.
fn tql2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0_f64;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m >= n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::EigenNoConvergence);
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0_f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0_f64;
                let mut s2 = 0.0_f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // Selection sort ascending, carrying the eigenvectors along.
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                let tmp = v[[j, i]];
                v[[j, i]] = v[[j, k]];
                v[[j, k]] = tmp;
            }
        }
    }
    Ok(())
}

/// Spectral summary of a weight matrix.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Eigenvalues sorted descending.
    pub eigenvalues: Vec<f64>,
    /// max(lambda_2, -lambda_n): asymptotic convergence factor.
    pub mu: f64,
    /// Spectral radius max(lambda_1, -lambda_n).
    pub rho: f64,
    /// 1 - mu.
    pub spectral_gap: f64,
    /// rho when rho exceeds 1 (beyond tolerance), mu otherwise.
    pub tau: f64,
}

/// Tolerance on rho - 1 for the tau case split.
const RHO_ONE_TOL: f64 = 1e-9;

pub fn spectral_report(w: &WeightMatrix) -> Result<SpectralReport> {
    let eigenvalues = symmetric_eigenvalues(w.matrix())?;
    let n = eigenvalues.len();
    let lambda_1 = eigenvalues[0];
    let lambda_n = eigenvalues[n - 1];
    let mu = if n >= 2 {
        eigenvalues[1].max(-lambda_n)
    } else {
        0.0
    };
    let rho = lambda_1.max(-lambda_n);
    let tau = if rho - 1.0 > RHO_ONE_TOL { rho } else { mu };
    Ok(SpectralReport {
        eigenvalues,
        mu,
        rho,
        spectral_gap: 1.0 - mu,
        tau,
    })
}

/// Tr(M^p) for even p >= 2.
pub fn trace_power_dense(m: &Array2<f64>, p: usize) -> Result<f64> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidPower {
            p,
            reason: "trace power needs an even p >= 2".into(),
        });
    }
    dense::require_symmetric(m)?;
    let mp = mat_power(m, p);
    Ok((0..m.nrows()).map(|i| mp[[i, i]]).sum())
}

/// Tr(M^p) through the spectrum; the independent route for the Schatten
/// identity checks.
pub fn trace_power_via_eigen(m: &Array2<f64>, p: usize) -> Result<f64> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidPower {
            p,
            reason: "trace power needs an even p >= 2".into(),
        });
    }
    let vals = symmetric_eigenvalues(m)?;
    Ok(vals.iter().map(|l| l.powi(p as i32)).sum())
}

/// Schatten p-norm (sum sigma_i^p)^(1/p) of a symmetric matrix, with
/// sigma_i = |lambda_i|.
pub fn schatten_norm(m: &Array2<f64>, p: usize) -> Result<f64> {
    if p < 1 {
        return Err(Error::InvalidPower {
            p,
            reason: "Schatten norm needs p >= 1".into(),
        });
    }
    let vals = symmetric_eigenvalues(m)?;
    let sum: f64 = vals.iter().map(|l| l.abs().powi(p as i32)).sum();
    Ok(sum.powf(1.0 / p as f64))
}

/// One failed convergence condition.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvergenceViolation {
    /// Some row sum differs from 1 beyond tolerance.
    RowSum { node: usize, sum: f64 },
    /// Some column sum differs from 1 beyond tolerance.
    ColSum { node: usize, sum: f64 },
    /// rho(W - (1/n) 11^T) is not below 1 by the safety margin.
    EssentialSpectralRadius { rho: f64 },
}

impl std::fmt::Display for ConvergenceViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvergenceViolation::RowSum { node, sum } => {
                write!(f, "row {node} sums to {sum}, expected 1")
            }
            ConvergenceViolation::ColSum { node, sum } => {
                write!(f, "column {node} sums to {sum}, expected 1")
            }
            ConvergenceViolation::EssentialSpectralRadius { rho } => {
                write!(f, "rho(W - J/n) = {rho} is not < 1")
            }
        }
    }
}

/// Outcome of the convergence-condition check.
#[derive(Debug, Clone)]
pub struct ConvergenceVerdict {
    pub violations: Vec<ConvergenceViolation>,
}

impl ConvergenceVerdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const STOCHASTIC_TOL: f64 = 1e-9;
const SPECTRAL_MARGIN: f64 = 1e-12;

/// Check the three conditions that make W drive any initial state to the
/// average: unit row sums, unit column sums, and spectral radius of
/// W - (1/n) 11^T strictly below one.
pub fn check_convergent(w: &WeightMatrix) -> Result<ConvergenceVerdict> {
    let m = w.matrix();
    let n = w.n();
    let mut violations = Vec::new();
    for i in 0..n {
        let row: f64 = (0..n).map(|j| m[[i, j]]).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(ConvergenceViolation::RowSum { node: i, sum: row });
        }
    }
    for j in 0..n {
        let col: f64 = (0..n).map(|i| m[[i, j]]).sum();
        if (col - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(ConvergenceViolation::ColSum { node: j, sum: col });
        }
    }
    let mut shifted = m.clone();
    let inv = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            shifted[[i, j]] -= inv;
        }
    }
    let vals = symmetric_eigenvalues(&shifted)?;
    let rho = vals
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()));
    if !(rho < 1.0 - SPECTRAL_MARGIN) {
        violations.push(ConvergenceViolation::EssentialSpectralRadius { rho });
    }
    Ok(ConvergenceVerdict { violations })
}
