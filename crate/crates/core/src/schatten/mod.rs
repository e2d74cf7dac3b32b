//! Trace (Schatten p-norm) minimization of the weight matrix by projected
//! gradient descent, in a centralized reference form plus the message-level
//! distributed form in [`distributed`], and a desk-scale numeric oracle for
//! the fastest-averaging problem in [`fdla`].

pub mod distributed;
pub mod fdla;

use std::sync::Arc;

use crate::dense::mat_power;
use crate::error::{Error, Result};
use crate::graph::{Graph, Subgraph};
use crate::spectral::WeightMatrix;
use crate::weightsel::{weights_to_matrix, WeightVector};

/// Diminishing step size gamma(k) = a / (b + k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    a: f64,
    b: f64,
}

impl StepSchedule {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b >= 0.0) {
            return Err(Error::InvalidSchedule { a, b });
        }
        Ok(StepSchedule { a, b })
    }

    /// Experiment default: a = 10/p, b = 100.
    pub fn default_for(p: usize) -> Self {
        StepSchedule {
            a: 10.0 / p as f64,
            b: 100.0,
        }
    }

    /// Joint consensus-optimization schedule gamma(k) = 1/(p(1+k)).
    pub fn jco(p: usize) -> Self {
        StepSchedule {
            a: 1.0 / p as f64,
            b: 1.0,
        }
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.a / (self.b + k as f64)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Default stopping tolerance on the gradient norm.
pub const DEFAULT_GTOL: f64 = 0.02;

/// Per-edge gradient of Tr(W^p) in the link weight, from the four entries
/// of W^(p-1). Both the centralized and the node-local paths call this with
/// bit-identical inputs, so the association here is part of the protocol.
#[inline]
pub(crate) fn gradient_from_entries(p: usize, ji: f64, ij: f64, ii: f64, jj: f64) -> f64 {
    p as f64 * (((ji + ij) - ii) - jj)
}

/// One projected-gradient update of a single weight.
#[inline]
pub(crate) fn update_weight(w: f64, gamma: f64, g: f64) -> f64 {
    (w - gamma * g).clamp(-1.0, 1.0)
}

fn require_even(p: usize) -> Result<()> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidPower {
            p,
            reason: "the trace objective needs an even p >= 2".into(),
        });
    }
    Ok(())
}

/// Gradient of Tr(W^p) with respect to the weight of edge l ~ (i, j):
/// p ((W^{p-1})_{ji} + (W^{p-1})_{ij} - (W^{p-1})_{ii} - (W^{p-1})_{jj}).
pub fn local_gradient(w: &WeightMatrix, l: usize, p: usize) -> Result<f64> {
    require_even(p)?;
    let (i, j) = w.graph().edge(l)?;
    let wp1 = mat_power(w.matrix(), p - 1);
    Ok(gradient_from_entries(
        p,
        wp1[[j, i]],
        wp1[[i, j]],
        wp1[[i, i]],
        wp1[[j, j]],
    ))
}

/// All edge gradients from a single dense W^(p-1).
pub fn gradient_vector(w: &WeightMatrix, p: usize) -> Result<Vec<f64>> {
    require_even(p)?;
    let wp1 = mat_power(w.matrix(), p - 1);
    Ok(w
        .graph()
        .edges()
        .iter()
        .map(|&(i, j)| {
            gradient_from_entries(p, wp1[[j, i]], wp1[[i, j]], wp1[[i, i]], wp1[[j, j]])
        })
        .collect())
}

/// Gradient of Tr(W^p) for edge l computed from a neighborhood subgraph
/// only. Walks of length p-1 between or around the endpoints never leave
/// the nodes within p/2 - 1 hops of either endpoint, so any subgraph
/// covering that set reproduces the dense-matrix value exactly.
pub fn local_gradient_from_subgraph(
    w: &WeightMatrix,
    h: &Subgraph,
    l: usize,
    p: usize,
) -> Result<f64> {
    require_even(p)?;
    if !Arc::ptr_eq(h.parent(), w.graph()) {
        return Err(Error::SubgraphParentMismatch);
    }
    let g = w.graph();
    let (i, j) = g.edge(l)?;
    let needed = p / 2 - 1;
    let di = g.bfs_distances(i);
    let dj = g.bfs_distances(j);
    for v in 0..g.node_count() {
        let close = matches!(di[v], Some(d) if d <= needed)
            || matches!(dj[v], Some(d) if d <= needed);
        if close && !h.contains_node(v) {
            return Err(Error::InsufficientRadius(format!(
                "node {v} is within {needed} hops of edge ({i}, {j}) but missing"
            )));
        }
    }

    let nodes = h.nodes();
    let pos = |v: usize| nodes.binary_search(&v).expect("checked membership");
    let k = nodes.len();
    let mut b = ndarray::Array2::zeros((k, k));
    let wm = w.matrix();
    for (a, &u) in nodes.iter().enumerate() {
        for (c, &v) in nodes.iter().enumerate() {
            b[[a, c]] = wm[[u, v]];
        }
    }
    let bp1 = mat_power(&b, p - 1);
    let (li, lj) = (pos(i), pos(j));
    Ok(gradient_from_entries(
        p,
        bp1[[lj, li]],
        bp1[[li, lj]],
        bp1[[li, li]],
        bp1[[lj, lj]],
    ))
}

/// Componentwise clamp onto [lo, hi]^m.
pub fn project_box(w: &WeightVector, lo: f64, hi: f64) -> WeightVector {
    assert!(lo <= hi, "empty projection interval");
    WeightVector::new(w.as_slice().iter().map(|x| x.clamp(lo, hi)).collect())
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient norm fell below the tolerance.
    Converged,
    /// Iteration budget exhausted.
    MaxIter,
}

/// Stopping rule in force; the local rule is what a node can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Global Euclidean norm of the gradient (centralized runs).
    GlobalL2,
    /// Per-node max |g_l| over incident links (distributed runs). The two
    /// rules differ by at most sqrt(m) * gtol on the global norm.
    LocalMax,
}

/// One recorded optimizer iteration.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub trace_p: f64,
    pub grad_norm: f64,
    pub msgs_cumulative: u64,
    /// mu(W) at this iterate; recorded only on request.
    pub mu: Option<f64>,
}

/// Optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// Number of projected-gradient updates applied.
    pub iterations: usize,
    pub stop: StopReason,
    pub stop_rule: StopRule,
    /// Gradient norm at the final iterate (global L2).
    pub grad_norm: f64,
    /// Max |g_l| at the final iterate.
    pub grad_max: f64,
    /// Modeled distributed communication: messages per link so far.
    pub msgs_per_link: u64,
    /// Network-wide message total (msgs_per_link * m).
    pub msgs_total: u64,
    /// Upper bound on the global-norm discrepancy of the local stop rule.
    pub stop_rule_divergence_bound: f64,
    pub trace: Vec<TraceRow>,
    /// Full iterate history when requested.
    pub iterates: Option<Vec<WeightVector>>,
}

/// Optional recording knobs for optimizer runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordOptions {
    /// Compute mu(W) at every recorded iterate (one eigensolve each).
    pub spectrum: bool,
    /// Keep every iterate (memory: m floats per iteration).
    pub iterates: bool,
}

/// Projected gradient descent on Tr(W^p) over the box [-1, 1]^m.
///
/// Each iteration evaluates the gradient (the distributed protocol would
/// spend p messages per link for this), stops when the global gradient
/// norm drops below `gtol`, otherwise applies
/// w <- clamp(w - gamma(k) g, -1, 1).
pub fn tm_optimize(
    g: &Arc<Graph>,
    p: usize,
    sched: StepSchedule,
    gtol: f64,
    max_iter: usize,
    w0: &WeightVector,
) -> Result<(WeightVector, OptimizerState)> {
    tm_optimize_recorded(g, p, sched, gtol, max_iter, w0, RecordOptions::default())
}

pub fn tm_optimize_recorded(
    g: &Arc<Graph>,
    p: usize,
    sched: StepSchedule,
    gtol: f64,
    max_iter: usize,
    w0: &WeightVector,
    record: RecordOptions,
) -> Result<(WeightVector, OptimizerState)> {
    require_even(p)?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let m = g.edge_count();
    if w0.len() != m {
        return Err(Error::WeightLengthMismatch {
            got: w0.len(),
            expected: m,
        });
    }

    let mut w = project_box(w0, -1.0, 1.0);
    let mut trace = Vec::new();
    let mut iterates = record.iterates.then(Vec::new);
    let mut msgs_total = 0u64;
    let mut k = 0usize;
    let (stop, grad_norm, grad_max);

    loop {
        let wm = weights_to_matrix(g, &w)?;
        let grad = gradient_vector(&wm, p)?;
        msgs_total += (p * m) as u64;

        let mut sumsq = 0.0;
        let mut gmax = 0.0_f64;
        for &gl in &grad {
            if !gl.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient".into(),
                    k,
                });
            }
            sumsq += gl * gl;
            gmax = gmax.max(gl.abs());
        }
        let gnorm = sumsq.sqrt();

        let trace_p = {
            // Tr(W^p) from the W^(p-1) already implicit in the gradient is
            // not available here; recompute cheaply via the report only on
            // request, otherwise via the matrix route.
            let mp = mat_power(wm.matrix(), p);
            (0..wm.n()).map(|i| mp[[i, i]]).sum()
        };
        let mu = if record.spectrum {
            Some(wm.mu()?)
        } else {
            None
        };
        trace.push(TraceRow {
            k,
            trace_p,
            grad_norm: gnorm,
            msgs_cumulative: msgs_total,
            mu,
        });
        if let Some(hist) = iterates.as_mut() {
            hist.push(w.clone());
        }

        if gnorm < gtol {
            stop = StopReason::Converged;
            grad_norm = gnorm;
            grad_max = gmax;
            break;
        }
        if k >= max_iter {
            stop = StopReason::MaxIter;
            grad_norm = gnorm;
            grad_max = gmax;
            break;
        }

        let gamma = sched.gamma(k);
        if !gamma.is_finite() {
            return Err(Error::NonFinite {
                what: "step size".into(),
                k,
            });
        }
        for (l, wl) in w.as_mut_slice().iter_mut().enumerate() {
            *wl = update_weight(*wl, gamma, grad[l]);
        }
        k += 1;
    }

    let state = OptimizerState {
        iterations: k,
        stop,
        stop_rule: StopRule::GlobalL2,
        grad_norm,
        grad_max,
        msgs_per_link: (p as u64) * (trace.len() as u64),
        msgs_total,
        stop_rule_divergence_bound: (m as f64).sqrt() * gtol,
        trace,
        iterates,
    };
    Ok((w, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, edge_neighborhood, k_hop_subgraph, Graph};
    use crate::spectral::trace_power_dense;
    use crate::weightsel::{local_degree_weights, weights_to_matrix};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_connected(n: usize, pr: f64, seed: u64) -> Arc<Graph> {
        Arc::new(graph::generate_connected(|s| graph::generate_er(n, pr, s), seed, 200).unwrap())
    }

    fn random_weights(g: &Graph, seed: u64) -> WeightVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WeightVector::new((0..g.edge_count()).map(|_| rng.gen_range(-0.4..0.7)).collect())
    }

    #[test]
    fn schedule_validation_and_values() {
        assert!(StepSchedule::new(0.0, 1.0).is_err());
        assert!(StepSchedule::new(1.0, -0.1).is_err());
        let s = StepSchedule::default_for(2);
        assert!((s.gamma(0) - 0.05).abs() < 1e-15);
        let j = StepSchedule::jco(4);
        assert!((j.gamma(0) - 0.25).abs() < 1e-15);
        assert!((j.gamma(3) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn single_edge_gradient_examples() {
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        let wm = weights_to_matrix(&g, &WeightVector::new(vec![0.5])).unwrap();
        assert_eq!(local_gradient(&wm, 0, 2).unwrap(), 0.0);

        let wm = weights_to_matrix(&g, &WeightVector::new(vec![0.25])).unwrap();
        // 2 (0.25 + 0.25 - 0.75 - 0.75) = -2
        assert!((local_gradient(&wm, 0, 2).unwrap() + 2.0).abs() < 1e-15);

        assert!(local_gradient(&wm, 0, 3).is_err());
        assert!(local_gradient(&wm, 5, 2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Central finite difference of Tr(W^p) in each link weight.
        for seed in 0..6 {
            let g = random_connected(6, 0.5, seed);
            let w = random_weights(&g, seed + 100);
            for p in [2usize, 4, 6] {
                let wm = weights_to_matrix(&g, &w).unwrap();
                let grad = gradient_vector(&wm, p).unwrap();
                let h = 1e-6;
                for l in 0..g.edge_count() {
                    let mut wp = w.clone();
                    wp.as_mut_slice()[l] += h;
                    let tp = trace_power_dense(
                        weights_to_matrix(&g, &wp).unwrap().matrix(),
                        p,
                    )
                    .unwrap();
                    let mut wmn = w.clone();
                    wmn.as_mut_slice()[l] -= h;
                    let tn = trace_power_dense(
                        weights_to_matrix(&g, &wmn).unwrap().matrix(),
                        p,
                    )
                    .unwrap();
                    let fd = (tp - tn) / (2.0 * h);
                    let rel = (grad[l] - fd).abs() / grad[l].abs().max(1.0);
                    assert!(
                        rel <= 1e-5,
                        "seed {seed} p={p} l={l}: analytic {} vs fd {fd}",
                        grad[l]
                    );
                }
            }
        }
    }

    #[test]
    fn subgraph_gradient_p2_endpoints_only() {
        let g = random_connected(8, 0.4, 3);
        let w = random_weights(&g, 5);
        let wm = weights_to_matrix(&g, &w).unwrap();
        for l in 0..g.edge_count() {
            let h = edge_neighborhood(&g, l, 0).unwrap();
            assert_eq!(h.nodes().len(), 2);
            let local = local_gradient_from_subgraph(&wm, &h, l, 2).unwrap();
            let global = local_gradient(&wm, l, 2).unwrap();
            assert_eq!(local, global);
        }
    }

    #[test]
    fn subgraph_gradient_p4_union_neighborhood() {
        let g = random_connected(10, 0.35, 9);
        let w = random_weights(&g, 11);
        let wm = weights_to_matrix(&g, &w).unwrap();
        for l in 0..g.edge_count() {
            let h = edge_neighborhood(&g, l, 1).unwrap();
            let local = local_gradient_from_subgraph(&wm, &h, l, 4).unwrap();
            let global = local_gradient(&wm, l, 4).unwrap();
            assert_eq!(local, global);
        }
    }

    #[test]
    fn subgraph_gradient_p6_three_hop_ball() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_rgg(12, 0.45, s), 2, 200).unwrap(),
        );
        let w = random_weights(&g, 13);
        let wm = weights_to_matrix(&g, &w).unwrap();
        for l in 0..g.edge_count() {
            let (i, _) = g.edge(l).unwrap();
            let h = k_hop_subgraph(&g, i, 3).unwrap();
            let local = local_gradient_from_subgraph(&wm, &h, l, 6).unwrap();
            let global = local_gradient(&wm, l, 6).unwrap();
            assert!((local - global).abs() <= 1e-10);
        }
    }

    #[test]
    fn subgraph_gradient_rejects_small_neighborhood() {
        // A 6-path: 1-hop around one endpoint misses nodes needed for p=6.
        let g = Arc::new(Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap());
        let w = WeightVector::new(vec![0.3; 5]);
        let wm = weights_to_matrix(&g, &w).unwrap();
        let l = g.edge_between(2, 3).unwrap();
        let h = k_hop_subgraph(&g, 2, 1).unwrap();
        let err = local_gradient_from_subgraph(&wm, &h, l, 6).unwrap_err();
        assert!(matches!(err, Error::InsufficientRadius(_)));
    }

    #[test]
    fn project_box_examples() {
        let w = WeightVector::new(vec![-1.5, 0.3]);
        assert_eq!(project_box(&w, -1.0, 1.0).as_slice(), &[-1.0, 0.3]);
        let w = WeightVector::new(vec![0.2, -0.9]);
        assert_eq!(project_box(&w, -1.0, 1.0).as_slice(), &[0.2, -0.9]);
        let w = WeightVector::new(vec![2.0, 2.0]);
        assert_eq!(project_box(&w, -1.0, 1.0).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn optimize_single_edge_to_half() {
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        let (w, state) = tm_optimize(
            &g,
            2,
            StepSchedule::default_for(2),
            1e-6,
            200_000,
            &WeightVector::new(vec![0.1]),
        )
        .unwrap();
        assert!((w.get(0) - 0.5).abs() < 1e-4, "w = {}", w.get(0));
        let wm = weights_to_matrix(&g, &w).unwrap();
        assert!(wm.mu().unwrap() < 1e-3);
        assert_eq!(state.stop, StopReason::Converged);
        assert!(state.grad_max <= state.grad_norm);
    }

    #[test]
    fn optimize_k4_reaches_quarter() {
        let g = Arc::new(graph::generate_er(4, 1.0, 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w0 = WeightVector::new((0..6).map(|_| rng.gen_range(0.0..0.5)).collect());
        let (w, _) =
            tm_optimize(&g, 2, StepSchedule::default_for(2), 1e-5, 200_000, &w0).unwrap();
        for l in 0..6 {
            assert!((w.get(l) - 0.25).abs() < 1e-3, "link {l}: {}", w.get(l));
        }
        let wm = weights_to_matrix(&g, &w).unwrap();
        assert!(wm.mu().unwrap() <= 1e-3);
    }

    #[test]
    fn optimize_rejects_bad_input() {
        let disc = Arc::new(Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap());
        let w0 = WeightVector::new(vec![0.1, 0.1]);
        assert!(
            tm_optimize(&disc, 2, StepSchedule::default_for(2), 0.02, 10, &w0).is_err()
        );
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        assert!(tm_optimize(
            &g,
            3,
            StepSchedule::default_for(2),
            0.02,
            10,
            &WeightVector::new(vec![0.1])
        )
        .is_err());
    }

    #[test]
    fn trace_does_not_increase_over_run() {
        for seed in 0..4 {
            let g = random_connected(12, 0.3, seed);
            let w0 = local_degree_weights(&g).unwrap();
            for p in [2usize, 4] {
                let (_, state) = tm_optimize(
                    &g,
                    p,
                    StepSchedule::default_for(p),
                    DEFAULT_GTOL,
                    5_000,
                    &w0,
                )
                .unwrap();
                let first = state.trace.first().unwrap().trace_p;
                let last = state.trace.last().unwrap().trace_p;
                assert!(
                    last <= first + 1e-9,
                    "seed {seed} p={p}: trace went {first} -> {last}"
                );
            }
        }
    }

    #[test]
    fn some_p_up_to_8_gives_convergent_weights() {
        for seed in 0..6 {
            let g = random_connected(9, 0.3, seed + 40);
            let w0 = local_degree_weights(&g).unwrap();
            let mut ok = false;
            for p in [2usize, 4, 6, 8] {
                let (w, _) = tm_optimize(
                    &g,
                    p,
                    StepSchedule::default_for(p),
                    DEFAULT_GTOL,
                    20_000,
                    &w0,
                )
                .unwrap();
                let wm = weights_to_matrix(&g, &w).unwrap();
                if wm.mu().unwrap() < 1.0 {
                    ok = true;
                    break;
                }
            }
            assert!(ok, "no p <= 8 gave a convergent matrix on seed {seed}");
        }
    }

    #[test]
    fn message_accounting_is_p_per_link_per_iteration() {
        let g = random_connected(8, 0.4, 1);
        let w0 = local_degree_weights(&g).unwrap();
        for p in [2usize, 4] {
            let (_, state) = tm_optimize(
                &g,
                p,
                StepSchedule::default_for(p),
                0.0,
                10,
                &w0,
            )
            .unwrap();
            // 11 evaluations (k = 0..=10), p messages per link each.
            assert_eq!(state.msgs_per_link, (p as u64) * 11);
            assert_eq!(state.msgs_total, (p as u64) * 11 * g.edge_count() as u64);
        }
    }
}
