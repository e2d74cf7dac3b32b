//! Safety mechanisms around the optimizer: projecting a possibly
//! non-convergent weight matrix back into the convergent cone (per-node
//! quadratic projection plus min-symmetrization), running the raw and
//! repaired protocols side by side, and detecting misbehaving neighbors
//! during joint consensus-optimization.

use std::sync::Arc;

use crate::consensus::{run_consensus, ErrorTrace};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::schatten::distributed::{
    MessageLog, NeighborBundle, Network, Payload, RoundKind, RoundMessage,
};
use crate::schatten::{tm_optimize, StepSchedule, DEFAULT_GTOL};
use crate::spectral::WeightMatrix;
use crate::weightsel::{local_degree_weights, weights_to_matrix, WeightVector};

pub use crate::schatten::distributed::NodeView;

/// Parameters of the convergence repair.
#[derive(Debug, Clone, Copy)]
pub struct RepairParams {
    /// Strictly positive floor on projected link weights.
    pub delta: f64,
}

impl RepairParams {
    pub fn new(delta: f64, g: &Graph) -> Result<Self> {
        let cap = 1.0 / g.max_degree().max(1) as f64;
        if !(delta > 0.0) || delta >= cap {
            return Err(Error::InvalidArgument(format!(
                "delta must satisfy 0 < delta < 1/max_degree = {cap}, got {delta}"
            )));
        }
        Ok(RepairParams { delta })
    }

    /// Default floor 1/(2n): feasible at every node since degrees are
    /// below n.
    pub fn default_for(g: &Graph) -> Self {
        RepairParams {
            delta: 1.0 / (2.0 * g.node_count() as f64),
        }
    }
}

/// Exact minimizer of
/// r(v) = (v - what)^T (I + 11^T) (v - what)
/// over { v >= delta, 1^T v <= 1 }.
///
/// The KKT conditions collapse to v = max(delta, what - c) for one scalar
/// c, so the solve walks the sorted breakpoints of that piecewise-linear
/// system: first assuming the sum constraint slack, then on its boundary.
pub fn project_node_row(what: &[f64], delta: f64) -> Result<Vec<f64>> {
    let d = what.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if delta * d as f64 > 1.0 + 1e-12 {
        return Err(Error::InfeasibleProjection { delta, degree: d });
    }

    // Sort breakpoints b_t = what_t - delta ascending; entering segment s
    // the first s entries (in this order) are clamped to delta.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        (what[a] - delta)
            .partial_cmp(&(what[b] - delta))
            .expect("finite weights")
    });
    let breaks: Vec<f64> = order.iter().map(|&t| what[t] - delta).collect();

    let value_at = |c: f64| -> Vec<f64> {
        what.iter().map(|&w| (w - c).max(delta)).collect()
    };

    // Branch A: sum constraint slack; solve sum(v(c) - what) = c.
    let mut active_defect = 0.0; // sum over active of (delta - what_t)
    let mut c_a = None;
    for s in 0..=d {
        let candidate = active_defect / (d - s + 1) as f64;
        let lo = if s == 0 { f64::NEG_INFINITY } else { breaks[s - 1] };
        let hi = if s == d { f64::INFINITY } else { breaks[s] };
        if candidate >= lo - 1e-12 && candidate <= hi + 1e-12 {
            c_a = Some(candidate);
            break;
        }
        if s < d {
            active_defect += delta - what[order[s]];
        }
    }
    let c_a = c_a.expect("monotone piecewise-linear system has a root");
    let v = value_at(c_a);
    if v.iter().sum::<f64>() <= 1.0 + 1e-12 {
        return Ok(v);
    }

    // Branch B: sum active; solve sum(v(c)) = 1.
    let mut inactive_sum: f64 = what.iter().sum();
    let mut active = 0usize;
    for s in 0..=d {
        let lo = if s == 0 { f64::NEG_INFINITY } else { breaks[s - 1] };
        let hi = if s == d { f64::INFINITY } else { breaks[s] };
        if s == d {
            // Everything clamped: feasible only when delta d = 1.
            return Ok(vec![delta; d]);
        }
        let inact = (d - active) as f64;
        let candidate = (inactive_sum + active as f64 * delta - 1.0) / inact;
        if candidate >= lo - 1e-12 && candidate <= hi + 1e-12 {
            return Ok(value_at(candidate));
        }
        inactive_sum -= what[order[s]];
        active += 1;
    }
    unreachable!("branch B scans all segments");
}

/// Repair a weight matrix into a convergent one: project every node's
/// incident weights onto { v >= delta, 1^T v <= 1 }, symmetrize each link
/// by taking the smaller of the two projected values, and rebuild the
/// matrix from the resulting link weights.
///
/// All link weights end up in [delta, 1] and, on a connected graph, the
/// result is stochastic, irreducible and aperiodic as soon as any node
/// keeps a positive self-weight; the degenerate bipartite case with every
/// row sum exactly 1 is the only way to stay at mu = 1, so callers that
/// must be certain run `check_convergent` on the output.
pub fn build_convergent(w_hat: &WeightMatrix, delta: f64) -> Result<WeightMatrix> {
    let g = w_hat.graph().clone();
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let mat = w_hat.matrix();
    let mut projected: Vec<Vec<f64>> = Vec::with_capacity(g.node_count());
    for i in 0..g.node_count() {
        let row: Vec<f64> = g.incident(i).iter().map(|&(j, _)| mat[[i, j]]).collect();
        projected.push(project_node_row(&row, delta)?);
    }
    let mut w = vec![0.0; g.edge_count()];
    for (l, &(u, v)) in g.edges().iter().enumerate() {
        let pu = g
            .incident(u)
            .iter()
            .position(|&(t, _)| t == v)
            .expect("incident");
        let pv = g
            .incident(v)
            .iter()
            .position(|&(t, _)| t == u)
            .expect("incident");
        w[l] = projected[u][pu].min(projected[v][pv]);
    }
    weights_to_matrix(&g, &WeightVector::new(w))
}

/// Which detection check a neighbor failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MisbehaviorReason {
    /// The broadcast estimate is not the prescribed weighted update of the
    /// echoed data.
    UpdateMismatch { expected: f64, got: f64 },
    /// The echoed estimate vector misreports what I sent last round.
    EstimateEchoMismatch { expected: f64, got: f64 },
    /// The echoed weight vector misreports our shared link weight.
    WeightEchoMismatch { expected: f64, got: f64 },
}

impl MisbehaviorReason {
    pub fn label(&self) -> &'static str {
        match self {
            MisbehaviorReason::UpdateMismatch { .. } => "update_mismatch",
            MisbehaviorReason::EstimateEchoMismatch { .. } => "estimate_echo_mismatch",
            MisbehaviorReason::WeightEchoMismatch { .. } => "weight_echo_mismatch",
        }
    }
}

/// What node i knows when auditing neighbor j's bundle at round k.
#[derive(Debug, Clone, Copy)]
pub struct DetectionContext {
    /// x_j(k-1): the estimate j broadcast last round.
    pub x_j_prev: f64,
    /// x_i(k-1): my own previous estimate.
    pub x_i_prev: f64,
    /// w_ij(k-1): my record of the shared weight used last round.
    pub w_ij_prev: f64,
    /// My position in j's ascending-neighbor ordering.
    pub my_index: usize,
    /// j's degree; both echoed vectors must have this length.
    pub degree_j: usize,
}

/// Relative comparison tolerance for the detection checks.
pub const DEFAULT_DETECT_EPS: f64 = 1e-9;

fn differs(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() > eps * a.abs().max(b.abs()).max(1.0)
}

/// Audit one neighbor bundle. Returns the first failed check, or None for
/// a bundle consistent with the protocol.
pub fn detect_misbehaving(
    ctx: &DetectionContext,
    bundle: &NeighborBundle,
    eps: f64,
) -> Result<Option<MisbehaviorReason>> {
    if bundle.x_vec.len() != ctx.degree_j || bundle.w_vec.len() != ctx.degree_j {
        return Err(Error::ProtocolFault(format!(
            "bundle vectors have lengths {}/{}, neighbor degree is {}",
            bundle.x_vec.len(),
            bundle.w_vec.len(),
            ctx.degree_j
        )));
    }
    if ctx.my_index >= ctx.degree_j {
        return Err(Error::ProtocolFault(format!(
            "index {} out of range for degree {}",
            ctx.my_index, ctx.degree_j
        )));
    }
    // (i) the broadcast estimate must be the weighted update of the echoes.
    let mut s = 0.0;
    for &wv in &bundle.w_vec {
        s += wv;
    }
    let w_jj = 1.0 - s;
    let mut expected = w_jj * ctx.x_j_prev;
    for t in 0..ctx.degree_j {
        expected += bundle.w_vec[t] * bundle.x_vec[t];
    }
    if differs(bundle.x, expected, eps) {
        return Ok(Some(MisbehaviorReason::UpdateMismatch {
            expected,
            got: bundle.x,
        }));
    }
    // (ii) the echoed estimate for me must be what I actually sent.
    let echoed_x = bundle.x_vec[ctx.my_index];
    if differs(echoed_x, ctx.x_i_prev, eps) {
        return Ok(Some(MisbehaviorReason::EstimateEchoMismatch {
            expected: ctx.x_i_prev,
            got: echoed_x,
        }));
    }
    // (iii) the echoed weight for our link must match my record.
    let echoed_w = bundle.w_vec[ctx.my_index];
    if differs(echoed_w, ctx.w_ij_prev, eps) {
        return Ok(Some(MisbehaviorReason::WeightEchoMismatch {
            expected: ctx.w_ij_prev,
            got: echoed_w,
        }));
    }
    Ok(None)
}

/// Scripted misbehavior for detection runs.
#[derive(Debug, Clone, Copy)]
pub enum Adversary {
    /// Re-broadcasts its previous estimate forever instead of the
    /// prescribed update.
    Stubborn { node: usize },
    /// At `round`, adds `delta` to one entry of the echoed estimate vector
    /// and keeps its broadcast estimate consistent with the forged echo.
    ForgeEstimateEcho {
        node: usize,
        entry: usize,
        delta: f64,
        round: usize,
    },
    /// At `round`, adds `delta` to one entry of the echoed weight vector,
    /// again with a consistent broadcast estimate.
    ForgeWeightEcho {
        node: usize,
        entry: usize,
        delta: f64,
        round: usize,
    },
    /// At `round`, broadcasts an estimate off by `delta` with truthful
    /// echoes.
    WrongEstimate { node: usize, delta: f64, round: usize },
}

impl Adversary {
    pub fn node(&self) -> usize {
        match *self {
            Adversary::Stubborn { node }
            | Adversary::ForgeEstimateEcho { node, .. }
            | Adversary::ForgeWeightEcho { node, .. }
            | Adversary::WrongEstimate { node, .. } => node,
        }
    }
}

/// One declaration during a detection run.
#[derive(Debug, Clone)]
pub struct DetectionEvent {
    pub round: usize,
    pub detector: usize,
    pub declared: usize,
    pub reason: MisbehaviorReason,
}

/// Outcome of a detection-enabled joint consensus-optimization run.
pub struct DetectionRun {
    pub x: Vec<f64>,
    pub trace: ErrorTrace,
    pub events: Vec<DetectionEvent>,
    pub log: MessageLog,
    /// Slot after which every adversary link was cut, if that happened.
    pub fully_isolated_at: Option<usize>,
}

/// Joint consensus-optimization with the estimate-echo bundles and the
/// misbehaving-neighbor checks. Declarations are public (no collusion), so
/// once any neighbor declares a node, every node zeroes its links to it in
/// the following slots, folding the removed weight into self-weights.
pub fn run_jco_with_detection(
    g: &Arc<Graph>,
    p: usize,
    w0: &WeightVector,
    x0: &[f64],
    threshold: f64,
    max_slots: usize,
    adversaries: &[Adversary],
    eps: f64,
) -> Result<DetectionRun> {
    if p != 2 && p != 4 {
        return Err(Error::InvalidPower {
            p,
            reason: "joint consensus-optimization runs on p in {2, 4}".into(),
        });
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    for adv in adversaries {
        if adv.node() >= g.node_count() {
            return Err(Error::InvalidNode(adv.node()));
        }
    }
    let sched = StepSchedule::jco(p);
    let mut net = Network::new(g.clone(), w0, x0)?;
    let n = g.node_count();
    let avg = x0.iter().sum::<f64>() / n as f64;
    let denom: f64 = x0.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>().sqrt();
    let mut errors = Vec::new();
    let mut convergence_time = None;
    let mut events: Vec<DetectionEvent> = Vec::new();
    let mut fully_isolated_at = None;
    let adversary_nodes: std::collections::BTreeSet<usize> =
        adversaries.iter().map(Adversary::node).collect();

    let mut k = 0usize;
    loop {
        let x_now = net.estimates();
        let e = if denom == 0.0 {
            0.0
        } else {
            x_now
                .iter()
                .map(|v| (v - avg) * (v - avg))
                .sum::<f64>()
                .sqrt()
                / denom
        };
        errors.push(e);
        if e < threshold {
            convergence_time = Some(k);
            break;
        }
        if k >= max_slots {
            break;
        }

        // Bundle construction: the estimate for this slot plus echoes of
        // last slot's inputs. Adversaries corrupt theirs.
        let mut bundles: Vec<NeighborBundle> = (0..n)
            .map(|i| {
                let nv = net.node(i);
                NeighborBundle {
                    x: nv.x,
                    x_vec: nv.rx_x.clone(),
                    w_vec: nv.w_prev.clone(),
                }
            })
            .collect();
        for adv in adversaries {
            match *adv {
                Adversary::Stubborn { .. } => {} // handled at update time
                Adversary::ForgeEstimateEcho {
                    node,
                    entry,
                    delta,
                    round,
                } if round == k => {
                    let b = &mut bundles[node];
                    if entry < b.x_vec.len() {
                        b.x_vec[entry] += delta;
                        // Broadcast stays consistent with the forged echo.
                        let mut s = 0.0;
                        for &wv in &b.w_vec {
                            s += wv;
                        }
                        let x_prev = net.node(node).x_prev;
                        let mut c = (1.0 - s) * x_prev;
                        for t in 0..b.w_vec.len() {
                            c += b.w_vec[t] * b.x_vec[t];
                        }
                        b.x = c;
                    }
                }
                Adversary::ForgeWeightEcho {
                    node,
                    entry,
                    delta,
                    round,
                } if round == k => {
                    let b = &mut bundles[node];
                    if entry < b.w_vec.len() {
                        b.w_vec[entry] += delta;
                        let mut s = 0.0;
                        for &wv in &b.w_vec {
                            s += wv;
                        }
                        let x_prev = net.node(node).x_prev;
                        let mut c = (1.0 - s) * x_prev;
                        for t in 0..b.w_vec.len() {
                            c += b.w_vec[t] * b.x_vec[t];
                        }
                        b.x = c;
                    }
                }
                Adversary::WrongEstimate { node, delta, round } if round == k => {
                    bundles[node].x += delta;
                }
                _ => {}
            }
        }

        // Broadcast and audit.
        net.log_bundle_round(&bundles);
        let mut declared_now: Vec<DetectionEvent> = Vec::new();
        if k >= 1 {
            for i in 0..n {
                if adversary_nodes.contains(&i) {
                    continue; // only honest nodes audit
                }
                for (idx, &(j, _)) in g.incident(i).iter().enumerate() {
                    if net.node(i).blacklist.contains(&j) {
                        continue;
                    }
                    let Some(prev) = net.node(i).last_rx.get(&j).cloned() else {
                        continue;
                    };
                    let my_index = g
                        .incident(j)
                        .iter()
                        .position(|&(t, _)| t == i)
                        .expect("mutual adjacency");
                    let ctx = DetectionContext {
                        x_j_prev: prev.x,
                        x_i_prev: net.node(i).x_prev,
                        w_ij_prev: net.node(i).w_prev[idx],
                        my_index,
                        degree_j: g.degree(j),
                    };
                    if let Some(reason) = detect_misbehaving(&ctx, &bundles[j], eps)? {
                        declared_now.push(DetectionEvent {
                            round: k,
                            detector: i,
                            declared: j,
                            reason,
                        });
                    }
                }
            }
        }

        // Gradient update then averaging with this slot's broadcasts.
        net.gradient_round(p, sched.gamma(k), None)?;
        net.averaging_round_from_bundles(&bundles);

        // Stubborn nodes refuse the update.
        for adv in adversaries {
            if let Adversary::Stubborn { node } = *adv {
                let nv = net.node_mut(node);
                nv.x = nv.x_prev;
            }
        }
        // Forgers adopt their broadcast value to stay self-consistent.
        for adv in adversaries {
            let (node, round) = match *adv {
                Adversary::ForgeEstimateEcho { node, round, .. }
                | Adversary::ForgeWeightEcho { node, round, .. }
                | Adversary::WrongEstimate { node, round, .. } => (node, round),
                Adversary::Stubborn { .. } => continue,
            };
            if round == k {
                net.node_mut(node).x = bundles[node].x;
            }
        }

        // Public declarations take effect from the next slot.
        if !declared_now.is_empty() {
            let mut culprits: Vec<usize> =
                declared_now.iter().map(|ev| ev.declared).collect();
            culprits.sort_unstable();
            culprits.dedup();
            for j in culprits {
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    if let Some(idx) = g.incident(i).iter().position(|&(t, _)| t == j) {
                        let nv = net.node_mut(i);
                        if nv.blacklist.insert(j) {
                            nv.w[idx] = 0.0;
                        }
                    }
                }
            }
            events.extend(declared_now);
        }
        if fully_isolated_at.is_none() && !adversary_nodes.is_empty() {
            let all_cut = adversary_nodes.iter().all(|&j| {
                g.neighbors(j)
                    .all(|i| net.node(i).blacklist.contains(&j))
            });
            if all_cut {
                fully_isolated_at = Some(k);
            }
        }

        // Retain this slot's bundles for the next audit.
        for i in 0..n {
            let mut rx = std::collections::BTreeMap::new();
            for &(j, _) in g.incident(i) {
                rx.insert(j, bundles[j].clone());
            }
            net.node_mut(i).last_rx = rx;
        }
        k += 1;
    }

    let x = net.estimates();
    Ok(DetectionRun {
        x,
        trace: ErrorTrace {
            errors,
            threshold,
            convergence_time,
        },
        events,
        log: net.into_log(),
        fully_isolated_at,
    })
}

/// Which branch the guard returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardBranch {
    /// The optimizer output was used directly.
    Direct,
    /// The repaired matrix's estimates were returned.
    Repaired,
}

/// Outcome of the guarded optimize-then-average procedure.
pub struct GuardOutcome {
    pub weights: WeightVector,
    pub all_weights_positive: bool,
    pub repaired_weights: Option<WeightVector>,
    pub divergence_flagged: bool,
    pub chosen: GuardBranch,
    pub estimate: Vec<f64>,
}

/// Optimize weights for the graph, then run consensus. When any produced
/// link or self weight fails to be strictly positive, the repaired matrix
/// runs in parallel and the raw branch's estimates are kept only if the
/// two agree to within 10x the consensus threshold.
pub fn parallel_consensus_guard(
    g: &Arc<Graph>,
    p: usize,
    delta: f64,
    x0: &[f64],
    threshold: f64,
    max_iter: usize,
) -> Result<GuardOutcome> {
    let w0 = local_degree_weights(g)?;
    let (w_p, _) = tm_optimize(
        g,
        p,
        StepSchedule::default_for(p),
        DEFAULT_GTOL,
        200_000,
        &w0,
    )?;
    let wm = weights_to_matrix(g, &w_p)?;
    let mut positive = w_p.as_slice().iter().all(|&x| x > 0.0);
    for i in 0..g.node_count() {
        positive &= wm.matrix()[[i, i]] > 0.0;
    }
    if positive {
        let (x, _) = run_consensus(&wm, x0, threshold, max_iter);
        return Ok(GuardOutcome {
            weights: w_p,
            all_weights_positive: true,
            repaired_weights: None,
            divergence_flagged: false,
            chosen: GuardBranch::Direct,
            estimate: x,
        });
    }

    let repaired = build_convergent(&wm, delta)?;
    let repaired_w = {
        let mat = repaired.matrix();
        let w: Vec<f64> = g.edges().iter().map(|&(u, v)| mat[[u, v]]).collect();
        WeightVector::new(w)
    };
    let (_, conv_trace) = run_consensus(&repaired, x0, threshold, max_iter);
    let steps = conv_trace.convergence_time.unwrap_or(max_iter);
    // Drive both branches for the same number of iterations and compare.
    let (x_conv, _) = run_consensus(&repaired, x0, 0.0, steps);
    let (x_raw, _) = run_consensus(&wm, x0, 0.0, steps);
    let avg = x0.iter().sum::<f64>() / x0.len() as f64;
    let denom: f64 = x0.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>().sqrt();
    let gap: f64 = x_raw
        .iter()
        .zip(&x_conv)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let agree = denom == 0.0 || gap / denom <= 10.0 * threshold;
    Ok(GuardOutcome {
        weights: w_p,
        all_weights_positive: false,
        repaired_weights: Some(repaired_w),
        divergence_flagged: !agree,
        chosen: if agree {
            GuardBranch::Direct
        } else {
            GuardBranch::Repaired
        },
        estimate: if agree { x_raw } else { x_conv },
    })
}

impl Network {
    /// Log one bundle broadcast per directed link (detection mode).
    pub(crate) fn log_bundle_round(&mut self, bundles: &[NeighborBundle]) {
        let round = self.round();
        let g = self.graph().clone();
        self.log_begin(round, RoundKind::DetectionBundles);
        for i in 0..g.node_count() {
            for &(j, _) in g.incident(i) {
                self.log_message(RoundMessage {
                    round,
                    from: i,
                    to: j,
                    payload: Payload::Bundle {
                        x: bundles[i].x,
                        x_vec: bundles[i].x_vec.clone(),
                        w_vec: bundles[i].w_vec.clone(),
                    },
                });
            }
        }
    }

    /// Averaging that consumes broadcast estimates (which may be forged)
    /// rather than the true node states.
    pub(crate) fn averaging_round_from_bundles(&mut self, bundles: &[NeighborBundle]) {
        let g = self.graph().clone();
        for i in 0..g.node_count() {
            let nv = self.node(i);
            let mut acc = nv.self_weight() * nv.x;
            for (idx, &(j, _)) in g.incident(i).iter().enumerate() {
                acc += nv.w[idx] * bundles[j].x;
            }
            let rx: Vec<f64> = g.incident(i).iter().map(|&(j, _)| bundles[j].x).collect();
            let nv = self.node_mut(i);
            nv.x_prev = nv.x;
            nv.x = acc;
            nv.w_prev = nv.w.clone();
            nv.rx_x = rx;
        }
        self.advance_round();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;
    use crate::spectral::{check_convergent, spectral_report};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        // Interior point is a fixed point.
        let v = project_node_row(&[0.4], 0.01).unwrap();
        assert!((v[0] - 0.4).abs() < 1e-15);
        // Clamp to the floor.
        let v = project_node_row(&[-0.2], 0.01).unwrap();
        assert!((v[0] - 0.01).abs() < 1e-15);
        // Infeasible floor.
        assert!(matches!(
            project_node_row(&[0.1, 0.1, 0.1], 0.4),
            Err(Error::InfeasibleProjection { .. })
        ));
    }

    fn grid_oracle(what: &[f64], delta: f64) -> Vec<f64> {
        // Coarse-to-fine grid minimizer of r over the feasible set; each
        // stage enumerates a full lattice around the incumbent, then
        // shrinks the window to a few old spacings.
        let d = what.len();
        let r = |v: &[f64]| -> f64 {
            let diffs: Vec<f64> = v.iter().zip(what).map(|(a, b)| a - b).collect();
            let s: f64 = diffs.iter().sum();
            diffs.iter().map(|x| x * x).sum::<f64>() + s * s
        };
        let hi = what.iter().fold(1.0_f64, |acc, &w| acc.max(w)).max(delta);
        let mut center = vec![(delta + hi) / 2.0; d];
        let mut half = (hi - delta) / 2.0;
        let mut best = vec![delta; d];
        let mut best_val = f64::INFINITY;
        for _stage in 0..6 {
            let steps = 24usize;
            let lo_s: Vec<f64> = center.iter().map(|c| (c - half).max(delta)).collect();
            let hi_s: Vec<f64> = center.iter().map(|c| c + half).collect();
            let total = (steps + 1).pow(d as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut v = vec![0.0; d];
                for t in 0..d {
                    let idx = rem % (steps + 1);
                    rem /= steps + 1;
                    v[t] = lo_s[t] + (hi_s[t] - lo_s[t]) * idx as f64 / steps as f64;
                }
                if v.iter().sum::<f64>() <= 1.0 {
                    let val = r(&v);
                    if val < best_val {
                        best_val = val;
                        best = v;
                    }
                }
            }
            center = best.clone();
            half = (half * 2.0 / steps as f64) * 3.0;
        }
        best
    }

    #[test]
    fn projection_matches_grid_oracle() {
        let cases: Vec<Vec<f64>> = vec![
            vec![0.9, 0.8],
            vec![0.5, 0.7, 0.4],
            vec![-0.3, 0.9, 0.6],
            vec![0.2, 0.1],
            vec![1.2, -0.5, 0.4],
        ];
        for what in cases {
            let exact = project_node_row(&what, 0.01).unwrap();
            let grid = grid_oracle(&what, 0.01);
            for t in 0..what.len() {
                assert!(
                    (exact[t] - grid[t]).abs() < 1e-4,
                    "{what:?}: exact {exact:?} vs grid {grid:?}"
                );
            }
        }
    }

    #[test]
    fn projection_feasible_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.gen_range(1..7);
            let delta = 0.02;
            let what: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let v = project_node_row(&what, delta).unwrap();
            assert!(v.iter().all(|&x| x >= delta - 1e-15));
            assert!(v.iter().sum::<f64>() <= 1.0 + 1e-12);
            let again = project_node_row(&v, delta).unwrap();
            for t in 0..d {
                assert!((v[t] - again[t]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn repair_is_identity_on_good_matrices() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(8, 0.4, s), 1, 100).unwrap(),
        );
        let w = local_degree_weights(&g).unwrap();
        let wm = weights_to_matrix(&g, &w).unwrap();
        let repaired = build_convergent(&wm, 0.01).unwrap();
        for (l, &(u, v)) in g.edges().iter().enumerate() {
            assert!(
                (repaired.matrix()[[u, v]] - w.get(l)).abs() < 1e-12,
                "link {l} changed"
            );
        }
        assert!(check_convergent(&repaired).unwrap().passed());
    }

    #[test]
    fn repair_fixes_random_bad_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..100 {
            let g = Arc::new(
                graph::generate_connected(|s| graph::generate_er(8, 0.35, s), seed, 100)
                    .unwrap(),
            );
            let m = g.edge_count();
            let bad: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wm = weights_to_matrix(&g, &WeightVector::new(bad)).unwrap();
            let delta = RepairParams::default_for(&g).delta;
            let repaired = build_convergent(&wm, delta).unwrap();
            let report = spectral_report(&repaired).unwrap();
            assert!(report.mu < 1.0, "seed {seed}: mu = {}", report.mu);
            for &(u, v) in g.edges() {
                let w = repaired.matrix()[[u, v]];
                assert!((delta..=1.0).contains(&w), "weight {w} outside [delta, 1]");
            }
        }
    }

    #[test]
    fn detect_passes_honest_bundle() {
        let ctx = DetectionContext {
            x_j_prev: 2.0,
            x_i_prev: 3.0,
            w_ij_prev: 0.25,
            my_index: 0,
            degree_j: 2,
        };
        // j's update: w_jj = 1 - 0.25 - 0.25 = 0.5
        let bundle = NeighborBundle {
            x: 0.5 * 2.0 + 0.25 * 3.0 + 0.25 * 4.0,
            x_vec: vec![3.0, 4.0],
            w_vec: vec![0.25, 0.25],
        };
        assert!(detect_misbehaving(&ctx, &bundle, 1e-9).unwrap().is_none());
    }

    #[test]
    fn detect_flags_each_check() {
        let ctx = DetectionContext {
            x_j_prev: 2.0,
            x_i_prev: 3.0,
            w_ij_prev: 0.25,
            my_index: 0,
            degree_j: 2,
        };
        let honest_x = 0.5 * 2.0 + 0.25 * 3.0 + 0.25 * 4.0;
        let stubborn = NeighborBundle {
            x: 2.0,
            x_vec: vec![3.0, 4.0],
            w_vec: vec![0.25, 0.25],
        };
        assert!(matches!(
            detect_misbehaving(&ctx, &stubborn, 1e-9).unwrap(),
            Some(MisbehaviorReason::UpdateMismatch { .. })
        ));
        // Forged echo of my estimate, broadcast kept consistent.
        let forged = NeighborBundle {
            x: 0.5 * 2.0 + 0.25 * 3.5 + 0.25 * 4.0,
            x_vec: vec![3.5, 4.0],
            w_vec: vec![0.25, 0.25],
        };
        assert!(matches!(
            detect_misbehaving(&ctx, &forged, 1e-9).unwrap(),
            Some(MisbehaviorReason::EstimateEchoMismatch { .. })
        ));
        // Forged shared-weight echo.
        let forged_w = NeighborBundle {
            x: (1.0 - 0.3 - 0.25) * 2.0 + 0.3 * 3.0 + 0.25 * 4.0,
            x_vec: vec![3.0, 4.0],
            w_vec: vec![0.3, 0.25],
        };
        assert!(matches!(
            detect_misbehaving(&ctx, &forged_w, 1e-9).unwrap(),
            Some(MisbehaviorReason::WeightEchoMismatch { .. })
        ));
        // Malformed bundle.
        let short = NeighborBundle {
            x: honest_x,
            x_vec: vec![3.0],
            w_vec: vec![0.25, 0.25],
        };
        assert!(detect_misbehaving(&ctx, &short, 1e-9).is_err());
    }

    fn random_x0(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..100.0)).collect()
    }

    #[test]
    fn honest_runs_have_zero_false_positives() {
        for seed in 0..10 {
            let g = Arc::new(
                graph::generate_connected(|s| graph::generate_er(10, 0.35, s), seed, 100)
                    .unwrap(),
            );
            let w0 = local_degree_weights(&g).unwrap();
            let x0 = random_x0(10, seed + 500);
            let run = run_jco_with_detection(
                &g,
                4,
                &w0,
                &x0,
                0.0,
                100,
                &[],
                DEFAULT_DETECT_EPS,
            )
            .unwrap();
            assert!(run.events.is_empty(), "seed {seed}: {:?}", run.events[0].reason);
        }
    }

    #[test]
    fn stubborn_node_declared_by_all_neighbors_at_first_deviation() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(8, 0.5, s), 3, 100).unwrap(),
        );
        let w0 = local_degree_weights(&g).unwrap();
        let x0 = random_x0(8, 11);
        let culprit = 2;
        let run = run_jco_with_detection(
            &g,
            2,
            &w0,
            &x0,
            0.0,
            50,
            &[Adversary::Stubborn { node: culprit }],
            DEFAULT_DETECT_EPS,
        )
        .unwrap();
        let first_round: Vec<&DetectionEvent> =
            run.events.iter().filter(|ev| ev.round == 1).collect();
        let detectors: std::collections::BTreeSet<usize> =
            first_round.iter().map(|ev| ev.detector).collect();
        let neighbors: std::collections::BTreeSet<usize> = g.neighbors(culprit).collect();
        assert_eq!(detectors, neighbors, "all neighbors declare at round 1");
        assert!(first_round
            .iter()
            .all(|ev| matches!(ev.reason, MisbehaviorReason::UpdateMismatch { .. })));
    }

    #[test]
    fn forged_echo_declared_by_concerned_neighbor() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(8, 0.5, s), 4, 100).unwrap(),
        );
        let w0 = local_degree_weights(&g).unwrap();
        let x0 = random_x0(8, 13);
        let culprit = 1;
        let entry = 0;
        let victim = g.neighbors(culprit).next().unwrap();
        let run = run_jco_with_detection(
            &g,
            4,
            &w0,
            &x0,
            0.0,
            50,
            &[Adversary::ForgeEstimateEcho {
                node: culprit,
                entry,
                delta: 0.75,
                round: 3,
            }],
            DEFAULT_DETECT_EPS,
        )
        .unwrap();
        let hits: Vec<&DetectionEvent> = run
            .events
            .iter()
            .filter(|ev| ev.declared == culprit && ev.round == 3)
            .collect();
        assert!(
            hits.iter().any(|ev| ev.detector == victim
                && matches!(ev.reason, MisbehaviorReason::EstimateEchoMismatch { .. })),
            "victim {victim} should flag the forged echo: {hits:?}"
        );
    }

    #[test]
    fn forged_weight_echo_declared_within_round() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(8, 0.5, s), 6, 100).unwrap(),
        );
        let w0 = local_degree_weights(&g).unwrap();
        let x0 = random_x0(8, 17);
        let culprit = 0;
        let victim = g.neighbors(culprit).next().unwrap();
        let run = run_jco_with_detection(
            &g,
            2,
            &w0,
            &x0,
            0.0,
            50,
            &[Adversary::ForgeWeightEcho {
                node: culprit,
                entry: 0,
                delta: 0.4,
                round: 2,
            }],
            DEFAULT_DETECT_EPS,
        )
        .unwrap();
        assert!(run
            .events
            .iter()
            .any(|ev| ev.round == 2
                && ev.detector == victim
                && ev.declared == culprit
                && matches!(ev.reason, MisbehaviorReason::WeightEchoMismatch { .. })));
    }

    #[test]
    fn honest_subgraph_reaches_consensus_after_cut() {
        // Stubborn hub gets cut; the others still agree on the average of
        // their own post-cut estimates.
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(9, 0.5, s), 8, 100).unwrap(),
        );
        let w0 = local_degree_weights(&g).unwrap();
        let x0 = random_x0(9, 23);
        let culprit = 4;
        let run = run_jco_with_detection(
            &g,
            2,
            &w0,
            &x0,
            0.0,
            400,
            &[Adversary::Stubborn { node: culprit }],
            DEFAULT_DETECT_EPS,
        )
        .unwrap();
        assert!(run.fully_isolated_at.is_some());
        let honest: Vec<usize> = (0..9).filter(|&i| i != culprit).collect();
        let finals: Vec<f64> = honest.iter().map(|&i| run.x[i]).collect();
        let mean: f64 = finals.iter().sum::<f64>() / finals.len() as f64;
        for v in &finals {
            assert!((v - mean).abs() < 1e-6, "spread too wide: {finals:?}");
        }
    }

    #[test]
    fn guard_single_branch_on_k4() {
        let g = Arc::new(graph::generate_er(4, 1.0, 0).unwrap());
        let x0 = random_x0(4, 31);
        let avg = x0.iter().sum::<f64>() / 4.0;
        let out = parallel_consensus_guard(&g, 2, 0.05, &x0, 0.001, 100_000).unwrap();
        assert!(out.all_weights_positive);
        assert_eq!(out.chosen, GuardBranch::Direct);
        assert!(!out.divergence_flagged);
        for v in &out.estimate {
            assert!((v - avg).abs() < 0.05);
        }
    }
}
