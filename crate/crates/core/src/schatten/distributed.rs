//! Message-level synchronous simulation of the distributed weight
//! optimizer: per-node views, typed round messages, exact message
//! accounting, and gradient rounds for p = 2, p = 4 and the general-p
//! relay variant.
//!
//! Every quantity a node computes here reproduces, bit for bit, the entry
//! of the dense matrix power the centralized optimizer reads: node-local
//! sums visit the same nonzero terms in the same ascending order, and
//! skipped terms are exact zeros.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::schatten::{
    gradient_from_entries, update_weight, OptimizerState, RecordOptions, StepSchedule,
    StopReason, StopRule, TraceRow,
};
use crate::weightsel::WeightVector;

/// What a single message carries.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Sender's self-weight (p = 2 protocol).
    SelfWeight(f64),
    /// Sender's incident link weights, ascending-neighbor order
    /// (p = 4, step 1). At most Delta values.
    WeightVector(Vec<f64>),
    /// (W^3)_{jj} of the sender (p = 4, step 2).
    PowerDiagonal(f64),
    /// Relay of known weight vectors for the general even-p protocol:
    /// (origin node, origin's incident weights).
    WeightRelay(Vec<(usize, Vec<f64>)>),
    /// Sender's current estimate (averaging step).
    Estimate(f64),
    /// Estimate plus echo of what the sender used last round
    /// (detection-enabled averaging).
    Bundle {
        x: f64,
        x_vec: Vec<f64>,
        w_vec: Vec<f64>,
    },
}

impl Payload {
    /// Number of real values carried.
    pub fn scalars(&self) -> u64 {
        match self {
            Payload::SelfWeight(_) | Payload::PowerDiagonal(_) | Payload::Estimate(_) => 1,
            Payload::WeightVector(v) => v.len() as u64,
            Payload::WeightRelay(items) => {
                items.iter().map(|(_, v)| v.len() as u64).sum()
            }
            Payload::Bundle { x_vec, w_vec, .. } => 1 + x_vec.len() as u64 + w_vec.len() as u64,
        }
    }
}

/// One payload over one directed link in one round.
#[derive(Debug, Clone)]
pub struct RoundMessage {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

/// What kind of round produced a batch of messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundKind {
    /// Gradient exchange; `relay` marks the general-p flooding variant
    /// rather than the specialized p in {2, 4} protocols.
    Gradient { p: usize, relay: bool },
    Averaging,
    DetectionBundles,
}

/// Per-round aggregate counts.
#[derive(Debug, Clone, Copy)]
pub struct RoundStats {
    pub round: usize,
    pub kind: RoundKind,
    pub messages: u64,
    pub scalars: u64,
}

/// Message accounting: one message = one payload over one directed link in
/// one round.
#[derive(Debug, Clone)]
pub struct MessageLog {
    /// Cumulative messages per directed link: edge l stored as (u, v) with
    /// u < v occupies slots 2l (u -> v) and 2l + 1 (v -> u).
    pub per_directed_link: Vec<u64>,
    pub total_messages: u64,
    pub total_scalars: u64,
    pub rounds: Vec<RoundStats>,
    /// Full message capture, enabled for protocol-level tests.
    pub detail: Option<Vec<RoundMessage>>,
}

impl MessageLog {
    fn new(m: usize, detailed: bool) -> Self {
        MessageLog {
            per_directed_link: vec![0; 2 * m],
            total_messages: 0,
            total_scalars: 0,
            rounds: Vec::new(),
            detail: detailed.then(Vec::new),
        }
    }

    fn begin_round(&mut self, round: usize, kind: RoundKind) {
        self.rounds.push(RoundStats {
            round,
            kind,
            messages: 0,
            scalars: 0,
        });
    }

    fn log(&mut self, g: &Graph, msg: RoundMessage) {
        let l = g
            .edge_between(msg.from, msg.to)
            .expect("messages travel along edges");
        let (u, _) = g.edge(l).expect("valid edge");
        let slot = 2 * l + usize::from(msg.from != u);
        self.per_directed_link[slot] += 1;
        let scalars = msg.payload.scalars();
        self.total_messages += 1;
        self.total_scalars += scalars;
        let stats = self.rounds.last_mut().expect("begin_round first");
        stats.messages += 1;
        stats.scalars += scalars;
        if let Some(detail) = self.detail.as_mut() {
            detail.push(msg);
        }
    }
}

/// Estimate-and-echo bundle retained per neighbor for the detection checks.
#[derive(Debug, Clone)]
pub struct NeighborBundle {
    pub x: f64,
    pub x_vec: Vec<f64>,
    pub w_vec: Vec<f64>,
}

/// Local state of one simulated node.
#[derive(Debug, Clone)]
pub struct NodeView {
    pub id: usize,
    /// Current estimate x_i(k).
    pub x: f64,
    /// Previous estimate x_i(k-1).
    pub x_prev: f64,
    /// Incident link weights, aligned with the graph's ascending-neighbor
    /// incident order.
    pub w: Vec<f64>,
    /// Weights used in the last averaging step.
    pub w_prev: Vec<f64>,
    /// Estimates received from neighbors in the last averaging round,
    /// aligned with the incident order.
    pub rx_x: Vec<f64>,
    /// Previous round's bundle per neighbor (detection mode).
    pub last_rx: BTreeMap<usize, NeighborBundle>,
    /// Neighbors declared misbehaving; their links carry weight zero from
    /// the following slot on.
    pub blacklist: BTreeSet<usize>,
}

impl NodeView {
    /// Self-weight 1 - sum of incident weights, ascending fold.
    pub fn self_weight(&self) -> f64 {
        let mut s = 0.0;
        for &wl in &self.w {
            s += wl;
        }
        1.0 - s
    }
}

/// Synchronous network simulation over per-node views.
#[derive(Debug)]
pub struct Network {
    g: Arc<Graph>,
    nodes: Vec<NodeView>,
    pub log: MessageLog,
    round: usize,
}

impl Network {
    pub fn new(g: Arc<Graph>, w0: &WeightVector, x0: &[f64]) -> Result<Self> {
        Self::with_logging(g, w0, x0, false)
    }

    pub fn with_logging(
        g: Arc<Graph>,
        w0: &WeightVector,
        x0: &[f64],
        detailed: bool,
    ) -> Result<Self> {
        if w0.len() != g.edge_count() {
            return Err(Error::WeightLengthMismatch {
                got: w0.len(),
                expected: g.edge_count(),
            });
        }
        if x0.len() != g.node_count() {
            return Err(Error::InvalidArgument(format!(
                "initial state has length {}, graph has {} nodes",
                x0.len(),
                g.node_count()
            )));
        }
        let nodes = (0..g.node_count())
            .map(|i| {
                let w: Vec<f64> = g.incident(i).iter().map(|&(_, l)| w0.get(l)).collect();
                NodeView {
                    id: i,
                    x: x0[i],
                    x_prev: x0[i],
                    w: w.clone(),
                    w_prev: w,
                    rx_x: vec![0.0; g.degree(i)],
                    last_rx: BTreeMap::new(),
                    blacklist: BTreeSet::new(),
                }
            })
            .collect();
        let m = g.edge_count();
        Ok(Network {
            g,
            nodes,
            log: MessageLog::new(m, detailed),
            round: 0,
        })
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.g
    }

    pub fn node(&self, i: usize) -> &NodeView {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut NodeView {
        &mut self.nodes[i]
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.nodes.iter().map(|nv| nv.x).collect()
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }

    pub(crate) fn log_begin(&mut self, round: usize, kind: RoundKind) {
        self.log.begin_round(round, kind);
    }

    pub(crate) fn log_message(&mut self, msg: RoundMessage) {
        let g = self.g.clone();
        self.log.log(&g, msg);
    }

    pub(crate) fn advance_round(&mut self) {
        self.round += 1;
    }

    fn severed(&self, u: usize, v: usize) -> bool {
        self.nodes[u].blacklist.contains(&v) || self.nodes[v].blacklist.contains(&u)
    }

    /// Current per-edge weights, taken from the smaller endpoint's copy
    /// after checking that both copies agree exactly.
    pub fn weights(&self) -> Result<WeightVector> {
        self.verify_weight_symmetry()?;
        let mut w = vec![0.0; self.g.edge_count()];
        for (l, &(u, _)) in self.g.edges().iter().enumerate() {
            let pos = self.incident_pos(u, l);
            w[l] = self.nodes[u].w[pos];
        }
        Ok(WeightVector::new(w))
    }

    fn incident_pos(&self, i: usize, l: usize) -> usize {
        self.g
            .incident(i)
            .iter()
            .position(|&(_, el)| el == l)
            .expect("edge incident to node")
    }

    /// Shared link weights must agree bitwise between the two endpoint
    /// copies; edges severed by a blacklist on either side are exempt.
    pub fn verify_weight_symmetry(&self) -> Result<()> {
        for (l, &(u, v)) in self.g.edges().iter().enumerate() {
            if self.nodes[u].blacklist.contains(&v) || self.nodes[v].blacklist.contains(&u) {
                continue;
            }
            let wu = self.nodes[u].w[self.incident_pos(u, l)];
            let wv = self.nodes[v].w[self.incident_pos(v, l)];
            if wu != wv {
                return Err(Error::ProtocolFault(format!(
                    "link ({u}, {v}) weight differs between endpoints: {wu} vs {wv}"
                )));
            }
        }
        Ok(())
    }

    /// One synchronous gradient round: exchange per the p-specific
    /// protocol, evaluate every edge gradient from strictly local data,
    /// then (unless the local stop rule fires everywhere) apply the
    /// projected update with step `gamma`.
    pub fn gradient_round(
        &mut self,
        p: usize,
        gamma: f64,
        gtol: Option<f64>,
    ) -> Result<GradientRoundOutcome> {
        if p < 2 || p % 2 != 0 {
            return Err(Error::InvalidPower {
                p,
                reason: "distributed protocol needs an even p >= 2".into(),
            });
        }
        self.verify_weight_symmetry()?;
        let grads = match p {
            2 => self.gradient_exchange_p2()?,
            4 => self.gradient_exchange_p4()?,
            _ => self.gradient_exchange_relay(p)?,
        };

        let mut sumsq = 0.0;
        let mut gmax = 0.0_f64;
        for (l, &gl) in grads.iter().enumerate() {
            if !gl.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of link {l}"),
                    k: self.round,
                });
            }
            sumsq += gl * gl;
            gmax = gmax.max(gl.abs());
        }
        // Every node checks max |g_l| over its incident links; the network
        // stops when all of them are below tolerance, i.e. when the global
        // max is.
        let stopped = matches!(gtol, Some(t) if gmax <= t);
        if !stopped {
            if !gamma.is_finite() {
                return Err(Error::NonFinite {
                    what: "step size".into(),
                    k: self.round,
                });
            }
            for (l, &(u, v)) in self.g.edges().iter().enumerate() {
                if self.severed(u, v) {
                    continue;
                }
                let next = {
                    let pos = self.incident_pos(u, l);
                    update_weight(self.nodes[u].w[pos], gamma, grads[l])
                };
                let pu = self.incident_pos(u, l);
                self.nodes[u].w[pu] = next;
                let pv = self.incident_pos(v, l);
                self.nodes[v].w[pv] = next;
            }
        }
        self.round += 1;
        Ok(GradientRoundOutcome {
            gradients: grads,
            grad_norm: sumsq.sqrt(),
            grad_max: gmax,
            stopped,
        })
    }

    /// p = 2: each node broadcasts its self-weight (one scalar per
    /// directed link); g_l needs only the two self-weights and the link
    /// weight itself.
    fn gradient_exchange_p2(&mut self) -> Result<Vec<f64>> {
        let round = self.round;
        self.log.begin_round(round, RoundKind::Gradient { p: 2, relay: false });
        let selfw: Vec<f64> = self.nodes.iter().map(NodeView::self_weight).collect();
        for i in 0..self.nodes.len() {
            for &(j, _) in self.g.incident(i) {
                let g = self.g.clone();
                self.log.log(
                    &g,
                    RoundMessage {
                        round,
                        from: i,
                        to: j,
                        payload: Payload::SelfWeight(selfw[i]),
                    },
                );
            }
        }
        let mut grads = vec![0.0; self.g.edge_count()];
        for (l, &(u, v)) in self.g.edges().iter().enumerate() {
            if self.severed(u, v) {
                continue;
            }
            let wl = self.nodes[u].w[self.incident_pos(u, l)];
            grads[l] = gradient_from_entries(2, wl, wl, selfw[u], selfw[v]);
        }
        Ok(grads)
    }

    /// p = 4: step 1 exchanges incident weight vectors, step 2 exchanges
    /// the locally computed (W^3) diagonal; two messages per directed link.
    fn gradient_exchange_p4(&mut self) -> Result<Vec<f64>> {
        let round = self.round;
        self.log.begin_round(round, RoundKind::Gradient { p: 4, relay: false });
        let g = self.g.clone();

        // Step 1: weight vectors to every neighbor.
        let vectors: Vec<Vec<f64>> = self.nodes.iter().map(|nv| nv.w.clone()).collect();
        for i in 0..self.nodes.len() {
            for &(j, _) in g.incident(i) {
                self.log.log(
                    &g,
                    RoundMessage {
                        round,
                        from: i,
                        to: j,
                        payload: Payload::WeightVector(vectors[i].clone()),
                    },
                );
            }
        }

        // Local neighborhoods and rows of B^3; data from blacklisted
        // neighbors is discarded.
        let mut rows: Vec<LocalRow> = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let mut known: BTreeMap<usize, &[f64]> = BTreeMap::new();
            known.insert(i, &vectors[i]);
            for &(s, _) in g.incident(i) {
                if !self.nodes[i].blacklist.contains(&s) {
                    known.insert(s, &vectors[s]);
                }
            }
            rows.push(local_power_row(&g, i, &known, 3)?);
        }

        // Step 2: broadcast the own diagonal of W^3.
        let diags: Vec<f64> = (0..self.nodes.len()).map(|i| rows[i].at(i)).collect();
        for i in 0..self.nodes.len() {
            for &(j, _) in g.incident(i) {
                self.log.log(
                    &g,
                    RoundMessage {
                        round,
                        from: i,
                        to: j,
                        payload: Payload::PowerDiagonal(diags[i]),
                    },
                );
            }
        }

        let mut grads = vec![0.0; g.edge_count()];
        for (l, &(u, v)) in g.edges().iter().enumerate() {
            if self.severed(u, v) {
                continue;
            }
            let cross = rows[u].at(v);
            grads[l] = gradient_from_entries(4, cross, cross, diags[u], diags[v]);
        }
        Ok(grads)
    }

    /// General even p: flood weight vectors for p/2 steps so every node
    /// learns all rows within p/2 hops, then evaluate the gradient from
    /// the local submatrix. Message count is p per link per iteration,
    /// matching the specialized protocols; this relay format is this
    /// implementation's own construction and is flagged in the log.
    fn gradient_exchange_relay(&mut self, p: usize) -> Result<Vec<f64>> {
        let round = self.round;
        self.log.begin_round(round, RoundKind::Gradient { p, relay: true });
        let g = self.g.clone();
        let n = self.nodes.len();
        let vectors: Vec<Vec<f64>> = self.nodes.iter().map(|nv| nv.w.clone()).collect();

        // known[i]: origin -> weight vector; fresh[i]: learned last step.
        let mut known: Vec<BTreeMap<usize, Vec<f64>>> = (0..n)
            .map(|i| BTreeMap::from([(i, vectors[i].clone())]))
            .collect();
        let mut fresh: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

        for _step in 0..(p / 2) {
            let mut inboxes: Vec<Vec<(usize, Vec<(usize, Vec<f64>)>)>> =
                vec![Vec::new(); n];
            for i in 0..n {
                let batch: Vec<(usize, Vec<f64>)> = fresh[i]
                    .iter()
                    .map(|&o| (o, known[i][&o].clone()))
                    .collect();
                for &(j, _) in g.incident(i) {
                    self.log.log(
                        &g,
                        RoundMessage {
                            round,
                            from: i,
                            to: j,
                            payload: Payload::WeightRelay(batch.clone()),
                        },
                    );
                    inboxes[j].push((i, batch.clone()));
                }
            }
            for (j, inbox) in inboxes.into_iter().enumerate() {
                let mut new_fresh = Vec::new();
                for (sender, batch) in inbox {
                    if self.nodes[j].blacklist.contains(&sender) {
                        continue;
                    }
                    for (origin, vec) in batch {
                        match known[j].get(&origin) {
                            Some(existing) => {
                                if existing != &vec {
                                    return Err(Error::ProtocolFault(format!(
                                        "conflicting relayed weights for node {origin}"
                                    )));
                                }
                            }
                            None => {
                                known[j].insert(origin, vec);
                                new_fresh.push(origin);
                            }
                        }
                    }
                }
                new_fresh.sort_unstable();
                new_fresh.dedup();
                fresh[j] = new_fresh;
            }
        }

        let mut grads = vec![0.0; g.edge_count()];
        for (l, &(u, v)) in g.edges().iter().enumerate() {
            if self.severed(u, v) {
                continue;
            }
            let refs: BTreeMap<usize, &[f64]> =
                known[u].iter().map(|(&o, vec)| (o, vec.as_slice())).collect();
            let row_u = local_power_row(&g, u, &refs, p - 1)?;
            let row_v = local_power_row_in(&g, v, &refs, p - 1, &row_u.universe)?;
            let cross = row_u.at(v);
            grads[l] = gradient_from_entries(p, cross, cross, row_u.at(u), row_v.at(v));
        }
        Ok(grads)
    }

    /// One synchronous averaging step x <- W x using each node's current
    /// weights and the estimates received from neighbors. Blacklisted
    /// links contribute nothing; their weight already sits in the
    /// self-weight.
    pub fn averaging_round(&mut self) {
        let round = self.round;
        self.log.begin_round(round, RoundKind::Averaging);
        let g = self.g.clone();
        let xs: Vec<f64> = self.nodes.iter().map(|nv| nv.x).collect();
        for i in 0..self.nodes.len() {
            for &(j, _) in g.incident(i) {
                self.log.log(
                    &g,
                    RoundMessage {
                        round,
                        from: i,
                        to: j,
                        payload: Payload::Estimate(xs[i]),
                    },
                );
            }
        }
        for i in 0..self.nodes.len() {
            let nv = &self.nodes[i];
            let mut acc = nv.self_weight() * nv.x;
            for (idx, &(j, _)) in g.incident(i).iter().enumerate() {
                acc += nv.w[idx] * xs[j];
            }
            let rx: Vec<f64> = g.incident(i).iter().map(|&(j, _)| xs[j]).collect();
            let nv = &mut self.nodes[i];
            nv.x_prev = nv.x;
            nv.x = acc;
            nv.w_prev = nv.w.clone();
            nv.rx_x = rx;
        }
        self.round += 1;
    }
}

/// Outcome of one gradient round.
#[derive(Debug, Clone)]
pub struct GradientRoundOutcome {
    pub gradients: Vec<f64>,
    pub grad_norm: f64,
    pub grad_max: f64,
    /// True when every node's local stop rule fired; no update was applied.
    pub stopped: bool,
}

/// Row `start` of B^times over a node-local universe assembled from known
/// weight vectors.
struct LocalRow {
    universe: Vec<usize>,
    row: Vec<f64>,
}

impl LocalRow {
    fn at(&self, global: usize) -> f64 {
        match self.universe.binary_search(&global) {
            Ok(pos) => self.row[pos],
            Err(_) => 0.0,
        }
    }
}

/// Assemble the local submatrix implied by `known` weight vectors and
/// return row `start` of its (times)-th power. Entries never mentioned are
/// structural zeros; mentioning a pair twice with different values is a
/// protocol fault.
fn local_power_row(
    g: &Graph,
    start: usize,
    known: &BTreeMap<usize, &[f64]>,
    times: usize,
) -> Result<LocalRow> {
    // Universe: all origins plus every node mentioned in their vectors.
    let mut universe: Vec<usize> = Vec::new();
    for (&o, vec) in known {
        if vec.len() != g.degree(o) {
            return Err(Error::ProtocolFault(format!(
                "weight vector of node {o} has {} entries, degree is {}",
                vec.len(),
                g.degree(o)
            )));
        }
        universe.push(o);
        for &(t, _) in g.incident(o) {
            universe.push(t);
        }
    }
    universe.sort_unstable();
    universe.dedup();
    local_power_row_in(g, start, known, times, &universe)
}

fn local_power_row_in(
    g: &Graph,
    start: usize,
    known: &BTreeMap<usize, &[f64]>,
    times: usize,
    universe: &[usize],
) -> Result<LocalRow> {
    let k = universe.len();
    let pos = |v: usize| universe.binary_search(&v);
    let mut b = Array2::from_elem((k, k), f64::NAN);
    // The computing node's own record wins for its incident links (it may
    // have severed some of them); conflicting claims between two foreign
    // vectors are protocol faults.
    let set = |a: usize,
               c: usize,
               val: f64,
               authoritative: bool,
               b: &mut Array2<f64>|
     -> Result<()> {
        let cur = b[[a, c]];
        if cur.is_nan() || authoritative {
            b[[a, c]] = val;
            b[[c, a]] = val;
        } else if cur != val {
            return Err(Error::ProtocolFault(format!(
                "conflicting weight claims for pair ({}, {}): {cur} vs {val}",
                universe[a], universe[c]
            )));
        }
        Ok(())
    };
    let mut fill = |o: usize, vec: &[f64], own: bool, b: &mut Array2<f64>| -> Result<()> {
        let po = pos(o).expect("origin in universe");
        // Off-diagonal entries from the vector, diagonal from its fold.
        for (idx, &(t, _)) in g.incident(o).iter().enumerate() {
            let pt = pos(t).expect("mentioned node in universe");
            set(po, pt, vec[idx], own, b)?;
        }
        let mut s = 0.0;
        for &wl in vec.iter() {
            s += wl;
        }
        let selfw = 1.0 - s;
        let cur = b[[po, po]];
        if cur.is_nan() || own {
            b[[po, po]] = selfw;
        } else if cur != selfw {
            return Err(Error::ProtocolFault(format!(
                "conflicting self-weight for node {o}"
            )));
        }
        Ok(())
    };
    for (&o, vec) in known {
        if o != start {
            fill(o, vec, false, &mut b)?;
        }
    }
    if let Some(own_vec) = known.get(&start) {
        fill(start, own_vec, true, &mut b)?;
    }
    for val in b.iter_mut() {
        if val.is_nan() {
            *val = 0.0;
        }
    }

    let ps = pos(start).map_err(|_| {
        Error::ProtocolFault(format!("node {start} missing from its own universe"))
    })?;
    let mut row: Vec<f64> = (0..k).map(|c| b[[ps, c]]).collect();
    for _ in 1..times {
        let mut next = vec![0.0; k];
        for (t, &rt) in row.iter().enumerate() {
            if rt != 0.0 {
                for c in 0..k {
                    next[c] += rt * b[[t, c]];
                }
            }
        }
        row = next;
    }
    Ok(LocalRow {
        universe: universe.to_vec(),
        row,
    })
}

/// Spec-facing wrapper: one distributed optimizer round for p in {2, 4}.
pub fn distributed_round(
    net: &mut Network,
    p: usize,
    k: usize,
    sched: &StepSchedule,
) -> Result<GradientRoundOutcome> {
    if p != 2 && p != 4 {
        return Err(Error::InvalidPower {
            p,
            reason: "the specialized message protocol covers p in {2, 4}; \
                     use gradient_round for the relay variant"
                .into(),
        });
    }
    net.gradient_round(p, sched.gamma(k), None)
}

/// A full distributed trace-minimization run.
pub struct DistributedTmRun {
    pub weights: WeightVector,
    pub state: OptimizerState,
    pub network: Network,
}

/// Run the distributed optimizer. With `gtol` set, every node stops once
/// its local max |g_l| is at or below the tolerance (all nodes see this
/// simultaneously in the synchronous model); otherwise exactly
/// `max_rounds` updates execute.
pub fn run_distributed_tm(
    g: &Arc<Graph>,
    p: usize,
    w0: &WeightVector,
    sched: StepSchedule,
    gtol: Option<f64>,
    max_rounds: usize,
    record: RecordOptions,
) -> Result<DistributedTmRun> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let x0 = vec![0.0; g.node_count()];
    let mut net = Network::new(g.clone(), w0, &x0)?;
    let mut trace = Vec::new();
    let mut iterates = record.iterates.then(Vec::new);
    let mut updates = 0usize;
    let (mut grad_norm, mut grad_max) = (f64::INFINITY, f64::INFINITY);
    let mut stop = StopReason::MaxIter;

    for k in 0..=max_rounds {
        if let Some(hist) = iterates.as_mut() {
            hist.push(net.weights()?);
        }
        if k == max_rounds && gtol.is_none() {
            break;
        }
        let outcome = net.gradient_round(p, sched.gamma(k), gtol)?;
        grad_norm = outcome.grad_norm;
        grad_max = outcome.grad_max;
        let w_now = net.weights()?;
        let wm = crate::weightsel::weights_to_matrix(g, &w_now)?;
        let trace_p = wm.trace_power(p)?;
        let mu = record.spectrum.then(|| wm.mu()).transpose()?;
        trace.push(TraceRow {
            k,
            trace_p,
            grad_norm: outcome.grad_norm,
            msgs_cumulative: net.log.total_messages,
            mu,
        });
        if outcome.stopped {
            stop = StopReason::Converged;
            break;
        }
        updates += 1;
        if k == max_rounds {
            break;
        }
    }

    let weights = net.weights()?;
    let m = g.edge_count() as u64;
    let state = OptimizerState {
        iterations: updates,
        stop,
        stop_rule: StopRule::LocalMax,
        grad_norm,
        grad_max,
        msgs_per_link: if m > 0 { net.log.total_messages / m } else { 0 },
        msgs_total: net.log.total_messages,
        stop_rule_divergence_bound: (g.edge_count() as f64).sqrt() * gtol.unwrap_or(0.0),
        trace,
        iterates,
    };
    Ok(DistributedTmRun {
        weights,
        state,
        network: net,
    })
}
