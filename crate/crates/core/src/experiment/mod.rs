//! Experiment harness: reproducible seeded replications, algorithm
//! comparisons with confidence intervals, and the communication-overhead
//! ledger.

pub mod config;
pub mod csvout;

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::consensus::{run_consensus, run_jco};
use crate::error::{Error, Result};
use crate::graph::{self, derive_seed, Graph};
use crate::schatten::{tm_optimize, StepSchedule, DEFAULT_GTOL};
use crate::spectral::spectral_report;
use crate::weightsel::{
    local_degree_weights, max_degree_weights, optimal_constant_weights, weights_to_matrix,
};

/// Where the experiment graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Er { n: usize, pr: f64 },
    Rgg { n: usize, radius: f64 },
    File { path: PathBuf },
}

/// Initial weights for joint consensus-optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JcoInit {
    Ld,
    Md,
}

/// Weight-selection algorithms the harness can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Md,
    Ld,
    Oc,
    Tm { p: usize },
    Jco { p: usize, init: JcoInit },
}

impl Algorithm {
    pub fn id(&self) -> String {
        match self {
            Algorithm::Md => "md".into(),
            Algorithm::Ld => "ld".into(),
            Algorithm::Oc => "oc".into(),
            Algorithm::Tm { p } => format!("tm{p}"),
            Algorithm::Jco { p, init } => format!(
                "jco{p}_{}",
                match init {
                    JcoInit::Ld => "ld",
                    JcoInit::Md => "md",
                }
            ),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "md" => return Ok(Algorithm::Md),
            "ld" => return Ok(Algorithm::Ld),
            "oc" => return Ok(Algorithm::Oc),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("tm") {
            let p: usize = rest
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad algorithm '{s}'")))?;
            return Ok(Algorithm::Tm { p });
        }
        if let Some(rest) = s.strip_prefix("jco") {
            let (p_str, init_str) = rest
                .split_once('_')
                .ok_or_else(|| Error::InvalidConfig(format!("bad algorithm '{s}'")))?;
            let p: usize = p_str
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad algorithm '{s}'")))?;
            let init = match init_str {
                "ld" => JcoInit::Ld,
                "md" => JcoInit::Md,
                other => {
                    return Err(Error::InvalidConfig(format!("bad JCO init '{other}'")))
                }
            };
            return Ok(Algorithm::Jco { p, init });
        }
        Err(Error::InvalidConfig(format!("unknown algorithm '{s}'")))
    }
}

/// A reproducible experiment description. Replication r derives its seed
/// as base seed + r.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub algorithms: Vec<Algorithm>,
    /// Optimizer schedule (a, b); None picks a = 10/p, b = 100 per p.
    pub schedule: Option<(f64, f64)>,
    pub gtol: f64,
    pub threshold: f64,
    pub reps: usize,
    pub seed: u64,
    pub cycles: usize,
    pub max_iter: usize,
    pub consensus_max_iter: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: GraphSpec::Er { n: 20, pr: 0.5 },
            algorithms: vec![
                Algorithm::Md,
                Algorithm::Ld,
                Algorithm::Oc,
                Algorithm::Tm { p: 2 },
                Algorithm::Tm { p: 4 },
            ],
            schedule: None,
            gtol: DEFAULT_GTOL,
            threshold: 0.001,
            reps: 10,
            seed: 1,
            cycles: 10,
            max_iter: 100_000,
            consensus_max_iter: 1_000_000,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn schedule_for(&self, p: usize) -> StepSchedule {
        match self.schedule {
            Some((a, b)) => StepSchedule::new(a, b).unwrap_or_else(|_| {
                StepSchedule::default_for(p)
            }),
            None => StepSchedule::default_for(p),
        }
    }

    /// Graph for replication `rep`: generated specs resample with derived
    /// seeds until connected, file graphs load once and must be connected.
    pub fn sample_graph(&self, rep: usize) -> Result<Arc<Graph>> {
        let seed = self.seed + rep as u64;
        let g = match &self.graph {
            GraphSpec::Er { n, pr } => {
                graph::generate_connected(|s| graph::generate_er(*n, *pr, s), seed, 10_000)?
            }
            GraphSpec::Rgg { n, radius } => {
                graph::generate_connected(|s| graph::generate_rgg(*n, *radius, s), seed, 10_000)?
            }
            GraphSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let g = graph::load_edge_list(&text)?;
                if !g.is_connected() {
                    return Err(Error::Disconnected);
                }
                g
            }
        };
        Ok(Arc::new(g))
    }

    /// Node initial values for replication `rep`: i.i.d. uniform [0, 100].
    pub fn initial_values(&self, rep: usize, n: usize) -> Vec<f64> {
        let seed = derive_seed(self.seed + rep as u64, 0x9d0f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..100.0)).collect()
    }
}

/// Per-replication, per-algorithm outcome.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub algorithm: String,
    pub mu: f64,
    pub conv_time: Option<usize>,
    pub msgs_total: u64,
}

/// Aggregated metric row.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub algorithm: String,
    pub metric: String,
    pub mean: f64,
    pub ci95_half: f64,
    pub reps: usize,
}

pub struct ComparisonResults {
    pub records: Vec<RepRecord>,
    pub rows: Vec<AggregateRow>,
}

/// Sample mean and 95% Student-t half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 1);
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    (mean, t * var.sqrt() / (n as f64).sqrt())
}

/// Initialization message cost per link for a weight algorithm. Max-degree
/// pays a max-consensus over the diameter (two messages per link per
/// iteration), local degree pays a single degree exchange, the optimal
/// constant rule is centrally computed (no local protocol).
pub fn init_msgs_per_link(alg: Algorithm, g: &Graph, tm_iterations_msgs: Option<u64>) -> u64 {
    match alg {
        Algorithm::Md => 2 * g.diameter().unwrap_or(0) as u64,
        Algorithm::Ld => 2,
        Algorithm::Oc => 0,
        Algorithm::Tm { .. } | Algorithm::Jco { .. } => tm_iterations_msgs.unwrap_or(0),
    }
}

fn run_algorithm_once(
    cfg: &ExperimentConfig,
    alg: Algorithm,
    g: &Arc<Graph>,
    x0: &[f64],
    rep: usize,
) -> Result<RepRecord> {
    let m = g.edge_count() as u64;
    let record = |mu: f64, conv: Option<usize>, msgs: u64| RepRecord {
        rep,
        seed: cfg.seed + rep as u64,
        algorithm: alg.id(),
        mu,
        conv_time: conv,
        msgs_total: msgs,
    };
    match alg {
        Algorithm::Md | Algorithm::Ld | Algorithm::Oc => {
            let w = match alg {
                Algorithm::Md => max_degree_weights(g)?,
                Algorithm::Ld => local_degree_weights(g)?,
                _ => optimal_constant_weights(g)?,
            };
            let wm = weights_to_matrix(g, &w)?;
            let mu = spectral_report(&wm)?.mu;
            let (_, trace) = run_consensus(&wm, x0, cfg.threshold, cfg.consensus_max_iter);
            let init = init_msgs_per_link(alg, g, None) * m;
            let msgs = init + 2 * m * trace.convergence_time.unwrap_or(0) as u64;
            Ok(record(mu, trace.convergence_time, msgs))
        }
        Algorithm::Tm { p } => {
            let w0 = local_degree_weights(g)?;
            let (w, state) =
                tm_optimize(g, p, cfg.schedule_for(p), cfg.gtol, cfg.max_iter, &w0)?;
            let wm = weights_to_matrix(g, &w)?;
            let mu = spectral_report(&wm)?.mu;
            let (_, trace) = run_consensus(&wm, x0, cfg.threshold, cfg.consensus_max_iter);
            let msgs = state.msgs_total + 2 * m * trace.convergence_time.unwrap_or(0) as u64;
            Ok(record(mu, trace.convergence_time, msgs))
        }
        Algorithm::Jco { p, init } => {
            let w0 = match init {
                JcoInit::Ld => local_degree_weights(g)?,
                JcoInit::Md => max_degree_weights(g)?,
            };
            let run = run_jco(g, p, &w0, x0, cfg.threshold, cfg.consensus_max_iter)?;
            let wm = weights_to_matrix(g, &run.weights)?;
            let mu = spectral_report(&wm)?.mu;
            Ok(record(mu, run.trace.convergence_time, run.log.total_messages))
        }
    }
}

/// Run every configured algorithm over `reps` seeded replications and
/// aggregate mu, convergence time and message totals.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonResults> {
    let reps: Vec<usize> = (0..cfg.reps).collect();
    let per_rep: Vec<Result<Vec<RepRecord>>> = reps
        .par_iter()
        .map(|&rep| {
            let g = cfg.sample_graph(rep)?;
            let x0 = cfg.initial_values(rep, g.node_count());
            cfg.algorithms
                .iter()
                .map(|&alg| run_algorithm_once(cfg, alg, &g, &x0, rep))
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }

    let mut rows = Vec::new();
    for alg in &cfg.algorithms {
        let id = alg.id();
        let of_alg: Vec<&RepRecord> =
            records.iter().filter(|r| r.algorithm == id).collect();
        let metrics: [(&str, Vec<f64>); 3] = [
            ("mu", of_alg.iter().map(|r| r.mu).collect()),
            (
                "conv_time",
                of_alg
                    .iter()
                    .map(|r| r.conv_time.map(|t| t as f64).unwrap_or(f64::INFINITY))
                    .collect(),
            ),
            (
                "msgs_total",
                of_alg.iter().map(|r| r.msgs_total as f64).collect(),
            ),
        ];
        for (metric, values) in metrics {
            let (mean, half) = mean_ci95(&values);
            rows.push(AggregateRow {
                algorithm: id.clone(),
                metric: metric.into(),
                mean,
                ci95_half: half,
                reps: values.len(),
            });
        }
    }
    Ok(ComparisonResults { records, rows })
}

/// Cumulative communication cost of the local algorithms against the
/// number of consensus cycles the network is reused for.
pub struct OverheadLedger {
    pub algorithms: Vec<String>,
    /// Mean initialization messages per link, aligned with `algorithms`.
    pub init_per_link: Vec<f64>,
    /// cumulative[a][c] = mean messages per link after cycle c + 1.
    pub cumulative: Vec<Vec<f64>>,
    /// For each non-TM(4) algorithm: first cycle (1-based) where TM(4)'s
    /// cumulative cost drops below it.
    pub crossovers_vs_tm4: Vec<(String, Option<usize>)>,
}

/// Overhead study over MD, LD, TM(2), TM(4): init costs plus 2 messages
/// per link per consensus iteration, accumulated over `cfg.cycles`
/// consensus cycles with fresh initial values each cycle.
pub fn run_overhead(cfg: &ExperimentConfig) -> Result<OverheadLedger> {
    let algs = [
        Algorithm::Md,
        Algorithm::Ld,
        Algorithm::Tm { p: 2 },
        Algorithm::Tm { p: 4 },
    ];
    let cycles = cfg.cycles.max(1);
    let reps: Vec<usize> = (0..cfg.reps).collect();
    let per_rep: Vec<Result<(Vec<f64>, Vec<Vec<f64>>)>> = reps
        .par_iter()
        .map(|&rep| {
            let g = cfg.sample_graph(rep)?;
            let mut init = Vec::with_capacity(algs.len());
            let mut cum = Vec::with_capacity(algs.len());
            for &alg in &algs {
                let (w, init_per_link) = match alg {
                    Algorithm::Tm { p } => {
                        let w0 = local_degree_weights(&g)?;
                        let (w, state) =
                            tm_optimize(&g, p, cfg.schedule_for(p), cfg.gtol, cfg.max_iter, &w0)?;
                        (w, state.msgs_per_link)
                    }
                    Algorithm::Md => (max_degree_weights(&g)?, init_msgs_per_link(alg, &g, None)),
                    Algorithm::Ld => {
                        (local_degree_weights(&g)?, init_msgs_per_link(alg, &g, None))
                    }
                    _ => unreachable!(),
                };
                let wm = weights_to_matrix(&g, &w)?;
                let mut running = init_per_link as f64;
                let mut series = Vec::with_capacity(cycles);
                for c in 0..cycles {
                    let x0 = {
                        let seed = derive_seed(cfg.seed + rep as u64, 0xc0de + c as u64);
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        (0..g.node_count())
                            .map(|_| rng.gen_range(0.0..100.0))
                            .collect::<Vec<f64>>()
                    };
                    let (_, trace) =
                        run_consensus(&wm, &x0, cfg.threshold, cfg.consensus_max_iter);
                    let t = trace.convergence_time.unwrap_or(cfg.consensus_max_iter);
                    running += 2.0 * t as f64;
                    series.push(running);
                }
                init.push(init_per_link as f64);
                cum.push(series);
            }
            Ok((init, cum))
        })
        .collect();

    let mut init_acc = vec![0.0; algs.len()];
    let mut cum_acc = vec![vec![0.0; cycles]; algs.len()];
    let mut count = 0usize;
    for r in per_rep {
        let (init, cum) = r?;
        for a in 0..algs.len() {
            init_acc[a] += init[a];
            for c in 0..cycles {
                cum_acc[a][c] += cum[a][c];
            }
        }
        count += 1;
    }
    let count = count.max(1) as f64;
    for a in 0..algs.len() {
        init_acc[a] /= count;
        for c in 0..cycles {
            cum_acc[a][c] /= count;
        }
    }

    let names: Vec<String> = algs.iter().map(Algorithm::id).collect();
    let tm4_idx = names.iter().position(|n| n == "tm4").unwrap();
    let mut crossovers = Vec::new();
    for (a, name) in names.iter().enumerate() {
        if a == tm4_idx {
            continue;
        }
        let cross = (0..cycles).find(|&c| cum_acc[tm4_idx][c] < cum_acc[a][c]);
        crossovers.push((name.clone(), cross.map(|c| c + 1)));
    }

    Ok(OverheadLedger {
        algorithms: names,
        init_per_link: init_acc,
        cumulative: cum_acc,
        crossovers_vs_tm4: crossovers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_ids_round_trip() {
        for alg in [
            Algorithm::Md,
            Algorithm::Ld,
            Algorithm::Oc,
            Algorithm::Tm { p: 2 },
            Algorithm::Tm { p: 8 },
            Algorithm::Jco {
                p: 4,
                init: JcoInit::Ld,
            },
            Algorithm::Jco {
                p: 2,
                init: JcoInit::Md,
            },
        ] {
            assert_eq!(Algorithm::parse(&alg.id()).unwrap(), alg);
        }
        assert!(Algorithm::parse("bogus").is_err());
    }

    #[test]
    fn comparison_is_deterministic() {
        let cfg = ExperimentConfig {
            graph: GraphSpec::Er { n: 12, pr: 0.4 },
            reps: 3,
            seed: 42,
            ..ExperimentConfig::default()
        };
        let a = run_comparison(&cfg).unwrap();
        let b = run_comparison(&cfg).unwrap();
        let render = |r: &ComparisonResults| csvout::comparison_csv(&r.rows);
        assert_eq!(render(&a), render(&b));
        let recs = |r: &ComparisonResults| csvout::summary_csv(&r.records);
        assert_eq!(recs(&a), recs(&b));
    }

    #[test]
    fn tm_beats_heuristics_on_mu_in_aggregate() {
        let cfg = ExperimentConfig {
            graph: GraphSpec::Er { n: 16, pr: 0.4 },
            reps: 5,
            seed: 7,
            ..ExperimentConfig::default()
        };
        let res = run_comparison(&cfg).unwrap();
        let mean_mu = |id: &str| {
            res.rows
                .iter()
                .find(|r| r.algorithm == id && r.metric == "mu")
                .unwrap()
                .mean
        };
        assert!(mean_mu("tm2") < mean_mu("md"));
        assert!(mean_mu("tm4") <= mean_mu("tm2") + 1e-9);
    }

    #[test]
    fn ci_shrinks_with_reps() {
        let base = ExperimentConfig {
            graph: GraphSpec::Er { n: 12, pr: 0.4 },
            algorithms: vec![Algorithm::Ld],
            seed: 3,
            ..ExperimentConfig::default()
        };
        let mut halves = Vec::new();
        for reps in [8usize, 32] {
            let cfg = ExperimentConfig {
                reps,
                ..base.clone()
            };
            let res = run_comparison(&cfg).unwrap();
            let row = res
                .rows
                .iter()
                .find(|r| r.algorithm == "ld" && r.metric == "mu")
                .unwrap();
            halves.push(row.ci95_half);
        }
        // Quadrupling the reps should roughly halve the interval.
        assert!(
            halves[1] < halves[0] * 0.75,
            "ci did not shrink: {halves:?}"
        );
    }

    #[test]
    fn overhead_ledger_basics() {
        let cfg = ExperimentConfig {
            graph: GraphSpec::Er { n: 14, pr: 0.4 },
            reps: 2,
            cycles: 4,
            seed: 11,
            ..ExperimentConfig::default()
        };
        let ledger = run_overhead(&cfg).unwrap();
        let ld = ledger.algorithms.iter().position(|a| a == "ld").unwrap();
        assert_eq!(ledger.init_per_link[ld], 2.0);
        // Cumulative cost strictly increases with cycles.
        for series in &ledger.cumulative {
            for pair in series.windows(2) {
                assert!(pair[1] > pair[0]);
            }
        }
    }

    #[test]
    fn md_init_reproduces_diameter_rule() {
        // Path of 16 nodes has diameter 15: 30 messages per link.
        let edges: Vec<(usize, usize)> = (0..15).map(|i| (i, i + 1)).collect();
        let g = Graph::from_edges(16, &edges).unwrap();
        assert_eq!(init_msgs_per_link(Algorithm::Md, &g, None), 30);
        assert_eq!(init_msgs_per_link(Algorithm::Ld, &g, None), 2);
    }

    #[test]
    fn ci_helper_matches_known_t_quantile() {
        // Five observations, dof = 4: t_{0.975} = 2.776...
        let (mean, half) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((mean - 3.0).abs() < 1e-12);
        let sd = (2.5_f64).sqrt();
        let expected = 2.7764451051977987 * sd / (5.0_f64).sqrt();
        assert!((half - expected).abs() < 1e-9, "{half} vs {expected}");
    }
}
