//! Synchronous averaging iterations x(k+1) = W x(k), the normalized error
//! trace e(k), and the joint consensus-optimization procedure that
//! interleaves one distributed gradient step with one averaging step per
//! slot.

use std::sync::Arc;

use crate::dense::mat_vec;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::schatten::distributed::{MessageLog, Network};
use crate::schatten::StepSchedule;
use crate::spectral::WeightMatrix;
use crate::weightsel::WeightVector;

/// Normalized error history e(k) = ||x(k) - xbar|| / ||x(0) - xbar||.
#[derive(Debug, Clone)]
pub struct ErrorTrace {
    pub errors: Vec<f64>,
    pub threshold: f64,
    /// First k with e(k) < threshold; None when the run never got there.
    pub convergence_time: Option<usize>,
}

impl ErrorTrace {
    pub fn last(&self) -> f64 {
        *self.errors.last().expect("trace has e(0)")
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn norm_to_average(x: &[f64], avg: f64) -> f64 {
    x.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>().sqrt()
}

/// One averaging iteration x' = W x.
pub fn consensus_step(w: &WeightMatrix, x: &[f64]) -> Vec<f64> {
    mat_vec(w.matrix(), x)
}

/// Iterate x(k+1) = W x(k) until e(k) < threshold or max_iter; the full
/// error trace is recorded either way. Non-convergence is reported through
/// `convergence_time = None`, not an error.
pub fn run_consensus(
    w: &WeightMatrix,
    x0: &[f64],
    threshold: f64,
    max_iter: usize,
) -> (Vec<f64>, ErrorTrace) {
    let avg = mean(x0);
    let denom = norm_to_average(x0, avg);
    let mut x = x0.to_vec();
    let mut errors = Vec::new();
    let mut convergence_time = None;
    let mut k = 0usize;
    loop {
        let e = if denom == 0.0 {
            0.0
        } else {
            norm_to_average(&x, avg) / denom
        };
        errors.push(e);
        if e < threshold {
            convergence_time = Some(k);
            break;
        }
        if k >= max_iter {
            break;
        }
        x = consensus_step(w, &x);
        k += 1;
    }
    (
        x,
        ErrorTrace {
            errors,
            threshold,
            convergence_time,
        },
    )
}

/// Result of a joint consensus-optimization run.
pub struct JcoRun {
    pub x: Vec<f64>,
    pub trace: ErrorTrace,
    pub weights: WeightVector,
    pub log: MessageLog,
}

/// Joint consensus-optimization: at slot k every node applies one
/// distributed gradient update of its incident weights with step
/// gamma(k) = 1/(p (1 + k)), then one averaging step with the freshly
/// updated weights. Supported for the specialized protocols p in {2, 4}.
pub fn run_jco(
    g: &Arc<Graph>,
    p: usize,
    w0: &WeightVector,
    x0: &[f64],
    threshold: f64,
    max_iter: usize,
) -> Result<JcoRun> {
    if p != 2 && p != 4 {
        return Err(Error::InvalidPower {
            p,
            reason: "joint consensus-optimization runs on p in {2, 4}".into(),
        });
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let sched = StepSchedule::jco(p);
    let mut net = Network::new(g.clone(), w0, x0)?;
    let avg = mean(x0);
    let denom = norm_to_average(x0, avg);
    let mut errors = Vec::new();
    let mut convergence_time = None;
    let mut k = 0usize;
    loop {
        let x = net.estimates();
        let e = if denom == 0.0 {
            0.0
        } else {
            norm_to_average(&x, avg) / denom
        };
        errors.push(e);
        if e < threshold {
            convergence_time = Some(k);
            break;
        }
        if k >= max_iter {
            break;
        }
        net.gradient_round(p, sched.gamma(k), None)?;
        net.averaging_round();
        k += 1;
    }
    let weights = net.weights()?;
    let x = net.estimates();
    Ok(JcoRun {
        x,
        trace: ErrorTrace {
            errors,
            threshold,
            convergence_time,
        },
        weights,
        log: net.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, Graph};
    use crate::spectral::spectral_report;
    use crate::weightsel::{
        local_degree_weights, max_degree_weights, weights_to_matrix, WeightVector,
    };
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_examples() {
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        let w = weights_to_matrix(&g, &WeightVector::new(vec![0.5])).unwrap();
        assert_eq!(consensus_step(&w, &[0.0, 2.0]), vec![1.0, 1.0]);

        let id = crate::spectral::WeightMatrix::new(g.clone(), Array2::eye(2)).unwrap();
        assert_eq!(consensus_step(&id, &[3.0, -1.0]), vec![3.0, -1.0]);
    }

    #[test]
    fn step_matches_per_node_form_and_conserves_sum() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(9, 0.4, s), 3, 100).unwrap(),
        );
        let wv = local_degree_weights(&g).unwrap();
        let w = weights_to_matrix(&g, &wv).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..100.0)).collect();
        let stepped = consensus_step(&w, &x);
        for i in 0..9 {
            let mut acc = w.matrix()[[i, i]] * x[i];
            for j in g.neighbors(i) {
                acc += w.matrix()[[i, j]] * x[j];
            }
            assert!((stepped[i] - acc).abs() < 1e-12);
        }
        let s0: f64 = x.iter().sum();
        let s1: f64 = stepped.iter().sum();
        assert!((s1 - s0).abs() < 1e-9);
    }

    #[test]
    fn two_nodes_converge_in_one_step() {
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        let w = weights_to_matrix(&g, &WeightVector::new(vec![0.5])).unwrap();
        let (x, trace) = run_consensus(&w, &[10.0, 4.0], 0.001, 100);
        assert_eq!(trace.convergence_time, Some(1));
        assert!((x[0] - 7.0).abs() < 1e-12);
        assert!((trace.errors[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_never_converges() {
        let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
        let id = crate::spectral::WeightMatrix::new(g, Array2::eye(2)).unwrap();
        let (_, trace) = run_consensus(&id, &[1.0, 0.0], 0.001, 500);
        assert_eq!(trace.convergence_time, None);
        assert_eq!(trace.errors.len(), 501);
    }

    #[test]
    fn ld_on_path_reaches_average() {
        let n = 10;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = Arc::new(Graph::from_edges(n, &edges).unwrap());
        let wv = local_degree_weights(&g).unwrap();
        let w = weights_to_matrix(&g, &wv).unwrap();
        let mut x0 = vec![0.0; n];
        x0[0] = 10.0;
        let (x, trace) = run_consensus(&w, &x0, 0.001, 100_000);
        assert!(trace.convergence_time.is_some());
        for xi in &x {
            assert!((xi - 1.0).abs() < 0.01, "estimate {xi}");
        }
        // e(k) non-increasing for a fixed convergent symmetric W.
        for pair in trace.errors.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn asymptotic_rate_matches_mu() {
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_er(12, 0.3, s), 7, 100).unwrap(),
        );
        let wv = local_degree_weights(&g).unwrap();
        let w = weights_to_matrix(&g, &wv).unwrap();
        let mu = spectral_report(&w).unwrap().mu;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..100.0)).collect();
        // Run long enough that mu^k is tiny but well above fp noise.
        let k_target = ((1e-10_f64).ln() / mu.ln()).ceil() as usize;
        let (_, trace) = run_consensus(&w, &x0, 0.0, k_target);
        let k = trace.errors.len() - 1;
        let measured = trace.errors[k].ln() / k as f64;
        let expected = mu.ln();
        assert!(
            (measured - expected).abs() <= 0.05 * expected.abs(),
            "measured {measured} vs log mu {expected}"
        );
    }

    #[test]
    fn jco_on_k4_converges_and_conserves() {
        let g = Arc::new(graph::generate_er(4, 1.0, 0).unwrap());
        let w0 = max_degree_weights(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..100.0)).collect();
        let avg = x0.iter().sum::<f64>() / 4.0;
        let run = run_jco(&g, 2, &w0, &x0, 0.001, 10_000).unwrap();
        assert!(run.trace.convergence_time.is_some());
        let sum: f64 = run.x.iter().sum();
        assert!((sum - 4.0 * avg).abs() < 1e-9);
        for xi in &run.x {
            assert!((xi - avg).abs() < 0.1);
        }
    }

    #[test]
    fn jco_rejects_unsupported_p() {
        let g = Arc::new(graph::generate_er(4, 1.0, 0).unwrap());
        let w0 = max_degree_weights(&g).unwrap();
        assert!(run_jco(&g, 6, &w0, &[1.0, 2.0, 3.0, 4.0], 0.001, 10).is_err());
    }

    #[test]
    fn jco_sum_conserved_every_slot() {
        // Dense enough that the early large steps stay tame; conservation
        // is exact up to rounding at the scale of the estimates.
        let g = Arc::new(
            graph::generate_connected(|s| graph::generate_rgg(30, 0.4, s), 2, 300).unwrap(),
        );
        let w0 = local_degree_weights(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x0: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..100.0)).collect();
        let sum0: f64 = x0.iter().sum();

        // Drive the network slot by slot and check the invariant at each.
        let sched = StepSchedule::jco(4);
        let mut net = Network::new(g.clone(), &w0, &x0).unwrap();
        for k in 0..50 {
            net.gradient_round(4, sched.gamma(k), None).unwrap();
            net.averaging_round();
            let sum: f64 = net.estimates().iter().sum();
            assert!((sum - sum0).abs() < 1e-9, "slot {k}: {sum} vs {sum0}");
        }
    }
}
