//! Desk-scale numeric stand-in for the fastest-averaging weight problem:
//! minimize mu(W(w)) over w in [-1, 1]^m by multi-start subgradient
//! descent on the (convex, non-smooth) objective, with a Nelder-Mead
//! polish. The result is an upper bound on the true optimum.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::symmetric_eigen;
use crate::weightsel::{
    local_degree_weights, max_degree_weights, optimal_constant_weights, weights_to_matrix,
    WeightVector,
};

/// Node cap for the public oracle entry point.
pub const ORACLE_MAX_NODES: usize = 12;

/// Best-found weights minimizing mu on a small graph. Multi-start local
/// search; the returned value upper-bounds the true optimum.
pub fn fdla_oracle_small(
    g: &Arc<Graph>,
    restarts: usize,
    seed: u64,
) -> Result<(WeightVector, f64)> {
    if g.node_count() > ORACLE_MAX_NODES {
        return Err(Error::OracleTooLarge {
            n: g.node_count(),
            max: ORACLE_MAX_NODES,
        });
    }
    fdla_search(g, restarts, seed, &[])
}

/// The search behind the oracle, without the desk-scale cap (experiment
/// sweeps use it on somewhat larger graphs) and with optional pinned
/// weights `(edge, value)` held fixed throughout.
pub fn fdla_search(
    g: &Arc<Graph>,
    restarts: usize,
    seed: u64,
    pins: &[(usize, f64)],
) -> Result<(WeightVector, f64)> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let m = g.edge_count();
    for &(l, _) in pins {
        g.edge(l)?;
    }

    let apply_pins = |w: &mut [f64]| {
        for &(l, v) in pins {
            w[l] = v;
        }
    };
    let mu_of = |w: &[f64]| -> f64 {
        let wm = weights_to_matrix(g, &WeightVector::new(w.to_vec()))
            .expect("length checked");
        let eig = symmetric_eigen(wm.matrix()).expect("symmetric by construction");
        let n = eig.values.len();
        if n < 2 {
            return 0.0;
        }
        eig.values[n - 2].max(-eig.values[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(local_degree_weights(g)?.as_slice().to_vec());
    starts.push(max_degree_weights(g)?.as_slice().to_vec());
    starts.push(optimal_constant_weights(g)?.as_slice().to_vec());
    for _ in 0..restarts {
        starts.push((0..m).map(|_| rng.gen_range(-0.25..0.75)).collect());
    }

    let mut best_w: Vec<f64> = starts[0].clone();
    apply_pins(&mut best_w);
    let mut best_mu = mu_of(&best_w);

    for start in &starts {
        let mut w = start.clone();
        apply_pins(&mut w);
        let (cand_w, cand_mu) = subgradient_descent(g, w, 2500, pins, &mu_of);
        if cand_mu < best_mu {
            best_mu = cand_mu;
            best_w = cand_w;
        }
    }

    // Nelder-Mead polish around the incumbent, restarted with shrinking
    // simplex scales to step past subgradient stall.
    for &scale in &[0.05, 0.01, 0.002] {
        let (cand, _) = nelder_mead(
            |w| {
                let mut x = w.to_vec();
                for v in &mut x {
                    *v = v.clamp(-1.0, 1.0);
                }
                apply_pins(&mut x);
                mu_of(&x)
            },
            &best_w,
            scale,
            400 * m.max(4),
        );
        let mut cand = cand;
        for v in &mut cand {
            *v = v.clamp(-1.0, 1.0);
        }
        apply_pins(&mut cand);
        let cand_mu = mu_of(&cand);
        if cand_mu < best_mu {
            best_mu = cand_mu;
            best_w = cand;
        }
    }

    Ok((WeightVector::new(best_w), best_mu))
}

/// Projected subgradient descent on mu with a 1/sqrt(k) step on the
/// normalized direction, tracking the best iterate.
fn subgradient_descent(
    g: &Graph,
    mut w: Vec<f64>,
    iters: usize,
    pins: &[(usize, f64)],
    mu_of: &dyn Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let m = w.len();
    let mut best_w = w.clone();
    let mut best_mu = mu_of(&w);

    for k in 0..iters {
        let (mu, grad) = mu_subgradient(g, &w);
        if mu < best_mu {
            best_mu = mu;
            best_w = w.clone();
        }
        let norm: f64 = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        let gamma = 0.25 / ((k + 1) as f64).sqrt();
        for l in 0..m {
            w[l] = (w[l] - gamma * grad[l] / norm).clamp(-1.0, 1.0);
        }
        for &(l, v) in pins {
            w[l] = v;
        }
    }
    let final_mu = mu_of(&w);
    if final_mu < best_mu {
        (w, final_mu)
    } else {
        (best_w, best_mu)
    }
}

/// mu and one subgradient: with u a unit eigenvector of the active
/// eigenvalue, d mu / d w_l = -(u_i - u_j)^2 when lambda_2 is active and
/// +(u_i - u_j)^2 when -lambda_n is.
fn mu_subgradient(g: &Graph, w: &[f64]) -> (f64, Vec<f64>) {
    let n = g.node_count();
    let mut mat = ndarray::Array2::zeros((n, n));
    for (l, &(u, v)) in g.edges().iter().enumerate() {
        mat[[u, v]] = w[l];
        mat[[v, u]] = w[l];
    }
    for i in 0..n {
        let mut s = 0.0;
        for &(_, l) in g.incident(i) {
            s += w[l];
        }
        mat[[i, i]] = 1.0 - s;
    }
    let eig = symmetric_eigen(&mat).expect("symmetric by construction");
    let lambda_2 = eig.values[n - 2];
    let lambda_n = eig.values[0];
    let (mu, col, sign) = if lambda_2 >= -lambda_n {
        (lambda_2, n - 2, -1.0)
    } else {
        (-lambda_n, 0, 1.0)
    };
    let grad = g
        .edges()
        .iter()
        .map(|&(i, j)| {
            let d = eig.vectors[[i, col]] - eig.vectors[[j, col]];
            sign * d * d
        })
        .collect();
    (mu, grad)
}

/// Plain Nelder-Mead over R^m; the objective is expected to handle box
/// clamping itself. Returns the best vertex seen.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    scale: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let m = x0.len();
    let (alpha, beta, gamma, delta) = (1.0, 0.5, 2.0, 0.5);
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m + 1);
    let fx0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), fx0));
    for l in 0..m {
        let mut x = x0.to_vec();
        x[l] += scale;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[m].1 - simplex[0].1;
        if spread < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..m)
            .map(|l| simplex[..m].iter().map(|(x, _)| x[l]).sum::<f64>() / m as f64)
            .collect();
        let worst = simplex[m].clone();
        let reflect: Vec<f64> = (0..m)
            .map(|l| centroid[l] + alpha * (centroid[l] - worst.0[l]))
            .collect();
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..m)
                .map(|l| centroid[l] + gamma * (reflect[l] - centroid[l]))
                .collect();
            let fe = eval(&expand, &mut evals);
            simplex[m] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[m - 1].1 {
            simplex[m] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..m)
                .map(|l| centroid[l] + beta * (worst.0[l] - centroid[l]))
                .collect();
            let fc = eval(&contract, &mut evals);
            if fc < worst.1 {
                simplex[m] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..m)
                        .map(|l| best[l] + delta * (item.0[l] - best[l]))
                        .collect();
                    let fx = eval(&x, &mut evals);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].clone()
}
