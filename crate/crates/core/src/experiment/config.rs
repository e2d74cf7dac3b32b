//! Flat key=value config files for experiments. Lines are `key = value`,
//! `#` starts a comment; command-line flags override file values.
//!
//! Keys: model (er|rgg), n, pr, radius, graph (edge-list path, overrides
//! model), algos (comma-separated ids: md, ld, oc, tm<p>, jco<p>_<ld|md>),
//! a, b, gtol, threshold, reps, seed, cycles, max_iter,
//! consensus_max_iter, out.

use std::path::PathBuf;

use crate::error::{Error, Result};

use super::{Algorithm, ExperimentConfig, GraphSpec};

/// Serialize a config back to the key=value format.
pub fn to_kv(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    match &cfg.graph {
        GraphSpec::Er { n, pr } => {
            out.push_str(&format!("model = er\nn = {n}\npr = {pr}\n"));
        }
        GraphSpec::Rgg { n, radius } => {
            out.push_str(&format!("model = rgg\nn = {n}\nradius = {radius}\n"));
        }
        GraphSpec::File { path } => {
            out.push_str(&format!("graph = {}\n", path.display()));
        }
    }
    let algos: Vec<String> = cfg.algorithms.iter().map(Algorithm::id).collect();
    out.push_str(&format!("algos = {}\n", algos.join(",")));
    if let Some((a, b)) = cfg.schedule {
        out.push_str(&format!("a = {a}\nb = {b}\n"));
    }
    out.push_str(&format!("gtol = {}\n", cfg.gtol));
    out.push_str(&format!("threshold = {}\n", cfg.threshold));
    out.push_str(&format!("reps = {}\n", cfg.reps));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    out.push_str(&format!("cycles = {}\n", cfg.cycles));
    out.push_str(&format!("max_iter = {}\n", cfg.max_iter));
    out.push_str(&format!("consensus_max_iter = {}\n", cfg.consensus_max_iter));
    if let Some(dir) = &cfg.out_dir {
        out.push_str(&format!("out = {}\n", dir.display()));
    }
    out
}

/// Parse a key=value config text into a config, starting from defaults.
pub fn from_kv(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    // The graph spec assembles from up to three keys; collect then build.
    let mut model: Option<String> = None;
    let mut n: Option<usize> = None;
    let mut pr: Option<f64> = None;
    let mut radius: Option<f64> = None;
    let mut file: Option<PathBuf> = None;
    let mut sched_a: Option<f64> = None;
    let mut sched_b: Option<f64> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: bad {what}", lineno + 1));
        match key {
            "model" => model = Some(value.to_ascii_lowercase()),
            "n" => n = Some(value.parse().map_err(|_| bad("n"))?),
            "pr" => pr = Some(value.parse().map_err(|_| bad("pr"))?),
            "radius" => radius = Some(value.parse().map_err(|_| bad("radius"))?),
            "graph" => file = Some(PathBuf::from(value)),
            "algos" => {
                cfg.algorithms = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(Algorithm::parse)
                    .collect::<Result<Vec<_>>>()?;
            }
            "a" => sched_a = Some(value.parse().map_err(|_| bad("a"))?),
            "b" => sched_b = Some(value.parse().map_err(|_| bad("b"))?),
            "gtol" => cfg.gtol = value.parse().map_err(|_| bad("gtol"))?,
            "threshold" => cfg.threshold = value.parse().map_err(|_| bad("threshold"))?,
            "reps" => cfg.reps = value.parse().map_err(|_| bad("reps"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "cycles" => cfg.cycles = value.parse().map_err(|_| bad("cycles"))?,
            "max_iter" => cfg.max_iter = value.parse().map_err(|_| bad("max_iter"))?,
            "consensus_max_iter" => {
                cfg.consensus_max_iter = value.parse().map_err(|_| bad("consensus_max_iter"))?
            }
            "out" => cfg.out_dir = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }

    if let Some(path) = file {
        cfg.graph = GraphSpec::File { path };
    } else if let Some(model) = model {
        let n = n.ok_or_else(|| Error::InvalidConfig("model needs n".into()))?;
        cfg.graph = match model.as_str() {
            "er" => GraphSpec::Er {
                n,
                pr: pr.ok_or_else(|| Error::InvalidConfig("er model needs pr".into()))?,
            },
            "rgg" => GraphSpec::Rgg {
                n,
                radius: radius
                    .ok_or_else(|| Error::InvalidConfig("rgg model needs radius".into()))?,
            },
            other => {
                return Err(Error::InvalidConfig(format!("unknown model '{other}'")))
            }
        };
    }
    if let (Some(a), Some(b)) = (sched_a, sched_b) {
        cfg.schedule = Some((a, b));
    }
    Ok(cfg)
}
