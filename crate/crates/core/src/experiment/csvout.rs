//! Plot-ready CSV emission with fixed column orders. Output is
//! deterministic: identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::consensus::ErrorTrace;
use crate::error::Result;
use crate::graph::Graph;
use crate::robustness::DetectionEvent;
use crate::schatten::OptimizerState;
use crate::weightsel::WeightVector;

use super::{AggregateRow, OverheadLedger, RepRecord};

/// "algorithm,metric,mean,ci95_half,reps"
pub fn comparison_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("algorithm,metric,mean,ci95_half,reps\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.algorithm, r.metric, r.mean, r.ci95_half, r.reps
        )
        .unwrap();
    }
    out
}

/// "seed,algorithm,mu,conv_time,msgs_total"
pub fn summary_csv(records: &[RepRecord]) -> String {
    let mut out = String::from("seed,algorithm,mu,conv_time,msgs_total\n");
    for r in records {
        let conv = match r.conv_time {
            Some(t) => t.to_string(),
            None => "inf".into(),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            r.seed, r.algorithm, r.mu, conv, r.msgs_total
        )
        .unwrap();
    }
    out
}

/// "k,e_k"
pub fn trace_csv(trace: &ErrorTrace) -> String {
    let mut out = String::from("k,e_k\n");
    for (k, e) in trace.errors.iter().enumerate() {
        writeln!(out, "{k},{e}").unwrap();
    }
    out
}

/// "k,trace_p,mu,grad_norm,msgs_cumulative"; mu column is "nan" when the
/// run did not record spectra.
pub fn optimizer_trace_csv(state: &OptimizerState) -> String {
    let mut out = String::from("k,trace_p,mu,grad_norm,msgs_cumulative\n");
    for row in &state.trace {
        let mu = row
            .mu
            .map(|m| m.to_string())
            .unwrap_or_else(|| "nan".into());
        writeln!(
            out,
            "{},{},{},{},{}",
            row.k, row.trace_p, mu, row.grad_norm, row.msgs_cumulative
        )
        .unwrap();
    }
    out
}

/// "algorithm,cycle,msgs_per_link"
pub fn ledger_csv(ledger: &OverheadLedger) -> String {
    let mut out = String::from("algorithm,cycle,msgs_per_link\n");
    for (a, name) in ledger.algorithms.iter().enumerate() {
        for (c, v) in ledger.cumulative[a].iter().enumerate() {
            writeln!(out, "{},{},{}", name, c + 1, v).unwrap();
        }
    }
    out
}

/// "u,v,weight" using the graph's original node labels.
pub fn weights_csv(g: &Graph, w: &WeightVector) -> String {
    let mut out = String::from("u,v,weight\n");
    for (l, &(u, v)) in g.edges().iter().enumerate() {
        writeln!(out, "{},{},{}", g.label(u), g.label(v), w.get(l)).unwrap();
    }
    out
}

/// "round,detector,declared,reason"
pub fn detection_csv(events: &[DetectionEvent]) -> String {
    let mut out = String::from("round,detector,declared,reason\n");
    for ev in events {
        writeln!(
            out,
            "{},{},{},{}",
            ev.round,
            ev.detector,
            ev.declared,
            ev.reason.label()
        )
        .unwrap();
    }
    out
}

/// Write a CSV (or any text) file, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_match_contracts() {
        assert!(comparison_csv(&[]).starts_with("algorithm,metric,mean,ci95_half,reps\n"));
        assert!(summary_csv(&[]).starts_with("seed,algorithm,mu,conv_time,msgs_total\n"));
        let trace = ErrorTrace {
            errors: vec![1.0, 0.5],
            threshold: 0.001,
            convergence_time: None,
        };
        let csv = trace_csv(&trace);
        assert_eq!(csv, "k,e_k\n0,1\n1,0.5\n");
    }

    #[test]
    fn weights_csv_uses_labels() {
        let g = crate::graph::load_edge_list("a b\nb c").unwrap();
        let w = WeightVector::new(vec![0.25, 0.5]);
        let csv = weights_csv(&g, &w);
        assert_eq!(csv, "u,v,weight\na,b,0.25\nb,c,0.5\n");
    }
}
