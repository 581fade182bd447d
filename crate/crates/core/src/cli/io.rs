//! Trace and summary writers, plus readers for the trace formats.
//!
//! Floats are written with 17 significant digits so every value re-parses
//! to the identical `f64`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simloop::{GainRateAudit, Metrics, MonotonicityReport, Trace, TraceDims};

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// Column names in file order.
pub fn trace_columns(dims: &TraceDims) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    let mut block = |prefix: &str, len: usize| cols.extend((1..=len).map(|i| format!("{prefix}{i}")));
    block("x", dims.n);
    block("u", dims.m);
    block("that", dims.p);
    block("gamma", dims.p);
    block("rho", dims.r);
    cols.extend(["V", "Q", "Vc"].map(String::from));
    let mut block = |prefix: &str, len: usize| cols.extend((1..=len).map(|i| format!("{prefix}{i}")));
    block("s", dims.p);
    block("w", dims.p);
    block("phihat", dims.q);
    cols
}

/// Trace rows flattened in [`trace_columns`] order.
pub fn trace_values(trace: &Trace) -> Vec<Vec<f64>> {
    let width = trace_columns(&trace.dims).len();
    trace
        .rows
        .iter()
        .map(|r| {
            let mut v = Vec::with_capacity(width);
            v.push(r.t);
            v.extend(&r.x);
            v.extend(&r.u);
            v.extend(&r.theta_hat);
            v.extend(&r.gamma);
            v.extend(&r.rho);
            v.extend([r.v, r.q, r.vc]);
            v.extend(&r.s);
            v.extend(&r.w);
            v.extend(&r.phi_hat);
            v
        })
        .collect()
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv<W: Write>(trace: &Trace, w: W) -> Result<(), TraceIoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_columns(&trace.dims))?;
    for row in trace_values(trace) {
        out.write_record(row.iter().map(|&v| format_float(v)))?;
    }
    out.flush()?;
    Ok(())
}

/// A trace as a plain table, the common form of both file formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTable {
    pub columns: Vec<String>,
    /// Non-finite values are stored as `null` in JSON.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl TraceTable {
    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            columns: trace_columns(&trace.dims),
            rows: trace_values(trace)
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.is_finite().then_some(v)).collect())
                .collect(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    fn check(&self) -> Result<(), TraceIoError> {
        if let Some(bad) = self.rows.iter().position(|r| r.len() != self.columns.len()) {
            return Err(TraceIoError::Malformed(format!(
                "row {bad} has the wrong number of columns"
            )));
        }
        if self.columns.first().map(String::as_str) != Some("t") {
            return Err(TraceIoError::Malformed("first column must be t".into()));
        }
        let t: Vec<f64> = self.rows.iter().map(|r| r[0].unwrap_or(f64::NAN)).collect();
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TraceIoError::Malformed("t is not strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct JsonTrace<'a> {
    law: &'a str,
    dims: TraceDims,
    #[serde(flatten)]
    table: TraceTable,
}

pub fn write_trace_json<W: Write>(trace: &Trace, mut w: W) -> Result<(), TraceIoError> {
    let doc = JsonTrace {
        law: &trace.law,
        dims: trace.dims,
        table: TraceTable::from_trace(trace),
    };
    serde_json::to_writer(&mut w, &doc)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<TraceTable, TraceIoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let columns = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                let v: f64 = f
                    .parse()
                    .map_err(|_| TraceIoError::Malformed(format!("not a number: `{f}`")))?;
                Ok(v.is_finite().then_some(v))
            })
            .collect::<Result<Vec<_>, TraceIoError>>()?;
        rows.push(row);
    }
    let table = TraceTable { columns, rows };
    table.check()?;
    Ok(table)
}

pub fn read_trace_json<R: Read>(r: R) -> Result<TraceTable, TraceIoError> {
    #[derive(Deserialize)]
    struct Doc {
        #[serde(flatten)]
        table: TraceTable,
    }
    let doc: Doc = serde_json::from_reader(r)?;
    doc.table.check()?;
    Ok(doc.table)
}

/// Per-run summary written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub law: String,
    /// Time of divergence; `None` for completed runs.
    pub diverged_at: Option<f64>,
    pub metrics: Metrics,
    pub monotonicity: MonotonicityReport,
    pub gain_rate_audit: GainRateAudit,
    pub gain_rate_audit_passed: bool,
}

pub fn write_summary_json<W: Write>(summary: &RunSummary, mut w: W) -> Result<(), TraceIoError> {
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Header of the comparison table; `p` gain columns of each kind.
pub fn compare_columns(p: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "scenario",
        "law",
        "status",
        "converged",
        "settling_time",
        "final_norm",
        "max_norm",
        "vc_max_increase",
        "monotone",
        "gain_rate_audit",
    ]
    .map(String::from)
    .to_vec();
    cols.extend((1..=p).map(|i| format!("gain_reduction{i}")));
    cols.extend((1..=p).map(|i| format!("final_gain_error{i}")));
    cols
}

pub fn compare_row(summary: &RunSummary, tol: f64) -> Vec<String> {
    let m = &summary.metrics;
    let mut row = vec![
        summary.scenario.clone(),
        summary.law.clone(),
        if summary.diverged_at.is_some() { "diverged" } else { "ok" }.to_string(),
        (summary.diverged_at.is_none() && m.final_norm <= tol).to_string(),
        m.settling_time.map(format_float).unwrap_or_default(),
        format_float(m.final_norm),
        format_float(m.max_norm),
        format_float(m.vc_max_increase),
        summary.monotonicity.passed.to_string(),
        summary.gain_rate_audit_passed.to_string(),
    ];
    row.extend(m.gain_reduction.iter().map(|&v| format_float(v)));
    row.extend(m.final_gain_error.iter().map(|&v| format_float(v)));
    row
}

pub fn write_compare_csv<W: Write>(p: usize, rows: &[Vec<String>], w: W) -> Result<(), TraceIoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(compare_columns(p))?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simloop::TraceRow;

    fn tiny() -> Trace {
        let row = |t: f64| TraceRow {
            t,
            x: vec![0.1 + t, 1.0 / 3.0],
            u: vec![-t],
            theta_hat: vec![std::f64::consts::PI],
            phi_hat: vec![],
            rho: vec![-1e-300],
            gamma: vec![0.7],
            v: 1.0,
            q: 2.0,
            vc: 3.0,
            s: vec![4.0],
            w: vec![-5.0],
            gamma_rate: vec![],
            gamma_rate_input: vec![],
            vc_algebraic: 0.0,
        };
        Trace {
            dims: TraceDims {
                n: 2,
                m: 1,
                p: 1,
                q: 0,
                r: 1,
            },
            law: "corollary1".into(),
            nominal_gains: vec![1.0],
            rows: vec![row(0.0), row(0.01)],
        }
    }

    #[test]
    fn csv_and_json_agree_bitwise() {
        let tr = tiny();
        let mut c = Vec::new();
        write_trace_csv(&tr, &mut c).unwrap();
        let mut j = Vec::new();
        write_trace_json(&tr, &mut j).unwrap();
        let a = read_trace_csv(c.as_slice()).unwrap();
        let b = read_trace_json(j.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, TraceTable::from_trace(&tr));
        assert_eq!(
            a.columns,
            ["t", "x1", "x2", "u1", "that1", "gamma1", "rho1", "V", "Q", "Vc", "s1", "w1"]
        );
    }

    #[test]
    fn non_monotone_time_is_rejected() {
        let mut tr = tiny();
        tr.rows[1].t = 0.0;
        let mut c = Vec::new();
        write_trace_csv(&tr, &mut c).unwrap();
        assert!(matches!(read_trace_csv(c.as_slice()), Err(TraceIoError::Malformed(_))));
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
