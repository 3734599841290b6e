//! Step-by-step solver records and their plain-text "calculation window"
//! rendering.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

/// Matrices larger than this in either dimension are summarised.
pub const MAX_RENDERED_DIM: usize = 20;
pub const DEFAULT_PRECISION: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Value {
    Scalar { value: f64, unit: String },
    Vector { values: Vec<f64>, unit: String },
    /// Row-major.
    Matrix { rows: usize, cols: usize, data: Vec<f64>, unit: String },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub name: String,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Payload(pub Vec<Entry>);

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(mut self, name: &str, value: f64, unit: &str) -> Self {
        self.0.push(Entry {
            name: name.into(),
            value: Value::Scalar { value, unit: unit.into() },
        });
        self
    }

    pub fn vector(mut self, name: &str, values: &[f64], unit: &str) -> Self {
        self.0.push(Entry {
            name: name.into(),
            value: Value::Vector { values: values.to_vec(), unit: unit.into() },
        });
        self
    }

    pub fn matrix(mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>, unit: &str) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        self.0.push(Entry {
            name: name.into(),
            value: Value::Matrix { rows, cols, data, unit: unit.into() },
        });
        self
    }

    pub fn text(mut self, name: &str, text: impl Into<String>) -> Self {
        self.0.push(Entry { name: name.into(), value: Value::Text { text: text.into() } });
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.iter().find(|e| e.name == name).map(|e| &e.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step_index: usize,
    pub phase: String,
    pub payload: Payload,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub converged: bool,
    pub iterations: usize,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("TraceClosed: the trace was already finalized")]
    TraceClosed,
}

pub const PHASE_SETUP: &str = "setup";
pub const PHASE_ITERATION: &str = "iteration";
pub const PHASE_CONVERGENCE: &str = "convergence";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub solver: String,
    pub config: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
    pub outcome: Option<Outcome>,
}

impl SolveTrace {
    pub fn new(solver: impl Into<String>, config: Vec<(String, String)>) -> Self {
        Self {
            solver: solver.into(),
            config,
            records: Vec::new(),
            outcome: None,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.outcome.is_some()
    }

    /// Append a record and return its step index.
    pub fn record(
        &mut self,
        phase: &str,
        payload: Payload,
        message: impl Into<String>,
    ) -> Result<usize, TraceError> {
        if self.is_closed() {
            return Err(TraceError::TraceClosed);
        }
        let step_index = self.records.len();
        self.records.push(TraceRecord {
            step_index,
            phase: phase.into(),
            payload,
            message: message.into(),
        });
        Ok(step_index)
    }

    /// Solvers own their trace until they finalize it, so appends cannot fail.
    pub(crate) fn push(&mut self, phase: &str, payload: Payload, message: impl Into<String>) {
        self.record(phase, payload, message)
            .expect("solver trace is open until finalized");
    }

    pub fn finalize(&mut self, outcome: Outcome) -> Result<(), TraceError> {
        if self.is_closed() {
            return Err(TraceError::TraceClosed);
        }
        self.outcome = Some(outcome);
        Ok(())
    }

    pub fn iteration_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.phase == PHASE_ITERATION)
    }
}

fn fmt_num(v: f64, precision: usize) -> String {
    let tiny = 10f64.powi(-(precision as i32));
    if v != 0.0 && v.abs() < tiny {
        format!("{v:.precision$e}")
    } else if v == 0.0 {
        // avoid rendering -0
        format!("{:.precision$}", 0.0)
    } else {
        format!("{v:.precision$}")
    }
}

fn unit_suffix(unit: &str) -> String {
    if unit.is_empty() {
        String::new()
    } else {
        format!(" ({unit})")
    }
}

/// Render a trace as deterministic fixed-precision text.
pub fn render_text(trace: &SolveTrace, precision: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== {} ==", trace.solver);
    if !trace.config.is_empty() {
        let _ = writeln!(out, "config:");
        for (k, v) in &trace.config {
            let _ = writeln!(out, "  {k} = {v}");
        }
    }
    for r in &trace.records {
        let _ = writeln!(out, "-- [{}] {}: {}", r.step_index, r.phase, r.message);
        for e in &r.payload.0 {
            render_entry(&mut out, e, precision);
        }
    }
    match &trace.outcome {
        Some(o) => {
            let state = if o.converged { "converged" } else { "not converged" };
            let _ = writeln!(out, "== outcome: {state} after {} iterations: {} ==", o.iterations, o.summary);
        }
        None => {
            let _ = writeln!(out, "== outcome: pending ==");
        }
    }
    out
}

fn render_entry(out: &mut String, e: &Entry, precision: usize) {
    match &e.value {
        Value::Scalar { value, unit } => {
            let _ = writeln!(out, "  {}{} = {}", e.name, unit_suffix(unit), fmt_num(*value, precision));
        }
        Value::Vector { values, unit } => {
            let items: Vec<String> = values.iter().map(|v| fmt_num(*v, precision)).collect();
            let _ = writeln!(out, "  {}{} = [{}]", e.name, unit_suffix(unit), items.join(", "));
        }
        Value::Matrix { rows, cols, data, unit } => {
            if *rows > MAX_RENDERED_DIM || *cols > MAX_RENDERED_DIM {
                let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
                let _ = writeln!(
                    out,
                    "  {}{} = <{rows}x{cols} matrix, frobenius norm {}>",
                    e.name,
                    unit_suffix(unit),
                    fmt_num(norm, precision)
                );
                return;
            }
            let cells: Vec<String> = data.iter().map(|v| fmt_num(*v, precision)).collect();
            let width = cells.iter().map(String::len).max().unwrap_or(0);
            let _ = writeln!(out, "  {}{} =", e.name, unit_suffix(unit));
            for row in 0..*rows {
                let line: Vec<String> = (0..*cols)
                    .map(|c| format!("{:>width$}", cells[row * cols + c]))
                    .collect();
                let _ = writeln!(out, "    [{}]", line.join(" "));
            }
        }
        Value::Text { text } => {
            let _ = writeln!(out, "  {} = {}", e.name, text);
        }
    }
}
