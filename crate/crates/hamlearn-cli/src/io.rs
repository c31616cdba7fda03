//! CSV and JSON artifacts.

use std::fs;
use std::path::Path;

use hamlearn::isolation::{PlanRow, Probe, RecoveryReport};
use hamlearn::shadows::OverlapEstimate;
use hamlearn::sim::TraceSample;
use hamlearn::{NoiseMode, PauliString, ProductStateSpec, TimeTrace};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::figures::FigureRow;
use crate::pipeline::FitReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub observable: String,
    pub initial_state: String,
    pub time_us: f64,
    pub mean: f64,
    pub std_error: f64,
    pub shots_or_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub pa: String,
    pub pb: String,
    pub estimate: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub samples: usize,
}

impl From<&OverlapEstimate> for OverlapRow {
    fn from(e: &OverlapEstimate) -> Self {
        Self { pa: e.pa.to_string(), pb: e.pb.to_string(), estimate: e.value, epsilon: e.epsilon, delta: e.delta, samples: e.samples_used }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))).collect()
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `X0Y1@+y0+z1` becomes `X0Y1_py0pz1.csv`.
pub fn trace_file_name(probe: &Probe) -> String {
    let clean = |s: String| s.replace('+', "p").replace('-', "m");
    format!("{}_{}.csv", clean(probe.observable.to_string()), clean(probe.initial.to_string()))
}

pub fn trace_rows(trace: &TimeTrace) -> Vec<TraceRow> {
    let observable = trace.observable.to_string();
    let initial_state = trace.initial.to_string();
    trace
        .samples
        .iter()
        .map(|s| TraceRow {
            observable: observable.clone(),
            initial_state: initial_state.clone(),
            time_us: s.time_us,
            mean: s.mean,
            std_error: s.std_error,
            shots_or_sigma: trace.noise.column_value(),
            seed: trace.seed,
        })
        .collect()
}

pub fn write_trace(path: &Path, trace: &TimeTrace) -> Result<()> {
    write_csv(path, &trace_rows(trace))
}

/// Inverse of [`NoiseMode::column_value`]: 0 is noiseless, values below 1 are σ, others shot counts.
pub fn noise_from_column(v: f64) -> NoiseMode {
    if v == 0.0 {
        NoiseMode::None
    } else if v < 1.0 {
        NoiseMode::Gaussian { sigma: v }
    } else {
        NoiseMode::Shots { shots: v.round() as u64 }
    }
}

pub fn read_trace(path: &Path, n_qubits: usize) -> Result<TimeTrace> {
    let rows: Vec<TraceRow> = read_csv(path)?;
    let first = rows.first().ok_or_else(|| HarnessError::Config(format!("{}: empty trace", path.display())))?;
    let observable = PauliString::parse(&first.observable, n_qubits)?;
    let initial = ProductStateSpec::parse(&first.initial_state, n_qubits)?;
    if rows.iter().any(|r| r.observable != first.observable || r.initial_state != first.initial_state) {
        return Err(HarnessError::Config(format!("{}: mixes several (observable, state) pairs", path.display())));
    }
    if let Some(r) = rows.iter().find(|r| !r.mean.is_finite() || !r.std_error.is_finite()) {
        return Err(HarnessError::Numerical(format!("{}: non-finite sample at t = {}", path.display(), r.time_us)));
    }
    let trace = TimeTrace {
        observable,
        initial,
        samples: rows.iter().map(|r| TraceSample { time_us: r.time_us, mean: r.mean, std_error: r.std_error }).collect(),
        noise: noise_from_column(first.shots_or_sigma),
        seed: first.seed,
        adjusted: false,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_plan(path: &Path, rows: &[PlanRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_recovery(path: &Path, report: &RecoveryReport) -> Result<()> {
    write_csv(path, &report.rows)
}

pub fn write_overlaps(path: &Path, estimates: &[OverlapEstimate]) -> Result<()> {
    let rows: Vec<OverlapRow> = estimates.iter().map(OverlapRow::from).collect();
    write_csv(path, &rows)
}

pub fn write_fits(path: &Path, fits: &[FitReport]) -> Result<()> {
    write_json(path, fits)
}

pub fn write_figure(path: &Path, rows: &[FigureRow]) -> Result<()> {
    write_csv(path, rows)
}
