//! Figure workloads: recovery error against initial time (fig2), noise level (fig3)
//! and coupling (fig4), for interpolation and finite differences.

use std::collections::BTreeMap;

use hamlearn::interp::FitConfig;
use hamlearn::isolation::{recover, IsolationRule, Method, ParamId, TermKind};
use hamlearn::pauli::PauliSum;
use hamlearn::rng::{derive_seed, label_hash};
use hamlearn::{LindbladModel, NoiseMode, TimeTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GridSpec, PlanSpec, SimSpec};
use crate::error::{HarnessError, Result};
use crate::pipeline::{build_plan, estimate_derivatives, generate_traces, probes, sample_times, trace_seed, truth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

/// Summary of the errors at one x value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub figure: String,
    pub label: String,
    pub method: Method,
    pub x: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub samples: usize,
    /// Predicted finite-difference bias, where available.
    pub reference: Option<f64>,
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn row(figure: Figure, label: String, method: Method, x: f64, errors: &[f64], reference: Option<f64>) -> FigureRow {
    FigureRow {
        figure: figure.name().into(),
        label,
        method,
        x,
        median: quantile(errors, 0.5),
        p25: quantile(errors, 0.25),
        p75: quantile(errors, 0.75),
        samples: errors.len(),
        reference,
    }
}

/// Plan restricted to the tracked target prefix on `edges`, with the tracked parameters.
struct Workload {
    plan: Vec<IsolationRule>,
    tracked: Vec<ParamId>,
    truth: BTreeMap<ParamId, f64>,
}

fn workload(cfg: &ExperimentConfig, model: &LindbladModel, edges: Option<Vec<[usize; 2]>>) -> Result<Workload> {
    let spec = PlanSpec { kind: cfg.plan.kind, edges, targets: Some(vec![cfg.figure.target.clone()]) };
    let plan = build_plan(&spec, model)?;
    let tracked: Vec<ParamId> = plan.iter().map(|r| r.target).filter(|t| t.to_string().starts_with(cfg.figure.target.as_str())).collect();
    if tracked.is_empty() {
        return Err(HarnessError::Config(format!("figure target '{}' matches no planned parameter", cfg.figure.target)));
    }
    let truth = truth(model, &cfg.sim, &plan);
    Ok(Workload { plan, tracked, truth })
}

fn tracked_edge(cfg: &ExperimentConfig, model: &LindbladModel) -> Result<[usize; 2]> {
    match cfg.figure.edge {
        Some(e) => Ok(e),
        None => model.edges.first().map(|e| [e.i, e.j]).ok_or_else(|| HarnessError::Config("model has no edges".into())),
    }
}

/// Absolute errors of the tracked parameters.
fn errors(w: &Workload, traces: &[TimeTrace], method: Method, fit: &FitConfig) -> Result<Vec<f64>> {
    let (derivs, _) = estimate_derivatives(traces, method, fit)?;
    let report = recover(&derivs, &w.plan, method, &w.truth)?;
    Ok(w.tracked
        .iter()
        .map(|t| {
            let name = t.to_string();
            let est = report.estimate(&name, method).expect("tracked target recovered");
            (est - w.truth[t]).abs()
        })
        .collect())
}

fn with_noise(traces: &[TimeTrace], noise: NoiseMode, seed: u64) -> Vec<TimeTrace> {
    traces.iter().map(|t| t.with_noise(noise, seed)).collect()
}

/// Σ_{k≥2} t0^{k−1}/k! · y^{(k)}(0) propagated through each tracked rule, averaged over static shifts.
pub fn finite_difference_bias(model: &LindbladModel, sim: &SimSpec, rule: &IsolationRule, t0: f64, max_order: usize) -> f64 {
    let mut total = 0.0;
    for (wq, shifts) in model.static_shift_rule(sim.quadrature_nodes) {
        let l = model.lindbladian(sim.dephasing, Some(&shifts));
        for term in &rule.terms {
            let TermKind::Derivative(p) = &term.kind else { continue };
            let w = *term.weight.numer() as f64 / *term.weight.denom() as f64;
            let mut s = PauliSum::from_string(&p.observable);
            s = l.adjoint(&s);
            let mut coeff = 1.0;
            for k in 2..=max_order {
                s = l.adjoint(&s);
                coeff *= t0 / k as f64;
                total += wq * w * coeff * s.expectation(&p.initial).re;
            }
        }
    }
    total
}

struct InstanceErrors {
    interp: Vec<Vec<f64>>,
    fd: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn fig3(cfg: &ExperimentConfig) -> Result<Vec<FigureRow>> {
    let f = &cfg.figure;
    let runs: Vec<InstanceErrors> = (0..f.instances as u64)
        .into_par_iter()
        .map(|i| {
            let model = cfg.build_model(i)?;
            let w = workload(cfg, &model, Some(vec![tracked_edge(cfg, &model)?]))?;
            let times = sample_times(&cfg.grid, cfg.master_seed, i)?;
            let clean = generate_traces(&model, &probes(&w.plan), &times, &cfg.sim, NoiseMode::None, trace_seed(cfg.master_seed, i))?;
            let bias = w
                .tracked
                .iter()
                .map(|t| {
                    let r = w.plan.iter().find(|r| r.target == *t).expect("tracked rule");
                    finite_difference_bias(&model, &cfg.sim, r, times[0], 8).abs()
                })
                .collect();
            let mut out = InstanceErrors { interp: Vec::new(), fd: Vec::new(), bias };
            for (s, sigma) in f.sigmas.iter().enumerate() {
                let seed = derive_seed(cfg.master_seed, &[label_hash("fig3"), i, s as u64]);
                let noisy = with_noise(&clean, NoiseMode::Gaussian { sigma: *sigma }, seed);
                out.interp.push(errors(&w, &noisy, Method::Interpolation, &cfg.fit)?);
                out.fd.push(errors(&w, &noisy, Method::FiniteDifference, &cfg.fit)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let bias: Vec<f64> = runs.iter().flat_map(|r| r.bias.iter().copied()).collect();
    let reference = quantile(&bias, 0.5);
    let mut rows = Vec::new();
    for (s, sigma) in f.sigmas.iter().enumerate() {
        let interp: Vec<f64> = runs.iter().flat_map(|r| r.interp[s].iter().copied()).collect();
        let fd: Vec<f64> = runs.iter().flat_map(|r| r.fd[s].iter().copied()).collect();
        rows.push(row(Figure::Fig3, f.target.clone(), Method::Interpolation, *sigma, &interp, None));
        rows.push(row(Figure::Fig3, f.target.clone(), Method::FiniteDifference, *sigma, &fd, Some(reference)));
    }
    Ok(rows)
}

/// Window [t0, t_max] with t_max fixed; σ = √(t0 / sample_budget).
fn fig2(cfg: &ExperimentConfig) -> Result<Vec<FigureRow>> {
    let f = &cfg.figure;
    if let Some(t0) = f.t0_values.iter().find(|t| **t >= cfg.grid.t_max) {
        return Err(HarnessError::Config(format!("fig2 initial time {t0} is not below grid.t_max = {}", cfg.grid.t_max)));
    }
    let runs: Vec<InstanceErrors> = (0..f.instances as u64)
        .into_par_iter()
        .map(|i| {
            let model = cfg.build_model(i)?;
            let w = workload(cfg, &model, Some(vec![tracked_edge(cfg, &model)?]))?;
            let mut out = InstanceErrors { interp: Vec::new(), fd: Vec::new(), bias: Vec::new() };
            for (k, t0) in f.t0_values.iter().enumerate() {
                let grid = GridSpec { t0: *t0, ..cfg.grid.clone() };
                let seed = derive_seed(cfg.master_seed, &[label_hash("fig2"), k as u64]);
                let times = sample_times(&grid, seed, i)?;
                let clean = generate_traces(&model, &probes(&w.plan), &times, &cfg.sim, NoiseMode::None, trace_seed(seed, i))?;
                let sigma = (t0 / f.sample_budget).sqrt();
                let noisy = with_noise(&clean, NoiseMode::Gaussian { sigma }, derive_seed(seed, &[i]));
                out.interp.push(errors(&w, &noisy, Method::Interpolation, &cfg.fit)?);
                out.fd.push(errors(&w, &noisy, Method::FiniteDifference, &cfg.fit)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, t0) in f.t0_values.iter().enumerate() {
        let interp: Vec<f64> = runs.iter().flat_map(|r| r.interp[k].iter().copied()).collect();
        let fd: Vec<f64> = runs.iter().flat_map(|r| r.fd[k].iter().copied()).collect();
        rows.push(row(Figure::Fig2, f.target.clone(), Method::Interpolation, *t0, &interp, None));
        rows.push(row(Figure::Fig2, f.target.clone(), Method::FiniteDifference, *t0, &fd, None));
    }
    Ok(rows)
}

fn fig4(cfg: &ExperimentConfig) -> Result<Vec<FigureRow>> {
    let f = &cfg.figure;
    let model = cfg.build_model(0)?;
    let w = workload(cfg, &model, None)?;
    let times = sample_times(&cfg.grid, cfg.master_seed, 0)?;
    let clean = generate_traces(&model, &probes(&w.plan), &times, &cfg.sim, NoiseMode::None, trace_seed(cfg.master_seed, 0))?;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..f.instances as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, &[label_hash("fig4"), i]);
            let noisy = with_noise(&clean, NoiseMode::Gaussian { sigma: f.sigma }, seed);
            Ok((errors(&w, &noisy, Method::Interpolation, &cfg.fit)?, errors(&w, &noisy, Method::FiniteDifference, &cfg.fit)?))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, t) in w.tracked.iter().enumerate() {
        let interp: Vec<f64> = runs.iter().map(|r| r.0[k]).collect();
        let fd: Vec<f64> = runs.iter().map(|r| r.1[k]).collect();
        let bias = w.plan.iter().find(|r| r.target == *t).map(|r| finite_difference_bias(&model, &cfg.sim, r, times[0], 8).abs());
        rows.push(row(Figure::Fig4, t.to_string(), Method::Interpolation, w.truth[t], &interp, None));
        rows.push(row(Figure::Fig4, t.to_string(), Method::FiniteDifference, w.truth[t], &fd, bias));
    }
    Ok(rows)
}

pub fn run(cfg: &ExperimentConfig, which: Figure) -> Result<Vec<FigureRow>> {
    match which {
        Figure::Fig2 => fig2(cfg),
        Figure::Fig3 => fig3(cfg),
        Figure::Fig4 => fig4(cfg),
    }
}
