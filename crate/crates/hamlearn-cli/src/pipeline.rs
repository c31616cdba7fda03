//! Plan, simulate, fit and recover.

use std::collections::{BTreeMap, BTreeSet};

use hamlearn::exact::{model_series_traces, model_traces};
use hamlearn::interp::{
    chebyshev_sample, derivative_at_zero, derivative_error_budget, robust_fit, select_degree, uniform_times, DegreeScore, FitConfig,
};
use hamlearn::isolation::{
    finite_difference_derivative, plan_chip, plan_dissipation, plan_pair, plan_probes, plan_single_qubit, plan_two_qubit, recover,
    IsolationRule, Method, ParamId, Probe, RecoveryReport,
};
use hamlearn::rng::{derive_seed, label_hash, stream};
use hamlearn::sim::evolve_and_measure_many;
use hamlearn::{LindbladModel, NoiseMode, PauliString, ProductStateSpec, SimConfig, TimeTrace};
use serde::{Deserialize, Serialize};

use crate::config::{Backend, ExperimentConfig, GridSpec, MethodKind, PlanKind, PlanSpec, SimSpec, Spacing};
use crate::error::{HarnessError, Result};

/// One fitted trace, as written to fits.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub observable: String,
    pub initial_state: String,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub domain: (f64, f64),
    pub residual_sup: f64,
    pub derivative_at_zero: f64,
    pub error_budget: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_scores: Vec<DegreeScore>,
}

/// Rules for every edge of `spec`, one per target, filtered by target prefix with dependencies kept.
pub fn build_plan(spec: &PlanSpec, model: &LindbladModel) -> Result<Vec<IsolationRule>> {
    let n = model.n_qubits;
    let edges: Vec<(usize, usize)> = match &spec.edges {
        Some(e) => e.iter().map(|[i, j]| (*i, *j)).collect(),
        None => model.edges.iter().map(|e| (e.i, e.j)).collect(),
    };
    let mut all: Vec<IsolationRule> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, j) in edges {
        if model.coupling(i, j).is_none() {
            return Err(HarnessError::Config(format!("plan edge ({i}, {j}) is not an edge of the model")));
        }
        let rules = match spec.kind {
            PlanKind::Chip => plan_chip(n, i, j)?,
            PlanKind::Pair => plan_pair(n, i, j)?,
            PlanKind::TwoQubit => plan_two_qubit(n, i, j)?,
            PlanKind::SingleQubit => plan_single_qubit(n, i, j)?,
            PlanKind::Dissipation => plan_dissipation(n, i, j)?,
        };
        for r in rules {
            if seen.insert(r.target) {
                all.push(r);
            }
        }
    }
    let Some(prefixes) = &spec.targets else {
        return Ok(all);
    };
    let by_target: BTreeMap<ParamId, &IsolationRule> = all.iter().map(|r| (r.target, r)).collect();
    let mut keep: BTreeSet<ParamId> = BTreeSet::new();
    let mut stack: Vec<ParamId> =
        all.iter().filter(|r| prefixes.iter().any(|p| r.target.to_string().starts_with(p.as_str()))).map(|r| r.target).collect();
    while let Some(t) = stack.pop() {
        if keep.insert(t) {
            if let Some(r) = by_target.get(&t) {
                stack.extend(r.dependencies());
            }
        }
    }
    Ok(all.into_iter().filter(|r| keep.contains(&r.target)).collect())
}

/// t0 followed by `n_points − 1` times on (t0, t_max]; Chebyshev draws are seeded per instance.
pub fn sample_times(grid: &GridSpec, seed: u64, instance: u64) -> Result<Vec<f64>> {
    let mut times = match grid.spacing {
        Spacing::Uniform => uniform_times(grid.n_points, grid.t0, grid.t_max)?,
        Spacing::Chebyshev => {
            let mut rng = stream(seed, &[label_hash("times"), instance]);
            let mut t = chebyshev_sample(grid.n_points.saturating_sub(1).max(1), grid.t0, grid.t_max, &mut rng)?;
            t.push(grid.t0);
            t
        }
    };
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times)
}

pub fn trace_seed(master: u64, instance: u64) -> u64 {
    derive_seed(master, &[label_hash("traces"), instance])
}

/// Traces for `probes`, in order, with `noise` applied.
pub fn generate_traces(
    model: &LindbladModel,
    probes: &[Probe],
    times: &[f64],
    sim: &SimSpec,
    noise: NoiseMode,
    seed: u64,
) -> Result<Vec<TimeTrace>> {
    let mut groups: BTreeMap<&ProductStateSpec, Vec<&PauliString>> = BTreeMap::new();
    for p in probes {
        let obs = groups.entry(&p.initial).or_default();
        if !obs.contains(&&p.observable) {
            obs.push(&p.observable);
        }
    }
    let mut out: BTreeMap<Probe, TimeTrace> = BTreeMap::new();
    for (spec, obs) in groups {
        let obs: Vec<PauliString> = obs.into_iter().cloned().collect();
        let t0 = times.first().copied().unwrap_or(1.0);
        let traces = match sim.backend {
            Backend::Trajectory => {
                let cfg = SimConfig {
                    dt: sim.dt.unwrap_or_else(|| SimConfig::default_dt(model, t0)),
                    n_trajectories: sim.n_trajectories,
                    noise,
                    master_seed: seed,
                    dephasing: sim.dephasing,
                    mixed_states: sim.mixed_states,
                    static_shifts: sim.static_shifts,
                };
                evolve_and_measure_many(model, spec, &obs, times, &cfg)?
            }
            Backend::Exact => {
                let dt = sim.dt.unwrap_or_else(|| SimConfig::default_dt(model, t0));
                model_traces(model, sim.dephasing, spec, &obs, times, dt, sim.quadrature_nodes)?
                    .into_iter()
                    .map(|t| t.with_noise(noise, seed))
                    .collect()
            }
            Backend::Series => model_series_traces(model, sim.dephasing, spec, &obs, times, sim.quadrature_nodes)?
                .into_iter()
                .map(|t| t.with_noise(noise, seed))
                .collect(),
        };
        for t in traces {
            out.insert(Probe { observable: t.observable.clone(), initial: t.initial.clone() }, t);
        }
    }
    Ok(probes.iter().map(|p| out[p].clone()).collect())
}

/// Standard deviation of one sample under `noise`.
pub fn noise_sigma(noise: NoiseMode) -> f64 {
    match noise {
        NoiseMode::None => 0.0,
        NoiseMode::Gaussian { sigma } => sigma,
        NoiseMode::Shots { shots } => 1.0 / (shots as f64).sqrt(),
    }
}

/// Robust fit of one trace: a fixed degree when only one is configured, cross-validated otherwise.
pub fn fit_trace(trace: &TimeTrace, fit: &FitConfig) -> Result<FitReport> {
    let points = trace.points();
    let (poly, scores) = match fit.degrees_to_try.as_slice() {
        [d] => (robust_fit(&points, *d, fit)?, Vec::new()),
        _ => select_degree(&points, fit)?,
    };
    let derivative = derivative_at_zero(&poly)?;
    let (a, b) = poly.domain;
    Ok(FitReport {
        observable: trace.observable.to_string(),
        initial_state: trace.initial.to_string(),
        degree: poly.degree,
        error_budget: derivative_error_budget(a, b, poly.degree, noise_sigma(trace.noise)),
        coefficients: poly.coefficients,
        domain: poly.domain,
        residual_sup: poly.residual_sup,
        derivative_at_zero: derivative,
        cv_scores: scores,
    })
}

fn probe_of(t: &TimeTrace) -> Probe {
    Probe { observable: t.observable.clone(), initial: t.initial.clone() }
}

/// d/dt⟨O⟩(0) for every trace; fit reports are returned for interpolation.
pub fn estimate_derivatives(traces: &[TimeTrace], method: Method, fit: &FitConfig) -> Result<(BTreeMap<Probe, f64>, Vec<FitReport>)> {
    let mut derivs = BTreeMap::new();
    let mut fits = Vec::new();
    for t in traces {
        let d = match method {
            Method::FiniteDifference => finite_difference_derivative(t)?,
            Method::Interpolation => {
                let f = fit_trace(t, fit)?;
                let d = f.derivative_at_zero;
                fits.push(f);
                d
            }
        };
        derivs.insert(probe_of(t), d);
    }
    Ok((derivs, fits))
}

/// True parameter values of the plan targets under the configured dephasing convention.
pub fn truth(model: &LindbladModel, sim: &SimSpec, plan: &[IsolationRule]) -> BTreeMap<ParamId, f64> {
    let l = model.lindbladian(sim.dephasing, None);
    plan.iter().map(|r| (r.target, r.target.value_in(&l))).collect()
}

pub fn requested_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let mut m = Vec::new();
    if cfg.wants(MethodKind::Interpolation) {
        m.push(Method::Interpolation);
    }
    if cfg.wants(MethodKind::FiniteDifference) {
        m.push(Method::FiniteDifference);
    }
    m
}

/// Recovery with every requested derivative method, rows grouped by method.
pub fn recover_all(
    cfg: &ExperimentConfig,
    plan: &[IsolationRule],
    traces: &[TimeTrace],
    truth: &BTreeMap<ParamId, f64>,
) -> Result<(RecoveryReport, Vec<FitReport>)> {
    let mut report = RecoveryReport::default();
    let mut fits = Vec::new();
    for method in requested_methods(cfg) {
        let (derivs, f) = estimate_derivatives(traces, method, &cfg.fit)?;
        fits.extend(f);
        report.rows.extend(recover(&derivs, plan, method, truth)?.rows);
    }
    Ok((report, fits))
}

/// Probes of a plan.
pub fn probes(plan: &[IsolationRule]) -> Vec<Probe> {
    plan_probes(plan)
}
