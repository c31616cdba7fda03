//! Traces from the simulators, robust fits, and parameter recovery, composed.

use std::collections::BTreeMap;

use hamlearn::exact::model_series_traces;
use hamlearn::interp::{chebyshev_sample, robust_fit, select_degree, FitConfig};
use hamlearn::isolation::{chip_parameters, finite_difference_derivative, plan_chip, plan_probes, recover, Method, Probe};
use hamlearn::model::chip16;
use hamlearn::rng::stream;
use hamlearn::sim::{evolve_and_measure_many, DephasingConvention};
use hamlearn::{NoiseMode, SimConfig, TimeTrace};

fn probe_of(t: &TimeTrace) -> Probe {
    Probe { observable: t.observable.clone(), initial: t.initial.clone() }
}

fn series_traces_for(probes: &[Probe], times: &[f64]) -> Vec<TimeTrace> {
    let model = chip16().sublattice(&[0, 1]).unwrap();
    probes
        .iter()
        .flat_map(|p| {
            model_series_traces(&model, DephasingConvention::default(), &p.initial, std::slice::from_ref(&p.observable), times, 3).unwrap()
        })
        .collect()
}

#[test]
fn chip_pair_recovered_from_noiseless_series_traces() {
    let model = chip16().sublattice(&[0, 1]).unwrap();
    let plan = plan_chip(2, 0, 1).unwrap();
    let probes = plan_probes(&plan);
    let mut times = chebyshev_sample(120, 0.1, 20.0, &mut stream(4, &[])).unwrap();
    times.dedup();
    let traces = series_traces_for(&probes, &times);
    let fit = FitConfig { degrees_to_try: vec![6], ..FitConfig::default() };
    let derivs: BTreeMap<Probe, f64> =
        traces.iter().map(|t| (probe_of(t), robust_fit(&t.points(), 6, &fit).unwrap().derivative_at_zero())).collect();
    let truth = chip_parameters(&model, DephasingConvention::default(), 0, 1);
    let report = recover(&derivs, &plan, Method::Interpolation, &truth).unwrap();
    let scale = truth.values().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = report.max_error().unwrap();
    assert!(worst < 1e-3 * scale, "worst {worst:e} against scale {scale:e}");
}

#[test]
fn interpolation_beats_finite_differences_on_trotter_traces() {
    let model = chip16().sublattice(&[0, 1]).unwrap();
    let plan = plan_chip(2, 0, 1).unwrap();
    let probes = plan_probes(&plan);
    let mut times = chebyshev_sample(80, 0.5, 20.0, &mut stream(9, &[])).unwrap();
    times.dedup();
    let noiseless = SimConfig { dt: 0.01, n_trajectories: 1, noise: NoiseMode::None, master_seed: 2, ..SimConfig::default() };
    let quiet = model.noiseless();
    let traces: Vec<TimeTrace> = probes
        .iter()
        .flat_map(|p| evolve_and_measure_many(&quiet, &p.initial, std::slice::from_ref(&p.observable), &times, &noiseless).unwrap())
        .collect();
    let fit = FitConfig::default();
    let interp: BTreeMap<Probe, f64> =
        traces.iter().map(|t| (probe_of(t), select_degree(&t.points(), &fit).unwrap().0.derivative_at_zero())).collect();
    let fd: BTreeMap<Probe, f64> = traces.iter().map(|t| (probe_of(t), finite_difference_derivative(t).unwrap())).collect();
    let truth = chip_parameters(&quiet, DephasingConvention::default(), 0, 1);
    let targets: Vec<_> = plan.iter().filter(|r| r.target.stage() <= 1).cloned().collect();
    let a = recover(&interp, &targets, Method::Interpolation, &truth).unwrap().max_error().unwrap();
    let b = recover(&fd, &targets, Method::FiniteDifference, &truth).unwrap().max_error().unwrap();
    assert!(a < b, "interpolation {a:e} finite differences {b:e}");
}
