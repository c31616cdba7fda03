//! Subcommand implementations; each writes its artifacts under the output directory.

use std::path::{Path, PathBuf};

use hamlearn::isolation::{plan_table, RecoveryReport};
use hamlearn::rng::{derive_seed, label_hash};
use hamlearn::shadows::{
    estimate_overlaps, Channel, DepolarizingChannel, ExactChannel, IdentityChannel, OverlapEstimate, ShadowConfig, TrajectoryChannel,
};
use hamlearn::{PauliAxis, PauliString, SimConfig};

use crate::config::{ChannelBackend, ChannelSpec, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::figures::{self, Figure, FigureRow};
use crate::io;
use crate::pipeline::{build_plan, generate_traces, probes, recover_all, sample_times, trace_seed, truth};

pub fn traces_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("traces")
}

/// One trace CSV per distinct (observable, state) pair of the plan, plus plan.csv.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = cfg.build_model(0)?;
    let plan = build_plan(&cfg.plan, &model)?;
    let probes = probes(&plan);
    if probes.is_empty() {
        return Ok(Vec::new());
    }
    let times = sample_times(&cfg.grid, cfg.master_seed, 0)?;
    let traces = generate_traces(&model, &probes, &times, &cfg.sim, cfg.sim.noise, trace_seed(cfg.master_seed, 0))?;
    let dir = traces_dir(cfg);
    let mut written = Vec::new();
    for (p, t) in probes.iter().zip(&traces) {
        let path = dir.join(io::trace_file_name(p));
        io::write_trace(&path, t)?;
        written.push(path);
    }
    let plan_path = cfg.output_dir.join("plan.csv");
    io::write_plan(&plan_path, &plan_table(&plan))?;
    written.push(plan_path);
    Ok(written)
}

/// Fits the plan's traces from `dir` (default `<out>/traces`) and writes recovery.csv and fits.json.
pub fn recover(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<RecoveryReport> {
    let model = cfg.build_model(0)?;
    let plan = build_plan(&cfg.plan, &model)?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| traces_dir(cfg));
    let mut traces = Vec::new();
    for p in probes(&plan) {
        let path = dir.join(io::trace_file_name(&p));
        if !path.exists() {
            return Err(HarnessError::Config(format!("missing trace for {p}: {}", path.display())));
        }
        traces.push(io::read_trace(&path, model.n_qubits)?);
    }
    let (report, fits) = recover_all(cfg, &plan, &traces, &truth(&model, &cfg.sim, &plan))?;
    io::write_recovery(&cfg.output_dir.join("recovery.csv"), &report)?;
    io::write_fits(&cfg.output_dir.join("fits.json"), &fits)?;
    Ok(report)
}

fn weight_one(n: usize) -> Vec<PauliString> {
    (0..n).flat_map(|j| PauliAxis::ALL.into_iter().map(move |a| PauliString::single(n, j, a).expect("site in range"))).collect()
}

fn parse_paulis(labels: &[String], n: usize) -> Result<Vec<PauliString>> {
    if labels.is_empty() {
        return Ok(weight_one(n));
    }
    Ok(labels.iter().map(|l| PauliString::parse(l, n)).collect::<hamlearn::Result<_>>()?)
}

/// Shadow estimates of 2^{-n} tr(P_a Φ(P_b)) for the configured channel; writes overlaps.csv.
pub fn shadows(cfg: &ExperimentConfig) -> Result<Vec<OverlapEstimate>> {
    let model = cfg.build_model(0)?;
    let n = model.n_qubits;
    let s = &cfg.shadows;
    let channel: Box<dyn Channel> = match &s.channel {
        ChannelSpec::Identity => Box::new(IdentityChannel { n_qubits: n }),
        ChannelSpec::Depolarizing { p } => Box::new(DepolarizingChannel { n_qubits: n, p: *p }),
        ChannelSpec::Model { time_us, backend, dt } => {
            let dt = dt.or(cfg.sim.dt).unwrap_or_else(|| SimConfig::default_dt(&model, cfg.grid.t0));
            match backend {
                ChannelBackend::Exact => {
                    let parts: Vec<_> = model
                        .static_shift_rule(cfg.sim.quadrature_nodes)
                        .into_iter()
                        .map(|(w, shifts)| (w, model.lindbladian(cfg.sim.dephasing, Some(&shifts))))
                        .collect();
                    Box::new(ExactChannel::from_mixture(&parts, *time_us, dt)?)
                }
                ChannelBackend::Trajectory => {
                    Box::new(TrajectoryChannel { model: model.clone(), t: *time_us, dt, convention: cfg.sim.dephasing })
                }
            }
        }
    };
    let shadow_cfg = ShadowConfig {
        normalization: s.normalization,
        weight_cap: s.weight_cap,
        axes: s.axes.clone(),
        master_seed: derive_seed(cfg.master_seed, &[label_hash("shadows")]),
    };
    let pa = parse_paulis(&s.paulis_a, n)?;
    let pb = parse_paulis(&s.paulis_b, n)?;
    let estimates = estimate_overlaps(channel.as_ref(), &pa, &pb, s.epsilon, s.delta, &shadow_cfg)?;
    io::write_overlaps(&cfg.output_dir.join("overlaps.csv"), &estimates)?;
    Ok(estimates)
}

/// Writes `<out>/figN.csv`.
pub fn figure(cfg: &ExperimentConfig, which: Figure) -> Result<Vec<FigureRow>> {
    let rows = figures::run(cfg, which)?;
    io::write_figure(&cfg.output_dir.join(format!("{}.csv", which.name())), &rows)?;
    Ok(rows)
}
