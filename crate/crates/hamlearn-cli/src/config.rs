//! Experiment configuration in TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use hamlearn::interp::FitConfig;
use hamlearn::model::{chip16, khz_to_rad_per_us, Edge};
use hamlearn::rng::{label_hash, stream};
use hamlearn::shadows::Normalization;
use hamlearn::sim::{DephasingConvention, MixedStateMode, StaticShiftMode};
use hamlearn::{LindbladModel, NoiseMode, PauliAxis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Interpolation,
    FiniteDifference,
    Shadows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub methods: Vec<MethodKind>,
    pub model: ModelSpec,
    pub plan: PlanSpec,
    pub sim: SimSpec,
    pub fit: FitConfig,
    pub grid: GridSpec,
    pub shadows: ShadowSpec,
    pub figure: FigureSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            methods: vec![MethodKind::Interpolation, MethodKind::FiniteDifference],
            model: ModelSpec::default(),
            plan: PlanSpec::default(),
            sim: SimSpec::default(),
            fit: FitConfig::default(),
            grid: GridSpec::default(),
            shadows: ShadowSpec::default(),
            figure: FigureSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Sites of the 16-qubit chip; the 4-site plaquette when absent.
    Chip(ChipModel),
    Random(RandomModel),
    Explicit(ExplicitModel),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Chip(ChipModel::default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Chain,
    Ring,
    #[default]
    Grid,
    Complete,
}

impl Topology {
    pub fn edges(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::Chain => (1..n).map(|j| (j - 1, j)).collect(),
            Topology::Ring => {
                let mut e: Vec<_> = (1..n).map(|j| (j - 1, j)).collect();
                if n > 2 {
                    e.push((0, n - 1));
                }
                e
            }
            Topology::Grid => {
                let w = (n as f64).sqrt().ceil() as usize;
                let mut e = Vec::new();
                for k in 0..n {
                    if (k + 1) % w != 0 && k + 1 < n {
                        e.push((k, k + 1));
                    }
                    if k + w < n {
                        e.push((k, k + w));
                    }
                }
                e
            }
            Topology::Complete => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        }
    }
}

/// Couplings J and frequencies Ω drawn from centred Gaussians with standard deviations in kHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomModel {
    pub n_qubits: usize,
    pub topology: Topology,
    pub coupling_std_khz: f64,
    pub frequency_std_khz: f64,
    pub t1_us: f64,
    pub t2_us: f64,
    pub t2_star_us: f64,
}

impl Default for RandomModel {
    fn default() -> Self {
        Self {
            n_qubits: 4,
            topology: Topology::Grid,
            coupling_std_khz: 100.0,
            frequency_std_khz: 100.0,
            t1_us: f64::INFINITY,
            t2_us: f64::INFINITY,
            t2_star_us: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub i: usize,
    pub j: usize,
    pub coupling_khz: f64,
}

/// Empty per-site lists mean zero frequency and infinite noise times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplicitModel {
    pub n_qubits: usize,
    pub edges: Vec<EdgeSpec>,
    pub frequency_khz: Vec<f64>,
    pub t1_us: Vec<f64>,
    pub t2_us: Vec<f64>,
    pub t2_star_us: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    #[default]
    Chip,
    Pair,
    TwoQubit,
    SingleQubit,
    Dissipation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    pub kind: PlanKind,
    /// Edges to plan for; every model edge when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Parameter-name prefixes such as "a_xx"; dependencies are kept. All targets when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Stochastic trajectories.
    #[default]
    Trajectory,
    /// Dense density matrix with RK4 steps of `dt`.
    Exact,
    /// Dense density matrix with a truncated Taylor propagator.
    Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub backend: Backend,
    /// Step in μs; derived from the noise times and t0 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub n_trajectories: usize,
    pub noise: NoiseMode,
    pub dephasing: DephasingConvention,
    pub mixed_states: MixedStateMode,
    pub static_shifts: StaticShiftMode,
    /// Gauss-Hermite nodes per site for the dense backends.
    pub quadrature_nodes: usize,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            backend: Backend::Trajectory,
            dt: None,
            n_trajectories: 189,
            noise: NoiseMode::Gaussian { sigma: 1e-4 },
            dephasing: DephasingConvention::default(),
            mixed_states: MixedStateMode::default(),
            static_shifts: StaticShiftMode::default(),
            quadrature_nodes: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Chebyshev,
    Uniform,
}

/// Sample times: t0 itself plus `n_points − 1` further times on (t0, t_max].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub t0: f64,
    pub t_max: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { t0: 0.03, t_max: 0.3, n_points: 120, spacing: Spacing::Chebyshev }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelBackend {
    #[default]
    Exact,
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity,
    Depolarizing {
        p: f64,
    },
    /// Evolution of the configured model for `time_us`.
    Model {
        time_us: f64,
        #[serde(default)]
        backend: ChannelBackend,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSpec {
    pub channel: ChannelSpec,
    /// Pauli labels such as "X0Z1"; every weight-one Pauli when empty.
    pub paulis_a: Vec<String>,
    pub paulis_b: Vec<String>,
    pub epsilon: f64,
    pub delta: f64,
    pub normalization: Normalization,
    pub weight_cap: usize,
    pub axes: Vec<PauliAxis>,
}

impl Default for ShadowSpec {
    fn default() -> Self {
        Self {
            channel: ChannelSpec::Identity,
            paulis_a: Vec::new(),
            paulis_b: Vec::new(),
            epsilon: 0.1,
            delta: 0.05,
            normalization: Normalization::default(),
            weight_cap: 4,
            axes: PauliAxis::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSpec {
    pub instances: usize,
    /// Noise levels swept by fig3.
    pub sigmas: Vec<f64>,
    /// Initial times (μs) swept by fig2; each must lie below grid.t_max.
    pub t0_values: Vec<f64>,
    /// fig2 keeps t0 · shots fixed at this value.
    pub sample_budget: f64,
    /// Noise level of fig4.
    pub sigma: f64,
    /// Edge whose parameter fig2 and fig3 track; the first model edge when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<[usize; 2]>,
    pub target: String,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            instances: 100,
            sigmas: (0..9).map(|k| 10f64.powf(-3.0 - 0.5 * k as f64)).collect(),
            t0_values: (0..8).map(|k| 10f64.powf(-2.5 + 0.25 * k as f64)).collect(),
            sample_budget: 1e7,
            sigma: 1e-4,
            edge: None,
            target: "a_xx".into(),
        }
    }
}

/// A configuration error with the 1-based line it refers to, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

/// A validation failure at a dotted key path such as ["grid", "t0"].
type Invalid = (Vec<&'static str>, String);

fn invalid(path: &[&'static str], msg: impl Into<String>) -> Invalid {
    (path.to_vec(), msg.into())
}

/// Line of `key` inside table `[a.b]` (or of the table header itself).
fn locate(src: &str, path: &[&str]) -> Option<usize> {
    let (key, table) = path.split_last()?;
    let table = table.join(".");
    let mut current = String::new();
    let mut header_line = None;
    for (k, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table || (!table.is_empty() && current == format!("{table}.{key}")) {
                header_line.get_or_insert(k + 1);
            }
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let lhs = lhs.trim();
            let full = if current.is_empty() { lhs.to_string() } else { format!("{current}.{lhs}") };
            let want = if table.is_empty() { key.to_string() } else { format!("{table}.{key}") };
            if full == want {
                return Some(k + 1);
            }
        }
    }
    header_line
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(src)
            .map_err(|e| ConfigError { line: e.span().map(|s| line_of_offset(src, s.start)), message: e.message().trim().to_string() })?;
        cfg.check().map_err(|(path, message)| ConfigError { line: locate(src, &path), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let src = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|(path, message)| ConfigError { line: None, message: format!("{}: {message}", path.join(".")) })
    }

    fn check(&self) -> Result<(), Invalid> {
        if self.master_seed > i64::MAX as u64 {
            return Err(invalid(&["master_seed"], format!("master_seed must not exceed {}", i64::MAX)));
        }
        if self.methods.is_empty() {
            return Err(invalid(&["methods"], "at least one method is required"));
        }
        let g = &self.grid;
        if !(g.t0 > 0.0) || !g.t0.is_finite() {
            return Err(invalid(&["grid", "t0"], format!("t0 must be positive, got {}", g.t0)));
        }
        if !(g.t_max > g.t0) || !g.t_max.is_finite() {
            return Err(invalid(&["grid", "t_max"], format!("t_max must exceed t0, got {}", g.t_max)));
        }
        self.fit.validate().map_err(|e| invalid(&["fit"], e.to_string()))?;
        let dmax = self.fit.degrees_to_try.iter().copied().max().unwrap_or(1);
        if g.n_points < dmax + 1 {
            return Err(invalid(&["grid", "n_points"], format!("n_points = {} is below max degree + 1 = {}", g.n_points, dmax + 1)));
        }
        let s = &self.sim;
        if let Some(dt) = s.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(invalid(&["sim", "dt"], format!("dt must be positive, got {dt}")));
            }
        }
        if s.n_trajectories == 0 {
            return Err(invalid(&["sim", "n_trajectories"], "n_trajectories must be at least 1"));
        }
        if s.quadrature_nodes == 0 {
            return Err(invalid(&["sim", "quadrature_nodes"], "quadrature_nodes must be at least 1"));
        }
        match s.noise {
            NoiseMode::Gaussian { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => {
                return Err(invalid(&["sim", "noise"], format!("sigma must be non-negative, got {sigma}")))
            }
            NoiseMode::Shots { shots: 0 } => return Err(invalid(&["sim", "noise"], "shots must be at least 1")),
            _ => {}
        }
        if let StaticShiftMode::Quadrature { nodes: 0 } = s.static_shifts {
            return Err(invalid(&["sim", "static_shifts"], "quadrature needs at least one node"));
        }
        self.check_model()?;
        let sh = &self.shadows;
        if !(sh.epsilon > 0.0) {
            return Err(invalid(&["shadows", "epsilon"], format!("epsilon must be positive, got {}", sh.epsilon)));
        }
        if !(sh.delta > 0.0 && sh.delta < 1.0) {
            return Err(invalid(&["shadows", "delta"], format!("delta must lie in (0, 1), got {}", sh.delta)));
        }
        if sh.axes.is_empty() {
            return Err(invalid(&["shadows", "axes"], "at least one measurement axis is required"));
        }
        match sh.channel {
            ChannelSpec::Depolarizing { p } if !(0.0..=1.0).contains(&p) => {
                return Err(invalid(&["shadows", "channel", "p"], format!("p must lie in [0, 1], got {p}")))
            }
            ChannelSpec::Model { time_us, dt, .. } if !(time_us >= 0.0) || dt.is_some_and(|d| !(d > 0.0)) => {
                return Err(invalid(&["shadows", "channel", "time_us"], "channel time must be non-negative and dt positive"))
            }
            _ => {}
        }
        let f = &self.figure;
        if f.instances == 0 {
            return Err(invalid(&["figure", "instances"], "instances must be at least 1"));
        }
        if f.sigmas.is_empty() || f.sigmas.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid(&["figure", "sigmas"], "sigmas must be a non-empty list of positive values"));
        }
        if f.t0_values.is_empty() || f.t0_values.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid(&["figure", "t0_values"], "t0_values must be a non-empty list of positive values"));
        }
        if !(f.sample_budget > 0.0) {
            return Err(invalid(&["figure", "sample_budget"], "sample_budget must be positive"));
        }
        if !(f.sigma >= 0.0) {
            return Err(invalid(&["figure", "sigma"], "sigma must be non-negative"));
        }
        Ok(())
    }

    fn check_model(&self) -> Result<(), Invalid> {
        match &self.model {
            ModelSpec::Chip(c) => {
                if let Some(sites) = &c.sites {
                    let mut seen = [false; 16];
                    for &s in sites {
                        if s >= 16 || std::mem::replace(&mut seen[s], true) {
                            return Err(invalid(&["model", "sites"], format!("chip sites must be distinct and below 16, got {s}")));
                        }
                    }
                    if sites.is_empty() {
                        return Err(invalid(&["model", "sites"], "at least one site is required"));
                    }
                }
            }
            ModelSpec::Random(r) => {
                if r.n_qubits == 0 {
                    return Err(invalid(&["model", "n_qubits"], "n_qubits must be at least 1"));
                }
                if !(r.coupling_std_khz >= 0.0) || !(r.frequency_std_khz >= 0.0) {
                    return Err(invalid(&["model", "coupling_std_khz"], "standard deviations must be non-negative"));
                }
                for (key, v) in [("t1_us", r.t1_us), ("t2_us", r.t2_us), ("t2_star_us", r.t2_star_us)] {
                    if !(v > 0.0) {
                        let key: &'static str = key;
                        return Err(invalid(&["model", key], format!("{key} must be positive, got {v}")));
                    }
                }
            }
            ModelSpec::Explicit(_) => {}
        }
        self.build_model(0).map(|_| ()).map_err(|e| invalid(&["model"], e.to_string()))
    }

    /// The model of `instance`; only the random recipe depends on it.
    pub fn build_model(&self, instance: u64) -> hamlearn::Result<LindbladModel> {
        let m = match &self.model {
            ModelSpec::Chip(c) => {
                let sites: Vec<usize> = c.sites.clone().unwrap_or_else(|| chip16::PLAQUETTE.to_vec());
                hamlearn::model::chip16().sublattice(&sites)?
            }
            ModelSpec::Random(r) => {
                let mut rng = stream(self.master_seed, &[label_hash("model"), instance]);
                let mut m = LindbladModel::new(r.n_qubits);
                let normal = |std: f64| Normal::new(0.0, std).map_err(|e| hamlearn::Error::Invalid(e.to_string()));
                let nj = normal(r.coupling_std_khz)?;
                let nw = normal(r.frequency_std_khz)?;
                m.edges = r
                    .topology
                    .edges(r.n_qubits)
                    .into_iter()
                    .map(|(i, j)| Edge { i, j, coupling: khz_to_rad_per_us(nj.sample(&mut rng)) })
                    .collect();
                m.frequency = (0..r.n_qubits).map(|_| khz_to_rad_per_us(nw.sample(&mut rng))).collect();
                m.t1 = vec![r.t1_us; r.n_qubits];
                m.t2 = vec![r.t2_us; r.n_qubits];
                m.t2_star = vec![r.t2_star_us; r.n_qubits];
                m
            }
            ModelSpec::Explicit(x) => {
                let n = x.n_qubits;
                let per_site = |v: &[f64], fill: f64, name: &str| -> hamlearn::Result<Vec<f64>> {
                    match v.len() {
                        0 => Ok(vec![fill; n]),
                        l if l == n => Ok(v.to_vec()),
                        l => Err(hamlearn::Error::Invalid(format!("{name} has {l} entries for {n} qubits"))),
                    }
                };
                let mut m = LindbladModel::new(n);
                m.edges = x.edges.iter().map(|e| Edge { i: e.i, j: e.j, coupling: khz_to_rad_per_us(e.coupling_khz) }).collect();
                m.frequency = per_site(&x.frequency_khz, 0.0, "frequency_khz")?.into_iter().map(khz_to_rad_per_us).collect();
                m.t1 = per_site(&x.t1_us, f64::INFINITY, "t1_us")?;
                m.t2 = per_site(&x.t2_us, f64::INFINITY, "t2_us")?;
                m.t2_star = per_site(&x.t2_star_us, f64::INFINITY, "t2_star_us")?;
                m
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(m) = o.method {
            let shadows = self.methods.contains(&MethodKind::Shadows);
            self.methods = match m {
                MethodChoice::Interp => vec![MethodKind::Interpolation],
                MethodChoice::Fd => vec![MethodKind::FiniteDifference],
                MethodChoice::Both => vec![MethodKind::Interpolation, MethodKind::FiniteDifference],
            };
            if shadows {
                self.methods.push(MethodKind::Shadows);
            }
        }
        if let Some(n) = o.qubits {
            match &mut self.model {
                ModelSpec::Chip(c) => {
                    c.sites = Some(match n {
                        4 => chip16::PLAQUETTE.to_vec(),
                        n => (0..n).collect(),
                    })
                }
                ModelSpec::Random(r) => r.n_qubits = n,
                ModelSpec::Explicit(x) if x.n_qubits != n => {
                    return Err(ConfigError {
                        line: None,
                        message: format!("--qubits {n} conflicts with the explicit {}-qubit model", x.n_qubits),
                    })
                }
                ModelSpec::Explicit(_) => {}
            }
        }
        self.validate()
    }

    pub fn wants(&self, m: MethodKind) -> bool {
        self.methods.contains(&m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodChoice {
    Interp,
    Fd,
    Both,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<MethodChoice>,
    pub qubits: Option<usize>,
}
