//! Stochastic-trajectory simulation of the chip model.
//!
//! Each trajectory applies a second-order Trotter step followed by the
//! dephasing and amplitude-damping unravelings. Quasi-static frequency shifts
//! are drawn once per trajectory.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LindbladModel;
use crate::pauli::{PauliString, ProductStateSpec};
use crate::rng::{label_hash, stream};
use crate::scalar::Real;
use crate::state::{eigenstate, StateVector};

/// How the Markovian dephasing angle enters the z-rotation e^{−iκγσ_z}.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingConvention {
    /// κ = 1/2: coherence decays at 2/T2.
    HalfAngle,
    /// κ = 1: coherence decays at 8/T2.
    FullAngle,
    /// κ = 1/(2√2): coherence decays at 1/T2.
    #[default]
    Calibrated,
}

impl DephasingConvention {
    pub fn angle_scale(self) -> f64 {
        match self {
            DephasingConvention::HalfAngle => 0.5,
            DephasingConvention::FullAngle => 1.0,
            DephasingConvention::Calibrated => 0.5 * std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// Decay rate of single-qubit coherence for dephasing time `t2`.
    pub fn coherence_rate<T: Real>(self, t2: T) -> T {
        let k = self.angle_scale();
        T::lit(8.0 * k * k) / t2
    }

    /// Rate of the σ_z jump reproducing the same decay.
    pub fn jump_rate<T: Real>(self, t2: T) -> T {
        self.coherence_rate(t2) / T::lit(2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    None,
    Gaussian { sigma: f64 },
    Shots { shots: u64 },
}

impl NoiseMode {
    /// Value for the `shots_or_sigma` CSV column.
    pub fn column_value(&self) -> f64 {
        match *self {
            NoiseMode::None => 0.0,
            NoiseMode::Gaussian { sigma } => sigma,
            NoiseMode::Shots { shots } => shots as f64,
        }
    }
}

/// Treatment of the maximally mixed sites of the initial state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedStateMode {
    /// Gaussian random vector per trajectory.
    #[default]
    RandomVector,
    /// Exact average over computational basis states.
    Enumerate,
}

/// Treatment of the quasi-static frequency shifts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StaticShiftMode {
    #[default]
    Sampled,
    /// Tensor Gauss-Hermite rule with `nodes` points per site.
    Quadrature { nodes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Trotter step in μs.
    pub dt: f64,
    pub n_trajectories: usize,
    pub noise: NoiseMode,
    pub master_seed: u64,
    #[serde(default)]
    pub dephasing: DephasingConvention,
    #[serde(default)]
    pub mixed_states: MixedStateMode,
    #[serde(default)]
    pub static_shifts: StaticShiftMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_trajectories: 189,
            noise: NoiseMode::Gaussian { sigma: 1e-4 },
            master_seed: 0,
            dephasing: DephasingConvention::default(),
            mixed_states: MixedStateMode::default(),
            static_shifts: StaticShiftMode::default(),
        }
    }
}

impl SimConfig {
    /// min(T1, T2)/1000, capped at t0/10 and at 1e-3 μs.
    pub fn default_dt<T: Real>(model: &LindbladModel<T>, t0: f64) -> f64 {
        let tmin = model.t1.iter().chain(&model.t2).map(|t| t.f64()).fold(f64::INFINITY, f64::min);
        (tmin / 1000.0).min(t0 / 10.0).min(1e-3)
    }

    pub fn validate<T: Real>(&self, model: &LindbladModel<T>) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Invalid("n_trajectories must be at least 1".into()));
        }
        let tmin = model.t1.iter().chain(&model.t2).map(|t| t.f64()).fold(f64::INFINITY, f64::min);
        if self.dt > tmin / 100.0 {
            return Err(Error::Invalid(format!("dt = {} exceeds min(T1, T2)/100 = {}", self.dt, tmin / 100.0)));
        }
        match self.noise {
            NoiseMode::Gaussian { sigma } if !(sigma >= 0.0) => {
                return Err(Error::Invalid(format!("noise sigma must be non-negative, got {sigma}")))
            }
            NoiseMode::Shots { shots: 0 } => return Err(Error::Invalid("shots must be at least 1".into())),
            _ => {}
        }
        if let StaticShiftMode::Quadrature { nodes: 0 } = self.static_shifts {
            return Err(Error::Invalid("quadrature needs at least one node".into()));
        }
        Ok(())
    }
}

/// Per-trajectory quasi-static shifts β_j (rad·μs⁻¹).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization<T> {
    pub static_shifts: Vec<T>,
}

impl<T: Real> NoiseRealization<T> {
    pub fn none(n_qubits: usize) -> Self {
        Self { static_shifts: vec![T::zero(); n_qubits] }
    }

    /// β_j ~ N(0, b_j²), b_j = √2 / T2*_j.
    pub fn sample<R: Rng + ?Sized>(model: &LindbladModel<T>, rng: &mut R) -> Self {
        let static_shifts = model
            .static_shift_std()
            .into_iter()
            .map(|b| {
                let z: f64 = rng.sample(StandardNormal);
                b * T::lit(z)
            })
            .collect();
        Self { static_shifts }
    }
}

/// Fixed sites in their eigenstates, the rest a normalized Gaussian random vector.
pub fn sample_initial_state<T: Real, R: Rng + ?Sized>(spec: &ProductStateSpec, rng: &mut R) -> StateVector<T> {
    let free = free_sites(spec);
    if free.is_empty() {
        return enumerated_initial_state(spec, 0);
    }
    let mut v: Vec<Complex<T>> = (0..1usize << free.len())
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(T::lit(re), T::lit(im))
        })
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt();
    for a in &mut v {
        *a = a.unscale(norm);
    }
    embed_product(spec, &free, &v)
}

/// Fixed sites in their eigenstates, free sites in computational basis state `choice`.
pub fn enumerated_initial_state<T: Real>(spec: &ProductStateSpec, choice: usize) -> StateVector<T> {
    let free = free_sites(spec);
    let mut v = vec![Complex::new(T::zero(), T::zero()); 1 << free.len()];
    v[choice] = Complex::new(T::one(), T::zero());
    embed_product(spec, &free, &v)
}

fn free_sites(spec: &ProductStateSpec) -> Vec<usize> {
    (0..spec.n_qubits()).filter(|s| spec.get(*s).is_none()).collect()
}

fn embed_product<T: Real>(spec: &ProductStateSpec, free: &[usize], v: &[Complex<T>]) -> StateVector<T> {
    let n = spec.n_qubits();
    let fixed: Vec<(usize, [Complex<T>; 2])> = spec.fixed().iter().map(|(s, (a, sg))| (*s, eigenstate(*a, *sg))).collect();
    let amps = (0..1usize << n)
        .map(|k| {
            let mut c = 0;
            for (b, s) in free.iter().enumerate() {
                c |= (k >> s & 1) << b;
            }
            let mut a = v[c];
            for (s, e) in &fixed {
                a = a * e[k >> s & 1];
            }
            a
        })
        .collect();
    StateVector::from_amplitudes(n, amps).expect("dimension matches")
}

/// Precomputed factors of one Trotter step of size h.
struct Propagator<T> {
    z_half: Vec<Complex<T>>,
    edges: Vec<Rotation<T>>,
}

struct Rotation<T> {
    low: usize,
    mask: usize,
    half: (T, T),
    full: (T, T),
}

impl<T: Real> Propagator<T> {
    fn new(model: &LindbladModel<T>, realization: &NoiseRealization<T>, h: T) -> Self {
        let n = model.n_qubits;
        let w: Vec<T> = (0..n).map(|j| model.frequency[j] + realization.static_shifts[j]).collect();
        let quarter_h = h / T::lit(4.0);
        let z_half = (0..1usize << n)
            .map(|k| {
                // −(h/2)·Σ (ω_j/2) z_j
                let mut phi = T::zero();
                for (j, wj) in w.iter().enumerate() {
                    phi += if k >> j & 1 == 0 { -*wj } else { *wj };
                }
                Complex::from_polar(T::one(), phi * quarter_h)
            })
            .collect();
        let edges = model
            .edges
            .iter()
            .map(|e| {
                let half = e.coupling * h / T::lit(2.0);
                let full = e.coupling * h;
                Rotation {
                    low: e.i.min(e.j),
                    mask: (1 << e.i) | (1 << e.j),
                    half: (half.cos(), half.sin()),
                    full: (full.cos(), full.sin()),
                }
            })
            .collect();
        Self { z_half, edges }
    }

    fn step(&self, psi: &mut StateVector<T>) {
        let amps = psi.amplitudes_mut();
        for (a, z) in amps.iter_mut().zip(&self.z_half) {
            *a = *a * *z;
        }
        for r in &self.edges {
            rotate(amps, r, r.half, true);
        }
        for r in &self.edges {
            rotate(amps, r, r.full, false);
        }
        for r in &self.edges {
            rotate(amps, r, r.half, true);
        }
        for (a, z) in amps.iter_mut().zip(&self.z_half) {
            *a = *a * *z;
        }
    }
}

/// In-place cos θ − i sin θ σσ on the edge, σ = Y if `yy` else X.
fn rotate<T: Real>(amps: &mut [Complex<T>], r: &Rotation<T>, (c, s): (T, T), yy: bool) {
    let low_bit = 1 << r.low;
    for k in 0..amps.len() {
        if k & low_bit != 0 {
            continue;
        }
        let p = k ^ r.mask;
        let eta = if yy && (k & r.mask == 0 || k & r.mask == r.mask) { -s } else { s };
        let (a, b) = (amps[k], amps[p]);
        amps[k] = Complex::new(c * a.re + eta * b.im, c * a.im - eta * b.re);
        amps[p] = Complex::new(c * b.re + eta * a.im, c * b.im - eta * a.re);
    }
}

/// e^{−iH_Z dt/2} e^{−iH_Y dt/2} e^{−iH_X dt} e^{−iH_Y dt/2} e^{−iH_Z dt/2}.
pub fn trotter_step<T: Real>(psi: &mut StateVector<T>, model: &LindbladModel<T>, realization: &NoiseRealization<T>, dt: T) {
    Propagator::new(model, realization, dt).step(psi);
}

/// Random z-rotations with angle variance 4·dt/T2 per site.
pub fn apply_markovian_dephasing<T: Real, R: Rng + ?Sized>(
    psi: &mut StateVector<T>,
    model: &LindbladModel<T>,
    dt: T,
    convention: DephasingConvention,
    rng: &mut R,
) {
    let kappa = T::lit(convention.angle_scale());
    for (j, t2) in model.t2.iter().enumerate() {
        if !t2.is_finite() {
            continue;
        }
        let z: f64 = rng.sample(StandardNormal);
        let gamma = (T::lit(4.0) * dt / *t2).sqrt() * T::lit(z);
        let up = Complex::from_polar(T::one(), -kappa * gamma);
        let down = up.conj();
        for (k, a) in psi.amplitudes_mut().iter_mut().enumerate() {
            *a = *a * if k >> j & 1 == 0 { up } else { down };
        }
    }
}

/// Quantum-jump unraveling of decay at rate 1/T1, site by site, then renormalized.
pub fn apply_amplitude_damping<T: Real, R: Rng + ?Sized>(psi: &mut StateVector<T>, model: &LindbladModel<T>, dt: T, rng: &mut R) {
    let mut touched = false;
    for (j, t1) in model.t1.iter().enumerate() {
        if !t1.is_finite() {
            continue;
        }
        let decay = (-dt / *t1).exp();
        let mu2 = T::one() - decay;
        let w = psi.excited_weight(j);
        let u: f64 = rng.gen();
        let bit = 1 << j;
        let amps = psi.amplitudes_mut();
        if T::lit(u) < w * mu2 {
            let mu = mu2.sqrt();
            for k in 0..amps.len() {
                if k & bit != 0 {
                    amps[k ^ bit] = amps[k].scale(mu);
                    amps[k] = Complex::new(T::zero(), T::zero());
                }
            }
            psi.normalize();
        } else if w > T::zero() {
            let keep = decay.sqrt();
            for (k, a) in amps.iter_mut().enumerate() {
                if k & bit != 0 {
                    *a = a.scale(keep);
                }
            }
            touched = true;
        }
    }
    if touched {
        psi.normalize();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_us: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates of one expectation value at increasing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub observable: PauliString,
    pub initial: ProductStateSpec,
    pub samples: Vec<TraceSample>,
    pub noise: NoiseMode,
    pub seed: u64,
    /// Set when a requested time had to be moved onto the step grid.
    pub adjusted: bool,
}

impl TimeTrace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time_us).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mean).collect()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.time_us, s.mean)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.windows(2).any(|w| !(w[1].time_us > w[0].time_us)) {
            return Err(Error::Invalid("trace times must be strictly increasing".into()));
        }
        if self.samples.iter().any(|s| !s.mean.is_finite() || !(s.std_error >= 0.0)) {
            return Err(Error::Invalid("trace holds non-finite values".into()));
        }
        Ok(())
    }

    /// The same trace with the noise model applied to its means.
    pub fn with_noise(&self, noise: NoiseMode, seed: u64) -> TimeTrace {
        let salt = label_hash(&format!("{}|{}", self.observable, self.initial));
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut rng = stream(seed, &[0x5107, salt, k as u64]);
                let mean = match noise {
                    NoiseMode::None => s.mean,
                    NoiseMode::Gaussian { sigma } => {
                        let z: f64 = rng.sample(StandardNormal);
                        s.mean + sigma * z
                    }
                    NoiseMode::Shots { shots } => {
                        let p = ((1.0 + s.mean) / 2.0).clamp(0.0, 1.0);
                        let hits = Binomial::new(shots, p).expect("valid binomial").sample(&mut rng);
                        2.0 * hits as f64 / shots as f64 - 1.0
                    }
                };
                TraceSample { mean, ..*s }
            })
            .collect();
        TimeTrace { samples, noise, seed, ..self.clone() }
    }
}

struct Member<T> {
    weight: T,
    choice: Option<usize>,
    shifts: Option<Vec<T>>,
}

fn deterministic_members<T: Real>(model: &LindbladModel<T>, spec: &ProductStateSpec, cfg: &SimConfig) -> Result<Vec<Member<T>>> {
    let free = free_sites(spec).len();
    let choices: Vec<(T, Option<usize>)> = match cfg.mixed_states {
        MixedStateMode::RandomVector if free > 0 => vec![(T::one(), None)],
        _ => {
            let w = T::one() / T::lit((1usize << free) as f64);
            (0..1usize << free).map(|c| (w, Some(c))).collect()
        }
    };
    let shifts: Vec<(T, Option<Vec<T>>)> = match cfg.static_shifts {
        StaticShiftMode::Sampled => vec![(T::one(), None)],
        StaticShiftMode::Quadrature { nodes } => {
            let noisy = model.static_shift_std().iter().filter(|b| **b > T::zero()).count();
            let count = (nodes as f64).powi(noisy as i32);
            if count > 1e6 {
                return Err(Error::Invalid(format!("quadrature grid of {count} points is too large")));
            }
            model.static_shift_rule(nodes).into_iter().map(|(w, s)| (w, Some(s))).collect()
        }
    };
    let mut out = Vec::with_capacity(choices.len() * shifts.len());
    for (wc, c) in &choices {
        for (ws, s) in &shifts {
            out.push(Member { weight: *wc * *ws, choice: *c, shifts: s.clone() });
        }
    }
    Ok(out)
}

fn is_stochastic<T: Real>(model: &LindbladModel<T>, spec: &ProductStateSpec, cfg: &SimConfig) -> bool {
    model.has_markovian_noise()
        || (cfg.mixed_states == MixedStateMode::RandomVector && spec.fixed().len() < spec.n_qubits())
        || (cfg.static_shifts == StaticShiftMode::Sampled && model.has_static_noise())
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Invalid("no sample times".into()));
    }
    if times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("sample times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("sample times must be strictly increasing".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_member<T: Real>(
    model: &LindbladModel<T>,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
    cfg: &SimConfig,
    member: &Member<T>,
    path: &[u64],
) -> Vec<T> {
    let mut rng = stream(cfg.master_seed, path);
    let realization = match &member.shifts {
        Some(s) => NoiseRealization { static_shifts: s.clone() },
        None => NoiseRealization::sample(model, &mut rng),
    };
    let mut psi = match member.choice {
        Some(c) => enumerated_initial_state(spec, c),
        None => sample_initial_state(spec, &mut rng),
    };
    let markov = model.has_markovian_noise();
    let mut out = Vec::with_capacity(times.len() * observables.len());
    let mut now = 0.0;
    let mut cache: Option<(f64, Propagator<T>)> = None;
    for &t in times {
        let span = t - now;
        let steps = if span > 0.0 { (span / cfg.dt - 1e-9).ceil().max(1.0) as usize } else { 0 };
        if steps > 0 {
            let h = span / steps as f64;
            if cache.as_ref().map_or(true, |(ch, _)| *ch != h) {
                cache = Some((h, Propagator::new(model, &realization, T::lit(h))));
            }
            let prop = &cache.as_ref().expect("propagator cached").1;
            for _ in 0..steps {
                prop.step(&mut psi);
                if markov {
                    apply_markovian_dephasing(&mut psi, model, T::lit(h), cfg.dephasing, &mut rng);
                    apply_amplitude_damping(&mut psi, model, T::lit(h), &mut rng);
                }
            }
        }
        now = t;
        out.extend(observables.iter().map(|o| psi.expectation(o)));
    }
    out
}

/// One stochastic trajectory of `psi` to time `t`, drawing its own static shifts.
pub fn evolve_trajectory<T: Real, R: Rng + ?Sized>(
    psi: &mut StateVector<T>,
    model: &LindbladModel<T>,
    t: f64,
    dt: f64,
    convention: DephasingConvention,
    rng: &mut R,
) {
    if !(t > 0.0) {
        return;
    }
    let realization = NoiseRealization::sample(model, rng);
    let steps = (t / dt - 1e-9).ceil().max(1.0) as usize;
    let h = T::lit(t / steps as f64);
    let prop = Propagator::new(model, &realization, h);
    let markov = model.has_markovian_noise();
    for _ in 0..steps {
        prop.step(psi);
        if markov {
            apply_markovian_dephasing(psi, model, h, convention, rng);
            apply_amplitude_damping(psi, model, h, rng);
        }
    }
}

/// Ensemble traces of several observables from one initial state.
pub fn evolve_and_measure_many<T: Real>(
    model: &LindbladModel<T>,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<TimeTrace>> {
    model.validate()?;
    cfg.validate(model)?;
    check_times(times)?;
    if spec.n_qubits() != model.n_qubits {
        return Err(Error::DimensionMismatch { expected: model.n_qubits, got: spec.n_qubits() });
    }
    if let Some(o) = observables.iter().find(|o| o.n_qubits() != model.n_qubits) {
        return Err(Error::DimensionMismatch { expected: model.n_qubits, got: o.n_qubits() });
    }
    let members = deterministic_members(model, spec, cfg)?;
    let replicas = if is_stochastic(model, spec, cfg) { cfg.n_trajectories } else { 1 };
    let salt = label_hash(&spec.to_string());
    let per = members.len();
    let results: Vec<Vec<T>> = (0..replicas * per)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / per, idx % per);
            run_member(model, spec, observables, times, cfg, &members[c], &[salt, r as u64, c as u64])
        })
        .collect();
    let width = times.len() * observables.len();
    let mut replica_means = vec![vec![0.0f64; width]; replicas];
    for (idx, res) in results.iter().enumerate() {
        let w = members[idx % per].weight;
        for (acc, x) in replica_means[idx / per].iter_mut().zip(res) {
            *acc += (w * *x).f64();
        }
    }
    let mut traces = Vec::with_capacity(observables.len());
    for (oi, o) in observables.iter().enumerate() {
        let samples = times
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                let col = ti * observables.len() + oi;
                let vals: Vec<f64> = replica_means.iter().map(|m| m[col]).collect();
                let mean = vals.iter().sum::<f64>() / replicas as f64;
                let std_error = if replicas > 1 {
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (replicas - 1) as f64;
                    (var / replicas as f64).sqrt()
                } else {
                    0.0
                };
                TraceSample { time_us: t, mean, std_error }
            })
            .collect();
        let clean = TimeTrace {
            observable: o.clone(),
            initial: spec.clone(),
            samples,
            noise: NoiseMode::None,
            seed: cfg.master_seed,
            adjusted: false,
        };
        traces.push(clean.with_noise(cfg.noise, cfg.master_seed));
    }
    Ok(traces)
}

pub fn evolve_and_measure<T: Real>(
    model: &LindbladModel<T>,
    spec: &ProductStateSpec,
    o: &PauliString,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<TimeTrace> {
    Ok(evolve_and_measure_many(model, spec, std::slice::from_ref(o), times, cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::CMatrix;
    use crate::model::Edge;
    use crate::pauli::{PauliAxis, Sign};
    use crate::rng::stream;
    use PauliAxis::{X, Y, Z};

    fn quiet(n: usize) -> LindbladModel<f64> {
        LindbladModel::new(n)
    }

    fn cfg(noise: NoiseMode) -> SimConfig {
        SimConfig { noise, master_seed: 11, ..SimConfig::default() }
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let m = quiet(2);
        let mut psi = StateVector::<f64>::product(&[(X, Sign::Plus), (Y, Sign::Minus)]);
        let before = psi.clone();
        trotter_step(&mut psi, &m, &NoiseRealization::none(2), 0.1);
        assert_eq!(psi, before);
    }

    #[test]
    fn single_qubit_rotation_quarter_period() {
        let mut m = quiet(1);
        m.frequency[0] = 2.0 * std::f64::consts::PI;
        let mut psi = StateVector::<f64>::product(&[(X, Sign::Plus)]);
        trotter_step(&mut psi, &m, &NoiseRealization::none(1), 0.25);
        assert!(psi.expectation(&PauliString::single(1, 0, X).unwrap()).abs() < 1e-10);
        assert!((psi.expectation(&PauliString::single(1, 0, Y).unwrap()) - 1.0).abs() < 1e-10);
    }

    fn dense_h(m: &LindbladModel<f64>) -> CMatrix<f64> {
        let dim = 1 << m.n_qubits;
        let mut h = CMatrix::zeros(dim);
        for (c, p) in m.hamiltonian_terms(None) {
            h = h.add(&CMatrix::pauli(&p).scale(Complex::new(c, 0.0)));
        }
        h
    }

    fn expm_state(m: &LindbladModel<f64>, psi: &StateVector<f64>, t: f64) -> StateVector<f64> {
        let u = dense_h(m).scale(Complex::new(0.0, -t)).expm();
        StateVector::from_amplitudes(m.n_qubits, u.apply(psi.amplitudes())).unwrap()
    }

    #[test]
    fn xx_model_matches_expm() {
        let mut m = quiet(2);
        m.edges.push(Edge { i: 0, j: 1, coupling: 0.9 });
        let psi0 = StateVector::<f64>::product(&[(Z, Sign::Plus), (X, Sign::Minus)]);
        let mut psi = psi0.clone();
        trotter_step(&mut psi, &m, &NoiseRealization::none(2), 1e-3);
        let exact = expm_state(&m, &psi0, 1e-3);
        assert!(psi.inner(&exact).norm() >= 1.0 - 1e-8);
    }

    fn three_qubit_model() -> LindbladModel<f64> {
        let mut m = quiet(3);
        m.edges = vec![Edge { i: 0, j: 1, coupling: 0.8 }, Edge { i: 1, j: 2, coupling: -0.5 }, Edge { i: 0, j: 2, coupling: 0.3 }];
        m.frequency = vec![1.1, -0.7, 0.4];
        m
    }

    fn trotter_error(m: &LindbladModel<f64>, psi0: &StateVector<f64>, t: f64, steps: usize) -> f64 {
        let mut psi = psi0.clone();
        let h = t / steps as f64;
        for _ in 0..steps {
            trotter_step(&mut psi, m, &NoiseRealization::none(m.n_qubits), h);
        }
        let exact = expm_state(m, psi0, t);
        psi.amplitudes().iter().zip(exact.amplitudes()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn trotter_is_second_order() {
        let m = three_qubit_model();
        let psi0 = StateVector::<f64>::product(&[(X, Sign::Plus), (Z, Sign::Minus), (Y, Sign::Plus)]);
        let e1 = trotter_error(&m, &psi0, 1.0, 50);
        let e2 = trotter_error(&m, &psi0, 1.0, 100);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }

    #[test]
    fn norm_and_energy_conserved() {
        let m = three_qubit_model();
        let h = dense_h(&m);
        let mut psi = StateVector::<f64>::product(&[(X, Sign::Plus), (Z, Sign::Minus), (Y, Sign::Plus)]);
        let energy = |p: &StateVector<f64>| p.inner(&StateVector::from_amplitudes(3, h.apply(p.amplitudes())).unwrap()).re;
        let e0 = energy(&psi);
        let dt = 0.01;
        for k in 1..=200 {
            trotter_step(&mut psi, &m, &NoiseRealization::none(3), dt);
            assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);
            assert!((energy(&psi) - e0).abs() <= 5.0 * dt * dt * (k as f64 * dt) + 1e-12);
        }
    }

    #[test]
    fn single_precision_step() {
        let m = three_qubit_model().cast::<f32>();
        let mut psi = StateVector::<f32>::product(&[(X, Sign::Plus), (Z, Sign::Minus), (Y, Sign::Plus)]);
        for _ in 0..100 {
            trotter_step(&mut psi, &m, &NoiseRealization::none(3), 0.01);
        }
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn initial_states() {
        let spec = ProductStateSpec::new(3, [(0, X, Sign::Plus)]).unwrap();
        let mut rng = stream(1, &[]);
        for _ in 0..10 {
            let psi: StateVector<f64> = sample_initial_state(&spec, &mut rng);
            assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
            assert!((psi.expectation(&PauliString::single(3, 0, X).unwrap()) - 1.0).abs() < 1e-12);
        }
        let full = ProductStateSpec::new(2, [(0, Z, Sign::Minus), (1, Y, Sign::Plus)]).unwrap();
        let a: StateVector<f64> = sample_initial_state(&full, &mut rng);
        assert_eq!(a, StateVector::product(&[(Z, Sign::Minus), (Y, Sign::Plus)]));
    }

    #[test]
    fn random_vectors_are_unbiased() {
        let spec = ProductStateSpec::maximally_mixed(10);
        let z = PauliString::single(10, 3, Z).unwrap();
        let mut rng = stream(5, &[]);
        let mean: f64 = (0..1000).map(|_| sample_initial_state::<f64, _>(&spec, &mut rng).expectation(&z)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 4.0 / 1000f64.sqrt());
    }

    #[test]
    fn noise_channels_identity_when_off() {
        let m = quiet(2);
        let mut psi = StateVector::<f64>::product(&[(X, Sign::Plus), (Y, Sign::Plus)]);
        let before = psi.clone();
        let mut rng = stream(3, &[]);
        apply_markovian_dephasing(&mut psi, &m, 0.01, DephasingConvention::Calibrated, &mut rng);
        apply_amplitude_damping(&mut psi, &m, 0.01, &mut rng);
        assert_eq!(psi, before);
        let mut damped = quiet(2);
        damped.t1 = vec![10.0, 10.0];
        let mut ground = StateVector::<f64>::zero_state(2);
        apply_amplitude_damping(&mut ground, &damped, 0.01, &mut rng);
        assert_eq!(ground, StateVector::zero_state(2));
    }

    #[test]
    fn dephasing_angle_variance() {
        // Angle γ = ζ·√(4dt/T2); recover it from the phase of a |+⟩ qubit.
        let mut m = quiet(1);
        m.t2 = vec![2.0];
        let dt = 0.05;
        let mut rng = stream(9, &[]);
        let n = 100_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let mut psi = StateVector::<f64>::product(&[(X, Sign::Plus)]);
            apply_markovian_dephasing(&mut psi, &m, dt, DephasingConvention::HalfAngle, &mut rng);
            let a = psi.amplitudes();
            let gamma = (a[1] / a[0]).arg();
            sum2 += gamma * gamma;
        }
        let var = sum2 / n as f64;
        assert!((var / (4.0 * dt / 2.0) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn dephasing_conventions_decay_rates() {
        for conv in [DephasingConvention::HalfAngle, DephasingConvention::FullAngle, DephasingConvention::Calibrated] {
            let mut m = quiet(1);
            m.t2 = vec![5.0];
            let spec = ProductStateSpec::new(1, [(0, X, Sign::Plus)]).unwrap();
            let c = SimConfig {
                dt: 0.01,
                n_trajectories: 4000,
                noise: NoiseMode::None,
                master_seed: 2,
                dephasing: conv,
                ..SimConfig::default()
            };
            let tr = evolve_and_measure(&m, &spec, &PauliString::single(1, 0, X).unwrap(), &[0.5, 1.0], &c).unwrap();
            for s in &tr.samples {
                let expected = (-conv.coherence_rate(5.0) * s.time_us).exp();
                assert!((s.mean - expected).abs() < 4.0 * s.std_error.max(1e-3), "{conv:?} {s:?} {expected}");
            }
        }
    }

    #[test]
    fn amplitude_damping_ensemble() {
        let mut m = quiet(1);
        m.t1 = vec![2.0];
        let spec = ProductStateSpec::new(1, [(0, Z, Sign::Minus)]).unwrap();
        let c = SimConfig { dt: 0.01, n_trajectories: 2000, noise: NoiseMode::None, master_seed: 4, ..SimConfig::default() };
        let tr = evolve_and_measure(&m, &spec, &PauliString::single(1, 0, Z).unwrap(), &[0.5, 1.0, 2.0], &c).unwrap();
        for s in &tr.samples {
            let expected = 1.0 - 2.0 * (-s.time_us / 2.0).exp();
            assert!((s.mean - expected).abs() <= 3.0 * s.std_error, "{s:?} vs {expected}");
        }
    }

    #[test]
    fn static_shift_gaussian_decay() {
        let mut m = quiet(1);
        m.t2_star = vec![1.5];
        let spec = ProductStateSpec::new(1, [(0, X, Sign::Plus)]).unwrap();
        let c = SimConfig { dt: 0.01, n_trajectories: 2000, noise: NoiseMode::None, master_seed: 8, ..SimConfig::default() };
        let tr = evolve_and_measure(&m, &spec, &PauliString::single(1, 0, X).unwrap(), &[0.5, 1.0, 1.5], &c).unwrap();
        for s in &tr.samples {
            let expected = (-(s.time_us / 1.5).powi(2)).exp();
            assert!((s.mean - expected).abs() <= 3.0 * s.std_error, "{s:?} vs {expected}");
        }
        let q = SimConfig { static_shifts: StaticShiftMode::Quadrature { nodes: 12 }, ..c };
        let tr = evolve_and_measure(&m, &spec, &PauliString::single(1, 0, X).unwrap(), &[0.5, 1.0, 1.5], &q).unwrap();
        for s in &tr.samples {
            assert!((s.mean - (-(s.time_us / 1.5).powi(2)).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_trace_without_dynamics() {
        let m = quiet(2);
        let spec = ProductStateSpec::new(2, [(0, Z, Sign::Plus)]).unwrap();
        let tr = evolve_and_measure(&m, &spec, &PauliString::single(2, 0, Z).unwrap(), &[0.1, 0.2, 0.3], &cfg(NoiseMode::None)).unwrap();
        assert!(tr.samples.iter().all(|s| (s.mean - 1.0).abs() < 1e-12));
        assert!(!tr.adjusted);
    }

    #[test]
    fn determinism_and_thread_independence() {
        let mut m = three_qubit_model();
        m.t1 = vec![30.0; 3];
        m.t2 = vec![40.0; 3];
        m.t2_star = vec![20.0; 3];
        let spec = ProductStateSpec::new(3, [(0, X, Sign::Plus)]).unwrap();
        let o = PauliString::pair(3, (0, Y), (1, Z)).unwrap();
        let c = SimConfig { n_trajectories: 40, ..cfg(NoiseMode::Gaussian { sigma: 1e-3 }) };
        let a = evolve_and_measure(&m, &spec, &o, &[0.1, 0.4], &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| evolve_and_measure(&m, &spec, &o, &[0.1, 0.4], &c).unwrap());
        assert_eq!(a, b);
        let other = evolve_and_measure(&m, &spec, &o, &[0.1, 0.4], &SimConfig { master_seed: 12, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn shot_noise_is_bounded() {
        let m = quiet(1);
        let spec = ProductStateSpec::new(1, [(0, X, Sign::Plus)]).unwrap();
        let tr = evolve_and_measure(&m, &spec, &PauliString::single(1, 0, Z).unwrap(), &[0.1, 0.2], &cfg(NoiseMode::Shots { shots: 1000 }))
            .unwrap();
        assert!(tr.samples.iter().all(|s| s.mean.abs() <= 1.0 && s.mean.abs() < 0.2));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = quiet(1);
        let spec = ProductStateSpec::maximally_mixed(1);
        let o = PauliString::single(1, 0, Z).unwrap();
        assert!(evolve_and_measure(&m, &spec, &o, &[0.2, 0.1], &cfg(NoiseMode::None)).is_err());
        let mut noisy = quiet(1);
        noisy.t1 = vec![0.05];
        assert!(evolve_and_measure(&noisy, &spec, &o, &[0.1], &cfg(NoiseMode::None)).is_err());
    }
}
