//! Shadow process tomography: random product-eigenstate preparations,
//! random product-basis measurements, and median-of-means estimates of
//! 2^{-n} tr(P_a Φ(P_b)) for many Pauli pairs from the same records.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{evolve_exact, expectation_exact, CMatrix, DenseGenerator, DensityMatrix};
use crate::generator::Lindbladian;
use crate::model::LindbladModel;
use crate::pauli::{PauliAxis, PauliString, ProductStateSpec, Sign};
use crate::rng::stream;
use crate::scalar::Real;
use crate::sim::{evolve_trajectory, DephasingConvention};
use crate::state::StateVector;

/// One round: measurement bases B, preparation bases S, preparation signs E, outcomes M.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowRecord {
    pub measure: Vec<PauliAxis>,
    pub prepare: Vec<PauliAxis>,
    pub prep_signs: Vec<Sign>,
    pub outcomes: Vec<Sign>,
}

/// A process that prepares product eigenstates and measures in product Pauli bases.
pub trait Channel: Sync {
    fn n_qubits(&self) -> usize;

    /// Outcomes (+1 for the +1 eigenvalue) of measuring `basis` after preparing ⊗|S_j, E_j⟩.
    fn measure(&self, prepare: &[PauliAxis], signs: &[Sign], basis: &[PauliAxis], rng: &mut ChaCha8Rng) -> Vec<Sign>;
}

fn coin(rng: &mut ChaCha8Rng) -> Sign {
    if rng.gen::<bool>() {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityChannel {
    pub n_qubits: usize,
}

impl Channel for IdentityChannel {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn measure(&self, prepare: &[PauliAxis], signs: &[Sign], basis: &[PauliAxis], rng: &mut ChaCha8Rng) -> Vec<Sign> {
        (0..self.n_qubits).map(|j| if basis[j] == prepare[j] { signs[j] } else { coin(rng) }).collect()
    }
}

/// Independent single-site depolarizing with probability `p`.
#[derive(Clone, Copy, Debug)]
pub struct DepolarizingChannel {
    pub n_qubits: usize,
    pub p: f64,
}

impl Channel for DepolarizingChannel {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn measure(&self, prepare: &[PauliAxis], signs: &[Sign], basis: &[PauliAxis], rng: &mut ChaCha8Rng) -> Vec<Sign> {
        (0..self.n_qubits)
            .map(|j| {
                let scrambled = rng.gen::<f64>() < self.p;
                if !scrambled && basis[j] == prepare[j] {
                    signs[j]
                } else {
                    coin(rng)
                }
            })
            .collect()
    }
}

fn index_of(axes: &[PauliAxis], radix: usize, digit: impl Fn(usize) -> usize) -> usize {
    (0..axes.len()).rev().fold(0, |acc, j| acc * radix + digit(j))
}

/// Dense-oracle channel Φ_t = e^{tL} for n ≤ 4, with outcome distributions tabulated.
pub struct ExactChannel {
    n_qubits: usize,
    /// [prep index][basis index] → cumulative outcome distribution over 2^n bit strings.
    table: Vec<Vec<Vec<f64>>>,
    states: Vec<DensityMatrix<f64>>,
}

impl ExactChannel {
    pub fn new(l: &Lindbladian<f64>, t: f64, dt: f64) -> Result<Self> {
        Self::from_mixture(&[(1.0, l.clone())], t, dt)
    }

    /// Φ = Σ_k w_k e^{t L_k}, e.g. over a quadrature rule for static shifts.
    pub fn from_mixture(parts: &[(f64, Lindbladian<f64>)], t: f64, dt: f64) -> Result<Self> {
        let n = parts.first().ok_or_else(|| Error::Invalid("empty channel mixture".into()))?.1.n_qubits();
        if let Some((_, l)) = parts.iter().find(|(_, l)| l.n_qubits() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: l.n_qubits() });
        }
        let generators = parts.iter().map(|(w, l)| Ok((*w, DenseGenerator::new(l)?))).collect::<Result<Vec<_>>>()?;
        let preps = 6usize.pow(n as u32);
        let states: Vec<DensityMatrix<f64>> = (0..preps)
            .into_par_iter()
            .map(|k| {
                let rho = DensityMatrix::from_spec(&prep_spec(n, k));
                if !(t > 0.0) {
                    return Ok(rho);
                }
                let mut acc = CMatrix::zeros(1 << n);
                for (w, g) in &generators {
                    acc.axpy(Complex::new(*w, 0.0), evolve_exact(&rho, g, t, dt)?.matrix());
                }
                DensityMatrix::from_matrix(n, acc)
            })
            .collect::<Result<_>>()?;
        let bases = 3usize.pow(n as u32);
        let table =
            states.par_iter().map(|rho| (0..bases).map(|b| outcome_cdf(rho, n, b)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        Ok(Self { n_qubits: n, table, states })
    }

    /// 2^{-n} tr(P_a Φ(P_b)), expanding P_b over its eigenprojectors.
    pub fn overlap(&self, pa: &PauliString, pb: &PauliString) -> Result<f64> {
        let n = self.n_qubits;
        let mut acc = 0.0;
        for e in 0..1usize << n {
            let mut sign = pb.sign().value::<f64>();
            let mut k = 0;
            for j in (0..n).rev() {
                let axis = pb.get(j).unwrap_or(PauliAxis::Z);
                let minus = e >> j & 1 == 1;
                if minus && pb.get(j).is_some() {
                    sign = -sign;
                }
                k = k * 6 + axis.index() * 2 + minus as usize;
            }
            acc += sign * expectation_exact(&self.states[k], pa)?;
        }
        Ok(acc / (1u64 << n) as f64)
    }
}

/// Product state for a preparation index: site digit = 2·axis + (sign is minus).
fn prep_spec(n: usize, mut k: usize) -> ProductStateSpec {
    let mut fixed = Vec::with_capacity(n);
    for j in 0..n {
        let d = k % 6;
        k /= 6;
        fixed.push((j, PauliAxis::from_index(d / 2), if d % 2 == 1 { Sign::Minus } else { Sign::Plus }));
    }
    ProductStateSpec::new(n, fixed).expect("sites in range")
}

fn outcome_cdf(rho: &DensityMatrix<f64>, n: usize, mut b: usize) -> Result<Vec<f64>> {
    let mut axes = Vec::with_capacity(n);
    for _ in 0..n {
        axes.push(PauliAxis::from_index(b % 3));
        b /= 3;
    }
    // p(m) = 2^{-n} Σ_A Π_{j∈A} m_j ⟨σ_B^A⟩ over subsets A of sites.
    let dim = 1usize << n;
    let mut moments = vec![0.0; dim];
    for (a, m) in moments.iter_mut().enumerate() {
        let w = PauliString::new(n, (0..n).filter(|j| a >> j & 1 == 1).map(|j| (j, axes[j])))?;
        *m = expectation_exact(rho, &w)?;
    }
    let mut cdf = Vec::with_capacity(dim);
    let mut total = 0.0;
    for m in 0..dim {
        let p: f64 = moments.iter().enumerate().map(|(a, v)| if (a & m).count_ones() % 2 == 1 { -v } else { *v }).sum::<f64>() / dim as f64;
        total += p.max(0.0);
        cdf.push(total);
    }
    Ok(cdf)
}

fn sample_bits(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.gen::<f64>() * cdf[cdf.len() - 1];
    cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1)
}

fn bits_to_signs(bits: usize, n: usize) -> Vec<Sign> {
    (0..n).map(|j| if bits >> j & 1 == 1 { Sign::Minus } else { Sign::Plus }).collect()
}

impl Channel for ExactChannel {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn measure(&self, prepare: &[PauliAxis], signs: &[Sign], basis: &[PauliAxis], rng: &mut ChaCha8Rng) -> Vec<Sign> {
        let p = index_of(prepare, 6, |j| prepare[j].index() * 2 + (!signs[j].is_plus()) as usize);
        let b = index_of(basis, 3, |j| basis[j].index());
        bits_to_signs(sample_bits(&self.table[p][b], rng), self.n_qubits)
    }
}

/// One stochastic trajectory of the chip model per round.
pub struct TrajectoryChannel<T> {
    pub model: LindbladModel<T>,
    pub t: f64,
    pub dt: f64,
    pub convention: DephasingConvention,
}

impl<T: Real> Channel for TrajectoryChannel<T> {
    fn n_qubits(&self) -> usize {
        self.model.n_qubits
    }

    fn measure(&self, prepare: &[PauliAxis], signs: &[Sign], basis: &[PauliAxis], rng: &mut ChaCha8Rng) -> Vec<Sign> {
        let n = self.model.n_qubits;
        let sites: Vec<(PauliAxis, Sign)> = prepare.iter().zip(signs).map(|(a, s)| (*a, *s)).collect();
        let mut psi = StateVector::<T>::product(&sites);
        evolve_trajectory(&mut psi, &self.model, self.t, self.dt, self.convention, rng);
        rotate_to_z(&mut psi, basis);
        let mut total = T::zero();
        let cdf: Vec<f64> = psi
            .amplitudes()
            .iter()
            .map(|a| {
                total += a.norm_sqr();
                total.f64()
            })
            .collect();
        bits_to_signs(sample_bits(&cdf, rng), n)
    }
}

/// Map the ±1 eigenstates of each site's basis onto |0⟩, |1⟩.
fn rotate_to_z<T: Real>(psi: &mut StateVector<T>, basis: &[PauliAxis]) {
    let h = T::FRAC_1_SQRT_2();
    let amps = psi.amplitudes_mut();
    for (j, axis) in basis.iter().enumerate() {
        if *axis == PauliAxis::Z {
            continue;
        }
        let bit = 1 << j;
        for k in 0..amps.len() {
            if k & bit != 0 {
                continue;
            }
            let (a0, a1) = (amps[k], amps[k | bit]);
            let (n0, n1) = match axis {
                PauliAxis::X => (a0 + a1, a0 - a1),
                _ => {
                    let i = Complex::new(T::zero(), T::one());
                    (a0 - i * a1, a0 + i * a1)
                }
            };
            amps[k] = n0.scale(h);
            amps[k | bit] = n1.scale(h);
        }
    }
}

/// Draw B, S uniformly from `axes`, E uniformly, and query the channel.
pub fn run_round<C: Channel + ?Sized>(channel: &C, axes: &[PauliAxis], rng: &mut ChaCha8Rng) -> ShadowRecord {
    let n = channel.n_qubits();
    let measure: Vec<PauliAxis> = (0..n).map(|_| axes[rng.gen_range(0..axes.len())]).collect();
    let prepare: Vec<PauliAxis> = (0..n).map(|_| axes[rng.gen_range(0..axes.len())]).collect();
    let prep_signs: Vec<Sign> = (0..n).map(|_| coin(rng)).collect();
    let outcomes = channel.measure(&prepare, &prep_signs, &measure, rng);
    ShadowRecord { measure, prepare, prep_signs, outcomes }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// ±3^{ω_a+ω_b}/2.
    HalfWeighted,
    /// ±3^{ω_a+ω_b}: E[X] = 2^{-n} tr(P_a Φ(P_b)).
    #[default]
    Unbiased,
}

/// X_{a,b} for one record with `k_axes` possible bases per site.
pub fn estimator_value_k(rec: &ShadowRecord, pa: &PauliString, pb: &PauliString, normalization: Normalization, k_axes: usize) -> f64 {
    let mut parity = pa.sign() * pb.sign();
    for (j, axis) in pa.support() {
        if rec.measure[*j] != *axis {
            return 0.0;
        }
        parity = parity * rec.outcomes[*j];
    }
    for (j, axis) in pb.support() {
        if rec.prepare[*j] != *axis {
            return 0.0;
        }
        parity = parity * rec.prep_signs[*j];
    }
    let mut v = (k_axes as f64).powi((pa.weight() + pb.weight()) as i32);
    if normalization == Normalization::HalfWeighted {
        v /= 2.0;
    }
    parity.value::<f64>() * v
}

pub fn estimator_value(rec: &ShadowRecord, pa: &PauliString, pb: &PauliString, normalization: Normalization) -> f64 {
    estimator_value_k(rec, pa, pb, normalization, 3)
}

/// Median of the means of `k` consecutive groups of ⌊len/k⌋ values.
pub fn median_of_means(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(Error::Invalid(format!("cannot form {k} groups from {} values", values.len())));
    }
    let size = values.len() / k;
    let mut means: Vec<f64> = values.chunks_exact(size).take(k).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    Ok(median(&mut means))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub normalization: Normalization,
    /// Largest allowed ω_a + ω_b.
    pub weight_cap: usize,
    /// Bases drawn per site; all three by default.
    pub axes: Vec<PauliAxis>,
    pub master_seed: u64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { normalization: Normalization::default(), weight_cap: 4, axes: PauliAxis::ALL.to_vec(), master_seed: 0 }
    }
}

/// Group count K and group size B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowBudget {
    pub groups: usize,
    pub group_size: usize,
}

impl ShadowBudget {
    /// B = ⌈4·k^ω/ε²⌉, K = ⌈2 ln(K1·K2/δ)⌉.
    pub fn new(omega: usize, k_axes: usize, epsilon: f64, delta: f64, k1: usize, k2: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Invalid(format!("need epsilon > 0 and 0 < delta < 1, got {epsilon}, {delta}")));
        }
        let group_size = (4.0 * (k_axes as f64).powi(omega as i32) / (epsilon * epsilon)).ceil() as usize;
        let groups = ((2.0 * ((k1 * k2) as f64 / delta).ln()).ceil() as usize).max(1);
        Ok(Self { groups, group_size })
    }

    pub fn rounds(&self) -> usize {
        self.groups * self.group_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub pa: PauliString,
    pub pb: PauliString,
    pub value: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub samples_used: usize,
}

const CHUNK: usize = 4096;

/// Per-pair sums of X_{a,b} over rounds [start, end) of one group, in fixed chunks.
fn group_sums<C: Channel + ?Sized>(
    channel: &C,
    pairs: &[(&PauliString, &PauliString)],
    cfg: &ShadowConfig,
    group: usize,
    size: usize,
) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..size.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; pairs.len()];
            for r in c * CHUNK..((c + 1) * CHUNK).min(size) {
                let mut rng = stream(cfg.master_seed, &[group as u64, r as u64]);
                let rec = run_round(channel, &cfg.axes, &mut rng);
                for (s, (pa, pb)) in acc.iter_mut().zip(pairs) {
                    *s += estimator_value_k(&rec, pa, pb, cfg.normalization, cfg.axes.len());
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; pairs.len()];
    for c in chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    total
}

/// Median-of-means estimates of 2^{-n} tr(P_a Φ(P_b)) for every (a, b), sharing all rounds.
pub fn estimate_overlaps<C: Channel + ?Sized>(
    channel: &C,
    paulis_a: &[PauliString],
    paulis_b: &[PauliString],
    epsilon: f64,
    delta: f64,
    cfg: &ShadowConfig,
) -> Result<Vec<OverlapEstimate>> {
    let n = channel.n_qubits();
    if cfg.axes.is_empty() {
        return Err(Error::Invalid("no measurement axes allowed".into()));
    }
    for p in paulis_a.iter().chain(paulis_b) {
        if p.n_qubits() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.n_qubits() });
        }
        if let Some(a) = p.support().values().find(|a| !cfg.axes.contains(a)) {
            return Err(Error::Invalid(format!("{p} uses axis {} outside the allowed bases", a.upper())));
        }
    }
    if paulis_a.is_empty() || paulis_b.is_empty() {
        return Ok(Vec::new());
    }
    let wa = paulis_a.iter().map(|p| p.weight()).max().unwrap_or(0);
    let wb = paulis_b.iter().map(|p| p.weight()).max().unwrap_or(0);
    let omega = wa + wb;
    if omega > cfg.weight_cap {
        return Err(Error::Invalid(format!("combined weight {omega} exceeds the cap {}", cfg.weight_cap)));
    }
    let budget = ShadowBudget::new(omega, cfg.axes.len(), epsilon, delta, paulis_a.len(), paulis_b.len())?;
    let pairs: Vec<(&PauliString, &PauliString)> = paulis_a.iter().flat_map(|a| paulis_b.iter().map(move |b| (a, b))).collect();
    let mut means = vec![Vec::with_capacity(budget.groups); pairs.len()];
    for g in 0..budget.groups {
        let sums = group_sums(channel, &pairs, cfg, g, budget.group_size);
        for (m, s) in means.iter_mut().zip(sums) {
            m.push(s / budget.group_size as f64);
        }
    }
    Ok(pairs
        .iter()
        .zip(means)
        .map(|((pa, pb), mut m)| OverlapEstimate {
            pa: (*pa).clone(),
            pb: (*pb).clone(),
            value: median(&mut m),
            epsilon,
            delta,
            samples_used: budget.rounds(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use PauliAxis::{X, Y, Z};

    fn p(label: &str, n: usize) -> PauliString {
        PauliString::parse(label, n).unwrap()
    }

    #[test]
    fn identity_matching_basis_returns_signs() {
        let ch = IdentityChannel { n_qubits: 3 };
        let mut rng = stream(1, &[]);
        for _ in 0..100 {
            let s: Vec<PauliAxis> = (0..3).map(|_| PauliAxis::from_index(rng.gen_range(0..3))).collect();
            let e: Vec<Sign> = (0..3).map(|_| coin(&mut rng)).collect();
            assert_eq!(ch.measure(&s, &e, &s, &mut rng), e);
        }
    }

    #[test]
    fn depolarized_outcomes_are_uniform() {
        let ch = DepolarizingChannel { n_qubits: 2, p: 1.0 };
        let mut rng = stream(2, &[]);
        let n = 20_000;
        let mut plus = [0usize; 2];
        for _ in 0..n {
            let r = run_round(&ch, &PauliAxis::ALL, &mut rng);
            for j in 0..2 {
                plus[j] += r.outcomes[j].is_plus() as usize;
            }
        }
        for c in plus {
            // χ² with one degree of freedom, 99.9% quantile 10.83.
            let e = n as f64 / 2.0;
            let chi2 = 2.0 * (c as f64 - e).powi(2) / e;
            assert!(chi2 < 10.83, "chi2 = {chi2}");
        }
    }

    #[test]
    fn basis_marginals_are_uniform() {
        let ch = IdentityChannel { n_qubits: 2 };
        let mut rng = stream(3, &[]);
        let n = 27_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            let r = run_round(&ch, &PauliAxis::ALL, &mut rng);
            counts[r.measure[0].index() * 3 + r.measure[1].index()] += 1;
        }
        let e = n as f64 / 9.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        // 8 degrees of freedom, 99.9% quantile 26.12.
        assert!(chi2 < 26.12, "chi2 = {chi2}");
    }

    #[test]
    fn estimator_cases() {
        let rec = ShadowRecord {
            measure: vec![X, Z],
            prepare: vec![Y, X],
            prep_signs: vec![Sign::Plus, Sign::Minus],
            outcomes: vec![Sign::Plus, Sign::Plus],
        };
        let h = Normalization::HalfWeighted;
        assert_eq!(estimator_value(&rec, &p("Y0", 2), &p("Y0", 2), h), 0.0);
        assert_eq!(estimator_value(&rec, &p("X0", 2), &p("Y0", 2), h), 4.5);
        assert_eq!(estimator_value(&rec, &p("X0", 2), &p("X1", 2), h), -4.5);
        assert_eq!(estimator_value(&rec, &p("X0", 2), &p("X1", 2), Normalization::Unbiased), -9.0);
        assert_eq!(estimator_value(&rec, &p("-X0", 2), &p("X1", 2), Normalization::Unbiased), 9.0);
        assert_eq!(estimator_value(&rec, &p("I", 2), &p("I", 2), Normalization::Unbiased), 1.0);
    }

    #[test]
    fn median_of_means_cases() {
        assert_eq!(median_of_means(&[2.5; 12], 4).unwrap(), 2.5);
        let mut v = vec![1.0; 25];
        for x in &mut v[5..10] {
            *x = 1e9;
        }
        assert_eq!(median_of_means(&v, 5).unwrap(), 1.0);
        assert!(median_of_means(&[1.0, 2.0], 3).is_err());
        // Remainder is truncated: groups [1,2], [3,4].
        assert_eq!(median_of_means(&[1.0, 2.0, 3.0, 4.0, 100.0], 2).unwrap(), 2.5);
    }

    #[test]
    fn median_of_means_tail_shrinks_with_groups() {
        // Deviation frequency beyond ε falls as K grows at fixed B (exponential tail direction).
        let (b, eps) = (16usize, 0.5);
        let freq = |k: usize| {
            let mut rng = stream(7, &[k as u64]);
            let trials = 2000;
            (0..trials)
                .filter(|_| {
                    let v: Vec<f64> = (0..k * b).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
                    median_of_means(&v, k).unwrap().abs() > eps
                })
                .count() as f64
                / trials as f64
        };
        let (f1, f5, f9) = (freq(1), freq(5), freq(9));
        assert!(f1 > f5 && f5 > f9, "{f1} {f5} {f9}");
    }

    #[test]
    fn budget_formula() {
        let b = ShadowBudget::new(2, 3, 0.1, 0.05, 3, 3).unwrap();
        assert_eq!(b.group_size, 3600);
        assert_eq!(b.groups, (2.0 * (9.0f64 / 0.05).ln()).ceil() as usize);
        assert!(ShadowBudget::new(2, 3, 0.0, 0.05, 1, 1).is_err());
    }

    #[test]
    fn identity_overlaps_are_kronecker() {
        let ch = IdentityChannel { n_qubits: 2 };
        let paulis = vec![p("Z0", 2), p("X1", 2), p("Y0", 2)];
        let cfg = ShadowConfig { master_seed: 5, ..ShadowConfig::default() };
        let est = estimate_overlaps(&ch, &paulis, &paulis, 0.1, 0.05, &cfg).unwrap();
        for e in &est {
            let want = if e.pa == e.pb { 1.0 } else { 0.0 };
            assert!((e.value - want).abs() < 0.1, "{} {}: {}", e.pa, e.pb, e.value);
        }
    }

    #[test]
    fn amplitude_damping_overlap() {
        let (t1, t) = (2.0, 0.7);
        let mut l = Lindbladian::new(1);
        l.add_decay(0, 1.0 / t1);
        let ch = ExactChannel::new(&l, t, 1e-3).unwrap();
        let z = p("Z0", 1);
        let exact = ch.overlap(&z, &z).unwrap();
        assert!((exact - (-t / t1).exp()).abs() < 1e-9);
        let est = estimate_overlaps(&ch, &[z.clone()], &[z], 0.05, 0.05, &ShadowConfig::default()).unwrap();
        assert!((est[0].value - exact).abs() < 0.05);
    }

    #[test]
    fn mixture_of_identical_parts() {
        let mut l = Lindbladian::new(1);
        l.add_hamiltonian(0.4, p("X0", 1));
        let single = ExactChannel::new(&l, 0.8, 1e-3).unwrap();
        let mixed = ExactChannel::from_mixture(&[(0.25, l.clone()), (0.75, l)], 0.8, 1e-3).unwrap();
        let z = p("Z0", 1);
        assert!((single.overlap(&z, &z).unwrap() - mixed.overlap(&z, &z).unwrap()).abs() < 1e-12);
        assert!(ExactChannel::from_mixture(&[], 1.0, 0.1).is_err());
    }

    #[test]
    fn unbiased_on_exact_channel() {
        // Two coupled noisy qubits; mean of X over many rounds against the dense overlap.
        let mut l = Lindbladian::new(2);
        l.add_hamiltonian(0.8, p("X0X1", 2));
        l.add_hamiltonian(0.3, p("Z0", 2));
        l.add_decay(1, 0.5);
        l.add_dephasing(0, 0.2);
        let ch = ExactChannel::new(&l, 0.6, 1e-3).unwrap();
        let pairs = [(p("Y0", 2), p("Y0", 2)), (p("Z1", 2), p("Z1", 2)), (p("Y0X1", 2), p("Z0", 2)), (p("Z1", 2), p("I", 2))];
        let rounds = 200_000;
        for norm in [Normalization::Unbiased, Normalization::HalfWeighted] {
            let cfg = ShadowConfig { normalization: norm, master_seed: 9, ..ShadowConfig::default() };
            let refs: Vec<_> = pairs.iter().map(|(a, b)| (a, b)).collect();
            let sums = group_sums(&ch, &refs, &cfg, 0, rounds);
            for ((pa, pb), s) in pairs.iter().zip(sums) {
                let scale = if norm == Normalization::HalfWeighted { 0.5 } else { 1.0 };
                let want = scale * ch.overlap(pa, pb).unwrap();
                let sd = scale * 3f64.powi((pa.weight() + pb.weight()) as i32 / 2 + 1) / (rounds as f64).sqrt();
                assert!((s / rounds as f64 - want).abs() < 4.0 * sd, "{pa} {pb}: {} vs {want}", s / rounds as f64);
            }
        }
    }

    #[test]
    fn trajectory_channel_matches_exact() {
        let mut model = LindbladModel::<f64>::new(1);
        model.frequency[0] = 1.0;
        model.t1[0] = 3.0;
        let l = model.lindbladian(DephasingConvention::default(), None);
        let exact = ExactChannel::new(&l, 0.5, 1e-3).unwrap();
        let traj = TrajectoryChannel { model, t: 0.5, dt: 1e-3, convention: DephasingConvention::default() };
        let (x, y) = (p("X0", 1), p("Y0", 1));
        let cfg = ShadowConfig { master_seed: 4, ..ShadowConfig::default() };
        let rounds = 40_000;
        let sums = group_sums(&traj, &[(&y, &x)], &cfg, 0, rounds);
        let want = exact.overlap(&y, &x).unwrap();
        assert!((sums[0] / rounds as f64 - want).abs() < 4.0 * 9.0 / (rounds as f64).sqrt() * 3f64.sqrt() / 3.0 * 3.0);
    }

    #[test]
    fn nonzero_frequency_matches_weight() {
        let ch = IdentityChannel { n_qubits: 3 };
        let (pa, pb) = (p("X0Z2", 3), p("Y1", 3));
        let mut rng = stream(12, &[]);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let r = run_round(&ch, &PauliAxis::ALL, &mut rng);
            let v = estimator_value(&r, &pa, &pb, Normalization::HalfWeighted);
            if v != 0.0 {
                assert_eq!(v * v, 3f64.powi(6) / 4.0);
                hits += 1;
            }
        }
        let q = 3f64.powi(-3);
        let sd = (q * (1.0 - q) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - q).abs() < 4.0 * sd);
    }

    #[test]
    fn whitelist_and_caps() {
        let ch = IdentityChannel { n_qubits: 2 };
        let cfg = ShadowConfig { axes: vec![X, Z], master_seed: 3, ..ShadowConfig::default() };
        let est = estimate_overlaps(&ch, &[p("Z0", 2)], &[p("Z0", 2), p("X1", 2)], 0.1, 0.05, &cfg).unwrap();
        assert!((est[0].value - 1.0).abs() < 0.1 && est[1].value.abs() < 0.1);
        assert_eq!(est[0].samples_used, ShadowBudget::new(2, 2, 0.1, 0.05, 1, 2).unwrap().rounds());
        assert!(estimate_overlaps(&ch, &[p("Y0", 2)], &[p("Z0", 2)], 0.1, 0.05, &cfg).is_err());
        let wide = IdentityChannel { n_qubits: 5 };
        let heavy = p("X0X1X2", 5);
        assert!(estimate_overlaps(&wide, &[heavy.clone()], &[heavy], 0.1, 0.05, &ShadowConfig::default()).is_err());
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let ch = DepolarizingChannel { n_qubits: 2, p: 0.3 };
        let paulis = vec![p("Z0", 2), p("X0X1", 2)];
        let cfg = ShadowConfig { master_seed: 21, ..ShadowConfig::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_overlaps(&ch, &paulis, &paulis, 0.3, 0.1, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
