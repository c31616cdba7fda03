//! Dense density-matrix Lindblad integration for small registers.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::Lindbladian;
use crate::model::LindbladModel;
use crate::pauli::{PauliAxis, PauliString, ProductStateSpec, Sign};
use crate::scalar::Real;
use crate::sim::{DephasingConvention, NoiseMode, TimeTrace, TraceSample};
use crate::state::StateVector;

pub const MAX_QUBITS: usize = 4;

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex::new(T::zero(), T::zero()); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        Self { dim, data: (0..dim * dim).map(|k| f(k / dim, k % dim)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
        self.data[r * self.dim + c] = v;
    }

    /// 2×2 Pauli matrix.
    pub fn axis(axis: PauliAxis) -> Self {
        let (o, z) = (T::one(), T::zero());
        let c = Complex::new;
        let data = match axis {
            PauliAxis::X => vec![c(z, z), c(o, z), c(o, z), c(z, z)],
            PauliAxis::Y => vec![c(z, z), c(z, -o), c(z, o), c(z, z)],
            PauliAxis::Z => vec![c(o, z), c(z, z), c(z, z), c(-o, z)],
        };
        Self { dim: 2, data }
    }

    pub fn kron(&self, other: &Self) -> Self {
        let d = self.dim * other.dim;
        Self::from_fn(d, |r, c| self.get(r / other.dim, c / other.dim) * other.get(r % other.dim, c % other.dim))
    }

    /// Kronecker product of per-site factors; site 0 is the least significant bit.
    pub fn product(n_qubits: usize, factor: impl Fn(usize) -> Self) -> Self {
        let mut m = Self::identity(1);
        for site in (0..n_qubits).rev() {
            m = m.kron(&factor(site));
        }
        m
    }

    pub fn pauli(p: &PauliString) -> Self {
        let m = Self::product(p.n_qubits(), |s| p.get(s).map(Self::axis).unwrap_or_else(|| Self::identity(2)));
        match p.sign() {
            Sign::Plus => m,
            Sign::Minus => m.scale(Complex::new(-T::one(), T::zero())),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let row = &other.data[k * d..(k + 1) * d];
                let dst = &mut out.data[i * d..(i + 1) * d];
                for (o, b) in dst.iter_mut().zip(row) {
                    *o += a * *b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn axpy(&mut self, s: Complex<T>, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.dim).fold(Complex::new(T::zero(), T::zero()), |s, i| s + self.get(i, i))
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn apply(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.dim).map(|r| (0..self.dim).fold(Complex::new(T::zero(), T::zero()), |s, c| s + self.get(r, c) * v[c])).collect()
    }

    /// Matrix exponential by scaling and squaring with a Taylor core.
    pub fn expm(&self) -> Self {
        let norm = self.norm();
        let mut squarings = 0;
        let mut scale = T::one();
        while norm * scale > T::lit(0.25) {
            scale = scale / T::lit(2.0);
            squarings += 1;
        }
        let a = self.scale(Complex::new(scale, T::zero()));
        let mut term = Self::identity(self.dim);
        let mut sum = Self::identity(self.dim);
        for k in 1..=18 {
            term = term.mul(&a).scale(Complex::new(T::one() / T::lit(k as f64), T::zero()));
            sum = sum.add(&term);
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        sum
    }
}

/// Density matrix of an n-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix<T> {
    n_qubits: usize,
    m: CMatrix<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn from_matrix(n_qubits: usize, m: CMatrix<T>) -> Result<Self> {
        if m.dim() != 1 << n_qubits {
            return Err(Error::DimensionMismatch { expected: 1 << n_qubits, got: m.dim() });
        }
        Ok(Self { n_qubits, m })
    }

    /// Exact tensor product: fixed sites (I ± σ)/2, the others I/2.
    pub fn from_spec(spec: &ProductStateSpec) -> Self {
        let half = Complex::new(T::lit(0.5), T::zero());
        let m = CMatrix::product(spec.n_qubits(), |s| {
            let f = match spec.get(s) {
                Some((a, sg)) => CMatrix::identity(2).add(&CMatrix::axis(a).scale(Complex::new(sg.value::<T>(), T::zero()))),
                None => CMatrix::identity(2),
            };
            f.scale(half)
        });
        Self { n_qubits: spec.n_qubits(), m }
    }

    pub fn from_state(psi: &StateVector<T>) -> Self {
        let a = psi.amplitudes();
        let m = CMatrix::from_fn(a.len(), |r, c| a[r] * a[c].conj());
        Self { n_qubits: psi.n_qubits(), m }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.m
    }

    pub fn trace(&self) -> Complex<T> {
        self.m.trace()
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> T {
        let d = self.m.dim();
        let mut worst = T::zero();
        for r in 0..d {
            for c in 0..d {
                worst = worst.max((self.m.get(r, c) - self.m.get(c, r).conj()).norm());
            }
        }
        worst
    }
}

/// tr(ρ O), evaluated through the sparse action of O on basis columns.
pub fn expectation_exact<T: Real>(rho: &DensityMatrix<T>, o: &PauliString) -> Result<T> {
    if o.n_qubits() != rho.n_qubits {
        return Err(Error::DimensionMismatch { expected: rho.n_qubits, got: o.n_qubits() });
    }
    let flip = o.flip_mask();
    let pm = o.phase_mask();
    let base = Complex::new(T::zero(), T::one()).powu(o.y_count() as u32) * o.sign().value::<T>();
    // O|k⟩ = base·(−1)^{|k∧pm|} |k⊕flip⟩, so tr(ρO) = Σ_k ⟨k|ρ O|k⟩ = Σ_k ρ_{k, k⊕flip}·phase_k.
    let mut acc = Complex::new(T::zero(), T::zero());
    for k in 0..rho.m.dim() {
        let mut v = rho.m.get(k, k ^ flip) * base;
        if (k & pm).count_ones() % 2 == 1 {
            v = -v;
        }
        acc += v;
    }
    Ok(acc.re)
}

/// Dense form of a Lindbladian.
#[derive(Clone, Debug)]
pub struct DenseGenerator<T> {
    n_qubits: usize,
    /// H − (i/2) Σ D_μν σ_ν σ_μ
    h_eff: CMatrix<T>,
    jumps: Vec<(Complex<T>, CMatrix<T>, CMatrix<T>)>,
    /// Upper bound on the induced trace norm of the generator.
    norm_bound: T,
}

impl<T: Real> DenseGenerator<T> {
    pub fn new(l: &Lindbladian<T>) -> Result<Self> {
        let n = l.n_qubits();
        if n > MAX_QUBITS {
            return Err(Error::TooManyQubits { max: MAX_QUBITS, got: n });
        }
        let dim = 1 << n;
        let mut h_eff = CMatrix::zeros(dim);
        for (c, p) in l.hamiltonian() {
            h_eff.axpy(Complex::new(*c, T::zero()), &CMatrix::pauli(p));
        }
        let mut jumps = Vec::new();
        let mut norm_bound = l.hamiltonian().iter().map(|(c, _)| T::lit(2.0) * c.abs()).sum::<T>();
        for sd in l.dissipators() {
            let s: Vec<CMatrix<T>> =
                PauliAxis::ALL.iter().map(|a| CMatrix::pauli(&PauliString::single(n, sd.site, *a).expect("site in range"))).collect();
            for mu in 0..3 {
                for nu in 0..3 {
                    let d = sd.d[mu][nu];
                    if d.re == T::zero() && d.im == T::zero() {
                        continue;
                    }
                    norm_bound += T::lit(2.0) * d.norm();
                    h_eff.axpy(Complex::new(T::zero(), T::lit(-0.5)) * d, &s[nu].mul(&s[mu]));
                    jumps.push((d, s[mu].clone(), s[nu].clone()));
                }
            }
        }
        Ok(Self { n_qubits: n, h_eff, jumps, norm_bound })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn norm_bound(&self) -> T {
        self.norm_bound
    }

    /// −i[H, ρ] + Σ D_μν(σ_μ ρ σ_ν − ½{σ_ν σ_μ, ρ}).
    pub fn rhs(&self, rho: &CMatrix<T>) -> CMatrix<T> {
        let mi = Complex::new(T::zero(), -T::one());
        let a = self.h_eff.mul(rho);
        let b = rho.mul(&self.h_eff.dagger());
        let mut out = a.sub(&b).scale(mi);
        for (d, s_mu, s_nu) in &self.jumps {
            out.axpy(*d, &s_mu.mul(rho).mul(s_nu));
        }
        out
    }
}

pub fn lindblad_rhs<T: Real>(rho: &DensityMatrix<T>, generator: &DenseGenerator<T>) -> Result<DensityMatrix<T>> {
    if rho.n_qubits != generator.n_qubits {
        return Err(Error::DimensionMismatch { expected: generator.n_qubits, got: rho.n_qubits });
    }
    Ok(DensityMatrix { n_qubits: rho.n_qubits, m: generator.rhs(&rho.m) })
}

fn rk4_step<T: Real>(g: &DenseGenerator<T>, rho: &CMatrix<T>, h: T) -> CMatrix<T> {
    let half = Complex::new(h / T::lit(2.0), T::zero());
    let k1 = g.rhs(rho);
    let mut y = rho.clone();
    y.axpy(half, &k1);
    let k2 = g.rhs(&y);
    let mut y = rho.clone();
    y.axpy(half, &k2);
    let k3 = g.rhs(&y);
    let mut y = rho.clone();
    y.axpy(Complex::new(h, T::zero()), &k3);
    let k4 = g.rhs(&y);
    let mut out = rho.clone();
    let s = h / T::lit(6.0);
    out.axpy(Complex::new(s, T::zero()), &k1);
    out.axpy(Complex::new(s + s, T::zero()), &k2);
    out.axpy(Complex::new(s + s, T::zero()), &k3);
    out.axpy(Complex::new(s, T::zero()), &k4);
    out
}

/// Fixed-step RK4 from 0 to `t`; the final step is shortened to land on `t`.
pub fn evolve_exact<T: Real>(rho0: &DensityMatrix<T>, generator: &DenseGenerator<T>, t: T, dt: T) -> Result<DensityMatrix<T>> {
    if rho0.n_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits { max: MAX_QUBITS, got: rho0.n_qubits });
    }
    if !(dt > T::zero()) || t < T::zero() {
        return Err(Error::Invalid("evolve_exact needs dt > 0 and t ≥ 0".into()));
    }
    let steps = (t / dt).ceil().to_usize().unwrap_or(0);
    let mut m = rho0.m.clone();
    if steps > 0 {
        let h = t / T::lit(steps as f64);
        for _ in 0..steps {
            m = rk4_step(generator, &m, h);
        }
    }
    Ok(DensityMatrix { n_qubits: rho0.n_qubits, m })
}

/// Noise-free traces of several observables from the exact generator.
pub fn exact_traces<T: Real>(
    generator: &DenseGenerator<T>,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut rho = DensityMatrix::from_spec(spec);
    let mut now = 0.0;
    let mut out = vec![Vec::with_capacity(times.len()); observables.len()];
    for &t in times {
        if t < now {
            return Err(Error::Invalid("times must be ascending".into()));
        }
        rho = evolve_exact(&rho, generator, T::lit(t - now), T::lit(dt))?;
        now = t;
        for (k, o) in observables.iter().enumerate() {
            out[k].push(expectation_exact(&rho, o)?.f64());
        }
    }
    Ok(out)
}

/// Noise-free traces by piecewise Taylor expansion of e^{tL}ρ, truncated below rounding.
pub fn series_traces<T: Real>(
    generator: &DenseGenerator<T>,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("times must be non-negative and ascending".into()));
    }
    let n = generator.n_qubits;
    let bound = generator.norm_bound.f64();
    let h = if bound > 0.0 { 1.0 / bound } else { f64::INFINITY };
    let tol = T::epsilon() * T::lit(1e-3);
    let mut rho = DensityMatrix::from_spec(spec).m;
    let mut center = 0.0;
    let mut out = vec![Vec::with_capacity(times.len()); observables.len()];
    let mut k = 0;
    while k < times.len() {
        // terms[j] = L^j ρ_c / j!
        let mut terms = vec![rho.clone()];
        let mut size = T::one();
        let x = T::lit((bound * h).min(1.0));
        let mut j = 0usize;
        while size > tol {
            j += 1;
            let next = generator.rhs(&terms[j - 1]).scale(Complex::new(T::one() / T::lit(j as f64), T::zero()));
            terms.push(next);
            size = size * x / T::lit(j as f64);
        }
        let end = center + h;
        while k < times.len() && (times[k] <= end || h.is_infinite()) {
            let dt = T::lit(times[k] - center);
            for (o, row) in observables.iter().zip(out.iter_mut()) {
                let mut acc = T::zero();
                for m in terms.iter().rev() {
                    acc = acc * dt + expectation_exact(&DensityMatrix { n_qubits: n, m: m.clone() }, o)?;
                }
                row.push(acc.f64());
            }
            k += 1;
        }
        if k < times.len() {
            let step = T::lit(h);
            let mut next = terms.last().expect("non-empty").clone();
            for m in terms.iter().rev().skip(1) {
                next = next.scale(Complex::new(step, T::zero()));
                next.axpy(Complex::new(T::one(), T::zero()), m);
            }
            rho = next;
            center = end;
        }
    }
    Ok(out)
}

/// Weighted average of per-realization results over a Gauss-Hermite rule for the quasi-static shifts.
pub fn average_over_shifts<T: Real>(
    model: &LindbladModel<T>,
    convention: DephasingConvention,
    quadrature_nodes: usize,
    f: impl Fn(&Lindbladian<T>) -> Result<Vec<Vec<f64>>> + Sync,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    let grid = model.static_shift_rule(quadrature_nodes);
    let parts: Vec<(f64, Vec<Vec<f64>>)> =
        grid.par_iter().map(|(w, shifts)| Ok((w.f64(), f(&model.lindbladian(convention, Some(shifts)))?))).collect::<Result<_>>()?;
    let mut acc: Vec<Vec<f64>> = parts[0].1.iter().map(|r| vec![0.0; r.len()]).collect();
    for (w, rows) in &parts {
        for (a, r) in acc.iter_mut().zip(rows) {
            for (x, y) in a.iter_mut().zip(r) {
                *x += w * y;
            }
        }
    }
    Ok(acc)
}

fn clean_traces(spec: &ProductStateSpec, observables: &[PauliString], times: &[f64], values: Vec<Vec<f64>>) -> Vec<TimeTrace> {
    observables
        .iter()
        .zip(values)
        .map(|(o, vals)| TimeTrace {
            observable: o.clone(),
            initial: spec.clone(),
            samples: times.iter().zip(vals).map(|(&t, mean)| TraceSample { time_us: t, mean, std_error: 0.0 }).collect(),
            noise: NoiseMode::None,
            seed: 0,
            adjusted: false,
        })
        .collect()
}

/// Exact traces of the chip model, averaging quasi-static shifts with a Gauss-Hermite rule.
#[allow(clippy::too_many_arguments)]
pub fn model_traces<T: Real>(
    model: &LindbladModel<T>,
    convention: DephasingConvention,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
    dt: f64,
    quadrature_nodes: usize,
) -> Result<Vec<TimeTrace>> {
    if model.n_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits { max: MAX_QUBITS, got: model.n_qubits });
    }
    let values =
        average_over_shifts(model, convention, quadrature_nodes, |l| exact_traces(&DenseGenerator::new(l)?, spec, observables, times, dt))?;
    Ok(clean_traces(spec, observables, times, values))
}

/// As [`model_traces`], propagating with [`series_traces`].
pub fn model_series_traces<T: Real>(
    model: &LindbladModel<T>,
    convention: DephasingConvention,
    spec: &ProductStateSpec,
    observables: &[PauliString],
    times: &[f64],
    quadrature_nodes: usize,
) -> Result<Vec<TimeTrace>> {
    if model.n_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits { max: MAX_QUBITS, got: model.n_qubits });
    }
    let values =
        average_over_shifts(model, convention, quadrature_nodes, |l| series_traces(&DenseGenerator::new(l)?, spec, observables, times))?;
    Ok(clean_traces(spec, observables, times, values))
}
