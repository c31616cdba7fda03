//! Dense state vectors and Pauli-word application.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::pauli::{PauliAxis, PauliString, Sign};
use crate::scalar::Real;

/// Amplitudes over n qubits; site j is bit j of the basis index.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T> {
    n_qubits: usize,
    amps: Vec<Complex<T>>,
}

impl<T: Real> StateVector<T> {
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![Complex::new(T::zero(), T::zero()); 1 << n_qubits];
        amps[index] = Complex::new(T::one(), T::zero());
        Self { n_qubits, amps }
    }

    pub fn zero_state(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex<T>>) -> Result<Self> {
        if amps.len() != 1 << n_qubits {
            return Err(Error::DimensionMismatch { expected: 1 << n_qubits, got: amps.len() });
        }
        Ok(Self { n_qubits, amps })
    }

    /// Tensor product of single-qubit eigenstates, listed by site.
    pub fn product(states: &[(PauliAxis, Sign)]) -> Self {
        let n = states.len();
        let mut amps = vec![Complex::new(T::one(), T::zero()); 1 << n];
        for (site, (axis, sign)) in states.iter().enumerate() {
            let [a0, a1] = eigenstate::<T>(*axis, *sign);
            for (k, amp) in amps.iter_mut().enumerate() {
                *amp = *amp * if k >> site & 1 == 0 { a0 } else { a1 };
            }
        }
        Self { n_qubits: n, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > T::zero() {
            let inv = T::one() / n;
            for a in &mut self.amps {
                *a = a.scale(inv);
            }
        }
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).fold(Complex::new(T::zero(), T::zero()), |s, x| s + x)
    }

    /// Probability weight of |1⟩ on a site, relative to the current norm.
    pub fn excited_weight(&self, site: usize) -> T {
        let bit = 1 << site;
        let w: T = self.amps.iter().enumerate().filter(|(k, _)| k & bit != 0).map(|(_, a)| a.norm_sqr()).sum();
        w / self.norm_sqr()
    }

    /// ⟨ψ|P|ψ⟩ / ⟨ψ|ψ⟩ without allocating.
    pub fn expectation(&self, p: &PauliString) -> T {
        assert_eq!(p.n_qubits(), self.n_qubits, "observable on a different register");
        let flip = p.flip_mask();
        let pm = p.phase_mask();
        let base = Complex::new(T::zero(), T::one()).powu(p.y_count() as u32);
        let mut acc = Complex::new(T::zero(), T::zero());
        for (k, a) in self.amps.iter().enumerate() {
            let mut v = *a * base;
            if (k & pm).count_ones() % 2 == 1 {
                v = -v;
            }
            acc += self.amps[k ^ flip].conj() * v;
        }
        let e = acc.re / self.norm_sqr();
        if p.sign() == Sign::Minus {
            -e
        } else {
            e
        }
    }
}

/// Amplitudes (|0⟩, |1⟩) of the ±1 eigenstate of σ_axis.
pub fn eigenstate<T: Real>(axis: PauliAxis, sign: Sign) -> [Complex<T>; 2] {
    let h = T::FRAC_1_SQRT_2();
    let (o, z) = (T::one(), T::zero());
    match (axis, sign) {
        (PauliAxis::Z, Sign::Plus) => [Complex::new(o, z), Complex::new(z, z)],
        (PauliAxis::Z, Sign::Minus) => [Complex::new(z, z), Complex::new(o, z)],
        (PauliAxis::X, Sign::Plus) => [Complex::new(h, z), Complex::new(h, z)],
        (PauliAxis::X, Sign::Minus) => [Complex::new(h, z), Complex::new(-h, z)],
        (PauliAxis::Y, Sign::Plus) => [Complex::new(h, z), Complex::new(z, h)],
        (PauliAxis::Y, Sign::Minus) => [Complex::new(h, z), Complex::new(z, -h)],
    }
}

/// P|ψ⟩.
pub fn apply_pauli<T: Real>(p: &PauliString, psi: &StateVector<T>) -> Result<StateVector<T>> {
    if p.n_qubits() != psi.n_qubits {
        return Err(Error::DimensionMismatch { expected: p.n_qubits(), got: psi.n_qubits });
    }
    let flip = p.flip_mask();
    let pm = p.phase_mask();
    let mut base = Complex::new(T::zero(), T::one()).powu(p.y_count() as u32);
    if p.sign() == Sign::Minus {
        base = -base;
    }
    let mut out = vec![Complex::new(T::zero(), T::zero()); psi.amps.len()];
    for (k, a) in psi.amps.iter().enumerate() {
        let mut v = *a * base;
        if (k & pm).count_ones() % 2 == 1 {
            v = -v;
        }
        out[k ^ flip] = v;
    }
    Ok(StateVector { n_qubits: psi.n_qubits, amps: out })
}
