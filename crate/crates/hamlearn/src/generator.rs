//! General Lindbladians with Pauli Hamiltonians and single-site dissipators.

use num_complex::Complex;

use crate::pauli::{PauliAxis, PauliString, PauliSum, ProductStateSpec};
use crate::scalar::Real;

/// Hermitian 3×3 coefficient matrix of a single-site dissipator.
pub type DMatrix<T> = [[Complex<T>; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct SiteDissipator<T> {
    pub site: usize,
    pub d: DMatrix<T>,
}

/// dρ/dt = −i[H, ρ] + Σ_sites Σ_μν D_μν (σ_μ ρ σ_ν − ½{σ_ν σ_μ, ρ}).
#[derive(Clone, Debug, PartialEq)]
pub struct Lindbladian<T> {
    n_qubits: usize,
    hamiltonian: Vec<(T, PauliString)>,
    dissipators: Vec<SiteDissipator<T>>,
}

pub fn zero_d<T: Real>() -> DMatrix<T> {
    [[Complex::new(T::zero(), T::zero()); 3]; 3]
}

impl<T: Real> Lindbladian<T> {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, hamiltonian: Vec::new(), dissipators: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn hamiltonian(&self) -> &[(T, PauliString)] {
        &self.hamiltonian
    }

    pub fn dissipators(&self) -> &[SiteDissipator<T>] {
        &self.dissipators
    }

    pub fn add_hamiltonian(&mut self, coeff: T, term: PauliString) {
        assert_eq!(term.n_qubits(), self.n_qubits);
        if coeff != T::zero() {
            self.hamiltonian.push((coeff, term));
        }
    }

    /// Adds `d` to the dissipator on `site`.
    pub fn add_dissipator(&mut self, site: usize, d: DMatrix<T>) {
        assert!(site < self.n_qubits);
        if let Some(existing) = self.dissipators.iter_mut().find(|s| s.site == site) {
            for (mu, row) in d.iter().enumerate() {
                for (nu, v) in row.iter().enumerate() {
                    existing.d[mu][nu] += *v;
                }
            }
        } else {
            self.dissipators.push(SiteDissipator { site, d });
        }
    }

    /// Amplitude damping |1⟩ → |0⟩: jump (σ_x + iσ_y)/2 at `rate`.
    pub fn add_decay(&mut self, site: usize, rate: T) {
        let q = rate / T::lit(4.0);
        let mut d = zero_d();
        d[0][0] = Complex::new(q, T::zero());
        d[1][1] = Complex::new(q, T::zero());
        d[0][1] = Complex::new(T::zero(), -q);
        d[1][0] = Complex::new(T::zero(), q);
        self.add_dissipator(site, d);
    }

    /// Pure dephasing: jump σ_z at `rate`.
    pub fn add_dephasing(&mut self, site: usize, rate: T) {
        let mut d = zero_d();
        d[2][2] = Complex::new(rate, T::zero());
        self.add_dissipator(site, d);
    }

    /// Heisenberg-picture generator L†(O) = i[H, O] + Σ D_μν (σ_ν O σ_μ − ½{σ_ν σ_μ, O}).
    pub fn adjoint(&self, o: &PauliSum<T>) -> PauliSum<T> {
        let mut out = PauliSum::zero(self.n_qubits);
        for (c, h) in &self.hamiltonian {
            for (p, v) in o.terms() {
                if h.commutes_with(p) {
                    continue;
                }
                let (ph, q) = h.mul(p);
                // i[H, P] = 2i·φ·Q
                let f = Complex::new(T::zero(), T::lit(2.0) * *c) * ph.to_complex::<T>();
                out.add_term(&q, *v * f);
            }
        }
        for sd in &self.dissipators {
            for mu in PauliAxis::ALL {
                for nu in PauliAxis::ALL {
                    let dmn = sd.d[mu.index()][nu.index()];
                    if dmn.re == T::zero() && dmn.im == T::zero() {
                        continue;
                    }
                    let s_mu = PauliString::single(self.n_qubits, sd.site, mu).expect("site in range");
                    let s_nu = PauliString::single(self.n_qubits, sd.site, nu).expect("site in range");
                    let (ph, nm) = s_nu.mul(&s_mu);
                    let nm_c = ph.to_complex::<T>();
                    out.add_scaled(&o.sandwich(Some(&s_nu), Some(&s_mu)), dmn);
                    let half = Complex::new(T::lit(-0.5), T::zero()) * dmn * nm_c;
                    out.add_scaled(&o.sandwich(None, Some(&nm)), half);
                    out.add_scaled(&o.sandwich(Some(&nm), None), half);
                }
            }
        }
        out
    }

    /// d^k/dt^k tr(ρ_t O) at t = 0.
    pub fn time_derivative(&self, rho: &ProductStateSpec, o: &PauliString, order: usize) -> T {
        let mut s = PauliSum::from_string(o);
        for _ in 0..order {
            s = self.adjoint(&s);
        }
        s.expectation(rho).re
    }
}
