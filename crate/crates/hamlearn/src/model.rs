//! Chip model: exchange-coupled qubits with T1, T2 and T2* noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Lindbladian;
use crate::pauli::{PauliAxis, PauliString};
use crate::scalar::Real;
use crate::sim::DephasingConvention;

/// kHz to rad·μs⁻¹.
pub fn khz_to_rad_per_us(khz: f64) -> f64 {
    2.0 * std::f64::consts::PI * 1e-3 * khz
}

pub fn rad_per_us_to_khz(w: f64) -> f64 {
    w / (2.0 * std::f64::consts::PI * 1e-3)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    /// J_ij in rad·μs⁻¹.
    pub coupling: T,
}

/// H = Σ_edges J (σ_xσ_x + σ_yσ_y) + ½ Σ_j Ω_j σ_z, with per-site noise times in μs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladModel<T> {
    pub n_qubits: usize,
    pub edges: Vec<Edge<T>>,
    /// Ω_j in rad·μs⁻¹.
    pub frequency: Vec<T>,
    pub t1: Vec<T>,
    pub t2: Vec<T>,
    pub t2_star: Vec<T>,
}

impl<T: Real> LindbladModel<T> {
    /// No couplings, no fields, no noise.
    pub fn new(n_qubits: usize) -> Self {
        let inf = vec![T::infinity(); n_qubits];
        Self { n_qubits, edges: Vec::new(), frequency: vec![T::zero(); n_qubits], t1: inf.clone(), t2: inf.clone(), t2_star: inf }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n == 0 {
            return Err(Error::Invalid("model needs at least one qubit".into()));
        }
        for (name, v) in [("frequency", &self.frequency), ("t1", &self.t1), ("t2", &self.t2), ("t2_star", &self.t2_star)] {
            if v.len() != n {
                return Err(Error::Invalid(format!("{name} has {} entries for {n} qubits", v.len())));
            }
        }
        for (name, v) in [("t1", &self.t1), ("t2", &self.t2), ("t2_star", &self.t2_star)] {
            if let Some(x) = v.iter().find(|x| !(**x > T::zero())) {
                return Err(Error::Invalid(format!("{name} must be positive, got {x}")));
            }
        }
        if self.frequency.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("frequencies must be finite".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.edges {
            if e.i >= n || e.j >= n {
                return Err(Error::SiteOutOfRange { site: e.i.max(e.j), n_qubits: n });
            }
            if e.i == e.j {
                return Err(Error::Invalid(format!("self-loop on site {}", e.i)));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::Invalid(format!("edge ({}, {}) listed twice", e.i, e.j)));
            }
            if !e.coupling.is_finite() {
                return Err(Error::Invalid("couplings must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<T> {
        self.edges.iter().find(|e| (e.i, e.j) == (i, j) || (e.j, e.i) == (i, j)).map(|e| e.coupling)
    }

    pub fn has_markovian_noise(&self) -> bool {
        self.t1.iter().chain(&self.t2).any(|t| t.is_finite())
    }

    pub fn has_static_noise(&self) -> bool {
        self.t2_star.iter().any(|t| t.is_finite())
    }

    /// Static-shift standard deviations b_j = √2 / T2*_j.
    pub fn static_shift_std(&self) -> Vec<T> {
        self.t2_star.iter().map(|t| T::SQRT_2() / *t).collect()
    }

    /// Tensor Gauss-Hermite rule over the static shifts of noisy sites: (weight, shifts).
    pub fn static_shift_rule(&self, nodes: usize) -> Vec<(T, Vec<T>)> {
        let rule = crate::quadrature::gauss_hermite_normal(nodes.max(1));
        let b = self.static_shift_std();
        let mut grid = vec![(T::one(), vec![T::zero(); self.n_qubits])];
        for j in (0..self.n_qubits).filter(|j| b[*j] > T::zero()) {
            let mut next = Vec::with_capacity(grid.len() * rule.len());
            for (w, s) in &grid {
                for (x, wx) in &rule {
                    let mut s = s.clone();
                    s[j] = b[j] * T::lit(*x);
                    next.push((*w * T::lit(*wx), s));
                }
            }
            grid = next;
        }
        grid
    }

    /// Pauli-basis Hamiltonian; `shifts` adds β_j to Ω_j.
    pub fn hamiltonian_terms(&self, shifts: Option<&[T]>) -> Vec<(T, PauliString)> {
        let n = self.n_qubits;
        let mut terms = Vec::new();
        for e in &self.edges {
            for axis in [PauliAxis::X, PauliAxis::Y] {
                terms.push((e.coupling, PauliString::pair(n, (e.i, axis), (e.j, axis)).expect("validated edge")));
            }
        }
        for j in 0..n {
            let w = self.frequency[j] + shifts.map_or(T::zero(), |s| s[j]);
            terms.push((w / T::lit(2.0), PauliString::single(n, j, PauliAxis::Z).expect("site in range")));
        }
        terms
    }

    /// Markovian generator matching the trajectory unravelings under `convention`.
    pub fn lindbladian(&self, convention: DephasingConvention, shifts: Option<&[T]>) -> Lindbladian<T> {
        let mut l = Lindbladian::new(self.n_qubits);
        for (c, p) in self.hamiltonian_terms(shifts) {
            l.add_hamiltonian(c, p);
        }
        for j in 0..self.n_qubits {
            if self.t1[j].is_finite() {
                l.add_decay(j, T::one() / self.t1[j]);
            }
            if self.t2[j].is_finite() {
                l.add_dephasing(j, convention.jump_rate(self.t2[j]));
            }
        }
        l
    }

    /// Restriction to `sites`, renumbered in the given order.
    pub fn sublattice(&self, sites: &[usize]) -> Result<Self> {
        let pos = |s: usize| sites.iter().position(|x| *x == s);
        for &s in sites {
            if s >= self.n_qubits {
                return Err(Error::SiteOutOfRange { site: s, n_qubits: self.n_qubits });
            }
        }
        let edges = self.edges.iter().filter_map(|e| Some(Edge { i: pos(e.i)?, j: pos(e.j)?, coupling: e.coupling })).collect();
        let pick = |v: &[T]| sites.iter().map(|s| v[*s]).collect::<Vec<_>>();
        let m = Self {
            n_qubits: sites.len(),
            edges,
            frequency: pick(&self.frequency),
            t1: pick(&self.t1),
            t2: pick(&self.t2),
            t2_star: pick(&self.t2_star),
        };
        m.validate()?;
        Ok(m)
    }

    /// The same model with all noise times set to infinity.
    pub fn noiseless(&self) -> Self {
        let inf = vec![T::infinity(); self.n_qubits];
        Self { t1: inf.clone(), t2: inf.clone(), t2_star: inf, ..self.clone() }
    }

    pub fn cast<U: Real>(&self) -> LindbladModel<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.f64())).collect::<Vec<_>>();
        LindbladModel {
            n_qubits: self.n_qubits,
            edges: self.edges.iter().map(|e| Edge { i: e.i, j: e.j, coupling: U::lit(e.coupling.f64()) }).collect(),
            frequency: c(&self.frequency),
            t1: c(&self.t1),
            t2: c(&self.t2),
            t2_star: c(&self.t2_star),
        }
    }
}

/// 16-qubit chip with 22 couplers; values in kHz and μs, sites numbered from 1.
pub mod chip16 {
    pub const EDGES_KHZ: [(usize, usize, f64); 22] = [
        (1, 2, 1.28112),
        (2, 3, -0.716875),
        (3, 4, -0.956949),
        (4, 5, -0.819328),
        (1, 6, -1.1682),
        (2, 7, -0.213057),
        (3, 8, -0.563789),
        (4, 9, 1.74022),
        (5, 10, 1.68348),
        (6, 7, -1.51535),
        (7, 8, -0.729672),
        (8, 9, 1.6622),
        (9, 10, -0.314438),
        (11, 12, -0.475787),
        (6, 11, 1.3663),
        (7, 12, -2.03531),
        (12, 13, -1.22632),
        (13, 8, -0.717182),
        (13, 14, -0.546421),
        (14, 9, 1.90836),
        (14, 15, -0.781306),
        (11, 16, -0.358714),
    ];

    /// (a_z kHz, T1 μs, T2 μs, T2* μs) per site.
    pub const SITES: [(f64, f64, f64, f64); 16] = [
        (1.73807, 58.5227, 65.9752, 151.515),
        (-0.816877, 60.0269, 65.1704, 166.667),
        (-1.0602, 59.2424, 64.6375, 163.934),
        (-0.913223, 61.0255, 65.7397, 149.254),
        (-1.23118, 59.0545, 66.0886, 147.059),
        (-0.654699, 60.0915, 66.1118, 151.515),
        (-0.514756, 59.8856, 65.1432, 153.846),
        (2.0817, 61.0389, 64.8252, 158.73),
        (-0.568581, 60.5375, 66.2155, 158.73),
        (-0.710498, 61.5036, 65.389, 149.254),
        (1.86153, 59.8949, 65.825, 147.059),
        (-2.03725, 60.3777, 65.1203, 153.846),
        (-1.31695, 57.5781, 65.6052, 156.25),
        (-0.902159, 59.1881, 65.8892, 158.73),
        (-0.202118, 60.0283, 66.2967, 144.928),
        (0.136975, 58.9397, 66.0541, 149.254),
    ];

    /// Sites 1, 2, 6, 7 form a square plaquette.
    pub const PLAQUETTE: [usize; 4] = [0, 1, 5, 6];
}

/// The 16-qubit chip with rates converted to rad·μs⁻¹ and sites numbered from 0.
pub fn chip16() -> LindbladModel<f64> {
    let mut m = LindbladModel::new(16);
    m.edges = chip16::EDGES_KHZ.iter().map(|&(i, j, a)| Edge { i: i - 1, j: j - 1, coupling: khz_to_rad_per_us(a) }).collect();
    for (k, &(az, t1, t2, t2s)) in chip16::SITES.iter().enumerate() {
        m.frequency[k] = 2.0 * khz_to_rad_per_us(az);
        m.t1[k] = t1;
        m.t2[k] = t2;
        m.t2_star[k] = t2s;
    }
    m
}
