//! Pauli-string algebra and analytic traces against product states.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Mul, Neg};
use std::str::FromStr;

use num_complex::Complex;
use num_traits::{Num, Signed};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    pub fn index(self) -> usize {
        match self {
            PauliAxis::X => 0,
            PauliAxis::Y => 1,
            PauliAxis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    pub fn upper(self) -> char {
        ['X', 'Y', 'Z'][self.index()]
    }

    pub fn lower(self) -> char {
        ['x', 'y', 'z'][self.index()]
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'X' | 'x' => Some(PauliAxis::X),
            'Y' | 'y' => Some(PauliAxis::Y),
            'Z' | 'z' => Some(PauliAxis::Z),
            _ => None,
        }
    }

    /// The axis distinct from both `self` and `other` (which must differ).
    pub fn third(self, other: PauliAxis) -> PauliAxis {
        debug_assert_ne!(self, other);
        PauliAxis::from_index(3 - self.index() - other.index())
    }
}

/// Levi-Civita symbol ε_abc.
pub fn levi_civita(a: PauliAxis, b: PauliAxis, c: PauliAxis) -> i8 {
    let (a, b, c) = (a.index(), b.index(), c.index());
    if a == b || b == c || a == c {
        0
    } else if (b + 3 - a) % 3 == 1 && (c + 3 - b) % 3 == 1 {
        1
    } else {
        -1
    }
}

/// A power of i.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn power(self) -> u8 {
        self.0
    }

    pub fn conj(self) -> Phase {
        Phase((4 - self.0) % 4)
    }

    pub fn is_real(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn to_complex<T: Num + Neg<Output = T>>(self) -> Complex<T> {
        match self.0 {
            0 => Complex::new(T::one(), T::zero()),
            1 => Complex::new(T::zero(), T::one()),
            2 => Complex::new(-T::one(), T::zero()),
            _ => Complex::new(T::zero(), -T::one()),
        }
    }
}

impl Mul for Phase {
    type Output = Phase;
    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

impl Neg for Phase {
    type Output = Phase;
    fn neg(self) -> Phase {
        self * Phase::MINUS_ONE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }

    pub fn value<T: Signed>(self) -> T {
        match self {
            Sign::Plus => T::one(),
            Sign::Minus => -T::one(),
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            Sign::Plus => Phase::ONE,
            Sign::Minus => Phase::MINUS_ONE,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

impl Mul for Sign {
    type Output = Sign;
    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

/// σ_p σ_q = δ_pq I + i ε_pqr σ_r.
pub fn multiply(p: PauliAxis, q: PauliAxis) -> (Phase, Option<PauliAxis>) {
    if p == q {
        return (Phase::ONE, None);
    }
    let r = p.third(q);
    if levi_civita(p, q, r) > 0 {
        (Phase::I, Some(r))
    } else {
        (Phase::MINUS_I, Some(r))
    }
}

/// Sparse signed Pauli word on `n_qubits` sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PauliString {
    n_qubits: usize,
    support: BTreeMap<usize, PauliAxis>,
    sign: Sign,
}

impl PauliString {
    pub fn new<I>(n_qubits: usize, ops: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, PauliAxis)>,
    {
        if n_qubits == 0 {
            return Err(Error::Invalid("Pauli string needs at least one qubit".into()));
        }
        let mut support = BTreeMap::new();
        for (site, axis) in ops {
            if site >= n_qubits {
                return Err(Error::SiteOutOfRange { site, n_qubits });
            }
            if support.insert(site, axis).is_some() {
                return Err(Error::Invalid(format!("site {site} listed twice")));
            }
        }
        Ok(Self { n_qubits, support, sign: Sign::Plus })
    }

    pub fn identity(n_qubits: usize) -> Self {
        assert!(n_qubits > 0);
        Self { n_qubits, support: BTreeMap::new(), sign: Sign::Plus }
    }

    pub fn single(n_qubits: usize, site: usize, axis: PauliAxis) -> Result<Self> {
        Self::new(n_qubits, [(site, axis)])
    }

    pub fn pair(n_qubits: usize, a: (usize, PauliAxis), b: (usize, PauliAxis)) -> Result<Self> {
        Self::new(n_qubits, [a, b])
    }

    pub fn with_sign(mut self, sign: Sign) -> Self {
        self.sign = sign;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn support(&self) -> &BTreeMap<usize, PauliAxis> {
        &self.support
    }

    pub fn get(&self, site: usize) -> Option<PauliAxis> {
        self.support.get(&site).copied()
    }

    pub fn weight(&self) -> usize {
        self.support.len()
    }

    pub fn is_identity(&self) -> bool {
        self.support.is_empty()
    }

    /// Bits flipped by the word (X or Y sites).
    pub fn flip_mask(&self) -> usize {
        self.support.iter().filter(|(_, a)| **a != PauliAxis::Z).fold(0, |m, (s, _)| m | (1 << s))
    }

    /// Bits picking up a −1 on |1⟩ (Y or Z sites).
    pub fn phase_mask(&self) -> usize {
        self.support.iter().filter(|(_, a)| **a != PauliAxis::X).fold(0, |m, (s, _)| m | (1 << s))
    }

    pub fn y_count(&self) -> usize {
        self.support.values().filter(|a| **a == PauliAxis::Y).count()
    }

    /// Product `self · other` as a phase times an unsigned word.
    pub fn mul(&self, other: &PauliString) -> (Phase, PauliString) {
        assert_eq!(self.n_qubits, other.n_qubits, "Pauli strings on different registers");
        let mut phase = self.sign.phase() * other.sign.phase();
        let mut support = self.support.clone();
        for (&site, &q) in &other.support {
            match support.get(&site).copied() {
                None => {
                    support.insert(site, q);
                }
                Some(p) => {
                    let (ph, r) = multiply(p, q);
                    phase = phase * ph;
                    match r {
                        Some(r) => {
                            support.insert(site, r);
                        }
                        None => {
                            support.remove(&site);
                        }
                    }
                }
            }
        }
        (phase, PauliString { n_qubits: self.n_qubits, support, sign: Sign::Plus })
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let clashes = self.support.iter().filter(|(s, a)| other.get(**s).is_some_and(|b| b != **a)).count();
        clashes % 2 == 0
    }

    /// Parse a label such as `X0Y3`, `-Z1` or `I`.
    pub fn parse(label: &str, n_qubits: usize) -> Result<Self> {
        let bad = || Error::Parse(format!("bad Pauli label {label:?}"));
        let mut s = label.trim();
        let mut sign = Sign::Plus;
        if let Some(rest) = s.strip_prefix('-') {
            sign = Sign::Minus;
            s = rest;
        } else if let Some(rest) = s.strip_prefix('+') {
            s = rest;
        }
        if s == "I" {
            return Ok(Self::identity(n_qubits).with_sign(sign));
        }
        let mut ops = Vec::new();
        let chars: Vec<char> = s.chars().collect();
        let mut k = 0;
        while k < chars.len() {
            let axis = PauliAxis::from_char(chars[k]).filter(|_| chars[k].is_ascii_uppercase()).ok_or_else(bad)?;
            k += 1;
            let start = k;
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            if start == k {
                return Err(bad());
            }
            let site: usize = chars[start..k].iter().collect::<String>().parse().map_err(|_| bad())?;
            ops.push((site, axis));
        }
        if ops.is_empty() {
            return Err(bad());
        }
        Ok(Self::new(n_qubits, ops)?.with_sign(sign))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign == Sign::Minus {
            write!(f, "-")?;
        }
        if self.support.is_empty() {
            return write!(f, "I");
        }
        for (site, axis) in &self.support {
            write!(f, "{}{}", axis.upper(), site)?;
        }
        Ok(())
    }
}

/// Product state: listed sites in Pauli eigenstates, all others maximally mixed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProductStateSpec {
    n_qubits: usize,
    fixed: BTreeMap<usize, (PauliAxis, Sign)>,
}

impl ProductStateSpec {
    pub fn new<I>(n_qubits: usize, fixed: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, PauliAxis, Sign)>,
    {
        if n_qubits == 0 {
            return Err(Error::Invalid("state needs at least one qubit".into()));
        }
        let mut map = BTreeMap::new();
        for (site, axis, sign) in fixed {
            if site >= n_qubits {
                return Err(Error::SiteOutOfRange { site, n_qubits });
            }
            if map.insert(site, (axis, sign)).is_some() {
                return Err(Error::Invalid(format!("site {site} fixed twice")));
            }
        }
        Ok(Self { n_qubits, fixed: map })
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        Self { n_qubits, fixed: BTreeMap::new() }
    }

    /// Both sites of a pair in + eigenstates of the given axes.
    pub fn pair(n_qubits: usize, a: (usize, PauliAxis), b: (usize, PauliAxis)) -> Result<Self> {
        Self::new(n_qubits, [(a.0, a.1, Sign::Plus), (b.0, b.1, Sign::Plus)])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn fixed(&self) -> &BTreeMap<usize, (PauliAxis, Sign)> {
        &self.fixed
    }

    pub fn get(&self, site: usize) -> Option<(PauliAxis, Sign)> {
        self.fixed.get(&site).copied()
    }

    /// tr(ρ P) for the product state ρ.
    pub fn expectation<T: Signed + Clone>(&self, p: &PauliString) -> T {
        assert_eq!(self.n_qubits, p.n_qubits(), "state and observable on different registers");
        let mut value = p.sign().value::<T>();
        for (site, axis) in p.support() {
            match self.fixed.get(site) {
                Some((a, s)) if a == axis => value = value * s.value::<T>(),
                _ => return T::zero(),
            }
        }
        value
    }

    /// Parse a label such as `+x0-z1`; `mixed` is the maximally mixed state.
    pub fn parse(label: &str, n_qubits: usize) -> Result<Self> {
        let bad = || Error::Parse(format!("bad state label {label:?}"));
        let s = label.trim();
        if s == "mixed" {
            return Ok(Self::maximally_mixed(n_qubits));
        }
        let chars: Vec<char> = s.chars().collect();
        let mut k = 0;
        let mut fixed = Vec::new();
        while k < chars.len() {
            let sign = match chars[k] {
                '+' => Sign::Plus,
                '-' => Sign::Minus,
                _ => return Err(bad()),
            };
            k += 1;
            let axis = chars.get(k).copied().filter(|c| c.is_ascii_lowercase()).and_then(PauliAxis::from_char).ok_or_else(bad)?;
            k += 1;
            let start = k;
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            if start == k {
                return Err(bad());
            }
            let site: usize = chars[start..k].iter().collect::<String>().parse().map_err(|_| bad())?;
            fixed.push((site, axis, sign));
        }
        if fixed.is_empty() {
            return Err(bad());
        }
        Self::new(n_qubits, fixed)
    }
}

impl fmt::Display for ProductStateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.fixed.is_empty() {
            return write!(f, "mixed");
        }
        for (site, (axis, sign)) in &self.fixed {
            write!(f, "{}{}{}", sign.symbol(), axis.lower(), site)?;
        }
        Ok(())
    }
}

impl FromStr for PauliAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.chars();
        match (it.next().and_then(PauliAxis::from_char), it.next()) {
            (Some(a), None) => Ok(a),
            _ => Err(Error::Parse(format!("bad Pauli axis {s:?}"))),
        }
    }
}

fn phased<T: Signed + Clone>(phase: Phase, value: T) -> Complex<T> {
    let c = phase.to_complex::<T>();
    Complex::new(c.re * value.clone(), c.im * value)
}

/// B = −i·tr([H, ρ]·O) for a Pauli term H and product state ρ.
pub fn trace_commutator_term<T: Signed + Clone>(h: &PauliString, rho: &ProductStateSpec, o: &PauliString) -> T {
    if h.commutes_with(o) {
        return T::zero();
    }
    // −i tr([H,ρ]O) = −i tr(ρ (OH − HO)) = −2i·φ·⟨P⟩ with OH = φP.
    let (phase, p) = o.mul(h);
    let e = rho.expectation::<T>(&p);
    let two = T::one() + T::one();
    if phase == Phase::I {
        two * e
    } else {
        debug_assert_eq!(phase, Phase::MINUS_I);
        -(two * e)
    }
}

/// tr((σ_μ ρ σ_ν − ½{σ_ν σ_μ, ρ})·O) with σ_μ, σ_ν acting on `site`.
pub fn trace_dissipator_term<T: Signed + Clone>(
    mu: PauliAxis,
    nu: PauliAxis,
    site: usize,
    rho: &ProductStateSpec,
    o: &PauliString,
) -> Complex<T> {
    let n = o.n_qubits();
    let s_mu = PauliString::single(n, site, mu).expect("site within register");
    let s_nu = PauliString::single(n, site, nu).expect("site within register");
    // tr(ρ (σ_ν O σ_μ − ½ O σ_ν σ_μ − ½ σ_ν σ_μ O))
    let (p1, a) = s_nu.mul(o);
    let (p2, sandwich) = a.mul(&s_mu);
    let (p3, nm) = s_nu.mul(&s_mu);
    let (p4, right) = o.mul(&nm);
    let (p5, left) = nm.mul(o);
    let t1 = phased(p1 * p2, rho.expectation::<T>(&sandwich));
    let t2 = phased(p3 * p4, rho.expectation::<T>(&right));
    let t3 = phased(p3 * p5, rho.expectation::<T>(&left));
    let two = T::one() + T::one();
    t1 - (t2 + t3) / two
}

/// Linear combination of Pauli words with complex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum<T> {
    n_qubits: usize,
    terms: BTreeMap<PauliString, Complex<T>>,
}

impl<T: Signed + Clone> PauliSum<T> {
    pub fn zero(n_qubits: usize) -> Self {
        Self { n_qubits, terms: BTreeMap::new() }
    }

    pub fn from_string(p: &PauliString) -> Self {
        let mut s = Self::zero(p.n_qubits());
        s.add_term(p, Complex::new(T::one(), T::zero()));
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, &Complex<T>)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `c·p`, folding the sign of `p` into the coefficient.
    pub fn add_term(&mut self, p: &PauliString, c: Complex<T>) {
        let c = if p.sign() == Sign::Minus { -c } else { c };
        let key = p.clone().with_sign(Sign::Plus);
        let entry = self.terms.entry(key.clone()).or_insert_with(|| Complex::new(T::zero(), T::zero()));
        *entry = entry.clone() + c;
        if entry.is_zero_exact() {
            self.terms.remove(&key);
        }
    }

    pub fn add_scaled(&mut self, other: &PauliSum<T>, c: Complex<T>) {
        for (p, v) in &other.terms {
            self.add_term(p, v.clone() * c.clone());
        }
    }

    /// `left · self · right`, either side optional.
    pub fn sandwich(&self, left: Option<&PauliString>, right: Option<&PauliString>) -> Self {
        let mut out = Self::zero(self.n_qubits);
        for (p, v) in &self.terms {
            let (mut ph, mut q) = (Phase::ONE, p.clone());
            if let Some(l) = left {
                let (a, r) = l.mul(&q);
                ph = ph * a;
                q = r;
            }
            if let Some(r) = right {
                let (a, s) = q.mul(r);
                ph = ph * a;
                q = s;
            }
            out.add_term(&q, v.clone() * ph.to_complex::<T>());
        }
        out
    }

    /// tr(ρ S) for a product state ρ.
    pub fn expectation(&self, rho: &ProductStateSpec) -> Complex<T> {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (p, v) in &self.terms {
            let e = rho.expectation::<T>(p);
            acc = acc + Complex::new(v.re.clone() * e.clone(), v.im.clone() * e);
        }
        acc
    }
}

trait ExactZero {
    fn is_zero_exact(&self) -> bool;
}

impl<T: Signed + Clone> ExactZero for Complex<T> {
    fn is_zero_exact(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

#[cfg(test)]
pub(crate) mod dense {
    //! Kronecker-product reference matrices, independent of the sparse algebra.
    use num_complex::Complex64 as C;

    pub type Mat = Vec<Vec<C>>;

    pub fn pauli(axis: super::PauliAxis) -> Mat {
        let (o, z, i) = (C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 1.0));
        match axis {
            super::PauliAxis::X => vec![vec![z, o], vec![o, z]],
            super::PauliAxis::Y => vec![vec![z, -i], vec![i, z]],
            super::PauliAxis::Z => vec![vec![o, z], vec![z, -o]],
        }
    }

    pub fn eye(n: usize) -> Mat {
        (0..n).map(|r| (0..n).map(|c| if r == c { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }).collect()).collect()
    }

    pub fn kron(a: &Mat, b: &Mat) -> Mat {
        let (ra, rb) = (a.len(), b.len());
        let mut out = vec![vec![C::new(0.0, 0.0); ra * rb]; ra * rb];
        for i in 0..ra {
            for j in 0..ra {
                for k in 0..rb {
                    for l in 0..rb {
                        out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    /// Site 0 is the least significant bit, so it is the last Kronecker factor.
    pub fn embed(n: usize, factors: &[(usize, Mat)]) -> Mat {
        let mut out = vec![vec![C::new(1.0, 0.0)]];
        for site in (0..n).rev() {
            let f = factors.iter().find(|(s, _)| *s == site).map(|(_, m)| m.clone()).unwrap_or_else(|| eye(2));
            out = kron(&out, &f);
        }
        out
    }

    pub fn mul(a: &Mat, b: &Mat) -> Mat {
        let n = a.len();
        let mut out = vec![vec![C::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for k in 0..n {
                if a[i][k] == C::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    pub fn add(a: &Mat, b: &Mat, s: C) -> Mat {
        a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + s * y).collect()).collect()
    }

    pub fn trace(a: &Mat) -> C {
        (0..a.len()).map(|i| a[i][i]).sum()
    }

    pub fn of_string(p: &super::PauliString) -> Mat {
        let factors: Vec<(usize, Mat)> = p.support().iter().map(|(s, a)| (*s, pauli(*a))).collect();
        let m = embed(p.n_qubits(), &factors);
        if p.sign() == super::Sign::Minus {
            m.iter().map(|r| r.iter().map(|x| -x).collect()).collect()
        } else {
            m
        }
    }

    pub fn of_state(rho: &super::ProductStateSpec) -> Mat {
        let factors: Vec<(usize, Mat)> = (0..rho.n_qubits())
            .map(|s| {
                let f = match rho.get(s) {
                    Some((a, sg)) => add(&eye(2), &pauli(a), C::new(if sg.is_plus() { 1.0 } else { -1.0 }, 0.0)),
                    None => eye(2),
                };
                (s, f.iter().map(|r| r.iter().map(|x| x * 0.5).collect()).collect())
            })
            .collect();
        embed(rho.n_qubits(), &factors)
    }
}
