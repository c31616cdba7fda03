//! Isolation rules: which (observable, initial state) derivatives determine
//! each Lindbladian parameter of a qubit pair, and the inversion from
//! measured derivatives back to parameters.
//!
//! For an observable and state supported on sites {i, j}, with every other
//! site maximally mixed, d/dt⟨O⟩ at t = 0 is a linear function of the 30
//! parameters local to the pair. Rules are derived exactly in rational
//! arithmetic from that forward model, preferring a fixed list of candidate
//! pairs and falling back to a broader pool when the preferred pairs cannot
//! isolate a parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Lindbladian;
use crate::model::LindbladModel;
use crate::pauli::{trace_commutator_term, trace_dissipator_term, PauliAxis, PauliString, ProductStateSpec, Sign};
use crate::scalar::Real;
use crate::sim::TimeTrace;

pub type Rational = Ratio<i128>;

use PauliAxis::{X, Y, Z};

/// A real parameter of the pair-local Lindbladian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    /// a_α^{(site)}: coefficient of σ_α on `site`.
    Field {
        site: usize,
        axis: PauliAxis,
    },
    /// a_αβ^{(ij)} = a_βα^{(ij)}, stored with i < j and α ≤ β.
    Coupling {
        i: usize,
        j: usize,
        a: PauliAxis,
        b: PauliAxis,
    },
    DissDiag {
        site: usize,
        axis: PauliAxis,
    },
    /// Re D_αβ with α < β.
    DissRe {
        site: usize,
        a: PauliAxis,
        b: PauliAxis,
    },
    /// Im D_αβ with α < β.
    DissIm {
        site: usize,
        a: PauliAxis,
        b: PauliAxis,
    },
}

impl ParamId {
    pub fn coupling(i: usize, j: usize, a: PauliAxis, b: PauliAxis) -> Self {
        let (i, j, a, b) = if i < j { (i, j, a, b) } else { (j, i, b, a) };
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        ParamId::Coupling { i, j, a, b }
    }

    fn off(site: usize, a: PauliAxis, b: PauliAxis, imaginary: bool) -> Self {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if imaginary {
            ParamId::DissIm { site, a, b }
        } else {
            ParamId::DissRe { site, a, b }
        }
    }

    /// Evaluation order: couplings, fields, diagonal D, off-diagonal D.
    pub fn stage(&self) -> usize {
        match self {
            ParamId::Coupling { .. } => 0,
            ParamId::Field { .. } => 1,
            ParamId::DissDiag { .. } => 2,
            ParamId::DissRe { .. } | ParamId::DissIm { .. } => 3,
        }
    }

    /// Forward-model coefficient: d/dt⟨o⟩_ρ per unit of this parameter.
    fn forward<T: Signed + Clone>(&self, n: usize, rho: &ProductStateSpec, o: &PauliString) -> T {
        match *self {
            ParamId::Field { site, axis } => trace_commutator_term(&PauliString::single(n, site, axis).expect("site in range"), rho, o),
            ParamId::Coupling { i, j, a, b } => {
                let h = PauliString::pair(n, (i, a), (j, b)).expect("sites in range");
                let mut v: T = trace_commutator_term(&h, rho, o);
                if a != b {
                    let h2 = PauliString::pair(n, (i, b), (j, a)).expect("sites in range");
                    v = v + trace_commutator_term(&h2, rho, o);
                }
                v
            }
            ParamId::DissDiag { site, axis } => trace_dissipator_term::<T>(axis, axis, site, rho, o).re,
            ParamId::DissRe { site, a, b } => {
                let s = trace_dissipator_term::<T>(a, b, site, rho, o) + trace_dissipator_term::<T>(b, a, site, rho, o);
                s.re
            }
            ParamId::DissIm { site, a, b } => {
                // i·td(a,b) − i·td(b,a)
                let p: Complex<T> = trace_dissipator_term(a, b, site, rho, o);
                let q: Complex<T> = trace_dissipator_term(b, a, site, rho, o);
                q.im - p.im
            }
        }
    }

    /// Value of this parameter in a Lindbladian.
    pub fn value_in<T: Real>(&self, l: &Lindbladian<T>) -> T {
        let n = l.n_qubits();
        let h_coeff = |p: PauliString| {
            l.hamiltonian().iter().filter(|(_, q)| q.support() == p.support()).map(|(c, q)| *c * q.sign().value::<T>()).sum::<T>()
        };
        let d_of = |site: usize| l.dissipators().iter().filter(|d| d.site == site).map(|d| d.d).next();
        match *self {
            ParamId::Field { site, axis } => h_coeff(PauliString::single(n, site, axis).expect("site in range")),
            ParamId::Coupling { i, j, a, b } => h_coeff(PauliString::pair(n, (i, a), (j, b)).expect("sites in range")),
            ParamId::DissDiag { site, axis } => d_of(site).map_or(T::zero(), |d| d[axis.index()][axis.index()].re),
            ParamId::DissRe { site, a, b } => d_of(site).map_or(T::zero(), |d| d[a.index()][b.index()].re),
            ParamId::DissIm { site, a, b } => d_of(site).map_or(T::zero(), |d| d[a.index()][b.index()].im),
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ParamId::Field { site, axis } => write!(f, "a_{}[{site}]", axis.lower()),
            ParamId::Coupling { i, j, a, b } => write!(f, "a_{}{}[{i},{j}]", a.lower(), b.lower()),
            ParamId::DissDiag { site, axis } => write!(f, "D_{}{}[{site}]", axis.lower(), axis.lower()),
            ParamId::DissRe { site, a, b } => write!(f, "ReD_{}{}[{site}]", a.lower(), b.lower()),
            ParamId::DissIm { site, a, b } => write!(f, "ImD_{}{}[{site}]", a.lower(), b.lower()),
        }
    }
}

impl std::str::FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unrecognized parameter '{s}'"));
        let (name, rest) = s.split_once('[').ok_or_else(bad)?;
        let sites: Vec<usize> =
            rest.strip_suffix(']').ok_or_else(bad)?.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let axes = |t: &str| t.chars().map(PauliAxis::from_char).collect::<Option<Vec<_>>>().ok_or_else(bad);
        let (prefix, tail) = name.split_once('_').ok_or_else(bad)?;
        let ax = axes(tail)?;
        match (prefix, ax.as_slice(), sites.as_slice()) {
            ("a", [a], [site]) => Ok(ParamId::Field { site: *site, axis: *a }),
            ("a", [a, b], [i, j]) if i != j => Ok(ParamId::coupling(*i, *j, *a, *b)),
            ("D", [a, b], [site]) if a == b => Ok(ParamId::DissDiag { site: *site, axis: *a }),
            ("ReD", [a, b], [site]) if a != b => Ok(ParamId::off(*site, *a, *b, false)),
            ("ImD", [a, b], [site]) if a != b => Ok(ParamId::off(*site, *a, *b, true)),
            _ => Err(bad()),
        }
    }
}

/// The 30 real parameters local to the pair (i, j).
pub fn pair_basis(i: usize, j: usize) -> Vec<ParamId> {
    let mut v = Vec::with_capacity(30);
    for (ai, a) in PauliAxis::ALL.iter().enumerate() {
        for b in &PauliAxis::ALL[ai..] {
            v.push(ParamId::coupling(i, j, *a, *b));
        }
    }
    for site in [i, j] {
        for axis in PauliAxis::ALL {
            v.push(ParamId::Field { site, axis });
        }
    }
    for site in [i, j] {
        v.extend(dissipation_basis(site));
    }
    v
}

fn dissipation_basis(site: usize) -> Vec<ParamId> {
    let mut v: Vec<ParamId> = PauliAxis::ALL.iter().map(|a| ParamId::DissDiag { site, axis: *a }).collect();
    for (a, b) in [(X, Y), (X, Z), (Y, Z)] {
        v.push(ParamId::off(site, a, b, false));
        v.push(ParamId::off(site, a, b, true));
    }
    v
}

/// A measured derivative: d/dt⟨observable⟩ at t = 0 from `initial`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Probe {
    pub observable: PauliString,
    pub initial: ProductStateSpec,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.observable, self.initial)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TermKind {
    Derivative(Probe),
    KnownParameter(ParamId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleTerm {
    pub weight: Rational,
    pub kind: TermKind,
}

/// target = Σ weight · (derivative or previously recovered parameter).
#[derive(Clone, Debug, PartialEq)]
pub struct IsolationRule {
    pub target: ParamId,
    pub terms: Vec<RuleTerm>,
    pub equation_tag: String,
}

impl IsolationRule {
    pub fn probes(&self) -> impl Iterator<Item = &Probe> {
        self.terms.iter().filter_map(|t| match &t.kind {
            TermKind::Derivative(p) => Some(p),
            TermKind::KnownParameter(_) => None,
        })
    }

    pub fn dependencies(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.terms.iter().filter_map(|t| match t.kind {
            TermKind::KnownParameter(p) => Some(p),
            TermKind::Derivative(_) => None,
        })
    }
}

fn ratio_f64(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

fn format_ratio(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for IsolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} =", self.target)?;
        for t in &self.terms {
            match &t.kind {
                TermKind::Derivative(p) => write!(f, " {}·d/dt<{}>", format_ratio(&t.weight), p)?,
                TermKind::KnownParameter(q) => write!(f, " {}·{}", format_ratio(&t.weight), q)?,
            }
        }
        Ok(())
    }
}

fn state(n: usize, fixed: &[(usize, PauliAxis, Sign)]) -> ProductStateSpec {
    ProductStateSpec::new(n, fixed.iter().copied()).expect("sites in range")
}

fn word(n: usize, ops: &[(usize, PauliAxis)]) -> PauliString {
    PauliString::new(n, ops.iter().copied()).expect("sites in range")
}

fn probe(n: usize, ops: &[(usize, PauliAxis)], i: usize, ti: PauliAxis, j: usize, tj: PauliAxis) -> Probe {
    Probe { observable: word(n, ops), initial: state(n, &[(i, ti, Sign::Plus), (j, tj, Sign::Plus)]) }
}

/// Preferred (observable, state) pairs for a target, in the pattern of the
/// published selection tables. Site roles are mirrored for the second site.
fn preferred(n: usize, target: ParamId, i: usize, j: usize) -> Vec<Probe> {
    let mut out = Vec::new();
    let mut push = |ops: Vec<(usize, PauliAxis)>, ti: PauliAxis, tj: PauliAxis| out.push(probe(n, &ops, i, ti, j, tj));
    match target {
        ParamId::Coupling { a, b, .. } => match (a, b) {
            (X, Y) => push(vec![(i, Y), (j, Y)], Z, Z),
            (Y, Z) => push(vec![(i, Y), (j, Y)], X, X),
            (X, X) => {
                push(vec![(i, X), (j, Y)], Y, Z);
                push(vec![(i, Y), (j, Y)], X, X);
            }
            (Y, Y) => {
                push(vec![(i, X), (j, Y)], Z, Z);
                push(vec![(i, X), (j, Y)], Y, Z);
                push(vec![(i, Y), (j, Y)], X, X);
            }
            (Z, Z) => {
                push(vec![(i, X), (j, Z)], Y, X);
                push(vec![(i, Y), (j, Y)], Z, Z);
            }
            (X, Z) => {
                push(vec![(i, X), (j, Y)], Y, X);
                push(vec![(i, Y), (j, Y)], X, X);
            }
            _ => {}
        },
        ParamId::Field { site, axis } => {
            let (s, o) = if site == i { (i, j) } else { (j, i) };
            // (measured axis, prepared axis) on the target site.
            let (m, p) = match axis {
                X => (Y, X),
                Y => (X, Z),
                Z => (X, Y),
            };
            for eta in PauliAxis::ALL {
                let (ti, tj) = if s == i { (p, eta) } else { (eta, p) };
                push(vec![(s, m), (o, eta)], ti, tj);
                push(vec![(s, m)], ti, tj);
            }
        }
        ParamId::DissDiag { site, .. } => {
            let o = if site == i { j } else { i };
            for g in PauliAxis::ALL {
                for tau in PauliAxis::ALL {
                    let (ti, tj) = if site == i { (g, tau) } else { (tau, g) };
                    push(vec![(site, g)], ti, tj);
                }
            }
            let _ = o;
        }
        ParamId::DissRe { site, a, b } | ParamId::DissIm { site, a, b } => {
            let o = if site == i { j } else { i };
            let (m, p) = match (a, b) {
                (X, Y) => (X, Y),
                (X, Z) => (X, Z),
                _ => (Y, Z),
            };
            for eta in PauliAxis::ALL {
                let (ti, tj) = if site == i { (p, eta) } else { (eta, p) };
                push(vec![(site, m), (o, eta)], ti, tj);
                push(vec![(site, m)], ti, tj);
            }
        }
    }
    out
}

/// Sign variants of the preferred probes, then every one- and two-site probe on the pair.
fn fallback_pool(n: usize, i: usize, j: usize, preferred: &[Probe]) -> Vec<Probe> {
    let mut out = Vec::new();
    for p in preferred {
        let fixed: Vec<(usize, PauliAxis, Sign)> = p.initial.fixed().iter().map(|(s, (a, g))| (*s, *a, *g)).collect();
        for mask in 1..(1u32 << fixed.len()) {
            let flipped: Vec<_> =
                fixed.iter().enumerate().map(|(k, (s, a, g))| (*s, *a, if mask >> k & 1 == 1 { g.flip() } else { *g })).collect();
            out.push(Probe { observable: p.observable.clone(), initial: state(n, &flipped) });
        }
    }
    let mut observables = Vec::new();
    for a in PauliAxis::ALL {
        observables.push(word(n, &[(i, a)]));
        observables.push(word(n, &[(j, a)]));
        for b in PauliAxis::ALL {
            observables.push(word(n, &[(i, a), (j, b)]));
        }
    }
    let signs = [Sign::Plus, Sign::Minus];
    let mut states = Vec::new();
    for a in PauliAxis::ALL {
        for b in PauliAxis::ALL {
            for sa in signs {
                for sb in signs {
                    states.push(state(n, &[(i, a, sa), (j, b, sb)]));
                }
            }
        }
    }
    for o in &observables {
        for s in &states {
            out.push(Probe { observable: o.clone(), initial: s.clone() });
        }
    }
    out
}

/// Exact forward row of a probe against `basis`.
pub fn forward_row(probe: &Probe, basis: &[ParamId]) -> Vec<Rational> {
    let n = probe.observable.n_qubits();
    basis.iter().map(|p| p.forward::<Rational>(n, &probe.initial, &probe.observable)).collect()
}

/// Solve Σ_k w_k·rows[k][q] = [q = target] for q outside `known`, preferring early rows.
fn solve_weights(rows: &[Vec<Rational>], basis: &[ParamId], target: ParamId, known: &BTreeSet<ParamId>) -> Option<Vec<Rational>> {
    let constrained: Vec<usize> = (0..basis.len()).filter(|q| !known.contains(&basis[*q])).collect();
    let k = rows.len();
    // Augmented system: one equation per constrained parameter, one unknown per row.
    let mut m: Vec<Vec<Rational>> = constrained
        .iter()
        .map(|&q| {
            let mut eq: Vec<Rational> = rows.iter().map(|r| r[q]).collect();
            eq.push(if basis[q] == target { Rational::one() } else { Rational::zero() });
            eq
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..k {
        let Some(p) = (r..m.len()).find(|x| !m[*x][c].is_zero()) else { continue };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = m[r].clone();
        for (x, row) in m.iter_mut().enumerate() {
            if x != r && !row[c].is_zero() {
                let f = row[c];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * *pv;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == m.len() {
            break;
        }
    }
    if m[r..].iter().any(|row| !row[k].is_zero()) {
        return None;
    }
    let mut w = vec![Rational::zero(); k];
    for (row, &c) in pivots.iter().enumerate() {
        w[c] = m[row][k];
    }
    Some(w)
}

/// Derive an exact rule for `target` against `basis`, treating `known` as recovered.
pub fn derive_rule(
    target: ParamId,
    basis: &[ParamId],
    known: &BTreeSet<ParamId>,
    candidates: &[Probe],
    tag: &str,
) -> Option<IsolationRule> {
    // Grow the candidate prefix so the solution stays on the earliest probes.
    let mut rows: Vec<Vec<Rational>> = Vec::new();
    let mut len = candidates.len().min(8);
    loop {
        rows.extend(candidates[rows.len()..len].iter().map(|p| forward_row(p, basis)));
        if let Some(w) = solve_weights(&rows[..len], basis, target, known) {
            let mut terms = Vec::new();
            let mut combined = vec![Rational::zero(); basis.len()];
            for (k, wk) in w.iter().enumerate() {
                if !wk.is_zero() {
                    terms.push(RuleTerm { weight: *wk, kind: TermKind::Derivative(candidates[k].clone()) });
                    for (c, v) in combined.iter_mut().zip(&rows[k]) {
                        *c += *wk * *v;
                    }
                }
            }
            for (q, c) in basis.iter().zip(&combined) {
                if known.contains(q) && !c.is_zero() {
                    terms.push(RuleTerm { weight: -*c, kind: TermKind::KnownParameter(*q) });
                }
            }
            return Some(IsolationRule { target, terms, equation_tag: tag.to_string() });
        }
        if len == candidates.len() {
            return None;
        }
        len = (len * 2).min(candidates.len());
    }
}

fn plan_targets(n: usize, i: usize, j: usize, basis: &[ParamId], targets: &[ParamId]) -> Result<Vec<IsolationRule>> {
    if i == j || i >= n || j >= n {
        return Err(Error::Invalid(format!("need two distinct sites below {n}, got ({i}, {j})")));
    }
    let mut rules = Vec::new();
    for &t in targets {
        let known: BTreeSet<ParamId> = basis.iter().filter(|q| q.stage() < t.stage()).copied().collect();
        let pref = preferred(n, t, i, j);
        let mut pool = pref.clone();
        pool.extend(fallback_pool(n, i, j, &pref));
        let tag = match t.stage() {
            0 => "coupling",
            1 => "field",
            2 => "dissipation-diagonal",
            _ => "dissipation-offdiagonal",
        };
        let rule = derive_rule(t, basis, &known, &pool, tag).ok_or_else(|| Error::Numerical(format!("no isolating selection for {t}")))?;
        rules.push(rule);
    }
    Ok(rules)
}

/// Rules for the six symmetric couplings of (i, j).
pub fn plan_two_qubit(n: usize, i: usize, j: usize) -> Result<Vec<IsolationRule>> {
    let basis = pair_basis(i, j);
    let targets: Vec<ParamId> = basis.iter().filter(|p| p.stage() == 0).copied().collect();
    plan_targets(n, i, j, &basis, &targets)
}

/// Rules for the six fields on sites i and j.
pub fn plan_single_qubit(n: usize, i: usize, j: usize) -> Result<Vec<IsolationRule>> {
    let basis = pair_basis(i, j);
    let targets: Vec<ParamId> = basis.iter().filter(|p| p.stage() == 1).copied().collect();
    plan_targets(n, i, j, &basis, &targets)
}

/// Rules for the diagonal and off-diagonal (real and imaginary) D entries on i and j.
pub fn plan_dissipation(n: usize, i: usize, j: usize) -> Result<Vec<IsolationRule>> {
    let basis = pair_basis(i, j);
    let targets: Vec<ParamId> = basis.iter().filter(|p| p.stage() >= 2).copied().collect();
    plan_targets(n, i, j, &basis, &targets)
}

/// All 30 pair-local parameters in dependency order.
pub fn plan_pair(n: usize, i: usize, j: usize) -> Result<Vec<IsolationRule>> {
    let mut rules = plan_two_qubit(n, i, j)?;
    rules.extend(plan_single_qubit(n, i, j)?);
    rules.extend(plan_dissipation(n, i, j)?);
    Ok(rules)
}

/// Parameters of the exchange chip model local to an edge.
pub fn chip_basis(i: usize, j: usize) -> Vec<ParamId> {
    let mut v = vec![
        ParamId::coupling(i, j, X, X),
        ParamId::coupling(i, j, Y, Y),
        ParamId::Field { site: i, axis: Z },
        ParamId::Field { site: j, axis: Z },
    ];
    v.extend(dissipation_basis(i));
    v.extend(dissipation_basis(j));
    v
}

/// Minimal selection for a_xx, a_yy, a_z^(i), a_z^(j) of an exchange-coupled edge,
/// insensitive to arbitrary single-site dissipation.
pub fn plan_chip(n: usize, i: usize, j: usize) -> Result<Vec<IsolationRule>> {
    let basis = chip_basis(i, j);
    let mut rules = Vec::new();
    let table = |ops: &[(usize, PauliAxis)], ti, tj| probe(n, ops, i, ti, j, tj);
    let selection = vec![
        table(&[(i, X), (j, Y)], Y, Z),
        table(&[(i, Y), (j, Y)], X, X),
        table(&[(i, X), (j, Y)], Z, Z),
        table(&[(i, X), (j, Z)], Y, Z),
        table(&[(i, X)], Y, Z),
        table(&[(i, X), (j, Y)], X, X),
        table(&[(i, Y)], X, X),
        table(&[(j, Y)], X, X),
    ];
    for &t in &basis[..4] {
        let known: BTreeSet<ParamId> = basis.iter().filter(|q| q.stage() < t.stage()).copied().collect();
        let mut pool = selection.clone();
        pool.extend(fallback_pool(n, i, j, &selection));
        let rule =
            derive_rule(t, &basis, &known, &pool, "chip").ok_or_else(|| Error::Numerical(format!("no isolating selection for {t}")))?;
        rules.push(rule);
    }
    Ok(rules)
}

/// Distinct probes referenced by a plan, in first-use order.
pub fn plan_probes(rules: &[IsolationRule]) -> Vec<Probe> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in rules {
        for p in r.probes() {
            if seen.insert(p.clone()) {
                out.push(p.clone());
            }
        }
    }
    out
}

/// One line of the plan table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub parameter: String,
    pub observable: String,
    pub state: String,
    pub tag: String,
}

pub fn plan_table(rules: &[IsolationRule]) -> Vec<PlanRow> {
    rules
        .iter()
        .flat_map(|r| {
            r.probes().map(move |p| PlanRow {
                parameter: r.target.to_string(),
                observable: p.observable.to_string(),
                state: p.initial.to_string(),
                tag: r.equation_tag.clone(),
            })
        })
        .collect()
}

/// True parameter values of the chip model local to an edge: a_xx = a_yy = J, a_z = Ω/2,
/// plus the D entries implied by the noise times under `convention`.
pub fn chip_parameters<T: Real>(
    model: &LindbladModel<T>,
    convention: crate::sim::DephasingConvention,
    i: usize,
    j: usize,
) -> BTreeMap<ParamId, f64> {
    let l = model.lindbladian(convention, None);
    chip_basis(i, j).into_iter().map(|p| (p, p.value_in(&l).f64())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Interpolation,
    FiniteDifference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Interpolation => "interpolation",
            Method::FiniteDifference => "finite_difference",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" | "interp" => Ok(Method::Interpolation),
            "finite_difference" | "fd" => Ok(Method::FiniteDifference),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub true_value: Option<f64>,
    pub estimate: f64,
    pub abs_error: Option<f64>,
    pub method: Method,
    /// `observable@state=value` for each derivative used.
    pub derivatives: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
}

impl RecoveryReport {
    pub fn estimate(&self, parameter: &str, method: Method) -> Option<f64> {
        self.rows.iter().find(|r| r.parameter == parameter && r.method == method).map(|r| r.estimate)
    }

    pub fn max_error(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.abs_error).reduce(f64::max)
    }
}

/// Evaluate `plan` on measured derivatives, resolving known-parameter terms in dependency order.
pub fn recover(
    derivatives: &BTreeMap<Probe, f64>,
    plan: &[IsolationRule],
    method: Method,
    truth: &BTreeMap<ParamId, f64>,
) -> Result<RecoveryReport> {
    let mut estimates: BTreeMap<ParamId, f64> = BTreeMap::new();
    let mut pending: Vec<&IsolationRule> = plan.iter().collect();
    pending.sort_by_key(|r| r.target.stage());
    let mut done: Vec<(ParamId, RecoveryRow)> = Vec::new();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for rule in pending {
            if rule.dependencies().any(|d| !estimates.contains_key(&d)) {
                rest.push(rule);
                continue;
            }
            let mut value = 0.0;
            let mut used = Vec::new();
            for t in &rule.terms {
                let v = match &t.kind {
                    TermKind::Derivative(p) => {
                        let v = *derivatives.get(p).ok_or_else(|| Error::MissingDerivative(p.to_string()))?;
                        used.push(format!("{p}={v:e}"));
                        v
                    }
                    TermKind::KnownParameter(q) => estimates[q],
                };
                value += ratio_f64(&t.weight) * v;
            }
            estimates.insert(rule.target, value);
            let true_value = truth.get(&rule.target).copied();
            done.push((
                rule.target,
                RecoveryRow {
                    parameter: rule.target.to_string(),
                    true_value,
                    estimate: value,
                    abs_error: true_value.map(|t| (t - value).abs()),
                    method,
                    derivatives: used.join(";"),
                },
            ));
        }
        if rest.len() == before {
            let names: Vec<String> = rest.iter().map(|r| r.target.to_string()).collect();
            return Err(Error::Dependency(format!("unresolvable known-parameter terms in rules for {}", names.join(", "))));
        }
        pending = rest;
    }
    Ok(RecoveryReport { rows: done.into_iter().map(|(_, r)| r).collect() })
}

/// (mean(t0) − ⟨O⟩_ρ0) / t0 at the earliest positive sample time.
pub fn finite_difference_derivative(trace: &TimeTrace) -> Result<f64> {
    let first = trace
        .samples
        .iter()
        .filter(|s| s.time_us > 0.0)
        .min_by(|a, b| a.time_us.total_cmp(&b.time_us))
        .ok_or_else(|| Error::Invalid("trace has no sample at positive time".into()))?;
    let y0: f64 = trace.initial.expectation(&trace.observable);
    Ok((first.mean - y0) / first.time_us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{expectation_exact, lindblad_rhs, DenseGenerator, DensityMatrix};
    use crate::generator::zero_d;
    use crate::rng::stream;
    use crate::sim::{NoiseMode, TraceSample};
    use proptest::prelude::*;
    use rand::Rng;

    const CHIP_PROBES: usize = 11;

    /// Random symmetric couplings, fields and Hermitian PSD D on every site.
    fn random_lindbladian(n: usize, seed: u64) -> Lindbladian<f64> {
        let mut rng = stream(seed, &[]);
        let mut l = Lindbladian::new(n);
        for i in 0..n {
            for a in PauliAxis::ALL {
                l.add_hamiltonian(rng.gen_range(-1.0..1.0), PauliString::single(n, i, a).unwrap());
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                for (ka, a) in PauliAxis::ALL.iter().enumerate() {
                    for b in &PauliAxis::ALL[ka..] {
                        let c = rng.gen_range(-1.0..1.0);
                        l.add_hamiltonian(c, PauliString::pair(n, (i, *a), (j, *b)).unwrap());
                        if a != b {
                            l.add_hamiltonian(c, PauliString::pair(n, (i, *b), (j, *a)).unwrap());
                        }
                    }
                }
            }
        }
        for site in 0..n {
            // D = A A† with a random complex A.
            let a: Vec<Complex<f64>> = (0..9).map(|_| Complex::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect();
            let mut d = zero_d();
            for r in 0..3 {
                for c in 0..3 {
                    d[r][c] = (0..3).map(|k| a[r * 3 + k] * a[c * 3 + k].conj()).sum();
                }
            }
            l.add_dissipator(site, d);
        }
        l
    }

    fn oracle_derivatives(l: &Lindbladian<f64>, probes: &[Probe]) -> BTreeMap<Probe, f64> {
        let g = DenseGenerator::new(l).unwrap();
        probes
            .iter()
            .map(|p| {
                let rho = DensityMatrix::from_spec(&p.initial);
                let d = lindblad_rhs(&rho, &g).unwrap();
                (p.clone(), expectation_exact(&d, &p.observable).unwrap())
            })
            .collect()
    }

    fn truth(l: &Lindbladian<f64>, i: usize, j: usize) -> BTreeMap<ParamId, f64> {
        pair_basis(i, j).into_iter().map(|p| (p, p.value_in(l))).collect()
    }

    #[test]
    fn forward_matches_known_commutator() {
        // d/dt⟨YY⟩ on |zz⟩ is −4 a_xy.
        let p = probe(2, &[(0, Y), (1, Y)], 0, Z, 1, Z);
        let row = forward_row(&p, &[ParamId::coupling(0, 1, X, Y)]);
        assert_eq!(row[0], Rational::from_integer(-4));
    }

    #[test]
    fn xy_rule_is_a_single_weighted_derivative() {
        let rules = plan_two_qubit(2, 0, 1).unwrap();
        let r = rules.iter().find(|r| r.target == ParamId::coupling(0, 1, X, Y)).unwrap();
        assert_eq!(r.terms.len(), 1);
        assert_eq!(r.terms[0].weight, Rational::new(-1, 4));
        let r = rules.iter().find(|r| r.target == ParamId::coupling(0, 1, Y, Z)).unwrap();
        assert_eq!(r.terms.len(), 1);
        assert_eq!(r.terms[0].weight, Rational::new(1, 4));
    }

    #[test]
    fn full_pair_plan_exact_on_random_lindbladians() {
        let plan = plan_pair(2, 0, 1).unwrap();
        assert_eq!(plan.len(), 30);
        let probes = plan_probes(&plan);
        for seed in 0..50 {
            let l = random_lindbladian(2, seed);
            let d = oracle_derivatives(&l, &probes);
            let rep = recover(&d, &plan, Method::Interpolation, &truth(&l, 0, 1)).unwrap();
            assert!(rep.max_error().unwrap() < 1e-10, "seed {seed}: {}", rep.max_error().unwrap());
        }
    }

    #[test]
    fn plans_ignore_other_sites() {
        // Pair (0, 2) inside a 3-qubit system with couplings and noise on site 1.
        let plan = plan_pair(3, 0, 2).unwrap();
        let probes = plan_probes(&plan);
        for seed in 0..5 {
            let l = random_lindbladian(3, 100 + seed);
            let rep = recover(&oracle_derivatives(&l, &probes), &plan, Method::Interpolation, &truth(&l, 0, 2)).unwrap();
            assert!(rep.max_error().unwrap() < 1e-10);
        }
    }

    #[test]
    fn single_field_recovered() {
        let mut l = Lindbladian::new(2);
        l.add_hamiltonian(0.5 * 1.7, PauliString::single(2, 0, Z).unwrap());
        let plan = plan_single_qubit(2, 0, 1).unwrap();
        let mut full = plan_two_qubit(2, 0, 1).unwrap();
        full.extend(plan);
        let rep = recover(&oracle_derivatives(&l, &plan_probes(&full)), &full, Method::Interpolation, &truth(&l, 0, 1)).unwrap();
        assert!((rep.estimate("a_z[0]", Method::Interpolation).unwrap() - 0.85).abs() < 1e-12);
        assert!(rep.max_error().unwrap() < 1e-12);
    }

    #[test]
    fn zero_generator_gives_zeros() {
        let l = Lindbladian::new(2);
        let plan = plan_pair(2, 0, 1).unwrap();
        let rep = recover(&oracle_derivatives(&l, &plan_probes(&plan)), &plan, Method::Interpolation, &BTreeMap::new()).unwrap();
        assert!(rep.rows.iter().all(|r| r.estimate.abs() < 1e-12));
    }

    #[test]
    fn pure_dephasing_rate() {
        let mut l = Lindbladian::new(2);
        l.add_dephasing(1, 0.3);
        let plan = plan_pair(2, 0, 1).unwrap();
        let rep = recover(&oracle_derivatives(&l, &plan_probes(&plan)), &plan, Method::Interpolation, &truth(&l, 0, 1)).unwrap();
        assert!((rep.estimate("D_zz[1]", Method::Interpolation).unwrap() - 0.3).abs() < 1e-12);
        assert!(rep.max_error().unwrap() < 1e-12);
    }

    #[test]
    fn diagonal_weights_cancel_constants() {
        // A constant trace has zero derivative, so every rule of a D-free, H-free system returns 0;
        // equivalently the derivative weights of each diagonal rule annihilate the zero vector.
        for r in plan_dissipation(2, 0, 1).unwrap().iter().filter(|r| r.target.stage() == 2) {
            let derivs: BTreeMap<Probe, f64> = r.probes().map(|p| (p.clone(), 0.0)).collect();
            let known: BTreeMap<Probe, f64> = derivs.clone();
            let mut plan = plan_two_qubit(2, 0, 1).unwrap();
            plan.extend(plan_single_qubit(2, 0, 1).unwrap());
            plan.push(r.clone());
            let mut all = known;
            for p in plan_probes(&plan) {
                all.entry(p).or_insert(0.0);
            }
            let rep = recover(&all, &plan, Method::Interpolation, &BTreeMap::new()).unwrap();
            assert_eq!(rep.estimate(&r.target.to_string(), Method::Interpolation), Some(0.0));
        }
    }

    #[test]
    fn chip_plan_on_noisy_model() {
        let model = crate::model::chip16().sublattice(&crate::model::chip16::PLAQUETTE).unwrap();
        let conv = crate::sim::DephasingConvention::default();
        let l = model.lindbladian(conv, None);
        for e in &model.edges {
            let plan = plan_chip(4, e.i, e.j).unwrap();
            let probes = plan_probes(&plan);
            assert_eq!(probes.len(), CHIP_PROBES);
            let truth = chip_parameters(&model, conv, e.i, e.j);
            let rep = recover(&oracle_derivatives(&l, &probes), &plan, Method::Interpolation, &truth).unwrap();
            assert!(rep.max_error().unwrap() < 1e-10);
            assert!((truth[&ParamId::coupling(e.i, e.j, X, X)] - e.coupling).abs() < 1e-15);
        }
    }

    #[test]
    fn recover_errors() {
        let plan = plan_two_qubit(2, 0, 1).unwrap();
        assert!(matches!(recover(&BTreeMap::new(), &plan, Method::Interpolation, &BTreeMap::new()), Err(Error::MissingDerivative(_))));
        let rule = IsolationRule {
            target: ParamId::Field { site: 0, axis: X },
            terms: vec![RuleTerm { weight: Rational::one(), kind: TermKind::KnownParameter(ParamId::Field { site: 1, axis: X }) }],
            equation_tag: String::new(),
        };
        assert!(matches!(recover(&BTreeMap::new(), &[rule], Method::Interpolation, &BTreeMap::new()), Err(Error::Dependency(_))));
        assert!(recover(&BTreeMap::new(), &[], Method::Interpolation, &BTreeMap::new()).unwrap().rows.is_empty());
        assert!(plan_two_qubit(2, 1, 1).is_err());
    }

    #[test]
    fn quarter_weight_rule() {
        let plan: Vec<_> = plan_two_qubit(2, 0, 1).unwrap().into_iter().filter(|r| r.target == ParamId::coupling(0, 1, X, Y)).collect();
        let p = plan[0].probes().next().unwrap().clone();
        let rep = recover(&BTreeMap::from([(p, -4.0 * 0.37)]), &plan, Method::FiniteDifference, &BTreeMap::new()).unwrap();
        assert!((rep.rows[0].estimate - 0.37).abs() < 1e-15);
    }

    #[test]
    fn param_labels_round_trip() {
        for p in pair_basis(3, 1) {
            assert_eq!(p.to_string().parse::<ParamId>().unwrap(), p);
        }
        assert_eq!("a_yx[2,0]".parse::<ParamId>().unwrap(), ParamId::coupling(0, 2, X, Y));
        assert!("b_x[0]".parse::<ParamId>().is_err());
    }

    #[test]
    fn chip_plan_probe_count() {
        let plan = plan_chip(2, 0, 1).unwrap();
        let probes = plan_probes(&plan);
        assert_eq!(probes.len(), CHIP_PROBES);
        let states: BTreeSet<_> = probes.iter().map(|p| p.initial.to_string()).collect();
        assert!(states.len() <= probes.len());
    }

    #[test]
    fn plan_table_lists_every_probe() {
        let plan = plan_chip(2, 0, 1).unwrap();
        let table = plan_table(&plan);
        let n_terms: usize = plan.iter().map(|r| r.probes().count()).sum();
        assert_eq!(table.len(), n_terms);
        assert!(table.iter().all(|r| r.tag == "chip"));
    }

    fn trace(obs: &str, init: &str, samples: &[(f64, f64)]) -> TimeTrace {
        TimeTrace {
            observable: PauliString::parse(obs, 1).unwrap(),
            initial: ProductStateSpec::parse(init, 1).unwrap(),
            samples: samples.iter().map(|(t, m)| TraceSample { time_us: *t, mean: *m, std_error: 0.0 }).collect(),
            noise: NoiseMode::None,
            seed: 0,
            adjusted: false,
        }
    }

    #[test]
    fn finite_difference_examples() {
        // ⟨Z⟩ on +z starts at 1; y = 1 + 3t.
        let tr = trace("Z0", "+z0", &[(0.1, 1.3), (0.2, 1.6)]);
        assert!((finite_difference_derivative(&tr).unwrap() - 3.0).abs() < 1e-12);
        // y = 1 + 2t + 5t² → bias (t0/2)·y'' = 5 t0.
        let t0 = 0.01;
        let tr = trace("Z0", "+z0", &[(t0, 1.0 + 2.0 * t0 + 5.0 * t0 * t0)]);
        assert!((finite_difference_derivative(&tr).unwrap() - 2.0 - 5.0 * t0).abs() < 1e-10);
        assert!(finite_difference_derivative(&trace("Z0", "+z0", &[(0.0, 1.0)])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn a_parameters_ignore_dissipation(seed in 0u64..10_000) {
            // Adding single-site dissipation leaves every coupling and field estimate unchanged.
            let noisy = random_lindbladian(2, seed);
            let mut clean = Lindbladian::new(2);
            for (c, p) in noisy.hamiltonian() {
                clean.add_hamiltonian(*c, p.clone());
            }
            let mut plan = plan_two_qubit(2, 0, 1).unwrap();
            plan.extend(plan_single_qubit(2, 0, 1).unwrap());
            let probes = plan_probes(&plan);
            let a = recover(&oracle_derivatives(&noisy, &probes), &plan, Method::Interpolation, &BTreeMap::new()).unwrap();
            let b = recover(&oracle_derivatives(&clean, &probes), &plan, Method::Interpolation, &BTreeMap::new()).unwrap();
            for (x, y) in a.rows.iter().zip(&b.rows) {
                prop_assert!((x.estimate - y.estimate).abs() < 1e-10);
            }
        }

        #[test]
        fn symmetric_partner_rules_agree(seed in 0u64..10_000) {
            // An independently derived a_xy rule that avoids the preferred probe gives the same value.
            let l = random_lindbladian(2, seed);
            let basis = pair_basis(0, 1);
            let target = ParamId::coupling(0, 1, Y, X);
            let main = plan_two_qubit(2, 0, 1).unwrap().into_iter().find(|r| r.target == target).unwrap();
            let avoid: Vec<Probe> = main.probes().cloned().collect();
            let pool: Vec<Probe> = fallback_pool(2, 0, 1, &[]).into_iter().filter(|p| !avoid.contains(p)).collect();
            let alt = derive_rule(target, &basis, &BTreeSet::new(), &pool, "alt").unwrap();
            let plan = vec![main, alt];
            let rep = recover(&oracle_derivatives(&l, &plan_probes(&plan)), &plan, Method::Interpolation, &BTreeMap::new()).unwrap();
            prop_assert!((rep.rows[0].estimate - rep.rows[1].estimate).abs() < 1e-10);
        }
    }
}
