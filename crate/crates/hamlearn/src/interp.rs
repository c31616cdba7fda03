//! Robust polynomial interpolation of time traces.
//!
//! Fits are computed on the affinely rescaled window [−1, 1]: an ℓ1 regression
//! weighted over Chebyshev partitions, refined by a few ℓ∞ regressions on
//! partition medians of the residuals. The derivative at t = 0 is read off
//! the fitted polynomial, and [`derivative_error_budget`] bounds its error
//! through Markov's inequality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp;
use crate::scalar::Real;

/// Polynomial in the monomial basis of x = (2t − a − b)/(b − a).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit<T> {
    pub degree: usize,
    pub coefficients: Vec<T>,
    pub domain: (T, T),
    /// Largest absolute residual over the fitted points.
    pub residual_sup: T,
}

impl<T: Real> PolynomialFit<T> {
    pub fn to_unit(&self, t: T) -> T {
        let (a, b) = self.domain;
        (T::lit(2.0) * t - a - b) / (b - a)
    }

    pub fn eval(&self, t: T) -> T {
        horner(&self.coefficients, self.to_unit(t))
    }

    /// dp/dt at physical time t.
    pub fn derivative(&self, t: T) -> T {
        let (a, b) = self.domain;
        let x = self.to_unit(t);
        let mut acc = T::zero();
        for (k, c) in self.coefficients.iter().enumerate().skip(1).rev() {
            acc = acc * x + T::lit(k as f64) * *c;
        }
        acc * T::lit(2.0) / (b - a)
    }

    pub fn derivative_at_zero(&self) -> T {
        self.derivative(T::zero())
    }
}

fn horner<T: Real>(c: &[T], x: T) -> T {
    c.iter().rev().fold(T::zero(), |acc, v| acc * x + *v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDistribution {
    Chebyshev,
    Uniform,
    Explicit { times: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub degrees_to_try: Vec<usize>,
    pub outlier_fraction_budget: f64,
    /// None: ⌈log₂ d⌉ + 1.
    pub linf_iterations: Option<usize>,
    pub node_distribution: NodeDistribution,
    /// None: 2(d + 1).
    pub partitions: Option<usize>,
    /// Minimum point count is max(d + 1, ⌈C·d·ln d⌉).
    pub min_points_factor: f64,
    pub cv_folds: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degrees_to_try: (1..=7).collect(),
            outlier_fraction_budget: 0.4,
            linf_iterations: None,
            node_distribution: NodeDistribution::Chebyshev,
            partitions: None,
            min_points_factor: 4.0,
            cv_folds: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degrees_to_try.is_empty() || self.degrees_to_try.contains(&0) {
            return Err(Error::Invalid("degrees_to_try must be non-empty with all degrees ≥ 1".into()));
        }
        if !(0.0..0.5).contains(&self.outlier_fraction_budget) {
            return Err(Error::Invalid(format!("outlier_fraction_budget must lie in [0, 1/2), got {}", self.outlier_fraction_budget)));
        }
        if self.partitions == Some(0) {
            return Err(Error::Invalid("partitions must be at least 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Invalid("cv_folds must be at least 2".into()));
        }
        if let NodeDistribution::Explicit { times } = &self.node_distribution {
            if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::Invalid("explicit times must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn linf_rounds(&self, d: usize) -> usize {
        self.linf_iterations.unwrap_or_else(|| ceil_log2(d) + 1)
    }

    pub fn partitions_for(&self, d: usize) -> usize {
        self.partitions.unwrap_or(2 * (d + 1))
    }

    pub fn min_points(&self, d: usize) -> usize {
        let c = (self.min_points_factor * d as f64 * (d as f64).ln()).ceil();
        (d + 1).max(c as usize)
    }

    /// Sample times on [a, b] according to `node_distribution`.
    pub fn sample_times<R: Rng + ?Sized>(&self, m: usize, a: f64, b: f64, rng: &mut R) -> Result<Vec<f64>> {
        match &self.node_distribution {
            NodeDistribution::Chebyshev => chebyshev_sample(m, a, b, rng),
            NodeDistribution::Uniform => uniform_times(m, a, b),
            NodeDistribution::Explicit { times } => Ok(times.clone()),
        }
    }
}

fn ceil_log2(d: usize) -> usize {
    if d <= 1 {
        0
    } else {
        (usize::BITS - (d - 1).leading_zeros()) as usize
    }
}

fn check_window(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::Invalid(format!("need a < b, got [{a}, {b}]")));
    }
    Ok(())
}

/// i.i.d. draws cos(πu), u ~ U[0, 1], mapped to [a, b], sorted.
pub fn chebyshev_sample<R: Rng + ?Sized>(m: usize, a: f64, b: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_window(a, b)?;
    if m == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let mut t: Vec<f64> = (0..m)
        .map(|_| {
            let x = (std::f64::consts::PI * rng.gen::<f64>()).cos();
            (a + b) / 2.0 + (b - a) / 2.0 * x
        })
        .collect();
    t.sort_by(f64::total_cmp);
    Ok(t)
}

/// m equally spaced times including both ends.
pub fn uniform_times(m: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    check_window(a, b)?;
    match m {
        0 => Err(Error::Invalid("need at least one sample".into())),
        1 => Ok(vec![(a + b) / 2.0]),
        _ => Ok((0..m).map(|k| a + (b - a) * k as f64 / (m - 1) as f64).collect()),
    }
}

/// Boundaries of I_j = [cos(πj/m), cos(π(j−1)/m)], j = 1..m, ascending.
pub fn chebyshev_partitions<T: Real>(m: usize) -> Vec<(T, T)> {
    (1..=m)
        .rev()
        .map(|j| {
            let lo = (T::PI() * T::lit(j as f64) / T::lit(m as f64)).cos();
            let hi = (T::PI() * T::lit((j - 1) as f64) / T::lit(m as f64)).cos();
            (lo, hi)
        })
        .collect()
}

/// Index into [`chebyshev_partitions`] for x ∈ [−1, 1].
fn partition_index<T: Real>(x: T, m: usize) -> usize {
    let x = x.max(-T::one()).min(T::one());
    let theta = x.acos() / T::PI() * T::lit(m as f64);
    let j = theta.ceil().to_usize().unwrap_or(1).clamp(1, m);
    m - j
}

struct Rescaled<T> {
    domain: (T, T),
    x: Vec<T>,
    y: Vec<T>,
}

fn rescale<T: Real>(points: &[(T, T)], d: usize) -> Result<Rescaled<T>> {
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::Numerical("non-finite sample".into()));
    }
    let a = points.iter().map(|p| p.0).fold(T::infinity(), T::min);
    let b = points.iter().map(|p| p.0).fold(T::neg_infinity(), T::max);
    let mut distinct: Vec<T> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|p, q| p.partial_cmp(q).unwrap());
    distinct.dedup();
    if distinct.len() < d + 1 {
        return Err(Error::Invalid(format!("degree {d} needs {} distinct times, got {}", d + 1, distinct.len())));
    }
    let x = points.iter().map(|(t, _)| (T::lit(2.0) * *t - a - b) / (b - a)).collect();
    let y = points.iter().map(|p| p.1).collect();
    Ok(Rescaled { domain: (a, b), x, y })
}

fn finish<T: Real>(r: &Rescaled<T>, d: usize, coefficients: Vec<T>) -> PolynomialFit<T> {
    let residual_sup = r.x.iter().zip(&r.y).map(|(x, y)| (*y - horner(&coefficients, *x)).abs()).fold(T::zero(), T::max);
    PolynomialFit { degree: d, coefficients, domain: r.domain, residual_sup }
}

/// Split free coefficients into c⁺ − c⁻ columns.
fn coefficient_columns<T: Real>(x: T, d: usize) -> Vec<T> {
    let mut row = Vec::with_capacity(2 * (d + 1));
    let mut p = T::one();
    for _ in 0..=d {
        row.push(p);
        p *= x;
    }
    let neg: Vec<T> = row.iter().map(|v| -*v).collect();
    row.extend(neg);
    row
}

fn unsplit<T: Real>(sol: &[T], d: usize) -> Vec<T> {
    (0..=d).map(|k| sol[k] - sol[d + 1 + k]).collect()
}

/// Runs `solve` on y / max|y| and scales the coefficients back.
fn scaled<T: Real>(y: &[T], d: usize, solve: impl FnOnce(&[T]) -> Result<Vec<T>>) -> Result<Vec<T>> {
    let s = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if s == T::zero() {
        return Ok(vec![T::zero(); d + 1]);
    }
    let unit: Vec<T> = y.iter().map(|v| *v / s).collect();
    Ok(solve(&unit)?.into_iter().map(|c| c * s).collect())
}

fn l1_unit<T: Real>(x: &[T], y: &[T], d: usize, m: usize) -> Result<Vec<T>> {
    scaled(y, d, |y| l1_scaled(x, y, d, m))
}

fn l1_scaled<T: Real>(x: &[T], y: &[T], d: usize, m: usize) -> Result<Vec<T>> {
    let n = x.len();
    let parts = chebyshev_partitions::<T>(m);
    let idx: Vec<usize> = x.iter().map(|v| partition_index(*v, m)).collect();
    let mut count = vec![0usize; m];
    for j in &idx {
        count[*j] += 1;
    }
    let nc = 2 * (d + 1);
    let width = nc + 2 * n;
    let mut cost = vec![T::zero(); width];
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = parts[idx[i]];
        let w = (hi - lo) / T::lit(count[idx[i]] as f64);
        cost[nc + i] = w;
        cost[nc + n + i] = w;
        let mut row = coefficient_columns(x[i], d);
        row.resize(width, T::zero());
        row[nc + i] = T::one();
        row[nc + n + i] = -T::one();
        a.push(row);
    }
    let sol = lp::minimize(&cost, &a, y)?;
    Ok(unsplit(&sol.x, d))
}

/// Lower median, always one of the samples.
fn median<T: Real>(v: &mut [T]) -> T {
    v.sort_by(|p, q| p.partial_cmp(q).unwrap());
    v[(v.len() - 1) / 2]
}

fn linf_unit<T: Real>(x: &[T], y: &[T], d: usize, m: usize) -> Result<Vec<T>> {
    scaled(y, d, |y| linf_scaled(x, y, d, m))
}

fn linf_scaled<T: Real>(x: &[T], y: &[T], d: usize, m: usize) -> Result<Vec<T>> {
    let mut xs: Vec<Vec<T>> = vec![Vec::new(); m];
    let mut ys: Vec<Vec<T>> = vec![Vec::new(); m];
    for (xi, yi) in x.iter().zip(y) {
        let j = partition_index(*xi, m);
        xs[j].push(*xi);
        ys[j].push(*yi);
    }
    let reps: Vec<(T, T)> = xs.iter_mut().zip(ys.iter_mut()).filter(|(v, _)| !v.is_empty()).map(|(v, w)| (median(v), median(w))).collect();
    if reps.is_empty() {
        return Err(Error::Invalid("all partitions are empty".into()));
    }
    let nc = 2 * (d + 1);
    let k = reps.len();
    let width = nc + 1 + 2 * k;
    let mut cost = vec![T::zero(); width];
    cost[nc] = T::one();
    let mut a = Vec::with_capacity(2 * k);
    let mut b = Vec::with_capacity(2 * k);
    for (j, (xr, yr)) in reps.iter().enumerate() {
        // p(x̃) − s + u = ỹ and −p(x̃) − s + v = −ỹ.
        let cols = coefficient_columns(*xr, d);
        let mut up = cols.clone();
        up.resize(width, T::zero());
        up[nc] = -T::one();
        up[nc + 1 + j] = T::one();
        a.push(up);
        b.push(*yr);
        let mut down: Vec<T> = cols.iter().map(|v| -*v).collect();
        down.resize(width, T::zero());
        down[nc] = -T::one();
        down[nc + 1 + k + j] = T::one();
        a.push(down);
        b.push(-*yr);
    }
    let sol = lp::minimize(&cost, &a, &b)?;
    Ok(unsplit(&sol.x, d))
}

/// Degree-d fit minimizing Σ_j |I_j|·mean_{x_i ∈ I_j} |y_i − p(x_i)|.
pub fn l1_regression<T: Real>(points: &[(T, T)], d: usize, m_partitions: usize) -> Result<PolynomialFit<T>> {
    if m_partitions == 0 {
        return Err(Error::Invalid("need at least one partition".into()));
    }
    let r = rescale(points, d)?;
    let c = l1_unit(&r.x, &r.y, d, m_partitions)?;
    Ok(finish(&r, d, c))
}

/// Degree-d fit minimizing max_j |p(x̃_j) − ỹ_j| over partition medians.
pub fn linf_regression<T: Real>(points: &[(T, T)], d: usize, m_partitions: usize) -> Result<PolynomialFit<T>> {
    if m_partitions == 0 {
        return Err(Error::Invalid("need at least one partition".into()));
    }
    let r = rescale(points, d)?;
    let c = linf_unit(&r.x, &r.y, d, m_partitions)?;
    Ok(finish(&r, d, c))
}

/// ℓ1 fit followed by ℓ∞ corrections fitted to the residuals.
pub fn robust_fit<T: Real>(points: &[(T, T)], d: usize, cfg: &FitConfig) -> Result<PolynomialFit<T>> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::Invalid("degree must be at least 1".into()));
    }
    let need = cfg.min_points(d);
    if points.len() < need {
        return Err(Error::Invalid(format!("degree {d} needs at least {need} points, got {}", points.len())));
    }
    let m = cfg.partitions_for(d);
    let r = rescale(points, d)?;
    let mut c = l1_unit(&r.x, &r.y, d, m)?;
    for _ in 0..cfg.linf_rounds(d) {
        let res: Vec<T> = r.x.iter().zip(&r.y).map(|(x, y)| *y - horner(&c, *x)).collect();
        let q = linf_unit(&r.x, &res, d, m)?;
        for (ck, qk) in c.iter_mut().zip(q) {
            *ck += qk;
        }
    }
    Ok(finish(&r, d, c))
}

/// Cross-validation score of one candidate degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeScore {
    pub degree: usize,
    /// Mean absolute held-out residual; None when the folds are too small.
    pub cv_error: Option<f64>,
}

/// Fit every candidate degree, keep the smallest cross-validated residual.
pub fn select_degree<T: Real>(points: &[(T, T)], cfg: &FitConfig) -> Result<(PolynomialFit<T>, Vec<DegreeScore>)> {
    cfg.validate()?;
    let folds = cfg.cv_folds;
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for &d in &cfg.degrees_to_try {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut ok = true;
        for f in 0..folds {
            let train: Vec<(T, T)> = points.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, p)| *p).collect();
            let test: Vec<(T, T)> = points.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, p)| *p).collect();
            match robust_fit(&train, d, cfg) {
                Ok(fit) => {
                    for (t, y) in test {
                        total += (y - fit.eval(t)).abs().f64();
                        count += 1;
                    }
                }
                Err(e) if e.is_numerical() => return Err(e),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        let cv = (ok && count > 0).then(|| total / count as f64);
        if let Some(s) = cv {
            if best.map_or(true, |(_, b)| s < b - 1e-12 * b.abs().max(1.0)) {
                best = Some((d, s));
            }
        }
        scores.push(DegreeScore { degree: d, cv_error: cv });
    }
    let (d, _) = best.ok_or_else(|| Error::Invalid(format!("no candidate degree fits {} points", points.len())))?;
    Ok((robust_fit(points, d, cfg)?, scores))
}

pub fn derivative_at_zero<T: Real>(fit: &PolynomialFit<T>) -> Result<T> {
    if fit.domain.0 < T::zero() {
        return Err(Error::Invalid("fit window starts before t = 0".into()));
    }
    Ok(fit.derivative_at_zero())
}

/// C_M(d, k) = Π_{j<k} (d² − j²) / (2j + 1).
pub fn markov_constant(d: usize, k: usize) -> f64 {
    assert!(1 <= k && k <= d, "markov_constant needs 1 ≤ k ≤ d");
    let d2 = (d * d) as f64;
    if d > 15 {
        let log: f64 = (0..k).map(|j| (d2 - (j * j) as f64).ln() - ((2 * j + 1) as f64).ln()).sum();
        log.exp()
    } else {
        (0..k).map(|j| (d2 - (j * j) as f64) / (2 * j + 1) as f64).product()
    }
}

/// 3σ · Σ_{k=1}^{d} (2/(b−a))^k a^{k−1} C_M(d, k)/(k−1)!.
pub fn derivative_error_budget(a: f64, b: f64, d: usize, sigma: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 1..=d {
        if k > 1 {
            fact *= (k - 1) as f64;
        }
        let log = k as f64 * (2.0 / (b - a)).ln() + (k - 1) as f64 * a.ln();
        let term = if k == 1 { 2.0 / (b - a) } else { log.exp() };
        sum += term * markov_constant(d, k) / fact;
    }
    3.0 * sigma * sum
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_max: f64,
    pub m_points: usize,
}

/// t0 = 1/d², t_max = 2 + t0 in rescaled units times `time_scale`, m = ⌈4d ln(d+1)⌉.
pub fn choose_time_grid(epsilon: f64, d: usize, time_scale: f64) -> Result<TimeGrid> {
    if !(epsilon > 0.0) || d == 0 || !(time_scale > 0.0) {
        return Err(Error::Invalid("choose_time_grid needs epsilon > 0, d ≥ 1, time_scale > 0".into()));
    }
    let t0 = 1.0 / (d * d) as f64;
    let m = (4.0 * d as f64 * ((d + 1) as f64).ln()).ceil() as usize;
    Ok(TimeGrid { t0: t0 * time_scale, t_max: (2.0 + t0) * time_scale, m_points: m })
}

/// ⌈2e·t_max·g·|B|·ln(1/ε)⌉ − 1 clamped to `range`.
pub fn degree_heuristic(t_max: f64, g: f64, region_size: usize, epsilon: f64, range: (usize, usize)) -> Result<usize> {
    if !(t_max > 0.0 && g > 0.0 && region_size > 0 && epsilon > 0.0) {
        return Err(Error::Invalid("degree_heuristic needs positive arguments".into()));
    }
    let raw = (2.0 * std::f64::consts::E * t_max * g * region_size as f64 * (1.0 / epsilon).ln()).ceil() - 1.0;
    let d = if raw.is_finite() && raw > 0.0 { raw as usize } else { 0 };
    Ok(d.clamp(range.0, range.1))
}
