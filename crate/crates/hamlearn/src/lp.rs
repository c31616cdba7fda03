//! Dense two-phase simplex for small linear programs.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Solution<T> {
    pub x: Vec<T>,
    pub objective: T,
}

/// Minimize c·x subject to A x = b, x ≥ 0.
pub fn minimize<T: Real>(c: &[T], a: &[Vec<T>], b: &[T]) -> Result<Solution<T>> {
    let m = a.len();
    let n = c.len();
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: row.len() });
    }
    if a.iter().flatten().chain(b).chain(c).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite LP data".into()));
    }
    let tol = T::tolerance();

    // Rows with non-negative right-hand side.
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (r, bi) in a.iter().zip(b) {
        if *bi < T::zero() {
            rows.push(r.iter().map(|v| -*v).collect());
            rhs.push(-*bi);
        } else {
            rows.push(r.clone());
            rhs.push(*bi);
        }
    }

    // Reuse unit columns as the starting basis, add artificials elsewhere.
    let mut basis: Vec<Option<usize>> = vec![None; m];
    for j in 0..n {
        let mut hit = None;
        let mut unit = true;
        for (r, row) in rows.iter().enumerate() {
            if row[j] != T::zero() {
                if hit.is_none() && row[j] == T::one() {
                    hit = Some(r);
                } else {
                    unit = false;
                    break;
                }
            }
        }
        if let (true, Some(r)) = (unit, hit) {
            if basis[r].is_none() {
                basis[r] = Some(j);
            }
        }
    }
    let missing: Vec<usize> = (0..m).filter(|r| basis[*r].is_none()).collect();
    let width = n + missing.len();
    let mut t = Tableau { m, width, data: vec![T::zero(); m * (width + 1)], basis: vec![0; m], allowed: vec![true; width], tol };
    for r in 0..m {
        for j in 0..n {
            t.set(r, j, rows[r][j]);
        }
        t.set(r, width, rhs[r]);
    }
    for (k, r) in missing.iter().enumerate() {
        t.set(*r, n + k, T::one());
        basis[*r] = Some(n + k);
    }
    t.basis = basis.into_iter().map(|b| b.expect("every row has a basic column")).collect();

    if !missing.is_empty() {
        let mut cost = vec![T::zero(); width];
        for k in 0..missing.len() {
            cost[n + k] = T::one();
        }
        t.run(&cost)?;
        let scale = rhs.iter().fold(T::one(), |s, v| s.max(v.abs()));
        let infeasibility: T = (0..m).filter(|r| t.basis[*r] >= n).map(|r| t.get(r, width)).sum();
        if infeasibility > tol * scale * T::lit(m as f64) {
            return Err(Error::LpInfeasible);
        }
        for r in 0..m {
            if t.basis[r] >= n {
                if let Some(j) = (0..n).max_by(|x, y| t.get(r, *x).abs().partial_cmp(&t.get(r, *y).abs()).unwrap()) {
                    if t.get(r, j).abs() > tol {
                        t.pivot(r, j);
                    }
                }
            }
        }
        for j in n..width {
            t.allowed[j] = false;
        }
    }

    let mut cost = c.to_vec();
    cost.resize(width, T::zero());
    t.run(&cost)?;
    let mut x = vec![T::zero(); n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.get(r, width);
        }
    }
    let objective = x.iter().zip(c).map(|(a, b)| *a * *b).sum();
    Ok(Solution { x, objective })
}

struct Tableau<T> {
    m: usize,
    width: usize,
    data: Vec<T>,
    basis: Vec<usize>,
    allowed: Vec<bool>,
    tol: T,
}

impl<T: Real> Tableau<T> {
    fn get(&self, r: usize, j: usize) -> T {
        self.data[r * (self.width + 1) + j]
    }

    fn set(&mut self, r: usize, j: usize, v: T) {
        self.data[r * (self.width + 1) + j] = v;
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width + 1;
        let inv = T::one() / self.get(pr, pc);
        for j in 0..w {
            let v = self.get(pr, j) * inv;
            self.set(pr, j, v);
        }
        self.set(pr, pc, T::one());
        let (before, rest) = self.data.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != T::zero() {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * *p;
                }
                row[pc] = T::zero();
            }
        }
        self.basis[pr] = pc;
    }

    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let mut z = cost.to_vec();
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != T::zero() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj -= cb * self.get(r, j);
                }
            }
        }
        z
    }

    /// Dantzig pricing with a Harris ratio test; Bland's rule once a run of degenerate pivots appears.
    fn run(&mut self, cost: &[T]) -> Result<()> {
        let cscale = cost.iter().fold(T::one(), |s, v| s.max(v.abs()));
        let limit = 50 * (self.m + self.width) + 1000;
        let mut degenerate = 0usize;
        let mut bland = false;
        for _ in 0..limit {
            let z = self.reduced_costs(cost);
            bland |= degenerate > self.m;
            let candidates = (0..self.width).filter(|j| self.allowed[*j] && z[*j] < -self.tol * cscale);
            let entering = if bland { candidates.min() } else { candidates.min_by(|a, b| z[*a].partial_cmp(&z[*b]).unwrap()) };
            let Some(pc) = entering else { return Ok(()) };
            // Pass 1: largest step keeping every basic variable above −tol.
            let mut bound: Option<T> = None;
            for r in 0..self.m {
                let v = self.get(r, pc);
                if v > self.tol {
                    let ratio = (self.get(r, self.width) + self.tol) / v;
                    bound = Some(bound.map_or(ratio, |b| b.min(ratio)));
                }
            }
            let Some(bound) = bound else { return Err(Error::LpUnbounded) };
            // Pass 2: among rows within that step, the largest pivot (ties to the smaller basic index).
            let mut best: Option<(usize, T)> = None;
            for r in 0..self.m {
                let v = self.get(r, pc);
                if v > self.tol && self.get(r, self.width) / v <= bound {
                    let better = match best {
                        None => true,
                        Some((br, bv)) if bland => self.basis[r] < self.basis[br] && v >= bv * T::lit(1e-3),
                        Some((br, bv)) => v > bv || (v == bv && self.basis[r] < self.basis[br]),
                    };
                    if better {
                        best = Some((r, v));
                    }
                }
            }
            let (pr, v) = best.expect("pass 1 found a row");
            if self.get(pr, self.width) / v <= self.tol {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc);
            for r in 0..self.m {
                if self.get(r, self.width) < T::zero() {
                    self.set(r, self.width, T::zero());
                }
            }
        }
        Err(Error::Numerical("simplex iteration limit reached".into()))
    }
}
