//! Compressed sparse row storage and Krylov solvers for the per-level systems
//! `(κ_{m,m} D + A) x = rhs`.

use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// columns sorted within each row. Explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Index {
                    what: if i >= nrows { "row" } else { "col" },
                    index: if i >= nrows { i } else { j },
                    lo: 0,
                    hi: if i >= nrows { nrows } else { ncols }.saturating_sub(1),
                });
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut slots = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            entries[slots[i]] = (j, v);
            slots[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut entries[counts[i]..counts[i + 1]];
            row.sort_by_key(|e| e.0);
            for &(j, v) in row.iter() {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Iterates `(row, col, value)` over stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    /// `y = A x`; rows are independent so the result does not depend on the policy.
    pub fn matvec(&self, x: &[f64], y: &mut [f64], policy: ExecPolicy) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        exec::for_each_chunk_mut(policy, y, exec::CHUNK, |off, chunk| {
            for (k, yi) in chunk.iter_mut().enumerate() {
                let (c, v) = self.row(off + k);
                *yi = c.iter().zip(v).map(|(&j, a)| a * x[j]).sum();
            }
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y, ExecPolicy::Sequential);
        y
    }

    /// `A + s·diag(d)`. Missing diagonal entries are inserted.
    pub fn add_scaled_diagonal(&self, s: f64, d: &[f64]) -> Result<Self> {
        if d.len() != self.nrows || self.nrows != self.ncols {
            return Err(Error::LengthMismatch {
                expected: self.nrows,
                got: d.len(),
            });
        }
        if (0..self.nrows).all(|i| self.row(i).0.binary_search(&i).is_ok()) {
            let mut out = self.clone();
            for (i, di) in d.iter().enumerate() {
                let k = self.row_ptr[i] + self.row(i).0.binary_search(&i).unwrap();
                out.values[k] += s * di;
            }
            return Ok(out);
        }
        let mut trip: Vec<_> = self.entries().collect();
        trip.extend((0..self.nrows).map(|i| (i, i, s * d[i])));
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.entries()
            .all(|(i, j, v)| (v - self.get(j, i)).abs() <= rel_tol * scale)
    }

    fn is_tridiagonal(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).0.iter().all(|&j| j + 1 >= i && j <= i + 1))
    }

    fn zero_row(&self) -> Option<usize> {
        (0..self.nrows).find(|&i| self.row(i).1.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖rhs − A x‖ / ‖rhs‖`, recomputed from the returned `x`.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub policy: ExecPolicy,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            policy: ExecPolicy::Parallel,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &CsrMatrix, x: &[f64], rhs: &[f64], policy: ExecPolicy) -> Vec<f64> {
    let mut r = vec![0.0; rhs.len()];
    a.matvec(x, &mut r, policy);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    r
}

fn check_square(a: &CsrMatrix, rhs: &[f64]) -> Result<()> {
    if a.nrows != a.ncols || rhs.len() != a.nrows {
        return Err(Error::LengthMismatch {
            expected: a.nrows,
            got: rhs.len(),
        });
    }
    Ok(())
}

fn finish(a: &CsrMatrix, x: Vec<f64>, rhs: &[f64], iterations: usize, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let bnorm = norm(rhs);
    let res = if bnorm == 0.0 {
        norm(&residual(a, &x, rhs, opts.policy))
    } else {
        norm(&residual(a, &x, rhs, opts.policy)) / bnorm
    };
    if !(res <= opts.tol) {
        return Err(Error::NonConvergence {
            iterations,
            residual: res,
        });
    }
    Ok((
        x,
        SolveStats {
            iterations,
            residual: res,
            converged: true,
        },
    ))
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
pub fn solve_spd(a: &CsrMatrix, rhs: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    solve_spd_from(a, rhs, vec![0.0; rhs.len()], opts)
}

/// As [`solve_spd`], starting from `x0`.
pub fn solve_spd_from(a: &CsrMatrix, rhs: &[f64], x0: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    check_square(a, rhs)?;
    let n = rhs.len();
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Breakdown(format!("non-positive diagonal entry in row {i}")));
    }
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return finish(a, vec![0.0; n], rhs, 0, opts);
    }
    let mut x = x0;
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // the outer loop restarts from the true residual if the recursive one drifted
    for _restart in 0..4 {
        let mut r = residual(a, &x, rhs, opts.policy);
        if norm(&r) / bnorm <= opts.tol {
            break;
        }
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < opts.max_iter {
            iterations += 1;
            a.matvec(&p, &mut ap, opts.policy);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Breakdown(format!(
                    "p·Ap = {pap:e} at iteration {iterations}; matrix not positive definite"
                )));
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            if norm(&r) / bnorm <= opts.tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    finish(a, x, rhs, iterations, opts)
}

/// Nonsymmetric systems: Thomas algorithm for tridiagonal matrices, otherwise
/// Jacobi-preconditioned BiCGStab.
pub fn solve_general(a: &CsrMatrix, rhs: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    solve_general_from(a, rhs, vec![0.0; rhs.len()], opts)
}

pub fn solve_general_from(a: &CsrMatrix, rhs: &[f64], x0: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    check_square(a, rhs)?;
    if let Some(i) = a.zero_row() {
        return Err(Error::Singular(format!("row {i} is identically zero")));
    }
    if a.is_tridiagonal() {
        return solve_tridiagonal(a, rhs, opts);
    }
    bicgstab(a, rhs, x0, opts)
}

/// Thomas elimination plus up to two refinement sweeps. A direct solve has no
/// iterations left to spend, so a residual above `tol` (the rounding floor
/// `ε‖A‖‖x‖/‖b‖` can exceed it) is reported in the stats, not as an error.
fn solve_tridiagonal(a: &CsrMatrix, rhs: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let bnorm = norm(rhs);
    let rel = |r: &[f64]| if bnorm == 0.0 { norm(r) } else { norm(r) / bnorm };
    let mut x = thomas(a, rhs)?;
    let mut r = residual(a, &x, rhs, opts.policy);
    let mut sweeps = 1;
    while rel(&r) > opts.tol && sweeps < 3 {
        let dx = thomas(a, &r)?;
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + di).collect();
        let rc = residual(a, &cand, rhs, opts.policy);
        sweeps += 1;
        if rel(&rc) >= rel(&r) {
            break;
        }
        x = cand;
        r = rc;
    }
    let res = rel(&r);
    Ok((
        x,
        SolveStats {
            iterations: sweeps,
            residual: res,
            converged: res <= opts.tol,
        },
    ))
}

fn thomas(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 0..n {
        let lower = if i > 0 { a.get(i, i - 1) } else { 0.0 };
        let upper = if i + 1 < n { a.get(i, i + 1) } else { 0.0 };
        let (cp, dp) = if i > 0 {
            (c_prime[i - 1], d_prime[i - 1])
        } else {
            (0.0, 0.0)
        };
        let denom = a.get(i, i) - lower * cp;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular(format!("zero pivot in row {i}")));
        }
        c_prime[i] = upper / denom;
        d_prime[i] = (rhs[i] - lower * dp) / denom;
    }
    let mut x = d_prime;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c_prime[i] * x[i + 1];
    }
    Ok(x)
}

fn bicgstab(a: &CsrMatrix, rhs: &[f64], x0: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = rhs.len();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return finish(a, vec![0.0; n], rhs, 0, opts);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0;
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let mut stalls = 0;
    // The recursive residual drifts from b − Ax; restart from the true one
    // until it meets tol, the budget runs out, or restarts stop helping.
    loop {
        let r = residual(a, &x, rhs, opts.policy);
        let res = norm(&r) / bnorm;
        if res <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        if res >= 0.5 * best {
            stalls += 1;
            if stalls > 2 {
                break;
            }
        }
        best = best.min(res);
        bicgstab_cycle(a, &mut x, r, bnorm, &inv_diag, &mut iterations, opts)?;
    }
    finish(a, x, rhs, iterations, opts)
}

fn bicgstab_cycle(
    a: &CsrMatrix,
    x: &mut [f64],
    mut r: Vec<f64>,
    bnorm: f64,
    inv_diag: &[f64],
    iterations: &mut usize,
    opts: &SolverOptions,
) -> Result<()> {
    let n = r.len();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    while *iterations < opts.max_iter {
        *iterations += 1;
        let k = *iterations;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::Breakdown(format!("rho = {rho_new:e} at iteration {k}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            p_hat[i] = p[i] * inv_diag[i];
        }
        a.matvec(&p_hat, &mut v, opts.policy);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(Error::Breakdown(format!("r̂·v = 0 at iteration {k}")));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= opts.tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(());
        }
        for i in 0..n {
            s_hat[i] = s[i] * inv_diag[i];
        }
        a.matvec(&s_hat, &mut t, opts.policy);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::Breakdown(format!("t·t = 0 at iteration {k}")));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) / bnorm <= opts.tol {
            return Ok(());
        }
        if omega == 0.0 {
            return Err(Error::Breakdown(format!("omega = 0 at iteration {k}")));
        }
    }
    Ok(())
}
