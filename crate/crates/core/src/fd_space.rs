//! Finite-difference `L_h` on tensor grids of `(0,1)^d`, `d = 1..3`:
//!
//! ```text
//! L_h U(z) = Σ_k h^{-2} { a_k(z + h/2 i_k) [U(z) − U(z + h i_k)] + a_k(z − h/2 i_k) [U(z) − U(z − h i_k)] }
//!          + Σ_k (2h)^{-1} b_k(z) [U(z + h i_k) − U(z − h i_k)] + c(z) U(z)
//! ```
//!
//! Dirichlet values are eliminated: stencil legs that land on the boundary are
//! returned as [`BoundaryLeg`]s so the caller can move `weight · g(point)` to the
//! right-hand side.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::linalg::CsrMatrix;

pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Interior nodes of the uniform grid `{ih}_{i=0}^N` in each of `dim` axes,
/// numbered lexicographically with axis 0 fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorGrid {
    dim: usize,
    n: usize,
}

impl TensorGrid {
    pub fn new(dim: usize, intervals: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if intervals < 2 {
            return Err(Error::InvalidParameter(format!("need N >= 2 intervals per axis, got {intervals}")));
        }
        Ok(Self { dim, n: intervals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn interior_count(&self) -> usize {
        (self.n - 1).pow(self.dim as u32)
    }

    /// Index of the interior node with grid indices `idx` (each in `1..N`).
    pub fn index(&self, idx: &[usize]) -> Option<usize> {
        if idx.len() != self.dim || idx.iter().any(|&i| i == 0 || i >= self.n) {
            return None;
        }
        Some(idx.iter().rev().fold(0, |acc, &i| acc * (self.n - 1) + (i - 1)))
    }

    /// Grid indices (unused axes 0) of interior node `k`.
    pub fn multi_index(&self, mut k: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for slot in out.iter_mut().take(self.dim) {
            *slot = k % (self.n - 1) + 1;
            k /= self.n - 1;
        }
        out
    }

    pub fn coords(&self, idx: &[usize; 3]) -> [f64; 3] {
        let h = self.h();
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = if idx[k] == self.n { 1.0 } else { idx[k] as f64 * h };
        }
        p
    }

    pub fn point(&self, k: usize) -> [f64; 3] {
        self.coords(&self.multi_index(k))
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.interior_count()).map(|k| self.point(k)).collect()
    }
}

/// Coefficients of `L u = Σ_k [−∂_k(a_k ∂_k u) + b_k ∂_k u] + c u`.
#[derive(Clone)]
pub struct FdCoefficients {
    pub diffusion: Vec<SpaceFn>,
    pub convection: Vec<SpaceFn>,
    pub reaction: SpaceFn,
}

impl FdCoefficients {
    pub fn constant(dim: usize, a: f64, b: &[f64], c: f64) -> Result<Self> {
        if b.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                got: b.len(),
            });
        }
        Ok(Self {
            diffusion: (0..dim).map(|_| Arc::new(move |_: &[f64]| a) as SpaceFn).collect(),
            convection: b.iter().map(|&bk| Arc::new(move |_: &[f64]| bk) as SpaceFn).collect(),
            reaction: Arc::new(move |_: &[f64]| c),
        })
    }

    /// `−Δ`.
    pub fn laplacian(dim: usize) -> Self {
        Self::constant(dim, 1.0, &vec![0.0; dim], 0.0).expect("lengths agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdmissibilityPolicy {
    /// Record the violation in the operator and carry on.
    #[default]
    Warn,
    Fail,
}

/// Grid-sampled form of `h^{-1} >= max_k ½ ‖b_k‖_∞ ‖a_k^{-1}‖_∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub inv_h: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// A stencil leg from interior row `row` to the boundary node at `point`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLeg {
    pub row: usize,
    pub point: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct FdOperator {
    pub grid: TensorGrid,
    pub matrix: CsrMatrix,
    pub boundary: Vec<BoundaryLeg>,
    pub admissibility: Admissibility,
    pub symmetric: bool,
}

struct RowStencil {
    entries: Vec<(usize, usize, f64)>,
    legs: Vec<BoundaryLeg>,
    min_a: f64,
    max_ratio: f64,
}

pub fn assemble_fd(grid: TensorGrid, coeffs: &FdCoefficients, policy: AdmissibilityPolicy) -> Result<FdOperator> {
    assemble_fd_with(grid, coeffs, policy, ExecPolicy::Parallel)
}

pub fn assemble_fd_with(
    grid: TensorGrid,
    coeffs: &FdCoefficients,
    policy: AdmissibilityPolicy,
    exec_policy: ExecPolicy,
) -> Result<FdOperator> {
    let dim = grid.dim();
    if coeffs.diffusion.len() != dim || coeffs.convection.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: coeffs.diffusion.len().min(coeffs.convection.len()),
        });
    }
    let h = grid.h();
    let inv_h2 = 1.0 / (h * h);
    let n = grid.interior_count();

    let rows = exec::map_range(exec_policy, n, |row| {
        let idx = grid.multi_index(row);
        let z = grid.coords(&idx);
        let mut entries = Vec::with_capacity(2 * dim + 1);
        let mut legs = Vec::new();
        let mut diag = (coeffs.reaction)(&z[..dim]);
        let mut min_a = f64::INFINITY;
        let mut max_ratio = 0.0f64;
        for k in 0..dim {
            let mut zp = z;
            zp[k] += 0.5 * h;
            let mut zm = z;
            zm[k] -= 0.5 * h;
            let a_plus = (coeffs.diffusion[k])(&zp[..dim]);
            let a_minus = (coeffs.diffusion[k])(&zm[..dim]);
            let b = (coeffs.convection[k])(&z[..dim]);
            min_a = min_a.min(a_plus).min(a_minus);
            max_ratio = max_ratio.max(0.5 * b.abs() / a_plus.min(a_minus));
            diag += (a_plus + a_minus) * inv_h2;
            for (step, w) in [(1isize, -a_plus * inv_h2 + 0.5 * b / h), (-1, -a_minus * inv_h2 - 0.5 * b / h)] {
                let mut nb = idx;
                nb[k] = (nb[k] as isize + step) as usize;
                match grid.index(&nb[..dim]) {
                    Some(col) => entries.push((row, col, w)),
                    None => legs.push(BoundaryLeg {
                        row,
                        point: grid.coords(&nb),
                        weight: w,
                    }),
                }
            }
        }
        entries.push((row, row, diag));
        RowStencil {
            entries,
            legs,
            min_a,
            max_ratio,
        }
    });

    let min_a = rows.iter().map(|r| r.min_a).fold(f64::INFINITY, f64::min);
    if !(min_a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diffusion coefficient must be positive, sampled minimum {min_a}"
        )));
    }
    let bound = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let admissibility = Admissibility {
        inv_h: 1.0 / h,
        bound,
        satisfied: 1.0 / h >= bound,
    };
    if !admissibility.satisfied && policy == AdmissibilityPolicy::Fail {
        return Err(Error::Admissibility(format!(
            "1/h = {} < max_k ½‖b_k‖‖1/a_k‖ = {bound}",
            1.0 / h
        )));
    }
    let mut triplets = Vec::with_capacity(n * (2 * dim + 1));
    let mut boundary = Vec::new();
    for r in rows {
        triplets.extend(r.entries);
        boundary.extend(r.legs);
    }
    let matrix = CsrMatrix::from_triplets(n, n, &triplets)?;
    let symmetric = matrix.is_symmetric(1e-13);
    Ok(FdOperator {
        grid,
        matrix,
        boundary,
        admissibility,
        symmetric,
    })
}

/// True iff `A + shift·I` has positive diagonal, nonpositive off-diagonals and
/// nonnegative row sums.
pub fn check_m_matrix(a: &CsrMatrix, shift: f64) -> bool {
    (0..a.nrows()).all(|i| {
        let (cols, vals) = a.row(i);
        let mut diag = shift;
        let mut sum = shift;
        for (&j, &v) in cols.iter().zip(vals) {
            sum += v;
            if j == i {
                diag += v;
            } else if v > 0.0 {
                return false;
            }
        }
        diag > 0.0 && sum >= -1e-12 * diag
    })
}

impl FdOperator {
    /// `L_h v` at interior nodes, with `v` sampled on the full grid.
    pub fn apply_to(&self, v: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let dim = self.grid.dim();
        let vals: Vec<f64> = self.grid.points().iter().map(|p| v(&p[..dim])).collect();
        let mut out = self.matrix.mul(&vals);
        for leg in &self.boundary {
            out[leg.row] += leg.weight * v(&leg.point[..dim]);
        }
        out
    }
}

/// `max_{z ∈ Ω_h} |(L_h − L) v (z)|` for a smooth `v` with known `L v`.
pub fn truncation_probe(
    grid: TensorGrid,
    coeffs: &FdCoefficients,
    v: &dyn Fn(&[f64]) -> f64,
    lv: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let op = assemble_fd(grid, coeffs, AdmissibilityPolicy::Warn)?;
    let dim = grid.dim();
    Ok(op
        .apply_to(v)
        .iter()
        .zip(grid.points())
        .map(|(a, p)| (a - lv(&p[..dim])).abs())
        .fold(0.0, f64::max))
}
