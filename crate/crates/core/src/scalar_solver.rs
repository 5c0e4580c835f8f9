//! The paradigm problem `D_t^α u = f(t)`, `u(0) = u_0`, and its L1 solution
//! `δ_t^α U^j = f(t_j)`, together with the ψ truncation indicators that bound
//! its nodal error.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::caputo_l1::L1Operator;
use crate::error::{Error, Result};
use crate::temporal_mesh::TemporalMesh;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Samples per interval used for the suprema in the ψ indicators.
pub const DEFAULT_PSI_SAMPLES: usize = 16;

/// Exact solution with optional first and second time derivatives.
#[derive(Clone)]
pub struct ExactScalar {
    pub u: TimeFn,
    pub du: Option<TimeFn>,
    pub d2u: Option<TimeFn>,
}

#[derive(Clone)]
pub struct ScalarProblem {
    pub alpha: f64,
    pub u0: f64,
    pub f: TimeFn,
    pub exact: Option<ExactScalar>,
}

impl ScalarProblem {
    pub fn new(alpha: f64, u0: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            alpha,
            u0,
            f: Arc::new(f),
            exact: None,
        }
    }

    pub fn with_exact(mut self, exact: ExactScalar) -> Self {
        self.exact = Some(exact);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiIndicators {
    /// `psi[j-1] = ψ^j`.
    pub psi: Vec<f64>,
}

impl PsiIndicators {
    pub fn max(&self) -> f64 {
        self.psi.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// `U^0 = u_0`, `U^m = (f(t_m) + Σ_j (κ_{m,j} − κ_{m,j−1}) U^{j−1}) / κ_{m,m}`.
pub fn solve(problem: &ScalarProblem, mesh: &TemporalMesh) -> Result<Vec<f64>> {
    let op = L1Operator::new(problem.alpha, mesh.clone())?;
    Ok(solve_with(&op, problem))
}

pub fn solve_with(op: &L1Operator, problem: &ScalarProblem) -> Vec<f64> {
    let mesh = op.mesh();
    op.march(problem.u0, |m| (problem.f)(mesh.t(m)))
}

/// `max_{m>=1} |u(t_m) − U^m|`.
pub fn max_nodal_error(problem: &ScalarProblem, mesh: &TemporalMesh, solution: &[f64]) -> Result<f64> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("problem has no exact solution".into()))?;
    if solution.len() != mesh.nodes().len() {
        return Err(Error::LengthMismatch {
            expected: mesh.nodes().len(),
            got: solution.len(),
        });
    }
    Ok(mesh
        .nodes()
        .iter()
        .zip(solution)
        .skip(1)
        .map(|(&t, &v)| ((exact.u)(t) - v).abs())
        .fold(0.0, f64::max))
}

/// ψ^1 = τ_1^α sup_{(0,t_1)} s^{1−α} |δ_t u(t_1) − u'(s)|,
/// ψ^j = τ_j^{2−α} t_j^α sup_{(t_{j−1},t_j)} |u''(s)| for j >= 2,
/// with the suprema taken over `samples` Chebyshev points per interval.
pub fn psi_indicators(problem: &ScalarProblem, mesh: &TemporalMesh, samples: usize) -> Result<PsiIndicators> {
    let missing = || Error::InvalidParameter("psi indicators need u, u' and u'' callbacks".into());
    let exact = problem.exact.as_ref().ok_or_else(missing)?;
    let du = exact.du.as_ref().ok_or_else(missing)?;
    let d2u = exact.d2u.as_ref().ok_or_else(missing)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples per interval".into()));
    }
    let alpha = problem.alpha;
    let mut psi = Vec::with_capacity(mesh.steps());

    let t1 = mesh.t(1);
    let tau1 = mesh.tau(1);
    let slope = ((exact.u)(t1) - (exact.u)(0.0)) / tau1;
    // u' may be singular at s = 0: stay 1e-3·τ_1 away from it
    let lo = 1e-3 * tau1;
    let sup1 = chebyshev_points(lo, t1, samples, true)
        .map(|s| s.powf(1.0 - alpha) * (slope - du(s)).abs())
        .fold(0.0, f64::max);
    psi.push(tau1.powf(alpha) * sup1);

    for j in 2..=mesh.steps() {
        let (a, b) = (mesh.t(j - 1), mesh.t(j));
        let sup = chebyshev_points(a, b, samples, true)
            .map(|s| d2u(s).abs())
            .fold(0.0, f64::max);
        psi.push(mesh.tau(j).powf(2.0 - alpha) * b.powf(alpha) * sup);
    }
    Ok(PsiIndicators { psi })
}

/// Chebyshev points of the first kind mapped to `[a, b]`, optionally with both
/// endpoints appended.
fn chebyshev_points(a: f64, b: f64, n: usize, endpoints: bool) -> impl Iterator<Item = f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let interior = (1..=n).map(move |k| mid - half * ((2 * k - 1) as f64 * PI / (2 * n) as f64).cos());
    let ends = if endpoints { vec![a, b] } else { Vec::new() };
    interior.chain(ends)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special_fn::gamma;

    #[test]
    fn zero_source_keeps_initial_value() {
        let p = ScalarProblem::new(0.4, 2.5, |_| 0.0);
        let mesh = TemporalMesh::graded(1.0, 50, 2.0).unwrap();
        let u = solve(&p, &mesh).unwrap();
        assert!(u.iter().all(|&v| (v - 2.5).abs() <= 1e-13));
    }

    #[test]
    fn single_step_algebra() {
        let g = gamma(1.5).unwrap();
        let p = ScalarProblem::new(0.5, 0.0, move |_| g);
        let u = solve(&p, &TemporalMesh::uniform(1.0, 1).unwrap()).unwrap();
        assert!((u[1] - std::f64::consts::FRAC_PI_4).abs() < 1e-14);
    }

    #[test]
    fn linear_solution_reproduced() {
        let g = gamma(1.5).unwrap();
        let p = ScalarProblem::new(0.5, 0.0, move |t| t.sqrt() / g);
        for mesh in [
            TemporalMesh::uniform(1.0, 37).unwrap(),
            TemporalMesh::graded(2.0, 64, 3.0).unwrap(),
        ] {
            let u = solve(&p, &mesh).unwrap();
            for (v, t) in u.iter().zip(mesh.nodes()) {
                assert!((v - t).abs() <= 1e-11 * t.max(1.0));
            }
        }
    }

    #[test]
    fn psi_vanishes_for_linear_u() {
        let p = ScalarProblem::new(0.5, 1.0, |_| 0.0).with_exact(ExactScalar {
            u: Arc::new(|t| 1.0 + 3.0 * t),
            du: Some(Arc::new(|_| 3.0)),
            d2u: Some(Arc::new(|_| 0.0)),
        });
        let psi = psi_indicators(&p, &TemporalMesh::graded(1.0, 20, 2.0).unwrap(), 16).unwrap();
        assert!(psi.psi.iter().all(|&v| v.abs() < 1e-13));
    }

    #[test]
    fn psi_needs_callbacks() {
        let p = ScalarProblem::new(0.5, 0.0, |_| 0.0);
        assert!(psi_indicators(&p, &TemporalMesh::uniform(1.0, 4).unwrap(), 16).is_err());
        let p = p.with_exact(ExactScalar {
            u: Arc::new(|t| t),
            du: None,
            d2u: None,
        });
        assert!(psi_indicators(&p, &TemporalMesh::uniform(1.0, 4).unwrap(), 16).is_err());
    }

    #[test]
    fn chebyshev_points_stay_inside() {
        let pts: Vec<f64> = chebyshev_points(2.0, 3.0, 8, false).collect();
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|&s| s > 2.0 && s < 3.0));
    }
}
