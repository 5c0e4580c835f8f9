//! Full discretisation: the L1 operator in time coupled with an FD or lumped
//! P1 spatial operator. Level `m` solves
//!
//! `(κ_{m,m} D + A) U^m = D (F^m + Σ_j (κ_{m,j} − κ_{m,j−1}) U^{j−1}) − G^m`
//!
//! where `D` is the identity (FD) or the lumped mass (FEM) and `G^m` collects
//! the couplings of interior rows to the Dirichlet data at `t_m`.

use std::sync::Arc;

use crate::caputo_l1::{L1Operator, Summation};
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::fd_space::{BoundaryLeg, FdOperator, SpaceFn};
use crate::fem_space::FemSystem;
use crate::linalg::{self, CsrMatrix, SolverOptions};
use crate::temporal_mesh::TemporalMesh;

/// `(x, t) ↦ value`; `x` has the spatial dimension of the problem.
pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub enum SpatialSystem {
    Fd(FdOperator),
    Fem(FemSystem),
}

impl SpatialSystem {
    pub fn dim(&self) -> usize {
        match self {
            Self::Fd(op) => op.grid.dim(),
            Self::Fem(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix().nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self) -> &CsrMatrix {
        match self {
            Self::Fd(op) => &op.matrix,
            Self::Fem(sys) => &sys.stiffness,
        }
    }

    /// Diagonal of `D`; `None` means the identity.
    pub fn mass(&self) -> Option<&[f64]> {
        match self {
            Self::Fd(_) => None,
            Self::Fem(sys) => Some(&sys.mass),
        }
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        match self {
            Self::Fd(op) => op.grid.points(),
            Self::Fem(sys) => sys.points.clone(),
        }
    }

    pub fn boundary(&self) -> &[BoundaryLeg] {
        match self {
            Self::Fd(op) => &op.boundary,
            Self::Fem(sys) => &sys.boundary,
        }
    }

    pub fn symmetric(&self) -> bool {
        match self {
            Self::Fd(op) => op.symmetric,
            Self::Fem(_) => true,
        }
    }

    /// Quadrature weights of the discrete L2 norm: `h^d` (FD) or `m_z` (FEM).
    pub fn l2_weights(&self) -> Vec<f64> {
        match self {
            Self::Fd(op) => vec![op.grid.h().powi(op.grid.dim() as i32); self.len()],
            Self::Fem(sys) => sys.mass.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub solver: SolverOptions,
    /// Keep every `k`-th level in the trace (level `M` is always kept). The
    /// history sums always use every level.
    pub store_every: usize,
    pub policy: ExecPolicy,
    pub summation: Summation,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            store_every: 1,
            policy: ExecPolicy::default(),
            summation: Summation::Plain,
        }
    }
}

#[derive(Clone)]
pub struct EvolutionProblem {
    pub alpha: f64,
    pub mesh: TemporalMesh,
    pub space: SpatialSystem,
    pub source: SpaceTimeFn,
    pub boundary: SpaceTimeFn,
    pub initial: SpaceFn,
    pub exact: Option<SpaceTimeFn>,
    pub options: EvolveOptions,
}

impl EvolutionProblem {
    /// Problem with Dirichlet data and initial data taken from `exact`.
    pub fn manufactured(
        alpha: f64,
        mesh: TemporalMesh,
        space: SpatialSystem,
        source: SpaceTimeFn,
        exact: SpaceTimeFn,
    ) -> Self {
        let u0 = exact.clone();
        Self {
            alpha,
            mesh,
            space,
            source,
            boundary: exact.clone(),
            initial: Arc::new(move |x| u0(x, 0.0)),
            exact: Some(exact),
            options: EvolveOptions::default(),
        }
    }

    pub fn with_options(mut self, options: EvolveOptions) -> Self {
        self.options = options;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalErrors {
    /// `max_{m>=1} max_z |U^m(z) − u(z, t_m)|`
    pub max: f64,
    /// `max_{m>=1}` of the discrete L2 error at level `m`.
    pub l2: f64,
    /// Per-level max-nodal errors, index `m = 0..M`.
    pub per_level: Vec<f64>,
    pub per_level_l2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolutionTrace {
    /// Levels kept in the trace.
    pub level_index: Vec<usize>,
    pub times: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
    pub points: Vec<[f64; 3]>,
    pub l2_weights: Vec<f64>,
    pub dim: usize,
    /// Filled when the problem carries an exact solution.
    pub errors: Option<NodalErrors>,
    pub solver_iterations: usize,
}

impl SolutionTrace {
    pub fn final_level(&self) -> &[f64] {
        self.levels.last().expect("trace holds at least level 0")
    }
}

struct ErrorAccumulator<'a> {
    exact: &'a SpaceTimeFn,
    points: &'a [[f64; 3]],
    weights: &'a [f64],
    dim: usize,
    policy: ExecPolicy,
    per_level: Vec<f64>,
    per_level_l2: Vec<f64>,
}

impl ErrorAccumulator<'_> {
    fn push(&mut self, u: &[f64], t: f64) {
        let (max, l2) = level_error(self.exact, self.points, self.weights, self.dim, u, t, self.policy);
        self.per_level.push(max);
        self.per_level_l2.push(l2);
    }

    fn finish(self) -> NodalErrors {
        let tail = |v: &[f64]| v.iter().skip(1).fold(0.0f64, |m, &e| m.max(e));
        NodalErrors {
            max: tail(&self.per_level),
            l2: tail(&self.per_level_l2),
            per_level: self.per_level,
            per_level_l2: self.per_level_l2,
        }
    }
}

fn level_error(
    exact: &SpaceTimeFn,
    points: &[[f64; 3]],
    weights: &[f64],
    dim: usize,
    u: &[f64],
    t: f64,
    policy: ExecPolicy,
) -> (f64, f64) {
    let diffs = exec::map_range(policy, u.len(), |i| (u[i] - exact(&points[i][..dim], t)).abs());
    let max = diffs.iter().fold(0.0f64, |m, &e| m.max(e));
    let l2 = diffs.iter().zip(weights).map(|(e, w)| w * e * e).sum::<f64>().sqrt();
    (max, l2)
}

pub fn evolve(problem: &EvolutionProblem) -> Result<SolutionTrace> {
    let opts = &problem.options;
    if opts.store_every == 0 {
        return Err(Error::InvalidParameter("store_every must be >= 1".into()));
    }
    let op = L1Operator::new(problem.alpha, problem.mesh.clone())?.with_summation(opts.summation);
    let space = &problem.space;
    let dim = space.dim();
    let n = space.len();
    let points = space.points();
    let weights = space.l2_weights();
    let ones;
    let mass: &[f64] = match space.mass() {
        Some(m) => m,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let steps = op.steps();
    let mesh = op.mesh();
    let policy = opts.policy;
    let solver = SolverOptions {
        policy,
        ..opts.solver
    };

    let u0: Vec<f64> = exec::map_range(policy, n, |i| (problem.initial)(&points[i][..dim]));
    let mut errors = problem.exact.as_ref().map(|exact| ErrorAccumulator {
        exact,
        points: &points,
        weights: &weights,
        dim,
        policy,
        per_level: Vec::with_capacity(steps + 1),
        per_level_l2: Vec::with_capacity(steps + 1),
    });
    if let Some(acc) = errors.as_mut() {
        acc.push(&u0, 0.0);
    }

    let mut history: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    history.push(u0);
    let mut scratch = Vec::with_capacity(steps);
    let mut hist = vec![0.0; n];
    let mut iterations = 0;
    for m in 1..=steps {
        let t = mesh.t(m);
        op.history_rhs_vec(&history, m, &mut scratch, &mut hist, policy)?;
        let mut rhs = exec::map_range(policy, n, |i| mass[i] * ((problem.source)(&points[i][..dim], t) + hist[i]));
        for leg in space.boundary() {
            rhs[leg.row] -= leg.weight * (problem.boundary)(&leg.point[..dim], t);
        }
        let system = space.matrix().add_scaled_diagonal(op.diag(m), mass)?;
        let x0 = history[m - 1].clone();
        // 1D systems are tridiagonal and go to the direct banded path
        let solved = if space.symmetric() && dim > 1 {
            linalg::solve_spd_from(&system, &rhs, x0, &solver)
        } else {
            linalg::solve_general_from(&system, &rhs, x0, &solver)
        };
        let (u, stats) = solved.map_err(|e| Error::Step {
            level: m,
            source: Box::new(e),
        })?;
        iterations += stats.iterations;
        if let Some(acc) = errors.as_mut() {
            acc.push(&u, t);
        }
        history.push(u);
    }

    let keep = |m: usize| m.is_multiple_of(opts.store_every) || m == steps;
    let level_index: Vec<usize> = (0..=steps).filter(|&m| keep(m)).collect();
    let levels = if opts.store_every == 1 {
        history
    } else {
        history
            .into_iter()
            .enumerate()
            .filter(|(m, _)| keep(*m))
            .map(|(_, v)| v)
            .collect()
    };
    let errors = errors.map(ErrorAccumulator::finish);
    Ok(SolutionTrace {
        times: level_index.iter().map(|&m| mesh.t(m)).collect(),
        level_index,
        levels,
        points,
        l2_weights: weights,
        dim,
        errors,
        solver_iterations: iterations,
    })
}

/// Errors of the stored levels of `trace` against `exact`. Level 0 is
/// reported in the profile but excluded from the maxima.
pub fn nodal_errors(trace: &SolutionTrace, exact: &SpaceTimeFn) -> NodalErrors {
    let mut acc = ErrorAccumulator {
        exact,
        points: &trace.points,
        weights: &trace.l2_weights,
        dim: trace.dim,
        policy: ExecPolicy::Sequential,
        per_level: Vec::with_capacity(trace.levels.len()),
        per_level_l2: Vec::with_capacity(trace.levels.len()),
    };
    for (u, &t) in trace.levels.iter().zip(&trace.times) {
        acc.push(u, t);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_space::{assemble_fd, AdmissibilityPolicy, FdCoefficients, TensorGrid};
    use crate::fem_space::{assemble_fem, Triangulation};

    fn zero_st() -> SpaceTimeFn {
        Arc::new(|_: &[f64], _| 0.0)
    }

    fn fd_laplace(dim: usize, n: usize) -> SpatialSystem {
        let grid = TensorGrid::new(dim, n).unwrap();
        SpatialSystem::Fd(assemble_fd(grid, &FdCoefficients::laplacian(dim), AdmissibilityPolicy::Fail).unwrap())
    }

    #[test]
    fn zero_data_stays_zero() {
        let mesh = TemporalMesh::graded(1.0, 16, 2.0).unwrap();
        let p = EvolutionProblem {
            alpha: 0.4,
            mesh,
            space: fd_laplace(2, 6),
            source: zero_st(),
            boundary: zero_st(),
            initial: Arc::new(|_: &[f64]| 0.0),
            exact: Some(zero_st()),
            options: EvolveOptions::default(),
        };
        let trace = evolve(&p).unwrap();
        assert_eq!(trace.levels.len(), 17);
        assert!(trace.levels.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(trace.errors.unwrap().max, 0.0);
    }

    #[test]
    fn thinning_keeps_last_level_and_same_values() {
        let mesh = TemporalMesh::graded(1.0, 10, 2.0).unwrap();
        let exact: SpaceTimeFn = Arc::new(|x: &[f64], t| t * x[0] * (1.0 - x[0]));
        let source: SpaceTimeFn = Arc::new(|x: &[f64], t| {
            let g = crate::special_fn::gamma(1.5).unwrap();
            t.powf(0.5) / g * x[0] * (1.0 - x[0]) + 2.0 * t
        });
        let base = EvolutionProblem::manufactured(0.5, mesh, fd_laplace(1, 8), source, exact);
        let full = evolve(&base).unwrap();
        let opts = EvolveOptions {
            store_every: 4,
            ..Default::default()
        };
        let thin = evolve(&base.clone().with_options(opts)).unwrap();
        assert_eq!(thin.level_index, vec![0, 4, 8, 10]);
        assert_eq!(thin.final_level(), full.final_level());
        assert_eq!(thin.errors, full.errors);
    }

    #[test]
    fn linear_in_time_quadratic_in_space_is_exact_in_1d() {
        // u = t·x(1−x): L1 is exact for linear t, the 3-point stencil for quadratics
        let mesh = TemporalMesh::graded(1.0, 12, 3.0).unwrap();
        let alpha = 0.3;
        let g = crate::special_fn::gamma(2.0 - alpha).unwrap();
        let exact: SpaceTimeFn = Arc::new(|x: &[f64], t| t * x[0] * (1.0 - x[0]));
        let source: SpaceTimeFn = Arc::new(move |x: &[f64], t| t.powf(1.0 - alpha) / g * x[0] * (1.0 - x[0]) + 2.0 * t);
        let mut p = EvolutionProblem::manufactured(alpha, mesh, fd_laplace(1, 10), source, exact.clone());
        p.options.solver.tol = 1e-14;
        let trace = evolve(&p).unwrap();
        assert!(trace.errors.as_ref().unwrap().max < 1e-12, "{:?}", trace.errors);
        let again = nodal_errors(&trace, &exact);
        assert_eq!(&again, trace.errors.as_ref().unwrap());
    }

    #[test]
    fn single_wrong_entry_is_reported() {
        let mesh = TemporalMesh::uniform(1.0, 4).unwrap();
        let exact: SpaceTimeFn = Arc::new(|_: &[f64], t| t);
        let space = fd_laplace(1, 4);
        let source: SpaceTimeFn = Arc::new(|_: &[f64], _| 0.0);
        let mut trace = evolve(&EvolutionProblem::manufactured(0.5, mesh, space, source, exact.clone())).unwrap();
        let n = trace.levels[0].len();
        for (k, lvl) in trace.levels.iter_mut().enumerate() {
            for v in lvl.iter_mut() {
                *v = k as f64 / 4.0;
            }
        }
        trace.levels[2][n / 2] += 1e-3;
        let e = nodal_errors(&trace, &exact);
        assert!((e.max - 1e-3).abs() < 1e-15);
        assert_eq!(e.per_level[1], 0.0);
    }

    #[test]
    fn solver_failure_names_the_level() {
        let mesh = TemporalMesh::uniform(1.0, 3).unwrap();
        let mut p = EvolutionProblem::manufactured(
            0.5,
            mesh,
            fd_laplace(2, 8),
            Arc::new(|_: &[f64], _| 1.0),
            Arc::new(|_: &[f64], _| 0.0),
        );
        p.options.solver.max_iter = 1;
        p.options.solver.tol = 1e-15;
        match evolve(&p) {
            Err(Error::Step { level, .. }) => assert_eq!(level, 1),
            other => panic!("expected a step error, got {other:?}"),
        }
    }

    #[test]
    fn fem_mass_weights_l2() {
        let mesh = Triangulation::structured(4).unwrap();
        let sys = assemble_fem(&mesh, &(Arc::new(|_: &[f64]| 0.0) as SpaceFn)).unwrap();
        let space = SpatialSystem::Fem(sys);
        assert_eq!(space.dim(), 2);
        assert!(space.l2_weights().iter().all(|&w| (w - 1.0 / 16.0).abs() < 1e-15));
    }
}
