//! Convergence studies: JSON study configs, the manufactured-solution
//! registry, refinement sweeps, rate estimation and table emitters.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis_checks::CheckRow;
use crate::caputo_l1::Summation;
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::fd_space::{assemble_fd_with, AdmissibilityPolicy, FdCoefficients, SpaceFn, TensorGrid};
use crate::fem_space::{assemble_fem_with, check_a_infty, check_delaunay, import_mesh, Triangulation};
use crate::linalg::SolverOptions;
use crate::scalar_solver::{self, ExactScalar, ScalarProblem, DEFAULT_PSI_SAMPLES};
use crate::special_fn::gamma;
use crate::temporal_mesh::TemporalMesh;
use crate::time_stepper::{evolve, EvolutionProblem, EvolveOptions, SpaceTimeFn, SpatialSystem};

/// Errors at or below this level carry no rate information.
pub const ROUNDOFF_FLOOR: f64 = 1e-11;

pub const MANUFACTURED_NAMES: [&str; 6] = [
    "t_alpha",
    "t_alpha_plus_t",
    "t_2alpha",
    "linear",
    "t_alpha_sinsin",
    "t_alpha_cosxy",
];

/// Constant coefficients of `L = −a Δ + b·∇ + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstCoefficients {
    #[serde(default = "one")]
    pub diffusion: f64,
    /// Empty means zero in every direction.
    #[serde(default)]
    pub convection: Vec<f64>,
    #[serde(default)]
    pub reaction: f64,
}

impl Default for ConstCoefficients {
    fn default() -> Self {
        Self {
            diffusion: 1.0,
            convection: Vec::new(),
            reaction: 0.0,
        }
    }
}

impl ConstCoefficients {
    fn convection_in(&self, dim: usize) -> Result<Vec<f64>> {
        match self.convection.len() {
            0 => Ok(vec![0.0; dim]),
            n if n == dim => Ok(self.convection.clone()),
            n => Err(Error::Config {
                path: "spatial.coefficients.convection".into(),
                msg: format!("expected {dim} entries, found {n}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SpacePart {
    Constant,
    SinProduct,
    CosXY,
}

/// `u(x, t) = φ(t) X(x)` with `φ(t) = Σ c_k t^{β_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub name: &'static str,
    pub alpha: f64,
    /// `(c_k, β_k)` with `β_k = 0` or `β_k >= α`.
    terms: Vec<(f64, f64)>,
    /// `c_k Γ(1+β_k)/Γ(1+β_k−α)`, zero for constants.
    caputo_coeffs: Vec<f64>,
    space: SpacePart,
}

pub fn manufactured(name: &str, alpha: f64) -> Result<Manufactured> {
    crate::caputo_l1::check_alpha(alpha)?;
    let (name, terms, space) = match name {
        "t_alpha" => ("t_alpha", vec![(1.0, alpha)], SpacePart::Constant),
        "t_alpha_plus_t" => ("t_alpha_plus_t", vec![(1.0, alpha), (1.0, 1.0)], SpacePart::Constant),
        "t_2alpha" => ("t_2alpha", vec![(1.0, 2.0 * alpha)], SpacePart::Constant),
        "linear" => ("linear", vec![(1.0, 0.0), (1.0, 1.0)], SpacePart::Constant),
        "t_alpha_sinsin" => ("t_alpha_sinsin", vec![(1.0, alpha)], SpacePart::SinProduct),
        "t_alpha_cosxy" => ("t_alpha_cosxy", vec![(1.0, alpha)], SpacePart::CosXY),
        other => {
            return Err(Error::Config {
                path: "solution".into(),
                msg: format!("unknown manufactured solution `{other}`; known: {}", MANUFACTURED_NAMES.join(", ")),
            })
        }
    };
    let caputo_coeffs = terms
        .iter()
        .map(|&(c, b)| {
            if b == 0.0 {
                Ok(0.0)
            } else {
                Ok(c * gamma(1.0 + b)? / gamma(1.0 + b - alpha)?)
            }
        })
        .collect::<Result<_>>()?;
    Ok(Manufactured {
        name,
        alpha,
        terms,
        caputo_coeffs,
        space,
    })
}

impl Manufactured {
    pub fn is_spatially_constant(&self) -> bool {
        self.space == SpacePart::Constant
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(c, b)| if b == 0.0 { c } else { c * t.powf(b) }).sum()
    }

    pub fn dphi(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .filter(|&&(_, b)| b != 0.0)
            .map(|&(c, b)| c * b * t.powf(b - 1.0))
            .sum()
    }

    pub fn d2phi(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .filter(|&&(_, b)| b != 0.0 && b != 1.0)
            .map(|&(c, b)| c * b * (b - 1.0) * t.powf(b - 2.0))
            .sum()
    }

    /// `D_t^α φ(t) = Σ c_k Γ(1+β_k)/Γ(1+β_k−α) t^{β_k−α}`.
    pub fn caputo_phi(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .zip(&self.caputo_coeffs)
            .map(|(&(_, b), &g)| match b {
                0.0 => 0.0,
                b if b == self.alpha => g,
                b => g * t.powf(b - self.alpha),
            })
            .sum()
    }

    pub fn space_value(&self, x: &[f64]) -> f64 {
        match self.space {
            SpacePart::Constant => 1.0,
            SpacePart::SinProduct => x.iter().map(|&xi| (PI * xi).sin()).product(),
            SpacePart::CosXY => (x[0] * x[1]).cos(),
        }
    }

    /// `(−a Δ + b·∇ + c) X` at `x`.
    pub fn space_operator(&self, x: &[f64], a: f64, b: &[f64], c: f64) -> f64 {
        let v = self.space_value(x);
        let (lap, grad): (f64, Vec<f64>) = match self.space {
            SpacePart::Constant => (0.0, vec![0.0; x.len()]),
            SpacePart::SinProduct => {
                let grad = (0..x.len())
                    .map(|i| {
                        PI * (PI * x[i]).cos()
                            * (0..x.len()).filter(|&k| k != i).map(|k| (PI * x[k]).sin()).product::<f64>()
                    })
                    .collect();
                (-(x.len() as f64) * PI * PI * v, grad)
            }
            SpacePart::CosXY => {
                let s = (x[0] * x[1]).sin();
                (-(x[0] * x[0] + x[1] * x[1]) * v, vec![-x[1] * s, -x[0] * s])
            }
        };
        -a * lap + b.iter().zip(&grad).map(|(bi, gi)| bi * gi).sum::<f64>() + c * v
    }

    pub fn exact_fn(&self) -> SpaceTimeFn {
        let me = self.clone();
        Arc::new(move |x, t| me.phi(t) * me.space_value(x))
    }

    /// `f = D_t^α φ · X + φ · L X` for constant coefficients.
    pub fn source_fn(&self, coeffs: &ConstCoefficients, dim: usize) -> Result<SpaceTimeFn> {
        let me = self.clone();
        let b = coeffs.convection_in(dim)?;
        let (a, c) = (coeffs.diffusion, coeffs.reaction);
        Ok(Arc::new(move |x, t| {
            me.caputo_phi(t) * me.space_value(x) + me.phi(t) * me.space_operator(x, a, &b, c)
        }))
    }

    /// `D_t^α u = f(t)` with `u = φ`; only for spatially constant solutions.
    pub fn scalar_problem(&self) -> Result<ScalarProblem> {
        if !self.is_spatially_constant() {
            return Err(Error::Config {
                path: "solution".into(),
                msg: format!("`{}` varies in space and needs an fd or fem spatial spec", self.name),
            });
        }
        let (f, u, du, d2u) = (self.clone(), self.clone(), self.clone(), self.clone());
        Ok(ScalarProblem::new(self.alpha, self.phi(0.0), move |t| f.caputo_phi(t)).with_exact(ExactScalar {
            u: Arc::new(move |t| u.phi(t)),
            du: Some(Arc::new(move |t| du.dphi(t))),
            d2u: Some(Arc::new(move |t| d2u.d2phi(t))),
        }))
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradingRule {
    Optimal,
}

/// A grading exponent `r`, or `"optimal"` for `r = (2−α)/α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grading {
    Value(f64),
    Rule(GradingRule),
}

impl Default for Grading {
    fn default() -> Self {
        Self::Rule(GradingRule::Optimal)
    }
}

impl Grading {
    pub fn resolve(self, alpha: f64) -> f64 {
        match self {
            Self::Value(r) => r,
            Self::Rule(GradingRule::Optimal) => (2.0 - alpha) / alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshSource {
    /// Structured unit-square meshes with these interval counts.
    Structured(Vec<usize>),
    /// A mesh file in the `V F` text format.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpatialSpec {
    Scalar,
    Fd {
        dim: usize,
        intervals: Vec<usize>,
        #[serde(default)]
        coefficients: ConstCoefficients,
    },
    Fem {
        mesh: MeshSource,
        #[serde(default)]
        reaction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Refine `M` at fixed spatial resolution.
    Time,
    /// Refine `N` at fixed `M`.
    Space,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
    pub plotdata: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub kahan: bool,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            kahan: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckToggles {
    /// Abort instead of warn when the FD grid violates the admissibility bound.
    #[serde(default)]
    pub strict_admissibility: bool,
    /// ψ indicator maxima per row (scalar studies).
    #[serde(default)]
    pub psi: bool,
    /// A_∞ sign check per mesh (FEM studies).
    #[serde(default)]
    pub a_infty: bool,
    #[serde(default)]
    pub delaunay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub alpha: f64,
    #[serde(default = "one", rename = "T")]
    pub t_final: f64,
    #[serde(default, rename = "r")]
    pub grading: Grading,
    #[serde(rename = "M")]
    pub steps: Vec<usize>,
    pub spatial: SpatialSpec,
    pub solution: String,
    /// Inferred from which list has more than one entry when absent.
    #[serde(default)]
    pub sweep: Option<SweepKind>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: CheckToggles,
}

fn config_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

fn check_refinement_list(path: &str, list: &[usize], min: usize) -> Result<()> {
    if list.is_empty() {
        return Err(config_err(path, "must not be empty"));
    }
    for (k, &v) in list.iter().enumerate() {
        if v < min {
            return Err(config_err(format!("{path}[{k}]"), format!("must be >= {min}, got {v}")));
        }
        if k > 0 && v <= list[k - 1] {
            return Err(config_err(format!("{path}[{k}]"), "list must be strictly increasing"));
        }
    }
    Ok(())
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => config_err(path.display().to_string(), j.to_string()),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(config_err("T", format!("must be positive, got {}", self.t_final)));
        }
        let r = self.grading.resolve(self.alpha);
        if !(r >= 1.0 && r.is_finite()) {
            return Err(config_err("r", format!("grading must be >= 1, got {r}")));
        }
        check_refinement_list("M", &self.steps, 2)?;
        let sol = manufactured(&self.solution, self.alpha)?;
        match &self.spatial {
            SpatialSpec::Scalar => {
                sol.scalar_problem()?;
            }
            SpatialSpec::Fd {
                dim,
                intervals,
                coefficients,
            } => {
                if !(1..=3).contains(dim) {
                    return Err(config_err("spatial.dim", format!("must be 1, 2 or 3, got {dim}")));
                }
                check_refinement_list("spatial.intervals", intervals, 2)?;
                coefficients.convection_in(*dim)?;
                if !(coefficients.diffusion > 0.0) {
                    return Err(config_err("spatial.coefficients.diffusion", "must be positive"));
                }
                if coefficients.reaction < 0.0 {
                    return Err(config_err("spatial.coefficients.reaction", "must be >= 0"));
                }
                if sol.space == SpacePart::CosXY && *dim != 2 {
                    return Err(config_err("solution", "t_alpha_cosxy needs dim = 2"));
                }
            }
            SpatialSpec::Fem { mesh, reaction } => {
                if let MeshSource::Structured(ns) = mesh {
                    check_refinement_list("spatial.mesh.structured", ns, 2)?;
                }
                if *reaction < 0.0 {
                    return Err(config_err("spatial.reaction", "must be >= 0"));
                }
            }
        }
        self.sweep_kind()?;
        Ok(())
    }

    fn spatial_len(&self) -> usize {
        match &self.spatial {
            SpatialSpec::Scalar => 1,
            SpatialSpec::Fd { intervals, .. } => intervals.len(),
            SpatialSpec::Fem {
                mesh: MeshSource::Structured(ns),
                ..
            } => ns.len(),
            SpatialSpec::Fem { .. } => 1,
        }
    }

    pub fn sweep_kind(&self) -> Result<SweepKind> {
        let (nm, ns) = (self.steps.len(), self.spatial_len());
        let kind = match self.sweep {
            Some(k) => k,
            None if ns > 1 && nm > 1 => {
                return Err(config_err("sweep", "both M and the spatial list vary; set `sweep` to `time` or `space`"))
            }
            None if ns > 1 => SweepKind::Space,
            None => SweepKind::Time,
        };
        match kind {
            SweepKind::Time if ns != 1 => Err(config_err("spatial", "a time sweep needs exactly one spatial resolution")),
            SweepKind::Space if nm != 1 => Err(config_err("M", "a space sweep needs exactly one M")),
            SweepKind::Space if matches!(self.spatial, SpatialSpec::Scalar) => {
                Err(config_err("sweep", "scalar problems have no spatial refinement"))
            }
            SweepKind::Space if matches!(self.spatial, SpatialSpec::Fem { mesh: MeshSource::File(_), .. }) => {
                Err(config_err("sweep", "a mesh file gives a single spatial resolution"))
            }
            k => Ok(k),
        }
    }

    /// Sweep values in order.
    pub fn params(&self) -> Result<Vec<usize>> {
        Ok(match self.sweep_kind()? {
            SweepKind::Time => self.steps.clone(),
            SweepKind::Space => match &self.spatial {
                SpatialSpec::Fd { intervals, .. } => intervals.clone(),
                SpatialSpec::Fem {
                    mesh: MeshSource::Structured(ns),
                    ..
                } => ns.clone(),
                _ => unreachable!("rejected by sweep_kind"),
            },
        })
    }

    pub fn default_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("alpha={}", self.alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub param: usize,
    pub err_max: f64,
    pub err_l2: f64,
    /// Rate from the previous row to this one.
    pub rate_max: Option<f64>,
    pub rate_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub label: String,
    pub sweep: SweepKind,
    pub rows: Vec<ReportRow>,
    pub checks: Vec<CheckRow>,
    /// Human-readable flags, e.g. rates suppressed at round-off level.
    pub notes: Vec<String>,
}

/// `log2(e_coarse / e_fine)`.
pub fn estimate_rate(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0 && e_fine > 0.0) {
        return Err(Error::Domain(format!(
            "rates need positive errors, got ({e_coarse}, {e_fine})"
        )));
    }
    Ok((e_coarse / e_fine).log2())
}

impl ConvergenceReport {
    /// Builds rows and fills the rates between consecutive parameters with
    /// ratio 2. Pairs whose finer error is at round-off level get no rate.
    pub fn from_errors(label: String, sweep: SweepKind, errors: &[(usize, f64, f64)]) -> Self {
        let mut notes = Vec::new();
        let mut rows: Vec<ReportRow> = Vec::with_capacity(errors.len());
        for (k, &(param, err_max, err_l2)) in errors.iter().enumerate() {
            let mut row = ReportRow {
                param,
                err_max,
                err_l2,
                rate_max: None,
                rate_l2: None,
            };
            if k > 0 {
                let (p0, m0, l0) = errors[k - 1];
                if param == 2 * p0 {
                    if err_max <= ROUNDOFF_FLOOR || m0 <= ROUNDOFF_FLOOR {
                        notes.push(format!("{p0}->{param}: errors at round-off level, rate not meaningful"));
                    } else {
                        row.rate_max = estimate_rate(m0, err_max).ok();
                        row.rate_l2 = estimate_rate(l0, err_l2).ok();
                    }
                }
            }
            rows.push(row);
        }
        Self {
            label,
            sweep,
            rows,
            checks: Vec::new(),
            notes,
        }
    }

    pub fn finest_rate(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.rate_max)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate_max).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Policy for the sweep and for the kernels inside each run.
    pub policy: ExecPolicy,
}

pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    run_study_with(cfg, RunOptions::default())
}

struct RunOutcome {
    err_max: f64,
    err_l2: f64,
    checks: Vec<CheckRow>,
}

pub fn run_study_with(cfg: &StudyConfig, run: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let kind = cfg.sweep_kind()?;
    let params = cfg.params()?;
    let sol = manufactured(&cfg.solution, cfg.alpha)?;
    let r = cfg.grading.resolve(cfg.alpha);
    let file_mesh = match &cfg.spatial {
        SpatialSpec::Fem {
            mesh: MeshSource::File(p),
            ..
        } => Some(import_mesh(&std::fs::read_to_string(p)?)?),
        _ => None,
    };
    let outcomes = exec::map_collect(run.policy, &params, |&p| {
        let (steps, n) = match kind {
            SweepKind::Time => (p, None),
            SweepKind::Space => (cfg.steps[0], Some(p)),
        };
        run_single(cfg, &sol, r, steps, n, file_mesh.as_ref(), run.policy)
    });
    let mut errors = Vec::with_capacity(params.len());
    let mut checks = Vec::new();
    for (p, out) in params.iter().zip(outcomes) {
        let out = out?;
        errors.push((*p, out.err_max, out.err_l2));
        // a temporal sweep re-checks the same mesh once per M
        for row in out.checks {
            if !checks.contains(&row) {
                checks.push(row);
            }
        }
    }
    let mut report = ConvergenceReport::from_errors(cfg.default_label(), kind, &errors);
    report.checks = checks;
    Ok(report)
}

fn first(list: &[usize]) -> usize {
    list[0]
}

fn run_single(
    cfg: &StudyConfig,
    sol: &Manufactured,
    r: f64,
    steps: usize,
    n: Option<usize>,
    file_mesh: Option<&Triangulation>,
    policy: ExecPolicy,
) -> Result<RunOutcome> {
    let mesh = TemporalMesh::graded(cfg.t_final, steps, r)?;
    let mut checks = Vec::new();
    let options = EvolveOptions {
        solver: SolverOptions {
            tol: cfg.solver.tol,
            max_iter: cfg.solver.max_iter,
            policy,
        },
        store_every: steps,
        policy,
        summation: if cfg.solver.kahan { Summation::Kahan } else { Summation::Plain },
    };
    let space = match &cfg.spatial {
        SpatialSpec::Scalar => {
            let problem = sol.scalar_problem()?;
            let op = crate::L1Operator::new(cfg.alpha, mesh.clone())?.with_summation(options.summation);
            let u = scalar_solver::solve_with(&op, &problem);
            let e = scalar_solver::max_nodal_error(&problem, &mesh, &u)?;
            if cfg.checks.psi {
                let psi = scalar_solver::psi_indicators(&problem, &mesh, DEFAULT_PSI_SAMPLES)?;
                checks.push(CheckRow {
                    check: "psi_max",
                    params: format!("M={steps}"),
                    value: psi.max(),
                    pass: psi.max().is_finite(),
                });
            }
            return Ok(RunOutcome {
                err_max: e,
                err_l2: e,
                checks,
            });
        }
        SpatialSpec::Fd {
            dim,
            intervals,
            coefficients,
        } => {
            let grid = TensorGrid::new(*dim, n.unwrap_or_else(|| first(intervals)))?;
            let b = coefficients.convection_in(*dim)?;
            let coeffs = FdCoefficients::constant(*dim, coefficients.diffusion, &b, coefficients.reaction)?;
            let adm = if cfg.checks.strict_admissibility {
                AdmissibilityPolicy::Fail
            } else {
                AdmissibilityPolicy::Warn
            };
            let op = assemble_fd_with(grid, &coeffs, adm, policy)?;
            if !op.admissibility.satisfied {
                checks.push(CheckRow {
                    check: "fd_admissibility",
                    params: format!("N={}", grid.intervals()),
                    value: op.admissibility.bound - op.admissibility.inv_h,
                    pass: false,
                });
            }
            SpatialSystem::Fd(op)
        }
        SpatialSpec::Fem { mesh: source, reaction } => {
            let tri = match (source, file_mesh) {
                (_, Some(m)) => m.clone(),
                (MeshSource::Structured(ns), None) => Triangulation::structured(n.unwrap_or_else(|| first(ns)))?,
                (MeshSource::File(_), None) => unreachable!("file mesh loaded by caller"),
            };
            let c = *reaction;
            let reaction_fn: SpaceFn = Arc::new(move |_: &[f64]| c);
            let sys = assemble_fem_with(&tri, &reaction_fn, policy)?;
            let tag = format!("vertices={}", tri.vertices().len());
            if cfg.checks.a_infty {
                let k11 = crate::L1Operator::new(cfg.alpha, mesh.clone())?.diag(1);
                let rep = check_a_infty(&sys, k11);
                checks.push(CheckRow {
                    check: "a_infty",
                    params: tag.clone(),
                    value: rep.worst_offdiag,
                    pass: rep.pass,
                });
            }
            if cfg.checks.delaunay {
                let rep = check_delaunay(&tri);
                checks.push(CheckRow {
                    check: "delaunay",
                    params: tag,
                    value: rep.worst,
                    pass: rep.pass,
                });
            }
            SpatialSystem::Fem(sys)
        }
    };
    let coeffs = match &cfg.spatial {
        SpatialSpec::Fd { coefficients, .. } => coefficients.clone(),
        SpatialSpec::Fem { reaction, .. } => ConstCoefficients {
            reaction: *reaction,
            ..ConstCoefficients::default()
        },
        SpatialSpec::Scalar => unreachable!("handled above"),
    };
    let source = sol.source_fn(&coeffs, space.dim())?;
    let problem =
        EvolutionProblem::manufactured(cfg.alpha, mesh, space, source, sol.exact_fn()).with_options(options);
    let trace = evolve(&problem)?;
    let errors = trace.errors.expect("manufactured problems carry an exact solution");
    Ok(RunOutcome {
        err_max: errors.max,
        err_l2: errors.l2,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
    Plotdata,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "plotdata" => Ok(Self::Plotdata),
            other => Err(Error::InvalidParameter(format!(
                "unknown format `{other}`; expected csv, markdown or plotdata"
            ))),
        }
    }
}

pub const CSV_HEADER: &str = "param,err_max,err_l2,rate_max,rate_l2";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders one or more reports. CSV and plotdata concatenate; markdown puts
/// every report in one table, errors on one row and rates beneath.
pub fn render(reports: &[ConvergenceReport], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => render_csv(reports),
        OutputFormat::Markdown => render_markdown(reports),
        OutputFormat::Plotdata => render_plotdata(reports),
    }
}

fn render_csv(reports: &[ConvergenceReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in reports.iter().flat_map(|r| &r.rows) {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.param,
            row.err_max,
            row.err_l2,
            opt(row.rate_max),
            opt(row.rate_l2)
        );
    }
    s
}

fn render_markdown(reports: &[ConvergenceReport]) -> String {
    let symbol = |r: &ConvergenceReport| match r.sweep {
        SweepKind::Time => "M",
        SweepKind::Space => "N",
    };
    let mut params: Vec<(usize, &str)> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !params.contains(&(row.param, symbol(r))) {
                params.push((row.param, symbol(r)));
            }
        }
    }
    let mut s = String::from("| |");
    for (p, sym) in &params {
        let _ = write!(s, " {sym}={p} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(params.len()));
    s.push('\n');
    for r in reports {
        let cell = |p: (usize, &str)| r.rows.iter().position(|row| row.param == p.0 && symbol(r) == p.1);
        let _ = write!(s, "| {} |", r.label);
        for &p in &params {
            match cell(p) {
                Some(k) => {
                    let _ = write!(s, " {} |", sci(r.rows[k].err_max));
                }
                None => s.push_str(" |"),
            }
        }
        s.push_str("\n| |");
        // the rate from column k to k+1 sits under column k
        for &p in &params {
            let rate = cell(p).and_then(|k| r.rows.get(k + 1)).and_then(|row| row.rate_max);
            match rate {
                Some(q) => {
                    let _ = write!(s, " {q:.3} |");
                }
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}

/// `4.157e-4` style.
fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

fn render_plotdata(reports: &[ConvergenceReport]) -> String {
    let mut s = String::new();
    for r in reports {
        for (name, pick) in [("err_max", 0), ("err_l2", 1)] {
            let _ = writeln!(s, "# {} {name}: log10(param) log10(error)", r.label);
            for row in &r.rows {
                let e = if pick == 0 { row.err_max } else { row.err_l2 };
                if e > 0.0 {
                    let _ = writeln!(s, "{} {}", (row.param as f64).log10(), e.log10());
                }
            }
            s.push('\n');
        }
    }
    s
}

pub fn emit(reports: &[ConvergenceReport], format: OutputFormat, out: &mut dyn std::io::Write) -> Result<()> {
    out.write_all(render(reports, format).as_bytes())?;
    Ok(())
}

pub fn emit_to_path(reports: &[ConvergenceReport], format: OutputFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(reports, format))?;
    Ok(())
}

/// Writes every output named in the config.
pub fn emit_configured(report: &ConvergenceReport, outputs: &Outputs) -> Result<()> {
    let reports = std::slice::from_ref(report);
    for (path, format) in [
        (&outputs.csv, OutputFormat::Csv),
        (&outputs.markdown, OutputFormat::Markdown),
        (&outputs.plotdata, OutputFormat::Plotdata),
    ] {
        if let Some(p) = path {
            emit_to_path(reports, format, p)?;
        }
    }
    Ok(())
}

/// Parses CSV produced by [`render`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (k, l) in lines {
        let line = k + 1;
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 5 fields, found {}", f.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{s}`"),
            })
        };
        let opt_num = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        rows.push(ReportRow {
            param: f[0].trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{}`", f[0]),
            })?,
            err_max: num(f[1])?,
            err_l2: num(f[2])?,
            rate_max: opt_num(f[3])?,
            rate_l2: opt_num(f[4])?,
        });
    }
    Ok(rows)
}
