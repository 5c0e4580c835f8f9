mod common;

use std::sync::Arc;

use common::fields::random_coefficients;
use fracl1::fd_space::{assemble_fd, AdmissibilityPolicy, FdCoefficients, SpaceFn, TensorGrid};
use fracl1::fem_space::{assemble_fem, Triangulation};
use fracl1::harness::{
    manufactured, parse_csv, render, run_study_with, ConstCoefficients, ConvergenceReport, OutputFormat, RunOptions,
    StudyConfig, SweepKind,
};
use fracl1::scalar_solver::{self, max_nodal_error, psi_indicators};
use fracl1::time_stepper::{evolve, EvolutionProblem, SpatialSystem};
use fracl1::{ExecPolicy, TemporalMesh};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fd_space(dim: usize, n: usize, coeffs: &FdCoefficients) -> SpatialSystem {
    SpatialSystem::Fd(assemble_fd(TensorGrid::new(dim, n).unwrap(), coeffs, AdmissibilityPolicy::Fail).unwrap())
}

/// FD problem whose data are spatially constant and whose Dirichlet values
/// are the scalar L1 solution `V^m`, so every node should reproduce `V^m`.
fn collapsed_problem(alpha: f64, mesh: &TemporalMesh, space: SpatialSystem, name: &str) -> (EvolutionProblem, Vec<f64>) {
    let sol = manufactured(name, alpha).unwrap();
    let scalar = scalar_solver::solve(&sol.scalar_problem().unwrap(), mesh).unwrap();
    let dim = space.dim();
    let source = sol.source_fn(&ConstCoefficients::default(), dim).unwrap();
    let mut p = EvolutionProblem::manufactured(alpha, mesh.clone(), space, source, sol.exact_fn());
    let (values, nodes) = (scalar.clone(), mesh.clone());
    p.boundary = Arc::new(move |_: &[f64], t| values[nodes.node_index(t).expect("boundary sampled at nodes")]);
    p.options.solver.tol = 1e-13;
    (p, scalar)
}

fn collapse_gap(alpha: f64, r: f64, dim: usize, coeffs: &FdCoefficients) -> f64 {
    let mesh = TemporalMesh::graded(1.0, 24, r).unwrap();
    let (p, scalar) = collapsed_problem(alpha, &mesh, fd_space(dim, 6, coeffs), "t_alpha_plus_t");
    let trace = evolve(&p).unwrap();
    trace
        .levels
        .iter()
        .zip(&scalar)
        .flat_map(|(lvl, v)| lvl.iter().map(move |u| (u - v).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dimensional_collapse(alpha in 0.1f64..0.9, r in 1.0f64..4.0, dim in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // c = 0 keeps constants in the kernel; convection is harmless for them
        let mut coeffs = random_coefficients(dim, 4.0, 0.0, &mut rng);
        coeffs.reaction = Arc::new(|_: &[f64]| 0.0);
        let gap = collapse_gap(alpha, r, dim, &coeffs);
        prop_assert!(gap < 1e-9, "gap {gap}");
    }

    #[test]
    fn discrete_maximum_principle(seed in any::<u64>(), dim in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = random_coefficients(dim, 8.0, 3.0, &mut rng);
        let (f0, g0, u0) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let p = EvolutionProblem {
            alpha: rng.gen_range(0.1..0.9),
            mesh: TemporalMesh::graded(1.0, 20, rng.gen_range(1.0..4.0)).unwrap(),
            space: fd_space(dim, 8, &coeffs),
            source: Arc::new(move |x: &[f64], t| f0 * (1.0 + (5.0 * x[0] + t).sin())),
            boundary: Arc::new(move |x: &[f64], t| g0 * t * x[0]),
            initial: Arc::new(move |x: &[f64]| u0 * x[0] * (1.0 - x[0])),
            exact: None,
            options: Default::default(),
        };
        let trace = evolve(&p).unwrap();
        prop_assert!(trace.levels.iter().flatten().all(|&v| v >= -1e-12));
    }

    #[test]
    fn csv_roundtrip(errs in proptest::collection::vec((1e-300f64..1e3, 1e-300f64..1e3), 0..12)) {
        let rows: Vec<(usize, f64, f64)> = errs.iter().enumerate().map(|(k, &(a, b))| (4usize << k, a, b)).collect();
        let report = ConvergenceReport::from_errors("p".into(), SweepKind::Time, &rows);
        let back = parse_csv(&render(std::slice::from_ref(&report), OutputFormat::Csv)).unwrap();
        prop_assert_eq!(back, report.rows);
    }
}

#[test]
fn fem_on_structured_mesh_matches_fd() {
    let n = 12;
    let alpha = 0.4;
    let sol = manufactured("t_alpha_cosxy", alpha).unwrap();
    let source = sol.source_fn(&ConstCoefficients::default(), 2).unwrap();
    let mesh = TemporalMesh::graded(1.0, 32, (2.0 - alpha) / alpha).unwrap();
    let zero: SpaceFn = Arc::new(|_: &[f64]| 0.0);
    let fem = SpatialSystem::Fem(assemble_fem(&Triangulation::structured(n).unwrap(), &zero).unwrap());
    let fd = fd_space(2, n, &FdCoefficients::laplacian(2));
    let run = |space: SpatialSystem| {
        let mut p = EvolutionProblem::manufactured(alpha, mesh.clone(), space, source.clone(), sol.exact_fn());
        p.options.solver.tol = 1e-14;
        evolve(&p).unwrap()
    };
    let (a, b) = (run(fem), run(fd));
    let gap = a
        .levels
        .iter()
        .flatten()
        .zip(b.levels.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap}");
}

// With exact Dirichlet values the interior error of a sin mode is damped by
// the elliptic part and decays faster; compatible data isolate the temporal
// profile.
#[test]
fn uniform_mesh_profile_follows_t_alpha_minus_one() {
    let steps = 256;
    for alpha in [0.3, 0.5, 0.7] {
        let mesh = TemporalMesh::uniform(1.0, steps).unwrap();
        let space = fd_space(2, 8, &FdCoefficients::laplacian(2));
        let (p, _) = collapsed_problem(alpha, &mesh, space, "t_alpha");
        let trace = evolve(&p).unwrap();
        let e = trace.errors.unwrap();
        let pts: Vec<(f64, f64)> = (steps / 8..=steps / 2)
            .map(|m| ((m as f64 / steps as f64).ln(), e.per_level[m].ln()))
            .collect();
        let n = pts.len() as f64;
        let (xm, ym) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - xm).powi(2)).sum::<f64>();
        assert!((slope - (alpha - 1.0)).abs() < 0.2, "alpha={alpha}: slope {slope}");
    }
}

#[test]
fn error_over_psi_ratio_is_mesh_independent() {
    for name in ["t_alpha", "t_alpha_plus_t", "t_2alpha"] {
        for alpha in [0.3, 0.5, 0.7] {
            let problem = manufactured(name, alpha).unwrap().scalar_problem().unwrap();
            for r in [1.0, 2.0, (2.0 - alpha) / alpha] {
                let mut ratios = Vec::new();
                for steps in [32, 64, 128, 256, 512, 1024] {
                    let mesh = TemporalMesh::graded(1.0, steps, r).unwrap();
                    let u = scalar_solver::solve(&problem, &mesh).unwrap();
                    let err = max_nodal_error(&problem, &mesh, &u).unwrap();
                    let psi = psi_indicators(&problem, &mesh, scalar_solver::DEFAULT_PSI_SAMPLES).unwrap().max();
                    if psi < 1e-13 {
                        // t^{2α} with α = 1/2 is linear: no truncation, no error
                        assert!(err < 1e-12, "{name} alpha={alpha} r={r}: {err}");
                    } else {
                        ratios.push(err / psi);
                    }
                }
                if ratios.is_empty() {
                    continue;
                }
                let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ratios.iter().copied().fold(0.0, f64::max);
                let c = 0.5 * (lo + hi);
                assert!(
                    ratios.iter().all(|q| (q / c - 1.0).abs() <= 0.2),
                    "{name} alpha={alpha} r={r}: {ratios:?}"
                );
            }
        }
    }
}

#[test]
fn psi_max_rates_track_error_rates() {
    let alpha = 0.5;
    let problem = manufactured("t_alpha", alpha).unwrap().scalar_problem().unwrap();
    for (r, want) in [(3.0, 2.0 - alpha), (1.5, 1.5 * alpha)] {
        let psi = |m| psi_indicators(&problem, &TemporalMesh::graded(1.0, m, r).unwrap(), 16).unwrap().max();
        let q = (psi(512) / psi(1024)).log2();
        assert!((q - want).abs() < 0.15, "r={r}: {q}");
    }
}

fn study(json: &str) -> StudyConfig {
    StudyConfig::from_json(json).unwrap()
}

#[test]
fn identical_configs_give_identical_csv() {
    let cfg = study(
        r#"{"alpha": 0.6, "M": [8, 16, 32], "solution": "t_alpha_sinsin",
            "spatial": {"kind": "fd", "dim": 2, "intervals": [10],
                        "coefficients": {"convection": [1.0, -2.0], "reaction": 0.5}}}"#,
    );
    let csv = |policy| {
        render(
            &[run_study_with(&cfg, RunOptions { policy }).unwrap()],
            OutputFormat::Csv,
        )
    };
    let a = csv(ExecPolicy::Sequential);
    assert_eq!(a, csv(ExecPolicy::Sequential));
    assert_eq!(a, csv(ExecPolicy::Parallel));
}

#[test]
fn fem_study_from_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.mesh");
    std::fs::write(&path, Triangulation::structured(8).unwrap().to_text()).unwrap();
    let cfg = study(&format!(
        r#"{{"alpha": 0.5, "M": [8, 16], "solution": "t_alpha_cosxy",
             "spatial": {{"kind": "fem", "mesh": {{"file": {:?}}}}},
             "checks": {{"a_infty": true, "delaunay": true}}}}"#,
        path
    ));
    let from_file = run_study_with(&cfg, RunOptions::default()).unwrap();
    let structured = run_study_with(
        &study(
            r#"{"alpha": 0.5, "M": [8, 16], "solution": "t_alpha_cosxy",
                "spatial": {"kind": "fem", "mesh": {"structured": [8]}}}"#,
        ),
        RunOptions::default(),
    )
    .unwrap();
    assert_eq!(from_file.rows, structured.rows);
    assert_eq!(from_file.checks.len(), 2);
    assert!(from_file.checks.iter().all(|c| c.pass));
}

#[test]
fn fd_spatial_sweep_is_second_order() {
    let report = run_study_with(
        &study(
            r#"{"alpha": 0.5, "M": [256], "solution": "t_alpha_sinsin",
                "spatial": {"kind": "fd", "dim": 1, "intervals": [8, 16, 32]}}"#,
        ),
        RunOptions::default(),
    )
    .unwrap();
    assert!(report.rates().iter().all(|q| (q - 2.0).abs() < 0.1), "{:?}", report.rates());
}
