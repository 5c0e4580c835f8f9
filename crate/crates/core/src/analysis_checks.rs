//! Numerical certificates for the stability properties of the L1 operator.
//!
//! * explicit-constant stability on arbitrary meshes:
//!   `|V^m − V^0| ≤ Γ(1−α) max_j t_j^α |δ_t^α V^j|`, which follows from
//!   `κ_{n,1} ≥ t_n^{−α}/Γ(1−α)`;
//! * a barrier `B(s) = min{(s/t_p) t_p^{−β}, s^{−β}}`, `β = 1−α`, with
//!   `δ_t^α B^j ≳ τ^α t_j^{−α−1}` on uniform meshes, which yields the
//!   `t_j^{α−1}` decay of solutions driven by `τ^γ t_j^{−γ−1}`;
//! * the comparison principle against the Riemann–Liouville integral of a
//!   piecewise-constant function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caputo_l1::{check_alpha, L1Operator};
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::special_fn::gamma;
use crate::temporal_mesh::TemporalMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `max_m |V^m − V^0|`
    pub lhs: f64,
    /// `Γ(1−α) max_j t_j^α |F^j|`
    pub rhs: f64,
    pub pass: bool,
}

/// Solves `δ_t^α V^j = F^j` from `V^0 = v0` and compares both sides of the
/// stability bound. `forcing[j-1] = F^j`.
pub fn check_lemma_stability(alpha: f64, mesh: &TemporalMesh, forcing: &[f64], v0: f64) -> Result<StabilityReport> {
    let op = L1Operator::new(alpha, mesh.clone())?;
    if forcing.len() != mesh.steps() {
        return Err(Error::LengthMismatch {
            expected: mesh.steps(),
            got: forcing.len(),
        });
    }
    let v = op.march(v0, |m| forcing[m - 1]);
    let lhs = v.iter().skip(1).map(|x| (x - v0).abs()).fold(0.0, f64::max);
    let rhs = gamma(1.0 - alpha)?
        * forcing
            .iter()
            .enumerate()
            .map(|(k, f)| mesh.t(k + 1).powf(alpha) * f.abs())
            .fold(0.0, f64::max);
    Ok(StabilityReport {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// Barrier anchored at `t_p` on the uniform mesh with `M` steps on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSpec {
    pub alpha: f64,
    pub anchor: usize,
    pub steps: usize,
    pub t_final: f64,
}

impl BarrierSpec {
    pub fn new(alpha: f64, anchor: usize, steps: usize, t_final: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if anchor < 2 || 2 * anchor > steps {
            return Err(Error::InvalidParameter(format!(
                "barrier anchor p must satisfy 2 <= p <= M/2, got p = {anchor}, M = {steps}"
            )));
        }
        Ok(Self {
            alpha,
            anchor,
            steps,
            t_final,
        })
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    /// `B(s) = min{(s/t_p) t_p^{−β}, s^{−β}}`.
    pub fn value(&self, s: f64, t_anchor: f64) -> f64 {
        let beta = self.beta();
        (s / t_anchor * t_anchor.powf(-beta)).min(s.powf(-beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierReport {
    /// `min_j δ_t^α B^j · t_j^{α+1} / τ^α`
    pub min_ratio: f64,
    /// `max_j B^j t_j^{1−α}`
    pub max_scaled: f64,
}

pub fn check_barrier(spec: &BarrierSpec) -> Result<BarrierReport> {
    let mesh = TemporalMesh::uniform(spec.t_final, spec.steps)?;
    let op = L1Operator::new(spec.alpha, mesh.clone())?;
    let tp = mesh.t(spec.anchor);
    let tau = mesh.tau(1);
    let b: Vec<f64> = mesh
        .nodes()
        .iter()
        .map(|&t| if t == 0.0 { 0.0 } else { spec.value(t, tp) })
        .collect();
    let mut scratch = Vec::with_capacity(spec.steps);
    let mut min_ratio = f64::INFINITY;
    let mut max_scaled = 0.0f64;
    for j in 1..=spec.steps {
        let t = mesh.t(j);
        let delta = op.diag(j) * b[j] - op.history_rhs(&b[..j], j, &mut scratch)?;
        min_ratio = min_ratio.min(delta * t.powf(spec.alpha + 1.0) / tau.powf(spec.alpha));
        max_scaled = max_scaled.max(b[j] * t.powf(spec.beta()));
    }
    Ok(BarrierReport {
        min_ratio,
        max_scaled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSweep {
    pub anchor: usize,
    /// one report per entry of the step sweep
    pub reports: Vec<BarrierReport>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierCertificate {
    pub alpha: f64,
    pub steps: Vec<usize>,
    pub sweeps: Vec<AnchorSweep>,
    /// smallest anchor whose sweep passes
    pub anchor: Option<usize>,
}

/// Scans anchors in order; an anchor passes when the minimum ratio is strictly
/// positive for every `M`, varies by at most a factor 2 across the sweep, and
/// `B^j t_j^{1−α} <= 1` throughout.
pub fn certify_barrier(alpha: f64, anchors: &[usize], steps: &[usize], t_final: f64) -> Result<BarrierCertificate> {
    let mut sweeps = Vec::with_capacity(anchors.len());
    for &p in anchors {
        let reports = steps
            .iter()
            .map(|&m| check_barrier(&BarrierSpec::new(alpha, p, m, t_final)?))
            .collect::<Result<Vec<_>>>()?;
        let lo = reports.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min);
        let hi = reports.iter().map(|r| r.min_ratio).fold(f64::NEG_INFINITY, f64::max);
        let bounded = reports.iter().all(|r| r.max_scaled <= 1.0 + 1e-12);
        let pass = lo > 0.0 && hi <= 2.0 * lo && bounded;
        sweeps.push(AnchorSweep {
            anchor: p,
            reports,
            pass,
        });
    }
    let anchor = sweeps.iter().find(|s| s.pass).map(|s| s.anchor);
    Ok(BarrierCertificate {
        alpha,
        steps: steps.to_vec(),
        sweeps,
        anchor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonVerdict {
    Pass,
    Fail,
    /// `δ_t^α V^j <= J^{1−α} λ̄(t_j)` did not hold, so nothing is asserted.
    HypothesisFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport {
    /// `max_j (δ_t^α V^j − J^{1−α} λ̄(t_j))`
    pub hypothesis_gap: f64,
    /// `max_m (V^m − V^0 − Σ_{j<=m} τ_j λ^j)`
    pub max_excess: f64,
    pub verdict: ComparisonVerdict,
}

/// `V` holds `V^0..V^M`, `lambda[j-1] = λ^j >= 0`.
pub fn check_comparison(alpha: f64, mesh: &TemporalMesh, lambda: &[f64], v: &[f64]) -> Result<ComparisonReport> {
    let steps = mesh.steps();
    if lambda.len() != steps {
        return Err(Error::LengthMismatch {
            expected: steps,
            got: lambda.len(),
        });
    }
    if v.len() != steps + 1 {
        return Err(Error::LengthMismatch {
            expected: steps + 1,
            got: v.len(),
        });
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    let op = L1Operator::new(alpha, mesh.clone())?;
    let mut scratch = Vec::with_capacity(steps);
    let mut hypothesis_gap = f64::NEG_INFINITY;
    let mut hypothesis_holds = true;
    let mut vmax = v[0].abs();
    for j in 1..=steps {
        vmax = vmax.max(v[j].abs());
        let delta = op.diag(j) * v[j] - op.history_rhs(&v[..j], j, &mut scratch)?;
        let bound = op.rl_integral_at(lambda, j);
        let gap = delta - bound;
        // rounding in δ_t^α scales with κ_{j,j}·max|V|
        let tol = 1e-12 * (bound.abs() + op.diag(j) * vmax);
        hypothesis_holds &= gap <= tol;
        hypothesis_gap = hypothesis_gap.max(gap);
    }
    let mut cum = 0.0;
    let mut max_excess = f64::NEG_INFINITY;
    for j in 1..=steps {
        cum += mesh.tau(j) * lambda[j - 1];
        max_excess = max_excess.max(v[j] - v[0] - cum);
    }
    let verdict = if !hypothesis_holds {
        ComparisonVerdict::HypothesisFailed
    } else if max_excess <= 1e-10 {
        ComparisonVerdict::Pass
    } else {
        ComparisonVerdict::Fail
    };
    Ok(ComparisonReport {
        hypothesis_gap,
        max_excess,
        verdict,
    })
}

/// Solves `δ_t^α V^j = scale · J^{1−α} λ̄(t_j)` from `V^0 = v0`.
pub fn rl_driven_history(alpha: f64, mesh: &TemporalMesh, lambda: &[f64], scale: f64, v0: f64) -> Result<Vec<f64>> {
    if lambda.len() != mesh.steps() {
        return Err(Error::LengthMismatch {
            expected: mesh.steps(),
            got: lambda.len(),
        });
    }
    let op = L1Operator::new(alpha, mesh.clone())?;
    Ok(op.march(v0, |m| scale * op.rl_integral_at(lambda, m)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub steps: usize,
    /// `max_j V^j t_j^{1−α}`
    pub max_scaled: f64,
}

/// Solves `δ_t^α V^j = τ^γ t_j^{−γ−1}`, `V^0 = 0`, on the uniform mesh.
pub fn check_uniform_decay(alpha: f64, gamma_exp: f64, steps: usize, t_final: f64) -> Result<DecayReport> {
    check_alpha(alpha)?;
    if !(gamma_exp > 0.0 && gamma_exp <= alpha) {
        return Err(Error::InvalidParameter(format!(
            "decay exponent gamma must lie in (0, alpha], got {gamma_exp}"
        )));
    }
    let mesh = TemporalMesh::uniform(t_final, steps)?;
    let op = L1Operator::new(alpha, mesh.clone())?;
    let tau = mesh.tau(1);
    let v = op.march(0.0, |m| tau.powf(gamma_exp) * mesh.t(m).powf(-gamma_exp - 1.0));
    let max_scaled = (1..=steps)
        .map(|j| v[j] * mesh.t(j).powf(1.0 - alpha))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayReport { steps, max_scaled })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCertificate {
    pub reports: Vec<DecayReport>,
    /// max/min of `max_scaled` across the sweep
    pub spread: f64,
    pub pass: bool,
}

pub fn certify_uniform_decay(alpha: f64, gamma_exp: f64, steps: &[usize], t_final: f64) -> Result<DecayCertificate> {
    let reports = steps
        .iter()
        .map(|&m| check_uniform_decay(alpha, gamma_exp, m, t_final))
        .collect::<Result<Vec<_>>>()?;
    let lo = reports.iter().map(|r| r.max_scaled).fold(f64::INFINITY, f64::min);
    let hi = reports.iter().map(|r| r.max_scaled).fold(f64::NEG_INFINITY, f64::max);
    let spread = hi / lo;
    Ok(DecayCertificate {
        pass: lo > 0.0 && hi.is_finite() && spread <= 2.0,
        spread,
        reports,
    })
}

/// One row of the `checks` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub params: String,
    /// headline number (worst ratio, spread, ...) for the row
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub stability_trials: usize,
    pub stability_steps: usize,
    pub comparison_trials: usize,
    pub comparison_steps: usize,
    pub policy: ExecPolicy,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            stability_trials: 1000,
            stability_steps: 64,
            comparison_trials: 100,
            comparison_steps: 64,
            policy: ExecPolicy::Parallel,
        }
    }
}

pub const SUITE_ALPHAS: [f64; 3] = [0.3, 0.5, 0.7];
pub const SUITE_GRADINGS: [f64; 3] = [1.0, 2.0, 3.0];
pub const BARRIER_ANCHORS: [usize; 5] = [2, 4, 8, 16, 32];
pub const BARRIER_STEPS: [usize; 5] = [64, 128, 256, 512, 1024];
pub const DECAY_STEPS: [usize; 4] = [64, 128, 256, 512];

fn trial_rng(seed: u64, group: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group * 1_000_003 + trial as u64);
    rng
}

/// Randomized stability trials: `F^j ~ U(−1, 1)`. Returns the worst `lhs/rhs`
/// and whether every trial passed.
pub fn randomized_stability(alpha: f64, grading: f64, cfg: &SuiteConfig, group: u64) -> Result<(f64, bool)> {
    let mesh = TemporalMesh::graded(1.0, cfg.stability_steps, grading)?;
    let reports = exec::map_range(cfg.policy, cfg.stability_trials, |k| {
        let mut rng = trial_rng(cfg.seed, group, k);
        let forcing: Vec<f64> = (0..cfg.stability_steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check_lemma_stability(alpha, &mesh, &forcing, 0.0)
    });
    let mut worst = 0.0f64;
    let mut all = true;
    for r in reports {
        let r = r?;
        all &= r.pass;
        if r.rhs > 0.0 {
            worst = worst.max(r.lhs / r.rhs);
        }
    }
    Ok((worst, all))
}

/// Randomized strict comparison trials: `λ^j ~ U(0, 1)`, `V` driven by `½ J^{1−α} λ̄`.
/// Returns the largest excess `V^m − V^0 − Σ τ_j λ^j` and whether all passed.
pub fn randomized_comparison(alpha: f64, grading: f64, cfg: &SuiteConfig, group: u64) -> Result<(f64, bool)> {
    let mesh = TemporalMesh::graded(1.0, cfg.comparison_steps, grading)?;
    let reports = exec::map_range(cfg.policy, cfg.comparison_trials, |k| {
        let mut rng = trial_rng(cfg.seed, group, k);
        let lambda: Vec<f64> = (0..cfg.comparison_steps).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v0 = rng.gen_range(-1.0..1.0);
        let v = rl_driven_history(alpha, &mesh, &lambda, 0.5, v0)?;
        check_comparison(alpha, &mesh, &lambda, &v)
    });
    let mut worst = f64::NEG_INFINITY;
    let mut all = true;
    for r in reports {
        let r = r?;
        all &= r.verdict == ComparisonVerdict::Pass && r.max_excess < 0.0;
        worst = worst.max(r.max_excess);
    }
    Ok((worst, all))
}

/// Runs every certificate and returns one row per check/parameter combination.
pub fn run_check_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut group = 0u64;
    for &alpha in &SUITE_ALPHAS {
        for &r in &SUITE_GRADINGS {
            group += 1;
            let (worst, pass) = randomized_stability(alpha, r, cfg, group)?;
            rows.push(CheckRow {
                check: "stability",
                params: format!("alpha={alpha} r={r} M={} trials={}", cfg.stability_steps, cfg.stability_trials),
                value: worst,
                pass,
            });
        }
    }
    for &alpha in &SUITE_ALPHAS {
        let cert = certify_barrier(alpha, &BARRIER_ANCHORS, &BARRIER_STEPS, 1.0)?;
        let value = cert
            .sweeps
            .iter()
            .find(|s| Some(s.anchor) == cert.anchor)
            .map(|s| s.reports.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN);
        rows.push(CheckRow {
            check: "barrier",
            params: format!(
                "alpha={alpha} p={} M=64..1024",
                cert.anchor.map_or("none".to_string(), |p| p.to_string())
            ),
            value,
            pass: cert.anchor.is_some(),
        });
    }
    for &alpha in &SUITE_ALPHAS {
        let mesh = TemporalMesh::graded(1.0, cfg.comparison_steps, 2.0)?;
        let lambda = vec![1.0; cfg.comparison_steps];
        let v = rl_driven_history(alpha, &mesh, &lambda, 1.0, 0.0)?;
        let err = mesh
            .nodes()
            .iter()
            .zip(&v)
            .map(|(t, x)| (x - t).abs())
            .fold(0.0, f64::max);
        rows.push(CheckRow {
            check: "comparison-equality",
            params: format!("alpha={alpha} r=2 M={}", cfg.comparison_steps),
            value: err,
            pass: err <= 1e-10,
        });
        group += 1;
        let (worst, pass) = randomized_comparison(alpha, 2.0, cfg, group)?;
        rows.push(CheckRow {
            check: "comparison-strict",
            params: format!("alpha={alpha} r=2 M={} trials={}", cfg.comparison_steps, cfg.comparison_trials),
            value: worst,
            pass,
        });
    }
    for &(alpha, g) in &[(0.3, 0.3), (0.5, 0.5), (0.7, 0.7), (0.7, 0.3), (0.5, 0.25)] {
        let cert = certify_uniform_decay(alpha, g, &DECAY_STEPS, 1.0)?;
        rows.push(CheckRow {
            check: "uniform-decay",
            params: format!("alpha={alpha} gamma={g} M=64..512"),
            value: cert.spread,
            pass: cert.pass,
        });
    }
    Ok(rows)
}
