//! The L1 discrete Caputo operator on an arbitrary temporal mesh.
//!
//! With `κ_{m,j}` the average of `(t_m − s)^{−α}/Γ(1−α)` over `(t_{j−1}, t_j)`
//! and `κ_{m,0} = 0`, the operator reads
//!
//! ```text
//! δ_t^α V^m = κ_{m,m} V^m − Σ_{j=1}^{m} (κ_{m,j} − κ_{m,j−1}) V^{j−1}.
//! ```
//!
//! The weights in the sum are positive and telescope to `κ_{m,m}`, which is the
//! M-matrix structure every stability argument rests on. Rows are evaluated on
//! demand in closed form; the history sum costs `O(m)` per level.

use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::special_fn::{gamma, pow_diff_gap};
use crate::temporal_mesh::TemporalMesh;

/// Accumulation mode for history sums. Both run over `j = 1..m` in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Summation {
    #[default]
    Plain,
    Kahan,
}

#[derive(Debug, Clone)]
pub struct L1Operator {
    alpha: f64,
    mesh: TemporalMesh,
    gamma_2ma: f64,
    summation: Summation,
}

impl L1Operator {
    pub fn new(alpha: f64, mesh: TemporalMesh) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            mesh,
            gamma_2ma: gamma(2.0 - alpha)?,
            summation: Summation::Plain,
        })
    }

    pub fn with_summation(mut self, summation: Summation) -> Self {
        self.summation = summation;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mesh(&self) -> &TemporalMesh {
        &self.mesh
    }

    pub fn steps(&self) -> usize {
        self.mesh.steps()
    }

    fn check_level(&self, m: usize) -> Result<()> {
        let hi = self.steps();
        if m == 0 || m > hi {
            return Err(Error::Index {
                what: "m",
                index: m,
                lo: 1,
                hi,
            });
        }
        Ok(())
    }

    /// `κ_{m,j}` for `1 <= m <= M`, `0 <= j <= m`.
    pub fn kappa(&self, m: usize, j: usize) -> Result<f64> {
        self.check_level(m)?;
        if j > m {
            return Err(Error::Index {
                what: "j",
                index: j,
                lo: 0,
                hi: m,
            });
        }
        Ok(self.kappa_unchecked(m, j))
    }

    #[inline]
    fn kappa_unchecked(&self, m: usize, j: usize) -> f64 {
        let s = 1.0 - self.alpha;
        if j == 0 {
            0.0
        } else if j == m {
            self.mesh.tau(m).powf(-self.alpha) / self.gamma_2ma
        } else {
            let tau = self.mesh.tau(j);
            let span = self.mesh.t(m) - self.mesh.t(j - 1);
            pow_diff_gap(span, tau, s) / (tau * self.gamma_2ma)
        }
    }

    /// Diagonal weight `κ_{m,m} = τ_m^{−α} / Γ(2−α)`.
    pub fn diag(&self, m: usize) -> f64 {
        self.kappa_unchecked(m, m)
    }

    /// Fills `row[j] = κ_{m,j}` for `j = 0..=m`.
    pub fn kappa_row(&self, m: usize, row: &mut Vec<f64>) -> Result<()> {
        self.check_level(m)?;
        row.clear();
        row.extend((0..=m).map(|j| self.kappa_unchecked(m, j)));
        Ok(())
    }

    /// Fills `w[j-1] = κ_{m,j} − κ_{m,j−1}` for `j = 1..=m`.
    pub fn history_weights(&self, m: usize, w: &mut Vec<f64>) -> Result<()> {
        self.check_level(m)?;
        w.clear();
        let mut prev = 0.0;
        for j in 1..=m {
            let k = self.kappa_unchecked(m, j);
            w.push(k - prev);
            prev = k;
        }
        Ok(())
    }

    /// `Σ_{j=1}^{m} (κ_{m,j} − κ_{m,j−1}) V^{j−1}` for a scalar history
    /// `V^0..V^{m−1}`. `scratch` is reused for the weight row.
    pub fn history_rhs(&self, hist: &[f64], m: usize, scratch: &mut Vec<f64>) -> Result<f64> {
        self.check_level(m)?;
        check_len(m, hist.len())?;
        self.history_weights(m, scratch)?;
        Ok(match self.summation {
            Summation::Plain => scratch.iter().zip(hist).map(|(w, v)| w * v).sum(),
            Summation::Kahan => {
                let mut sum = 0.0;
                let mut comp = 0.0;
                for (w, v) in scratch.iter().zip(hist) {
                    let y = w * v - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                sum
            }
        })
    }

    /// Vector form of [`history_rhs`](Self::history_rhs): `levels` holds
    /// `V^0..V^{m−1}`, each of length `out.len()`. Parallel over spatial
    /// components; each component is summed over `j` in increasing order.
    pub fn history_rhs_vec(
        &self,
        levels: &[Vec<f64>],
        m: usize,
        scratch: &mut Vec<f64>,
        out: &mut [f64],
        policy: ExecPolicy,
    ) -> Result<()> {
        self.check_level(m)?;
        check_len(m, levels.len())?;
        if let Some(bad) = levels.iter().find(|v| v.len() != out.len()) {
            return Err(Error::LengthMismatch {
                expected: out.len(),
                got: bad.len(),
            });
        }
        self.history_weights(m, scratch)?;
        let weights: &[f64] = scratch;
        let kahan = self.summation == Summation::Kahan;
        exec::for_each_chunk_mut(policy, out, exec::CHUNK, |off, chunk| {
            accumulate_chunk(weights, levels, off, chunk, kahan);
        });
        Ok(())
    }

    /// `δ_t^α V^m` for a scalar history `V^0..V^m`.
    pub fn apply(&self, hist: &[f64], m: usize) -> Result<f64> {
        self.check_level(m)?;
        check_len(m + 1, hist.len())?;
        let mut scratch = Vec::with_capacity(m);
        let h = self.history_rhs(&hist[..m], m, &mut scratch)?;
        Ok(self.diag(m) * hist[m] - h)
    }

    /// `δ_t^α V^m` for a vector history `V^0..V^m`.
    pub fn apply_vec(&self, levels: &[Vec<f64>], m: usize, policy: ExecPolicy) -> Result<Vec<f64>> {
        self.check_level(m)?;
        check_len(m + 1, levels.len())?;
        let mut out = vec![0.0; levels[m].len()];
        let mut scratch = Vec::with_capacity(m);
        self.history_rhs_vec(&levels[..m], m, &mut scratch, &mut out, policy)?;
        let d = self.diag(m);
        for (o, v) in out.iter_mut().zip(&levels[m]) {
            *o = d * v - *o;
        }
        Ok(out)
    }

    /// Solves `δ_t^α V^m = g(m)` for `m = 1..M` with `V^0 = v0`.
    pub fn march<G>(&self, v0: f64, mut g: G) -> Vec<f64>
    where
        G: FnMut(usize) -> f64,
    {
        let steps = self.steps();
        let mut v = Vec::with_capacity(steps + 1);
        v.push(v0);
        let mut scratch = Vec::with_capacity(steps);
        for m in 1..=steps {
            let h = self
                .history_rhs(&v, m, &mut scratch)
                .expect("history length matches level by construction");
            v.push((g(m) + h) / self.diag(m));
        }
        v
    }

    /// Riemann–Liouville integral `J^{1−α} λ̄(t)` of the piecewise-constant,
    /// left-continuous `λ̄ = λ^j` on `(t_{j−1}, t_j]`, evaluated exactly at a
    /// mesh node `t = t_m`. `lambda[j-1] = λ^j` must cover `j = 1..m`.
    pub fn rl_integral(&self, lambda: &[f64], t: f64) -> Result<f64> {
        let m = self
            .mesh
            .node_index(t)
            .ok_or_else(|| Error::Domain(format!("t = {t} is not a mesh node")))?;
        if lambda.len() < m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: lambda.len(),
            });
        }
        Ok(self.rl_integral_at(lambda, m))
    }

    pub(crate) fn rl_integral_at(&self, lambda: &[f64], m: usize) -> f64 {
        let s = 1.0 - self.alpha;
        let tm = self.mesh.t(m);
        let mut sum = 0.0;
        for j in 1..=m {
            let tau = self.mesh.tau(j);
            let span = if j == m { tau } else { tm - self.mesh.t(j - 1) };
            sum += lambda[j - 1] * pow_diff_gap(span, tau, s);
        }
        sum / self.gamma_2ma
    }
}

fn accumulate_chunk(weights: &[f64], levels: &[Vec<f64>], off: usize, chunk: &mut [f64], kahan: bool) {
    let len = chunk.len();
    chunk.fill(0.0);
    if kahan {
        let mut comp = vec![0.0; len];
        for (w, level) in weights.iter().zip(levels) {
            let src = &level[off..off + len];
            for ((s, c), v) in chunk.iter_mut().zip(comp.iter_mut()).zip(src) {
                let y = w * v - *c;
                let t = *s + y;
                *c = (t - *s) - y;
                *s = t;
            }
        }
    } else {
        for (w, level) in weights.iter().zip(levels) {
            let src = &level[off..off + len];
            for (s, v) in chunk.iter_mut().zip(src) {
                *s += w * v;
            }
        }
    }
}

/// Exact Caputo derivative of `t^β`: `Γ(β+1)/Γ(β+1−α) · t^{β−α}`.
pub fn caputo_power(alpha: f64, beta: f64, t: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(beta >= alpha) {
        return Err(Error::Domain(format!("power rule requires beta >= alpha, got beta = {beta}")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("power rule requires t > 0, got {t}")));
    }
    Ok(gamma(beta + 1.0)? / gamma(beta + 1.0 - alpha)? * t.powf(beta - alpha))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
