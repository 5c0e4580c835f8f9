//! Graded, uniform and quasi-graded temporal meshes on `[0, T]`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMesh {
    t_final: f64,
    grading: f64,
    nodes: Vec<f64>,
    widths: Vec<f64>,
}

/// Extremes of `τ_j · M · t_j^{1/r − 1} / T^{1/r}` over `j = 1..M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthRatioReport {
    pub min: f64,
    pub max: f64,
}

impl TemporalMesh {
    /// `t_j = T (j/M)^r`.
    pub fn graded(t_final: f64, steps: usize, grading: f64) -> Result<Self> {
        check_final_time(t_final)?;
        if steps == 0 {
            return Err(Error::InvalidParameter("step count M must be >= 1".into()));
        }
        check_grading(grading)?;
        let m = steps as f64;
        let mut nodes = Vec::with_capacity(steps + 1);
        nodes.push(0.0);
        for j in 1..steps {
            nodes.push(t_final * (grading * (j as f64 / m).ln()).exp());
        }
        nodes.push(t_final);
        let widths = if grading == 1.0 {
            vec![t_final / m; steps]
        } else {
            nodes.windows(2).map(|w| w[1] - w[0]).collect()
        };
        Ok(Self {
            t_final,
            grading,
            nodes,
            widths,
        })
    }

    pub fn uniform(t_final: f64, steps: usize) -> Result<Self> {
        Self::graded(t_final, steps, 1.0)
    }

    /// `t_j = T ξ_j^r` for a strictly increasing `ξ` with `ξ_0 = 0`, `ξ_last = 1`.
    pub fn quasi_graded(t_final: f64, xi: &[f64], grading: f64) -> Result<Self> {
        check_final_time(t_final)?;
        check_grading(grading)?;
        if xi.len() < 2 {
            return Err(Error::InvalidParameter("xi needs at least two entries".into()));
        }
        if xi[0] != 0.0 || xi[xi.len() - 1] != 1.0 {
            return Err(Error::InvalidParameter("xi must start at 0 and end at 1".into()));
        }
        if let Some(k) = xi.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!(
                "xi must be strictly increasing (violated at index {})",
                k + 1
            )));
        }
        let last = xi.len() - 1;
        let nodes: Vec<f64> = xi
            .iter()
            .enumerate()
            .map(|(j, &x)| match j {
                0 => 0.0,
                _ if j == last => t_final,
                _ => t_final * x.powf(grading),
            })
            .collect();
        let widths = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            t_final,
            grading,
            nodes,
            widths,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.widths.len()
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    /// `t_0..t_M`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `τ_1..τ_M`; `widths()[j-1] = τ_j`.
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn t(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    /// `τ_j` for `1 <= j <= M`.
    pub fn tau(&self, j: usize) -> f64 {
        self.widths[j - 1]
    }

    pub fn is_uniform(&self) -> bool {
        let tau = self.t_final / self.steps() as f64;
        self.widths
            .iter()
            .all(|&w| (w - tau).abs() <= 1e-14 * tau)
    }

    /// Index `m` with `t_m = t` (up to `1e-13·T`), if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-13 * self.t_final;
        let k = self.nodes.partition_point(|&x| x < t - tol);
        (k < self.nodes.len() && (self.nodes[k] - t).abs() <= tol).then_some(k)
    }

    pub fn width_bound_check(&self) -> WidthRatioReport {
        let m = self.steps() as f64;
        let inv_r = 1.0 / self.grading;
        let scale = self.t_final.powf(inv_r);
        let mut min = f64::INFINITY;
        let mut max = 0.0f64;
        for j in 1..=self.steps() {
            let ratio = self.tau(j) * m * self.t(j).powf(inv_r - 1.0) / scale;
            min = min.min(ratio);
            max = max.max(ratio);
        }
        WidthRatioReport { min, max }
    }
}

fn check_final_time(t_final: f64) -> Result<()> {
    if t_final > 0.0 && t_final.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("final time T must be > 0, got {t_final}")))
    }
}

fn check_grading(r: f64) -> Result<()> {
    if r >= 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("grading exponent r must be >= 1, got {r}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_nodes(mesh: &TemporalMesh, expect: &[f64]) {
        assert_eq!(mesh.nodes().len(), expect.len());
        for (a, b) in mesh.nodes().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn graded_examples() {
        assert_nodes(&TemporalMesh::graded(1.0, 4, 2.0).unwrap(), &[0.0, 0.0625, 0.25, 0.5625, 1.0]);
        assert_nodes(&TemporalMesh::graded(1.0, 4, 1.0).unwrap(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_nodes(&TemporalMesh::graded(2.0, 2, 3.0).unwrap(), &[0.0, 0.25, 2.0]);
    }

    #[test]
    fn graded_rejects_bad_parameters() {
        assert!(TemporalMesh::graded(1.0, 4, 0.5).is_err());
        assert!(TemporalMesh::graded(1.0, 0, 2.0).is_err());
        assert!(TemporalMesh::graded(0.0, 4, 2.0).is_err());
        assert!(TemporalMesh::graded(-1.0, 4, 2.0).is_err());
    }

    #[test]
    fn single_step_mesh() {
        let mesh = TemporalMesh::graded(3.0, 1, 2.0).unwrap();
        assert_eq!(mesh.nodes(), &[0.0, 3.0]);
        assert_eq!(mesh.widths(), &[3.0]);
    }

    #[test]
    fn quasi_graded_examples() {
        assert_nodes(&TemporalMesh::quasi_graded(1.0, &[0.0, 0.5, 1.0], 2.0).unwrap(), &[0.0, 0.25, 1.0]);
        assert_nodes(
            &TemporalMesh::quasi_graded(1.0, &[0.0, 0.3, 0.6, 1.0], 1.0).unwrap(),
            &[0.0, 0.3, 0.6, 1.0],
        );
        assert!(TemporalMesh::quasi_graded(1.0, &[0.0, 0.6, 0.3, 1.0], 1.0).is_err());
        assert!(TemporalMesh::quasi_graded(1.0, &[0.1, 0.6, 1.0], 1.0).is_err());
        assert!(TemporalMesh::quasi_graded(1.0, &[0.0, 0.6, 0.9], 1.0).is_err());
    }

    #[test]
    fn uniform_widths_exact() {
        let mesh = TemporalMesh::uniform(1.0, 1000).unwrap();
        assert!(mesh.widths().iter().all(|&w| ((w - 1e-3) / 1e-3).abs() <= 1e-15));
        for j in 1..=1000 {
            assert!((mesh.tau(j) - (mesh.t(j) - mesh.t(j - 1))).abs() <= 1e-15);
        }
        assert!(mesh.is_uniform());
    }

    #[test]
    fn width_ratio_examples() {
        let rep = TemporalMesh::graded(1.0, 64, 2.0).unwrap().width_bound_check();
        assert!(rep.max <= 4.0 && rep.min > 0.0);
        let rep = TemporalMesh::graded(1.0, 50, 1.0).unwrap().width_bound_check();
        assert!((rep.max - 1.0).abs() < 1e-13 && (rep.min - 1.0).abs() < 1e-13);
        let coarse = TemporalMesh::graded(1.0, 64, 3.0).unwrap().width_bound_check();
        let fine = TemporalMesh::graded(1.0, 1024, 3.0).unwrap().width_bound_check();
        let q = fine.max / coarse.max;
        assert!(q < 1.1 && q > 1.0 / 1.1, "ratio {q}");
    }

    #[test]
    fn node_lookup() {
        let mesh = TemporalMesh::graded(1.0, 8, 2.0).unwrap();
        assert_eq!(mesh.node_index(mesh.t(3)), Some(3));
        assert_eq!(mesh.node_index(1.0), Some(8));
        assert_eq!(mesh.node_index(0.0), Some(0));
        assert_eq!(mesh.node_index(0.5), None);
    }
}
