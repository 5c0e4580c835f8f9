//! Independent oracles: tanh-sinh quadrature and a Stirling-series gamma.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Tanh-sinh quadrature on `[a, b]`. Integrable endpoint singularities are
/// resolved best at `a = 0`, where abscissae keep full relative precision.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let h = 1.0 / 64.0;
    let mut sum = 0.0;
    for k in -(6 * 64)..=(6 * 64) {
        let t = k as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
        // 1 − tanh(u) and 1 + tanh(u) without cancellation
        let e = (-2.0 * u.abs()).exp();
        let small = 2.0 * e / (1.0 + e);
        let (from_a, from_b) = if u < 0.0 { (small, 2.0 - small) } else { (2.0 - small, small) };
        if from_a == 0.0 || from_b == 0.0 || w == 0.0 {
            continue;
        }
        let x = if from_a <= from_b { a + half * from_a } else { b - half * from_b };
        if x == a && a != 0.0 || x == b {
            continue;
        }
        sum += w * f(x);
    }
    sum * half * h
}

/// `Γ(x)` for `x > 0` by upward recurrence to `x >= 30` and the Stirling
/// series for `ln Γ`.
pub fn gamma_stirling(x: f64) -> f64 {
    assert!(x > 0.0);
    let mut shift = 1.0;
    let mut y = x;
    while y < 30.0 {
        shift *= y;
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))));
    let ln = (y - 0.5) * y.ln() - y + 0.5 * (2.0 * PI).ln() + series;
    ln.exp() / shift
}

/// `κ_{m,j} = (τ_j Γ(1−α))^{-1} ∫_{t_{j−1}}^{t_j} (t_m − s)^{−α} ds`.
pub fn kappa_quadrature(alpha: f64, nodes: &[f64], m: usize, j: usize) -> f64 {
    let (a, b) = (nodes[j - 1], nodes[j]);
    let tm = nodes[m];
    // substitute σ = t_m − s so a singularity sits at an endpoint
    let integral = tanh_sinh(|s| s.powf(-alpha), tm - b, tm - a);
    integral / ((b - a) * gamma_stirling(1.0 - alpha))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub mod meshes {
    use fracl1::fem_space::Triangulation;
    use rand::Rng;

    /// Five vertices, one interior; the spoke to (0, −1) faces two 105° angles.
    pub fn obtuse_counterexample() -> Triangulation {
        let v = vec![[0.0, 0.1], [-0.2, 0.0], [0.0, -1.0], [0.2, 0.0], [0.0, 1.0]];
        let t = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
        Triangulation::new(v, t, vec![false, true, true, true, true]).unwrap()
    }

    /// Equilateral lattice, `nx` cells per row and `ny` rows; interior
    /// vertices are jittered by up to `jitter` times the edge length.
    pub fn equilateral(nx: usize, ny: usize, jitter: f64, rng: &mut impl Rng) -> Triangulation {
        let h = 1.0 / nx as f64;
        let dy = h * 3f64.sqrt() / 2.0;
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut v = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let shift = if j % 2 == 1 { 0.5 * h } else { 0.0 };
                let interior = i > 0 && i < nx && j > 0 && j < ny;
                let mut p = [i as f64 * h + shift, j as f64 * dy];
                if interior && jitter > 0.0 {
                    p[0] += jitter * h * rng.gen_range(-1.0..1.0);
                    p[1] += jitter * h * rng.gen_range(-1.0..1.0);
                }
                v.push(p);
            }
        }
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if j % 2 == 0 {
                    t.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                    t.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
                } else {
                    t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
        Triangulation::with_derived_boundary(v, t).unwrap()
    }

    /// Structured mesh whose vertices with indices in `2..=N−2` are moved by
    /// up to `jitter·h`; the right-angle split makes generic jitter break the
    /// opposite-angle condition on some diagonals.
    pub fn perturbed_structured(n: usize, jitter: f64, rng: &mut impl Rng) -> Triangulation {
        let base = Triangulation::structured(n).unwrap();
        let h = 1.0 / n as f64;
        let mut v = base.vertices().to_vec();
        for j in 2..=n - 2 {
            for i in 2..=n - 2 {
                let p = &mut v[j * (n + 1) + i];
                p[0] += jitter * h * rng.gen_range(-1.0..1.0);
                p[1] += jitter * h * rng.gen_range(-1.0..1.0);
            }
        }
        let b = (0..v.len()).map(|k| base.is_boundary(k)).collect();
        Triangulation::new(v, base.triangles().to_vec(), b).unwrap()
    }
}

pub mod fields {
    use std::sync::Arc;

    use fracl1::fd_space::{FdCoefficients, SpaceFn};
    use rand::Rng;

    /// Smooth random coefficients: `a_k ∈ [0.5, 1.5]`, `|b_k| <= b_max`,
    /// `0 <= c <= c_max`.
    pub fn random_coefficients(dim: usize, b_max: f64, c_max: f64, rng: &mut impl Rng) -> FdCoefficients {
        let mut wave = |amp: f64, base: f64| -> SpaceFn {
            let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..3.0)).collect();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            Arc::new(move |x: &[f64]| base + amp * (x.iter().zip(&k).map(|(xi, ki)| xi * ki).sum::<f64>() + phase).sin())
        };
        let diffusion = (0..dim).map(|_| wave(0.5, 1.0)).collect();
        let convection = (0..dim).map(|_| wave(b_max, 0.0)).collect();
        let reaction = wave(0.5 * c_max, 0.5 * c_max);
        FdCoefficients {
            diffusion,
            convection,
            reaction,
        }
    }
}
