//! Lumped-mass P1 finite elements on 2D triangulations for `L = −Δ + c`.
//!
//! The stiffness matrix is the cotangent-weight Laplacian; the mass matrix is
//! lumped by vertex quadrature, so `m_z = (1/3) Σ |T|` over triangles incident
//! to `z` and the reaction term lands on the diagonal as `c(z) m_z`.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::{map_range, ExecPolicy};
use crate::fd_space::{BoundaryLeg, SpaceFn};
use crate::linalg::CsrMatrix;

/// Vertex pair `(a, b)` with `a < b`.
type Edge = (usize, usize);
/// Triangle index and local corner.
type Corner = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Triangulation {
    /// Validates and normalises a mesh: triangles are reoriented
    /// counter-clockwise, every vertex must be used, every edge may be shared
    /// by at most two triangles, and the boundary flags must coincide with the
    /// vertices of edges that have a single incident triangle.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Result<Self> {
        if boundary.len() != vertices.len() {
            return Err(Error::LengthMismatch {
                expected: vertices.len(),
                got: boundary.len(),
            });
        }
        let on_boundary = Self::normalise(&vertices, &mut triangles)?;
        if let Some(v) = (0..vertices.len()).find(|&v| on_boundary[v] != boundary[v]) {
            return Err(Error::Topology(format!(
                "vertex {v} is flagged {} but {} a boundary edge",
                if boundary[v] { "boundary" } else { "interior" },
                if on_boundary[v] { "lies on" } else { "does not lie on" }
            )));
        }
        Ok(Self {
            vertices,
            triangles,
            boundary,
        })
    }

    /// As [`new`](Self::new), deriving the boundary flags from edge incidence.
    pub fn with_derived_boundary(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let boundary = Self::normalise(&vertices, &mut triangles)?;
        Ok(Self {
            vertices,
            triangles,
            boundary,
        })
    }

    /// Returns the per-vertex "lies on a boundary edge" flags.
    fn normalise(vertices: &[[f64; 2]], triangles: &mut [[usize; 3]]) -> Result<Vec<bool>> {
        let nv = vertices.len();
        let mut used = vec![false; nv];
        for (k, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::Topology(format!("triangle {k} references a vertex out of range")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!("triangle {k} repeats a vertex")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area == 0.0 || !area.is_finite() {
                return Err(Error::Topology(format!("triangle {k} is degenerate (zero area)")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
            for &v in tri.iter() {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return Err(Error::Topology(format!("vertex {v} is not used by any triangle")));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let key = (tri[e], tri[(e + 1) % 3]);
                if let Some(other) = directed.insert(key, k) {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) has the same orientation in triangles {other} and {k}",
                        key.0, key.1
                    )));
                }
            }
        }
        let mut on_boundary = vec![false; nv];
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                on_boundary[a] = true;
                on_boundary[b] = true;
            }
        }
        Ok(on_boundary)
    }

    /// Unit square, `N × N` cells, each split along the lower-left to
    /// upper-right diagonal.
    pub fn structured(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("structured mesh needs N >= 2, got {n}")));
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let coord = |i: usize| if i == n { 1.0 } else { i as f64 / n as f64 };
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([coord(i), coord(j)]);
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, triangles, boundary)
    }

    /// Parses the text format
    ///
    /// ```text
    /// V F
    /// x y b      (V lines, b = 1 on the boundary)
    /// i j k      (F lines, 0-based vertex indices)
    /// ```
    ///
    /// Tokens are whitespace separated; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let (line, header) = lines.next().ok_or_else(|| parse_err(1, "missing `V F` header".into()))?;
        let counts = parse_fields::<usize>(header, 2, line)?;
        let (nv, nf) = (counts[0], counts[1]);
        let mut vertices = Vec::with_capacity(nv);
        let mut boundary = Vec::with_capacity(nv);
        for k in 0..nv {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_err(line, format!("expected {nv} vertex lines, found {k}")))?;
            let f = parse_fields::<f64>(l, 3, line)?;
            let flag = match f[2] {
                0.0 => false,
                1.0 => true,
                x => return Err(parse_err(line, format!("boundary flag must be 0 or 1, got {x}"))),
            };
            vertices.push([f[0], f[1]]);
            boundary.push(flag);
        }
        let mut triangles = Vec::with_capacity(nf);
        for k in 0..nf {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_err(line, format!("expected {nf} triangle lines, found {k}")))?;
            let f = parse_fields::<usize>(l, 3, line)?;
            if let Some(&bad) = f.iter().find(|&&v| v >= nv) {
                return Err(parse_err(line, format!("vertex index {bad} out of range (V = {nv})")));
            }
            triangles.push([f[0], f[1], f[2]]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(parse_err(line, "unexpected trailing content".into()));
        }
        Self::new(vertices, triangles, boundary)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.vertices.len(), self.triangles.len());
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            s.push_str(&format!("{} {} {}\n", p[0], p[1], b as u8));
        }
        for t in &self.triangles {
            s.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        s
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Interior angle at local corner `k` of triangle `t`.
    pub fn angle(&self, t: usize, k: usize) -> f64 {
        let tri = self.triangles[t];
        let p = self.vertices[tri[k]];
        let q = self.vertices[tri[(k + 1) % 3]];
        let r = self.vertices[tri[(k + 2) % 3]];
        let u = [q[0] - p[0], q[1] - p[1]];
        let v = [r[0] - p[0], r[1] - p[1]];
        (u[0] * v[1] - u[1] * v[0]).abs().atan2(u[0] * v[0] + u[1] * v[1])
    }

    /// Interior edges `(a, b)` with `a < b` and, for each, the two triangles
    /// and local corners opposite to it.
    fn interior_edges(&self) -> Vec<(Edge, [Corner; 2])> {
        let mut map: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push((t, k));
            }
        }
        let mut edges: Vec<_> = map
            .into_iter()
            .filter(|(_, v)| v.len() == 2)
            .map(|(e, v)| (e, [v[0], v[1]]))
            .collect();
        edges.sort_by_key(|e| e.0);
        edges
    }
}

fn parse_fields<T: std::str::FromStr>(l: &str, n: usize, line: usize) -> Result<Vec<T>> {
    let toks: Vec<&str> = l.split_whitespace().collect();
    if toks.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!("expected {n} fields, found {}", toks.len()),
        });
    }
    toks.iter()
        .map(|t| {
            t.parse::<T>().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{t}`"),
            })
        })
        .collect()
}

/// Reads a mesh file in the text format of [`Triangulation::parse`].
pub fn import_mesh(text: &str) -> Result<Triangulation> {
    Triangulation::parse(text)
}

#[derive(Debug, Clone)]
pub struct FemSystem {
    /// `A_h` restricted to interior vertices, lumped `c` term included.
    pub stiffness: CsrMatrix,
    /// `A_h` over all vertices.
    pub full_stiffness: CsrMatrix,
    /// Lumped mass of interior vertices, in interior numbering.
    pub mass: Vec<f64>,
    /// Lumped mass of every vertex.
    pub lumped_mass: Vec<f64>,
    /// Mesh vertex of each interior unknown.
    pub interior: Vec<usize>,
    /// Couplings of interior rows to boundary vertices.
    pub boundary: Vec<BoundaryLeg>,
    pub points: Vec<[f64; 3]>,
}

/// Element stiffness `|T| ∇φ_a·∇φ_b` for a counter-clockwise triangle.
pub fn local_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area = signed_area(p[0], p[1], p[2]);
    // ∇φ_k = rot(p_{k+2} − p_{k+1}) / (2|T|)
    let grads: Vec<[f64; 2]> = (0..3)
        .map(|k| {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
        })
        .collect();
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
        }
    }
    k
}

pub fn assemble_fem(mesh: &Triangulation, reaction: &SpaceFn) -> Result<FemSystem> {
    assemble_fem_with(mesh, reaction, ExecPolicy::default())
}

/// Element matrices are computed per triangle under `policy` and merged in
/// triangle order, so the assembled system does not depend on the policy.
pub fn assemble_fem_with(mesh: &Triangulation, reaction: &SpaceFn, policy: ExecPolicy) -> Result<FemSystem> {
    let nv = mesh.vertices.len();
    let elements = map_range(policy, mesh.triangles.len(), |t| {
        let tri = mesh.triangles[t];
        let p = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        (mesh.area(t), local_stiffness(p))
    });
    let mut lumped_mass = vec![0.0; nv];
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len() + nv);
    for (t, (tri, (area, k))) in mesh.triangles.iter().zip(&elements).enumerate() {
        if !(*area > 0.0) {
            return Err(Error::Topology(format!("triangle {t} is degenerate")));
        }
        for a in 0..3 {
            lumped_mass[tri[a]] += area / 3.0;
            for b in 0..3 {
                trip.push((tri[a], tri[b], k[a][b]));
            }
        }
    }
    for (v, &m) in lumped_mass.iter().enumerate() {
        let p = mesh.vertices[v];
        let c = reaction(&p);
        if c < 0.0 {
            return Err(Error::InvalidParameter(format!("reaction coefficient negative at vertex {v}: {c}")));
        }
        trip.push((v, v, c * m));
    }
    let full_stiffness = CsrMatrix::from_triplets(nv, nv, &trip)?;

    let interior: Vec<usize> = (0..nv).filter(|&v| !mesh.boundary[v]).collect();
    let mut local = vec![usize::MAX; nv];
    for (k, &v) in interior.iter().enumerate() {
        local[v] = k;
    }
    let mut inner = Vec::new();
    let mut boundary = Vec::new();
    for (row, &v) in interior.iter().enumerate() {
        let (cols, vals) = full_stiffness.row(v);
        for (&w, &a) in cols.iter().zip(vals) {
            if mesh.boundary[w] {
                let p = mesh.vertices[w];
                boundary.push(BoundaryLeg {
                    row,
                    point: [p[0], p[1], 0.0],
                    weight: a,
                });
            } else {
                inner.push((row, local[w], a));
            }
        }
    }
    let n = interior.len();
    let stiffness = CsrMatrix::from_triplets(n, n, &inner)?;
    let mass = interior.iter().map(|&v| lumped_mass[v]).collect();
    let points = interior
        .iter()
        .map(|&v| [mesh.vertices[v][0], mesh.vertices[v][1], 0.0])
        .collect();
    Ok(FemSystem {
        stiffness,
        full_stiffness,
        mass,
        lumped_mass,
        interior,
        boundary,
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AInftyReport {
    /// Largest off-diagonal entry of `A_h + κ_{1,1} diag(m)` in interior rows,
    /// couplings to boundary vertices included.
    pub worst_offdiag: f64,
    pub pass: bool,
    pub note: &'static str,
}

pub const LUMPED_NOTE: &str =
    "lumped mass is diagonal, so kappa_11 does not enter the off-diagonal entries; the check reduces to stiffness signs";

/// Sign condition on the off-diagonal entries of `A_h + κ_{1,1} M_h`. Entries
/// below `1e-12` times the largest diagonal entry count as zero.
pub fn check_a_infty(sys: &FemSystem, kappa11: f64) -> AInftyReport {
    let _ = kappa11;
    let scale = sys.full_stiffness.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = f64::NEG_INFINITY;
    for &v in &sys.interior {
        let (cols, vals) = sys.full_stiffness.row(v);
        for (&w, &a) in cols.iter().zip(vals) {
            if w != v {
                worst = worst.max(a);
            }
        }
    }
    AInftyReport {
        worst_offdiag: worst,
        pass: worst <= 1e-12 * scale,
        note: LUMPED_NOTE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAngles {
    pub edge: (usize, usize),
    /// sum of the two angles opposite to the edge
    pub angle_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelaunayReport {
    pub edges: Vec<EdgeAngles>,
    pub worst: f64,
    pub pass: bool,
}

/// Opposite-angle sums of every interior edge; passes iff all are `<= π + 1e-12`.
pub fn check_delaunay(mesh: &Triangulation) -> DelaunayReport {
    let edges: Vec<EdgeAngles> = mesh
        .interior_edges()
        .into_iter()
        .map(|(edge, opp)| EdgeAngles {
            edge,
            angle_sum: mesh.angle(opp[0].0, opp[0].1) + mesh.angle(opp[1].0, opp[1].1),
        })
        .collect();
    let worst = edges.iter().map(|e| e.angle_sum).fold(0.0, f64::max);
    DelaunayReport {
        pass: worst <= PI + 1e-12,
        edges,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn zero() -> SpaceFn {
        Arc::new(|_: &[f64]| 0.0)
    }

    #[test]
    fn structured_counts() {
        let m = Triangulation::structured(2).unwrap();
        assert_eq!(m.vertices().len(), 9);
        assert_eq!(m.triangles().len(), 8);
        assert_eq!((0..9).filter(|&v| !m.is_boundary(v)).count(), 1);
        assert!(Triangulation::structured(1).is_err());
    }

    #[test]
    fn structured_angles_are_right_isoceles() {
        let m = Triangulation::structured(5).unwrap();
        for t in 0..m.triangles().len() {
            let mut a: Vec<f64> = (0..3).map(|k| m.angle(t, k).to_degrees()).collect();
            a.sort_by(f64::total_cmp);
            assert!((a[0] - 45.0).abs() < 1e-9 && (a[1] - 45.0).abs() < 1e-9 && (a[2] - 90.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_interior_hat_on_coarse_mesh() {
        let sys = assemble_fem(&Triangulation::structured(2).unwrap(), &zero()).unwrap();
        assert_eq!(sys.stiffness.nrows(), 1);
        assert!((sys.stiffness.get(0, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn reference_triangle_local_stiffness() {
        let k = local_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reaction_adds_lumped_mass_on_diagonal() {
        let mesh = Triangulation::structured(4).unwrap();
        let a = assemble_fem(&mesh, &zero()).unwrap();
        let b = assemble_fem(&mesh, &(Arc::new(|_: &[f64]| 1.0) as SpaceFn)).unwrap();
        for i in 0..a.stiffness.nrows() {
            assert!((b.stiffness.get(i, i) - a.stiffness.get(i, i) - a.mass[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_reaction_rejected() {
        let mesh = Triangulation::structured(3).unwrap();
        assert!(assemble_fem(&mesh, &(Arc::new(|_: &[f64]| -1.0) as SpaceFn)).is_err());
    }

    #[test]
    fn structured_mesh_satisfies_both_conditions() {
        let mesh = Triangulation::structured(6).unwrap();
        let sys = assemble_fem(&mesh, &zero()).unwrap();
        let r = check_a_infty(&sys, 3.0);
        assert!(r.pass, "{r:?}");
        assert_eq!(check_a_infty(&sys, 0.0).pass, r.pass);
        let d = check_delaunay(&mesh);
        assert!(d.pass);
        assert!((d.worst - PI).abs() < 1e-12);
    }

    #[test]
    fn parse_single_triangle() {
        let m = import_mesh("3 1\n0 0 1\n1 0 1\n0 1 1\n0 1 2\n").unwrap();
        assert_eq!(m.triangles().len(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parse_flips_clockwise_triangles() {
        let m = import_mesh("# cw\n3 1\n0 0 1\n0 1 1  # top\n1 0 1\n\n0 1 2\n").unwrap();
        assert!(m.area(0) > 0.0);
        assert_eq!(m.triangles()[0], [0, 2, 1]);
    }

    #[test]
    fn parse_reports_bad_index_line() {
        let err = import_mesh("3 1\n0 0 1\n1 0 1\n0 1 1\n0 1 7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        let err = import_mesh("3 1\n0 0 1\n1 zero 1\n0 1 1\n0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn topology_errors() {
        // dangling vertex
        assert!(matches!(
            import_mesh("4 1\n0 0 1\n1 0 1\n0 1 1\n5 5 1\n0 1 2\n"),
            Err(Error::Topology(_))
        ));
        // interior flag on a boundary vertex
        assert!(matches!(
            import_mesh("3 1\n0 0 0\n1 0 1\n0 1 1\n0 1 2\n"),
            Err(Error::Topology(_))
        ));
        // degenerate triangle
        assert!(matches!(
            import_mesh("3 1\n0 0 1\n1 0 1\n2 0 1\n0 1 2\n"),
            Err(Error::Topology(_))
        ));
        // overlapping triangles share an edge with equal orientation
        assert!(matches!(
            import_mesh("4 2\n0 0 1\n1 0 1\n0 1 1\n0.2 0.2 1\n0 1 2\n0 1 3\n"),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn text_roundtrip() {
        let m = Triangulation::structured(3).unwrap();
        assert_eq!(import_mesh(&m.to_text()).unwrap(), m);
    }
}
