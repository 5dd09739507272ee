//! Per-vertex curvature tensors after Rusinkiewicz (2004): a second
//! fundamental form is fitted on every face from the finite differences of
//! the vertex normals along its edges, then rotated into each vertex's
//! tangent frame and averaged with mixed-Voronoi corner weights.

use rayon::prelude::*;
use serde::Serialize;

use super::Mesh;
use crate::Vec3;

/// Symmetric 2x2 tensor `[[uu, uv], [uv, vv]]` in the vertex tangent frame
/// `(u, v)`. Units 1/m.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CurvatureTensor {
    pub uu: f64,
    pub uv: f64,
    pub vv: f64,
}

impl CurvatureTensor {
    /// Eigenvalues, larger first.
    pub fn principal(&self) -> (f64, f64) {
        let mean = 0.5 * (self.uu + self.vv);
        let half_diff = 0.5 * (self.uu - self.vv);
        let r = half_diff.hypot(self.uv);
        (mean + r, mean - r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    /// Tangent frame `(u, v)` per vertex; `u x v` is the vertex normal.
    pub frames: Vec<(Vec3, Vec3)>,
    pub tensors: Vec<CurvatureTensor>,
    /// Maximum principal curvature per vertex.
    pub k1: Vec<f64>,
    /// Minimum principal curvature per vertex (`k2 <= k1`).
    pub k2: Vec<f64>,
    /// Per-face curvature magnitude: the mean over the face's vertices of
    /// `max(|k1|, |k2|)`.
    pub face_magnitude: Vec<f64>,
    /// Vertices that belong to no face; their curvature is zero.
    pub isolated_vertices: Vec<usize>,
}

impl CurvatureField {
    pub fn vertex_magnitude(&self, v: usize) -> f64 {
        self.k1[v].abs().max(self.k2[v].abs())
    }

    pub fn concat<'a>(fields: impl IntoIterator<Item = &'a CurvatureField>) -> CurvatureField {
        let mut out = CurvatureField {
            frames: Vec::new(),
            tensors: Vec::new(),
            k1: Vec::new(),
            k2: Vec::new(),
            face_magnitude: Vec::new(),
            isolated_vertices: Vec::new(),
        };
        for f in fields {
            let offset = out.k1.len();
            out.frames.extend_from_slice(&f.frames);
            out.tensors.extend_from_slice(&f.tensors);
            out.k1.extend_from_slice(&f.k1);
            out.k2.extend_from_slice(&f.k2);
            out.face_magnitude.extend_from_slice(&f.face_magnitude);
            out.isolated_vertices
                .extend(f.isolated_vertices.iter().map(|v| v + offset));
        }
        out
    }

    /// Histogram of per-vertex magnitudes over `[0, max]` with `bins` bins.
    pub fn histogram(&self, bins: usize) -> (Vec<f64>, Vec<usize>) {
        let mags: Vec<f64> = (0..self.k1.len()).map(|v| self.vertex_magnitude(v)).collect();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for m in &mags {
            let b = ((m / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        (edges, counts)
    }
}

/// Rotates the frame `(u, v)` about the axis `(u x v) x new_normal` so that
/// its normal becomes `new_normal`.
fn rotate_frame(u: Vec3, v: Vec3, new_normal: Vec3) -> (Vec3, Vec3) {
    let old_normal = u.cross(&v);
    let ndot = old_normal.dot(&new_normal);
    if ndot <= -1.0 {
        return (-u, -v);
    }
    let perp_old = new_normal - ndot * old_normal;
    let dperp = (old_normal + new_normal) / (1.0 + ndot);
    (u - dperp * u.dot(&perp_old), v - dperp * v.dot(&perp_old))
}

/// Re-expresses a tensor given in frame `(old_u, old_v)` in frame
/// `(new_u, new_v)`.
fn project_tensor(
    old_u: Vec3,
    old_v: Vec3,
    t: CurvatureTensor,
    new_u: Vec3,
    new_v: Vec3,
) -> CurvatureTensor {
    let (ru, rv) = rotate_frame(new_u, new_v, old_u.cross(&old_v));
    let (u1, v1) = (ru.dot(&old_u), ru.dot(&old_v));
    let (u2, v2) = (rv.dot(&old_u), rv.dot(&old_v));
    CurvatureTensor {
        uu: t.uu * u1 * u1 + t.uv * 2.0 * u1 * v1 + t.vv * v1 * v1,
        uv: t.uu * u1 * u2 + t.uv * (u1 * v2 + u2 * v1) + t.vv * v1 * v2,
        vv: t.uu * u2 * u2 + t.uv * 2.0 * u2 * v2 + t.vv * v2 * v2,
    }
}

/// Mixed Voronoi area of each face corner (Meyer et al. 2003).
fn corner_areas(p: [Vec3; 3]) -> [f64; 3] {
    let e = [p[2] - p[1], p[0] - p[2], p[1] - p[0]];
    let area = 0.5 * e[0].cross(&e[1]).norm();
    let l2 = [e[0].norm_squared(), e[1].norm_squared(), e[2].norm_squared()];
    let ew = [
        l2[0] * (l2[1] + l2[2] - l2[0]),
        l2[1] * (l2[2] + l2[0] - l2[1]),
        l2[2] * (l2[0] + l2[1] - l2[2]),
    ];
    let mut c = [0.0; 3];
    if ew[0] <= 0.0 {
        c[1] = -0.25 * l2[2] * area / e[0].dot(&e[2]);
        c[2] = -0.25 * l2[1] * area / e[0].dot(&e[1]);
        c[0] = area - c[1] - c[2];
    } else if ew[1] <= 0.0 {
        c[2] = -0.25 * l2[0] * area / e[1].dot(&e[0]);
        c[0] = -0.25 * l2[2] * area / e[1].dot(&e[2]);
        c[1] = area - c[2] - c[0];
    } else if ew[2] <= 0.0 {
        c[0] = -0.25 * l2[1] * area / e[2].dot(&e[1]);
        c[1] = -0.25 * l2[0] * area / e[2].dot(&e[0]);
        c[2] = area - c[0] - c[1];
    } else {
        let s = 0.5 * area / (ew[0] + ew[1] + ew[2]);
        for j in 0..3 {
            c[j] = s * (ew[(j + 1) % 3] + ew[(j + 2) % 3]);
        }
    }
    c
}

/// Least-squares second fundamental form of one face in its own frame
/// `(t, b)`, from the three edge/normal-difference pairs.
fn face_tensor(p: [Vec3; 3], n: [Vec3; 3]) -> (Vec3, Vec3, CurvatureTensor) {
    let e = [p[2] - p[1], p[0] - p[2], p[1] - p[0]];
    let t = e[0].normalize();
    let nf = e[0].cross(&e[1]);
    let b = nf.cross(&t).normalize();

    let (mut w00, mut w01, mut w22) = (0.0, 0.0, 0.0);
    let mut m = [0.0; 3];
    for j in 0..3 {
        let u = e[j].dot(&t);
        let v = e[j].dot(&b);
        w00 += u * u;
        w01 += u * v;
        w22 += v * v;
        let dn = n[(j + 2) % 3] - n[(j + 1) % 3];
        let dnu = dn.dot(&t);
        let dnv = dn.dot(&b);
        m[0] += dnu * u;
        m[1] += dnu * v + dnv * u;
        m[2] += dnv * v;
    }
    let w = nalgebra::Matrix3::new(w00, w01, 0.0, w01, w00 + w22, w01, 0.0, w01, w22);
    let x = w
        .lu()
        .solve(&nalgebra::Vector3::new(m[0], m[1], m[2]))
        .unwrap_or_else(nalgebra::Vector3::zeros);
    (
        t,
        b,
        CurvatureTensor {
            uu: x[0],
            uv: x[1],
            vv: x[2],
        },
    )
}

fn initial_frame(normal: Vec3, hint: Vec3) -> (Vec3, Vec3) {
    let mut u = hint.cross(&normal);
    if u.norm() < 1e-12 {
        // hint parallel to the normal: pick any perpendicular
        let axis = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        u = axis.cross(&normal);
    }
    let u = u.normalize();
    (u, normal.cross(&u))
}

/// Estimates per-vertex curvature tensors and principal curvatures, and the
/// per-face magnitude used for the BRDF and diffraction sampling.
///
/// Sign convention: curvature is positive where the surface bends away from
/// its normal (a sphere with outward normals has `k1 = k2 = 1/R`).
pub fn estimate_curvature(mesh: &Mesh) -> CurvatureField {
    let nv = mesh.num_vertices();
    let normals = &mesh.vertex_normals;

    let mut hint = vec![None; nv];
    let mut point_area = vec![0.0; nv];
    let corners: Vec<[f64; 3]> = mesh
        .faces
        .par_iter()
        .map(|f| corner_areas([mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]]))
        .collect();
    for (f, c) in mesh.faces.iter().zip(&corners) {
        for j in 0..3 {
            point_area[f[j]] += c[j];
            if hint[f[j]].is_none() {
                hint[f[j]] = Some(mesh.vertices[f[(j + 1) % 3]] - mesh.vertices[f[j]]);
            }
        }
    }
    let frames: Vec<(Vec3, Vec3)> = (0..nv)
        .map(|v| initial_frame(normals[v], hint[v].unwrap_or_else(Vec3::x)))
        .collect();
    let isolated_vertices: Vec<usize> = (0..nv).filter(|&v| hint[v].is_none()).collect();
    if !isolated_vertices.is_empty() {
        log::warn!(
            "{} vertices belong to no face; their curvature is set to zero",
            isolated_vertices.len()
        );
    }

    // Per face: fit, then project into each corner vertex frame.
    let projected: Vec<[CurvatureTensor; 3]> = mesh
        .faces
        .par_iter()
        .map(|f| {
            let p = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
            let n = [normals[f[0]], normals[f[1]], normals[f[2]]];
            let (t, b, tensor) = face_tensor(p, n);
            [0, 1, 2].map(|j| {
                let (u, v) = frames[f[j]];
                project_tensor(t, b, tensor, u, v)
            })
        })
        .collect();

    let mut tensors = vec![CurvatureTensor::default(); nv];
    for ((f, c), proj) in mesh.faces.iter().zip(&corners).zip(&projected) {
        for j in 0..3 {
            let v = f[j];
            if point_area[v] <= 0.0 {
                continue;
            }
            let w = c[j] / point_area[v];
            tensors[v].uu += w * proj[j].uu;
            tensors[v].uv += w * proj[j].uv;
            tensors[v].vv += w * proj[j].vv;
        }
    }

    let (k1, k2): (Vec<f64>, Vec<f64>) = tensors.iter().map(CurvatureTensor::principal).unzip();
    let vertex_mag: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| a.abs().max(b.abs())).collect();
    let face_magnitude = mesh
        .faces
        .iter()
        .map(|f| (vertex_mag[f[0]] + vertex_mag[f[1]] + vertex_mag[f[2]]) / 3.0)
        .collect();

    CurvatureField {
        frames,
        tensors,
        k1,
        k2,
        face_magnitude,
        isolated_vertices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, repair_mesh, DEFAULT_MERGE_TOLERANCE};

    fn prepared(raw: crate::mesh::RawMesh) -> Mesh {
        repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap().0
    }

    #[test]
    fn principal_values_are_ordered() {
        let t = CurvatureTensor {
            uu: -2.0,
            uv: 0.5,
            vv: 3.0,
        };
        let (a, b) = t.principal();
        assert!(a >= b);
        assert!((a + b - 1.0).abs() < 1e-12);
        assert!((a * b - (-6.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn corner_areas_sum_to_face_area() {
        let tris = [
            [Vec3::zeros(), Vec3::x(), Vec3::y()],
            [Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.3, 0.2, 0.0)],
            [Vec3::zeros(), Vec3::new(1.0, 0.1, 0.0), Vec3::new(0.5, 0.9, 0.2)],
        ];
        for p in tris {
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            let c = corner_areas(p);
            assert!((c.iter().sum::<f64>() - area).abs() < 1e-12 * area.max(1.0));
            assert!(c.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn sphere_curvature_is_inverse_radius() {
        let mesh = prepared(primitives::icosphere(0.1, 4).unwrap());
        let c = estimate_curvature(&mesh);
        for v in 0..mesh.num_vertices() {
            assert!((c.k1[v] - 10.0).abs() < 0.5, "k1[{v}] = {}", c.k1[v]);
            assert!((c.k2[v] - 10.0).abs() < 0.5, "k2[{v}] = {}", c.k2[v]);
        }
    }

    #[test]
    fn plane_has_zero_curvature() {
        let mesh = prepared(primitives::plate(1.0, 1.0, 8).unwrap());
        let c = estimate_curvature(&mesh);
        assert!(c.face_magnitude.iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn cylinder_curvature() {
        let mesh = prepared(primitives::open_cylinder(0.05, 0.3, 96, 24).unwrap());
        let c = estimate_curvature(&mesh);
        let mut checked = 0;
        for v in 0..mesh.num_vertices() {
            let z = mesh.vertices[v].z;
            if z.abs() > 0.1 {
                continue; // keep away from the open rims
            }
            assert!((c.k1[v] - 20.0).abs() < 1.0, "k1 = {}", c.k1[v]);
            assert!(c.k2[v].abs() < 1.0, "k2 = {}", c.k2[v]);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn isolated_vertex_gets_zero_curvature() {
        let mut raw = primitives::icosphere(0.1, 1).unwrap();
        let (mut mesh, _) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        raw.vertices.push(Vec3::new(5.0, 5.0, 5.0));
        mesh = Mesh::from_parts(raw.vertices.clone(), mesh.faces.clone());
        let c = estimate_curvature(&mesh);
        let last = mesh.num_vertices() - 1;
        assert_eq!(c.isolated_vertices, vec![last]);
        assert_eq!(c.k1[last], 0.0);
        assert_eq!(c.k2[last], 0.0);
    }
}
