//! Scene geometry: STL import, mesh repair, curvature estimation and the
//! curvature-driven acoustic BRDF.
//!
//! The usual preparation chain is
//!
//! ```no_run
//! # fn main() -> sonotrace::Result<()> {
//! use sonotrace::mesh::{self, MaterialParams};
//!
//! let raw = mesh::load_stl("leaf.stl")?;
//! let (mesh, _report) = mesh::repair_mesh(&raw, mesh::DEFAULT_MERGE_TOLERANCE)?;
//! let curvature = mesh::estimate_curvature(&mesh);
//! let brdf = mesh::derive_brdf(&curvature, &[40e3, 60e3], &MaterialParams::default(), 343.0)?;
//! # Ok(())
//! # }
//! ```

mod brdf;
mod curvature;
pub mod primitives;
mod repair;
mod stl;

use nalgebra::Matrix4;
use serde::Serialize;

use crate::{Error, Result, Vec3};

pub use brdf::{derive_brdf, gaussian_lobe, sigmoid_ratio, BrdfField, MaterialParams};
pub use curvature::{estimate_curvature, CurvatureField, CurvatureTensor};
pub use repair::{repair_mesh, RepairReport, DEFAULT_MERGE_TOLERANCE};
pub use stl::{load_stl, parse_stl, write_stl_ascii, write_stl_binary};

/// Where a [`RawMesh`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    StlAscii,
    StlBinary,
    /// Built in memory (analytic primitive or conversion from a [`Mesh`]).
    Generated,
}

/// Unprocessed triangle soup, coordinates in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub source_format: SourceFormat,
}

impl RawMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let raw = RawMesh {
            vertices,
            faces,
            source_format: SourceFormat::Generated,
        };
        raw.validate()?;
        Ok(raw)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, f)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&v| v >= n))
        {
            return Err(Error::parse(
                "mesh",
                format!("face {i} references vertex {f:?} but only {n} vertices exist"),
            ));
        }
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::parse("mesh", format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    /// Uniformly scales all coordinates (unit conversion).
    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.vertices {
            *v *= factor;
        }
        self
    }
}

/// Repaired, oriented triangle mesh with normals.
///
/// `face_normals` are the renormalized averages of the three vertex normals
/// and feed curvature estimation; `geometric_normals` are the flat triangle
/// normals used for reflection.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
    pub face_normals: Vec<Vec3>,
    pub geometric_normals: Vec<Vec3>,
    pub face_areas: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh from already clean geometry, computing all normals.
    /// No merging or orientation is attempted; see [`repair_mesh`] for that.
    pub fn from_parts(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        let (geometric_normals, face_areas) = geometric_normals_and_areas(&vertices, &faces);
        let vertex_normals = vertex_normals(&vertices, &faces);
        let face_normals = averaged_face_normals(&faces, &vertex_normals, &geometric_normals);
        Mesh {
            vertices,
            faces,
            vertex_normals,
            face_normals,
            geometric_normals,
            face_areas,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }

    pub fn to_raw(&self) -> RawMesh {
        RawMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            source_format: SourceFormat::Generated,
        }
    }

    /// Applies a rigid homogeneous transform. Normals are rotated, not
    /// recomputed, so the result is bit-for-bit consistent with the input
    /// orientation.
    pub fn transformed(&self, matrix: &Matrix4<f64>) -> Mesh {
        let rot = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let trans = Vec3::new(matrix[(0, 3)], matrix[(1, 3)], matrix[(2, 3)]);
        let rotate_all = |ns: &[Vec3]| -> Vec<Vec3> { ns.iter().map(|n| rot * n).collect() };
        Mesh {
            vertices: self.vertices.iter().map(|v| rot * v + trans).collect(),
            faces: self.faces.clone(),
            vertex_normals: rotate_all(&self.vertex_normals),
            face_normals: rotate_all(&self.face_normals),
            geometric_normals: rotate_all(&self.geometric_normals),
            face_areas: self.face_areas.clone(),
        }
    }

    /// Concatenates meshes, offsetting face indices.
    pub fn concat<'a>(meshes: impl IntoIterator<Item = &'a Mesh>) -> Mesh {
        let mut out = Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            vertex_normals: Vec::new(),
            face_normals: Vec::new(),
            geometric_normals: Vec::new(),
            face_areas: Vec::new(),
        };
        for m in meshes {
            let offset = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.vertex_normals.extend_from_slice(&m.vertex_normals);
            out.faces.extend(
                m.faces
                    .iter()
                    .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
            );
            out.face_normals.extend_from_slice(&m.face_normals);
            out.geometric_normals.extend_from_slice(&m.geometric_normals);
            out.face_areas.extend_from_slice(&m.face_areas);
        }
        out
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub(crate) fn geometric_normals_and_areas(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
) -> (Vec<Vec3>, Vec<f64>) {
    faces
        .iter()
        .map(|&[a, b, c]| {
            let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
            let norm = cross.norm();
            let n = if norm > 0.0 { cross / norm } else { Vec3::z() };
            (n, 0.5 * norm)
        })
        .unzip()
}

/// Vertex normals with the weights of Max (1999): each incident face
/// contributes its cross product divided by the squared lengths of the two
/// edges meeting at the vertex. Exact for vertices sampled from a sphere.
pub(crate) fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    let mut fallback = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
        for j in 0..3 {
            let e1 = p[(j + 1) % 3] - p[j];
            let e2 = p[(j + 2) % 3] - p[j];
            let l = e1.norm_squared() * e2.norm_squared();
            if l > 0.0 {
                acc[f[j]] += cross / l;
            }
            fallback[f[j]] += cross;
        }
    }
    acc.iter()
        .zip(&fallback)
        .map(|(n, fb)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else if fb.norm() > 0.0 {
                fb.normalize()
            } else {
                Vec3::z()
            }
        })
        .collect()
}

pub(crate) fn averaged_face_normals(
    faces: &[[usize; 3]],
    vertex_normals: &[Vec3],
    geometric: &[Vec3],
) -> Vec<Vec3> {
    faces
        .iter()
        .zip(geometric)
        .map(|(f, g)| {
            let s = vertex_normals[f[0]] + vertex_normals[f[1]] + vertex_normals[f[2]];
            let len = s.norm();
            if len > 1e-12 {
                s / len
            } else {
                *g
            }
        })
        .collect()
}
