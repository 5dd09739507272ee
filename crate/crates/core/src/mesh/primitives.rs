//! Analytic test geometry, generated with shared vertices and outward
//! winding. Everything is centered at the origin.

use std::collections::HashMap;
use std::f64::consts::TAU;

use super::RawMesh;
use crate::{Error, Result, Vec3};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Sphere of radius `r` from a subdivided icosahedron: `20 * 4^subdiv`
/// faces.
pub fn icosphere(r: f64, subdiv: u32) -> Result<RawMesh> {
    positive("radius", r)?;
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vs: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push(((vs[a] + vs[b]) * 0.5).normalize());
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= r;
    }
    RawMesh::new(vertices, faces)
}

/// Axis-aligned box with edge lengths `size`, 8 vertices and 12 faces.
pub fn cuboid(size: Vec3) -> Result<RawMesh> {
    for (n, v) in ["x", "y", "z"].iter().zip(size.iter()) {
        positive(&format!("box size {n}"), *v)?;
    }
    let h = size / 2.0;
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    RawMesh::new(vertices, faces)
}

/// Flat rectangle in the z = 0 plane, normal +Z, split into an `n x n`
/// grid of quads.
pub fn plate(width_x: f64, width_y: f64, n: usize) -> Result<RawMesh> {
    positive("plate width", width_x)?;
    positive("plate height", width_y)?;
    if n == 0 {
        return Err(Error::InvalidParameter("plate needs at least one cell".into()));
    }
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(
                (i as f64 / n as f64 - 0.5) * width_x,
                (j as f64 / n as f64 - 0.5) * width_y,
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    RawMesh::new(vertices, faces)
}

fn cylinder_wall(
    r: f64,
    h: f64,
    segments: usize,
    rings: usize,
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
) -> usize {
    let base = vertices.len();
    for k in 0..=rings {
        let z = (k as f64 / rings as f64 - 0.5) * h;
        for s in 0..segments {
            let a = s as f64 / segments as f64 * TAU;
            vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
        }
    }
    let idx = |s: usize, k: usize| base + k * segments + s % segments;
    for k in 0..rings {
        for s in 0..segments {
            faces.push([idx(s, k), idx(s + 1, k), idx(s + 1, k + 1)]);
            faces.push([idx(s, k), idx(s + 1, k + 1), idx(s, k + 1)]);
        }
    }
    base
}

fn check_cylinder(r: f64, h: f64, segments: usize, rings: usize) -> Result<()> {
    positive("cylinder radius", r)?;
    positive("cylinder height", h)?;
    if segments < 3 || rings == 0 {
        return Err(Error::InvalidParameter(
            "cylinder needs at least 3 segments and 1 ring".into(),
        ));
    }
    Ok(())
}

/// Open tube of radius `r` along Z, without end caps.
pub fn open_cylinder(r: f64, h: f64, segments: usize, rings: usize) -> Result<RawMesh> {
    check_cylinder(r, h, segments, rings)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    cylinder_wall(r, h, segments, rings, &mut vertices, &mut faces);
    RawMesh::new(vertices, faces)
}

/// Closed cylinder along Z with fan-triangulated end caps.
pub fn capped_cylinder(r: f64, h: f64, segments: usize, rings: usize) -> Result<RawMesh> {
    check_cylinder(r, h, segments, rings)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let base = cylinder_wall(r, h, segments, rings, &mut vertices, &mut faces);
    let bottom = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, -h / 2.0));
    let top = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, h / 2.0));
    let top_ring = base + rings * segments;
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([bottom, base + s1, base + s]);
        faces.push([top, top_ring + s, top_ring + s1]);
    }
    RawMesh::new(vertices, faces)
}
