use std::collections::{HashMap, HashSet, VecDeque};

use serde::Serialize;

use super::{geometric_normals_and_areas, Mesh, RawMesh};
use crate::{Error, Result, Vec3};

/// Vertices closer than this (meters) are merged by default.
pub const DEFAULT_MERGE_TOLERANCE: f64 = 1e-6;

/// What [`repair_mesh`] changed, and what it could not fix.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RepairReport {
    pub input_vertices: usize,
    pub input_faces: usize,
    pub merged_vertices: usize,
    pub removed_degenerate_faces: usize,
    pub removed_duplicate_faces: usize,
    pub flipped_faces: usize,
    pub components: usize,
    /// Components on which a consistent winding could not be found. The
    /// mesh is still returned with a best-effort orientation.
    pub non_orientable_components: usize,
    /// Edges used by a single face. Nonzero means the surface is open; holes
    /// are not filled.
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

/// Cleans a triangle soup: merges vertices within `merge_tolerance`, drops
/// degenerate and duplicate faces, makes windings consistent across shared
/// edges and orients each connected component outward.
///
/// Idempotent: repairing an already repaired mesh reproduces it exactly.
pub fn repair_mesh(raw: &RawMesh, merge_tolerance: f64) -> Result<(Mesh, RepairReport)> {
    raw.validate()?;
    if !(merge_tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "merge tolerance must be non-negative, got {merge_tolerance}"
        )));
    }
    let mut report = RepairReport {
        input_vertices: raw.vertices.len(),
        input_faces: raw.faces.len(),
        ..Default::default()
    };

    let remap = merge_vertices(&raw.vertices, merge_tolerance);
    let (lo, hi) = super::bounding_box(&raw.vertices);
    let diag = (hi - lo).norm();
    let area_floor = 1e-14 * diag * diag;

    let mut seen = HashSet::new();
    let mut faces = Vec::with_capacity(raw.faces.len());
    for f in &raw.faces {
        let g = [remap[f[0]], remap[f[1]], remap[f[2]]];
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            report.removed_degenerate_faces += 1;
            continue;
        }
        let [a, b, c] = g.map(|i| raw.vertices[i]);
        if 0.5 * (b - a).cross(&(c - a)).norm() <= area_floor {
            report.removed_degenerate_faces += 1;
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        if !seen.insert(key) {
            report.removed_duplicate_faces += 1;
            continue;
        }
        faces.push(g);
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }

    orient(&raw.vertices, &mut faces, &mut report);

    // Compact to referenced vertices in order of first use. Done after
    // orientation so that a second pass sees the same order.
    let mut new_index = vec![usize::MAX; raw.vertices.len()];
    let mut vertices = Vec::new();
    for f in &mut faces {
        for v in f.iter_mut() {
            if new_index[*v] == usize::MAX {
                new_index[*v] = vertices.len();
                vertices.push(raw.vertices[*v]);
            }
            *v = new_index[*v];
        }
    }
    report.merged_vertices = raw.vertices.len() - vertices.len();

    if report.non_orientable_components > 0 {
        log::warn!(
            "{} mesh component(s) are non-orientable; using best-effort orientation",
            report.non_orientable_components
        );
    }
    if report.boundary_edges > 0 {
        log::warn!(
            "mesh is open ({} boundary edges); holes are not filled",
            report.boundary_edges
        );
    }

    Ok((Mesh::from_parts(vertices, faces), report))
}

/// Maps every vertex to the index of the first earlier vertex within
/// `tol`, or to itself.
fn merge_vertices(vertices: &[Vec3], tol: f64) -> Vec<usize> {
    let mut remap = Vec::with_capacity(vertices.len());
    if tol == 0.0 {
        let mut exact: HashMap<[u64; 3], usize> = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            // +0.0 folds -0.0 onto 0.0
            let key = [v.x + 0.0, v.y + 0.0, v.z + 0.0].map(f64::to_bits);
            remap.push(*exact.entry(key).or_insert(i));
        }
        return remap;
    }
    let cell = tol;
    let key_of = |p: &Vec3| -> [i64; 3] { [p.x, p.y, p.z].map(|c| (c / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in vertices.iter().enumerate() {
        let k = key_of(p);
        let mut found: Option<usize> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cands) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in cands {
                            if (vertices[j] - p).norm() <= tol && found.is_none_or(|f| j < f) {
                                found = Some(j);
                            }
                        }
                    }
                }
            }
        }
        match found {
            Some(j) => remap.push(j),
            None => {
                grid.entry(k).or_default().push(i);
                remap.push(i);
            }
        }
    }
    remap
}

fn directed_edges(f: &[usize; 3]) -> [(usize, usize); 3] {
    [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
}

/// Propagates a consistent winding across shared edges (breadth first, per
/// connected component), then flips any component whose area-weighted
/// outward vote is negative.
fn orient(vertices: &[Vec3], faces: &mut [[usize; 3]], report: &mut RepairReport) {
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for (a, b) in directed_edges(f) {
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    for users in edge_faces.values() {
        match users.len() {
            1 => report.boundary_edges += 1,
            2 => {}
            _ => report.non_manifold_edges += 1,
        }
    }

    let n = faces.len();
    let mut flip: Vec<Option<bool>> = vec![None; n];
    let mut queue = VecDeque::new();
    let mut components: Vec<Vec<usize>> = Vec::new();

    for seed in 0..n {
        if flip[seed].is_some() {
            continue;
        }
        flip[seed] = Some(false);
        queue.push_back(seed);
        let mut members = vec![seed];
        let mut conflict = false;
        while let Some(fi) = queue.pop_front() {
            let f_flip = flip[fi].unwrap();
            for (a, b) in directed_edges(&faces[fi]) {
                for &g in &edge_faces[&(a.min(b), a.max(b))] {
                    if g == fi {
                        continue;
                    }
                    let same_direction = directed_edges(&faces[g]).contains(&(a, b));
                    let wanted = if same_direction { !f_flip } else { f_flip };
                    match flip[g] {
                        None => {
                            flip[g] = Some(wanted);
                            members.push(g);
                            queue.push_back(g);
                        }
                        Some(existing) if existing != wanted => conflict = true,
                        Some(_) => {}
                    }
                }
            }
        }
        if conflict {
            report.non_orientable_components += 1;
        }
        components.push(members);
    }
    report.components = components.len();

    let oriented = |f: &[usize; 3], fl: bool| if fl { [f[0], f[2], f[1]] } else { *f };
    for members in &components {
        let mut area_sum = 0.0;
        let mut centroid = Vec3::zeros();
        let mut geo = Vec::with_capacity(members.len());
        for &fi in members {
            let f = oriented(&faces[fi], flip[fi].unwrap());
            let (ns, areas) = geometric_normals_and_areas(vertices, &[f]);
            let c = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
            centroid += c * areas[0];
            area_sum += areas[0];
            geo.push((ns[0], c, areas[0]));
        }
        centroid /= area_sum;
        let vote: f64 = geo
            .iter()
            .map(|(nrm, c, a)| {
                let d = nrm.dot(&(c - centroid));
                if d > 0.0 {
                    *a
                } else if d < 0.0 {
                    -*a
                } else {
                    0.0
                }
            })
            .sum();
        let invert = vote < 0.0;
        for &fi in members {
            let fl = flip[fi].unwrap() ^ invert;
            flip[fi] = Some(fl);
        }
    }

    for (f, fl) in faces.iter_mut().zip(&flip) {
        if fl.unwrap() {
            f.swap(1, 2);
            report.flipped_faces += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn soup_of(m: &RawMesh) -> RawMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in &m.faces {
            let b = vertices.len();
            vertices.extend(f.iter().map(|&i| m.vertices[i]));
            faces.push([b, b + 1, b + 2]);
        }
        RawMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn cube_soup_collapses_to_eight_vertices() {
        let cube = primitives::cuboid(Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let soup = soup_of(&cube);
        assert_eq!(soup.vertices.len(), 36);
        let (mesh, report) = repair_mesh(&soup, DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(mesh.num_vertices(), 8);
        assert_eq!(mesh.num_faces(), 12);
        assert_eq!(report.merged_vertices, 28);
        assert_eq!(report.boundary_edges, 0);
    }

    #[test]
    fn duplicate_face_is_dropped() {
        let cube = primitives::cuboid(Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let mut raw = cube.clone();
        let dup = raw.faces[3];
        raw.faces.push([dup[1], dup[2], dup[0]]);
        let (mesh, report) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(mesh.num_faces(), 12);
        assert_eq!(report.removed_duplicate_faces, 1);
    }

    #[test]
    fn degenerate_only_mesh_is_empty() {
        let raw = RawMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2], [0, 0, 1]],
        )
        .unwrap();
        assert!(matches!(
            repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn flipped_face_on_icosphere_is_fixed() {
        for flipped in [0usize, 17, 200] {
            let mut raw = primitives::icosphere(0.1, 2).unwrap();
            raw.faces[flipped].swap(0, 1);
            let (mesh, report) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
            assert_eq!(mesh.num_faces(), 20 * 16);
            assert_eq!(report.non_orientable_components, 0);
            for f in 0..mesh.num_faces() {
                let c = mesh.face_centroid(f);
                assert!(mesh.geometric_normals[f].dot(&c) > 0.0, "face {f} inward");
            }
        }
    }

    #[test]
    fn inside_out_sphere_is_turned_outward() {
        let mut raw = primitives::icosphere(0.1, 1).unwrap();
        for f in &mut raw.faces {
            f.swap(1, 2);
        }
        let (mesh, _) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        for f in 0..mesh.num_faces() {
            assert!(mesh.geometric_normals[f].dot(&mesh.face_centroid(f)) > 0.0);
        }
    }

    #[test]
    fn moebius_strip_is_reported_non_orientable() {
        // A twisted band of quads closes onto itself with reversed winding.
        let n = 24;
        let mut vertices = Vec::new();
        for i in 0..n {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            let half = t / 2.0;
            for s in [-0.1, 0.1] {
                vertices.push(Vec3::new(
                    (1.0 + s * half.cos()) * t.cos(),
                    (1.0 + s * half.cos()) * t.sin(),
                    s * half.sin(),
                ));
            }
        }
        let mut faces = Vec::new();
        for i in 0..n {
            let (a, b) = (2 * i, 2 * i + 1);
            let (c, d) = if i + 1 < n {
                (2 * (i + 1), 2 * (i + 1) + 1)
            } else {
                (1, 0) // the half twist swaps the rails
            };
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
        let raw = RawMesh::new(vertices, faces).unwrap();
        let (mesh, report) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        assert_eq!(report.non_orientable_components, 1);
        assert_eq!(mesh.num_faces(), 2 * n);
    }

    #[test]
    fn repair_is_idempotent() {
        let mut raw = primitives::icosphere(0.05, 2).unwrap();
        raw.faces[5].swap(0, 2);
        let once = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap().0;
        let twice = repair_mesh(&once.to_raw(), DEFAULT_MERGE_TOLERANCE).unwrap().0;
        assert_eq!(once, twice);
    }

    #[test]
    fn normals_are_unit_length() {
        let raw = primitives::capped_cylinder(0.05, 0.2, 32, 8).unwrap();
        let (mesh, _) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        for n in mesh
            .vertex_normals
            .iter()
            .chain(&mesh.face_normals)
            .chain(&mesh.geometric_normals)
        {
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
        // face normal is the renormalized vertex-normal average
        for (f, face) in mesh.faces.iter().enumerate() {
            let avg = face.iter().map(|&v| mesh.vertex_normals[v]).sum::<Vec3>();
            assert!((avg.normalize() - mesh.face_normals[f]).norm() < 1e-12);
        }
    }
}
