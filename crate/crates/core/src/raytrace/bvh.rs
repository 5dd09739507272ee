use crate::mesh::Mesh;
use crate::Vec3;

use super::{intersect_triangle, Hit};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: first index into `order`. Inner: index of the right child (the
    /// left child follows the node directly).
    start: u32,
    /// Leaf face count; zero marks an inner node.
    count: u32,
}

/// Bounding volume hierarchy over mesh faces, median split on the widest
/// centroid axis.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
}

#[derive(Clone, Copy)]
struct RayCtx {
    origin: Vec3,
    dir: Vec3,
    inv: Vec3,
}

impl RayCtx {
    fn new(origin: Vec3, dir: Vec3) -> Self {
        RayCtx {
            origin,
            dir,
            inv: Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z),
        }
    }

    /// Entry distance into the box, or `None` if it misses within `t_max`.
    #[inline]
    fn slab(&self, lo: &Vec3, hi: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if self.dir[a] == 0.0 {
                if self.origin[a] < lo[a] || self.origin[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let ta = (lo[a] - self.origin[a]) * self.inv[a];
            let tb = (hi[a] - self.origin[a]) * self.inv[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t0 <= t1).then_some(t0)
    }
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Bvh {
        let tris: Vec<[Vec3; 3]> = (0..mesh.num_faces()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            build_node(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Bvh { nodes, order, tris }
    }

    pub fn num_faces(&self) -> usize {
        self.tris.len()
    }

    /// Nearest hit with `0 < t < t_max`.
    pub fn nearest(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let ray = RayCtx::new(*origin, *dir);
        let mut best: Option<(usize, f64, f64, f64)> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        if ray.slab(&self.nodes[0].lo, &self.nodes[0].hi, limit).is_none() {
            return None;
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let ni = stack[sp] as usize;
            let node = &self.nodes[ni];
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    if let Some((t, u, v)) = intersect_triangle(origin, dir, &self.tris[f as usize]) {
                        if t < limit {
                            limit = t;
                            best = Some((f as usize, t, u, v));
                        }
                    }
                }
                continue;
            }
            let (l, r) = (ni + 1, node.start as usize);
            let tl = ray.slab(&self.nodes[l].lo, &self.nodes[l].hi, limit);
            let tr = ray.slab(&self.nodes[r].lo, &self.nodes[r].hi, limit);
            match (tl, tr) {
                (Some(a), Some(b)) => {
                    // push the farther child first
                    let (near, far) = if a <= b { (l, r) } else { (r, l) };
                    stack[sp] = far as u32;
                    stack[sp + 1] = near as u32;
                    sp += 2;
                }
                (Some(_), None) => {
                    stack[sp] = l as u32;
                    sp += 1;
                }
                (None, Some(_)) => {
                    stack[sp] = r as u32;
                    sp += 1;
                }
                (None, None) => {}
            }
        }
        best.map(|(face, t, u, v)| Hit {
            face,
            t,
            point: origin + dir * t,
            u,
            v,
        })
    }

    /// True if any face is hit with `t_min < t < t_max`.
    pub fn any_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let ray = RayCtx::new(*origin, *dir);
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let ni = stack[sp] as usize;
            let node = &self.nodes[ni];
            if ray.slab(&node.lo, &node.hi, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    if let Some((t, _, _)) = intersect_triangle(origin, dir, &self.tris[f as usize]) {
                        if t > t_min && t < t_max {
                            return true;
                        }
                    }
                }
                continue;
            }
            stack[sp] = node.start;
            stack[sp + 1] = (ni + 1) as u32;
            sp += 2;
        }
        false
    }

    /// True if the open segment between `a` and `b`, shortened by `eps` at
    /// both ends, crosses the mesh.
    pub fn occluded(&self, a: &Vec3, b: &Vec3, eps: f64) -> bool {
        let d = b - a;
        let len = d.norm();
        if len <= 2.0 * eps {
            return false;
        }
        self.any_hit(a, &(d / len), eps, len - eps)
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut clo = lo;
    let mut chi = hi;
    for &f in &order[start..end] {
        for p in &tris[f as usize] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let c = &centroids[f as usize];
        clo = clo.inf(c);
        chi = chi.sup(c);
    }
    let index = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start: start as u32,
        count: (end - start) as u32,
    });
    let extent = chi - clo;
    if end - start <= LEAF_SIZE || extent.max() <= 0.0 {
        return index;
    }
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |a, b| {
        centroids[*a as usize][axis].total_cmp(&centroids[*b as usize][axis])
    });
    build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    nodes[index].start = right as u32;
    nodes[index].count = 0;
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, repair_mesh, DEFAULT_MERGE_TOLERANCE};
    use crate::raytrace::intersect;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bvh_matches_brute_force() {
        let raw = primitives::icosphere(0.3, 3).unwrap();
        let (a, _) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        let b = a.transformed(crate::scene::Pose::new(Vec3::new(0.5, 0.2, 0.0), [0.0; 3]).matrix());
        let mesh = Mesh::concat([&a, &b]);
        let bvh = Bvh::build(&mesh);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let o = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let fast = bvh.nearest(&o, &d, f64::INFINITY);
            let slow = intersect(&o, &d, &mesh);
            match (fast, slow) {
                (None, None) => {}
                (Some(x), Some(y)) => {
                    assert!((x.t - y.t).abs() < 1e-12);
                }
                other => panic!("disagreement {other:?}"),
            }
            assert_eq!(bvh.any_hit(&o, &d, 0.0, f64::INFINITY), slow.is_some());
        }
    }

    #[test]
    fn segment_occlusion() {
        let (wall, _) = repair_mesh(&primitives::plate(2.0, 2.0, 2).unwrap(), DEFAULT_MERGE_TOLERANCE).unwrap();
        let bvh = Bvh::build(&wall);
        assert!(bvh.occluded(&Vec3::new(0.0, 0.0, -1.0), &Vec3::new(0.1, 0.0, 1.0), 1e-6));
        assert!(!bvh.occluded(&Vec3::new(0.0, 0.0, -1.0), &Vec3::new(0.0, 0.0, -0.5), 1e-6));
        assert!(!bvh.occluded(&Vec3::new(3.0, 0.0, -1.0), &Vec3::new(3.0, 0.0, 1.0), 1e-6));
    }
}
