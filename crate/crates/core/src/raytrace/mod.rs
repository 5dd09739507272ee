//! Specular ray tracing: ray generation over the sensor's frontal
//! hemisphere, ray/triangle intersection, bounce propagation and sampling
//! of the last bounce's reflection lobe at every receiver.

mod bvh;
mod tracer;

use std::f64::consts::TAU;

use nalgebra::Matrix3;
use rand::Rng;
use serde::Serialize;

use crate::mesh::Mesh;
use crate::scene::{EqualAreaPartition, WorldSensor};
use crate::{Result, Vec3};

pub use bvh::Bvh;
pub use tracer::{
    reflect, sample_brdf_to_receivers, trace_paths, trace_ray, Bounce, BounceChain, TraceOptions,
};

/// Offset (m) applied along a reflected ray to leave the surface.
pub const SURFACE_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    /// Path travelled before `origin` (m).
    pub path_length: f64,
    /// Per-band gain, starts at 1.
    pub gain: Vec<f64>,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, bands: usize) -> Ray {
        Ray {
            origin,
            direction,
            path_length: 0.0,
            gain: vec![1.0; bands],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub face: usize,
    pub t: f64,
    pub point: Vec3,
    /// Barycentric weights of the second and third vertex.
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Specular,
    Diffraction,
}

/// One acoustic path to one receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub receiver: usize,
    /// Magnitude per BRDF band (`BrdfField::freqs`), dimensionless.
    pub magnitude: Vec<f64>,
    /// Emitter to receiver along the path (m).
    pub path_length: f64,
    pub provenance: Provenance,
    /// Face of the last reflection or of the diffraction point.
    pub face: usize,
}

impl Contribution {
    pub fn is_zero(&self) -> bool {
        self.magnitude.iter().all(|&m| m == 0.0)
    }
}

/// Moller-Trumbore ray/triangle test. Returns `(t, u, v)` for hits with
/// `t > 0`; rays parallel to the plane never hit.
#[inline]
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() <= 1e-14 * e1.norm_squared().max(e2.norm_squared()) {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some((t, u, v))
}

/// Nearest hit over all faces by exhaustive search. [`Bvh::nearest`] gives
/// the same answer faster.
pub fn intersect(origin: &Vec3, dir: &Vec3, mesh: &Mesh) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for f in 0..mesh.num_faces() {
        if let Some((t, u, v)) = intersect_triangle(origin, dir, &mesh.triangle(f)) {
            if best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    face: f,
                    t,
                    point: origin + dir * t,
                    u,
                    v,
                });
            }
        }
    }
    best
}

/// Deterministic ray directions: equal-area cells of the frontal hemisphere
/// (pole on the sensor's +X axis), rolled about the pole by a random angle
/// and rotated into the world frame.
#[derive(Clone, Debug)]
pub struct RayGenerator {
    partition: EqualAreaPartition,
    to_world: Matrix3<f64>,
    origin: Vec3,
}

impl RayGenerator {
    pub fn new(n: usize, sensor: &WorldSensor, rng: &mut impl Rng) -> Result<RayGenerator> {
        let partition = EqualAreaPartition::new(n, true)?;
        let roll: f64 = rng.random_range(0.0..TAU);
        let (s, c) = roll.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        Ok(RayGenerator {
            partition,
            to_world: sensor.orientation * rx,
            origin: sensor.emitter,
        })
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self, index: usize) -> Vec3 {
        (self.to_world * self.partition.direction(index)).normalize()
    }

    pub fn ray(&self, index: usize, bands: usize) -> Ray {
        Ray::new(self.origin, self.direction(index), bands)
    }
}

/// `n` rays from the emitter covering the sensor's frontal hemisphere with
/// equal-area density. `n = 1` gives the boresight ray.
pub fn generate_rays(n: usize, sensor: &WorldSensor, rng: &mut impl Rng, bands: usize) -> Result<Vec<Ray>> {
    let gen = RayGenerator::new(n, sensor, rng)?;
    Ok((0..n).map(|i| gen.ray(i, bands)).collect())
}
