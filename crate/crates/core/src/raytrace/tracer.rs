use rayon::prelude::*;

use super::{Bvh, Contribution, Provenance, Ray, SURFACE_EPSILON};
use crate::mesh::{gaussian_lobe, BrdfField, Mesh};
use crate::scene::NormalMode;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    pub max_bounces: usize,
    pub normals: NormalMode,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            max_bounces: 3,
            normals: NormalMode::Geometric,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bounce {
    pub face: usize,
    pub point: Vec3,
    pub incoming: Vec3,
    pub reflected: Vec3,
    /// Flat face normal.
    pub normal: Vec3,
    /// Emitter to `point` along the chain (m).
    pub path_length: f64,
    /// Per-band gain arriving at this bounce, before its own `k`.
    pub gain_in: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BounceChain {
    pub bounces: Vec<Bounce>,
}

/// Specular reflection of `d` about unit normal `n`.
#[inline]
pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

fn shading_normal(mesh: &Mesh, face: usize, u: f64, v: f64, mode: NormalMode) -> Vec3 {
    let geo = mesh.geometric_normals[face];
    match mode {
        NormalMode::Geometric => geo,
        NormalMode::Phong => {
            let [a, b, c] = mesh.faces[face];
            let n = mesh.vertex_normals[a] * (1.0 - u - v)
                + mesh.vertex_normals[b] * u
                + mesh.vertex_normals[c] * v;
            let len = n.norm();
            if len > 1e-12 {
                n / len
            } else {
                geo
            }
        }
    }
}

/// Follows one ray through up to `max_bounces` specular reflections.
pub fn trace_ray(ray: &Ray, mesh: &Mesh, bvh: &Bvh, brdf: &BrdfField, opts: &TraceOptions) -> BounceChain {
    let mut bounces = Vec::new();
    let mut origin = ray.origin;
    let mut dir = ray.direction;
    let mut path = ray.path_length;
    let mut gain = ray.gain.clone();
    let mut offset = 0.0;
    for _ in 0..opts.max_bounces {
        let Some(hit) = bvh.nearest(&origin, &dir, f64::INFINITY) else {
            break;
        };
        path += hit.t + offset;
        let geo = mesh.geometric_normals[hit.face];
        let mut reflected = reflect(&dir, &shading_normal(mesh, hit.face, hit.u, hit.v, opts.normals));
        if reflected.dot(&geo) * dir.dot(&geo) > 0.0 {
            // interpolated normal would send the ray through the surface
            reflected = reflect(&dir, &geo);
        }
        let reflected = reflected.normalize();
        bounces.push(Bounce {
            face: hit.face,
            point: hit.point,
            incoming: dir,
            reflected,
            normal: geo,
            path_length: path,
            gain_in: gain.clone(),
        });
        for (g, k) in gain.iter_mut().zip(brdf.k_row(hit.face)) {
            *g *= k;
        }
        origin = hit.point + reflected * SURFACE_EPSILON;
        offset = SURFACE_EPSILON;
        dir = reflected;
    }
    BounceChain { bounces }
}

pub fn trace_paths(rays: &[Ray], mesh: &Mesh, bvh: &Bvh, brdf: &BrdfField, opts: &TraceOptions) -> Vec<BounceChain> {
    rays.par_iter()
        .map(|r| trace_ray(r, mesh, bvh, brdf, opts))
        .collect()
}

/// Samples the last bounce's reflection lobe at every receiver.
///
/// The magnitude is `gain_in * lobe(theta; alpha) * k` per band, `theta`
/// being the angle between the reflected ray and the direction to the
/// receiver. Receivers behind the face or hidden by geometry get zero.
/// Chains without bounces yield nothing.
pub fn sample_brdf_to_receivers(
    chain: &BounceChain,
    receivers: &[Vec3],
    bvh: &Bvh,
    brdf: &BrdfField,
) -> Vec<Contribution> {
    let Some(last) = chain.bounces.last() else {
        return Vec::new();
    };
    let alpha = brdf.alpha_row(last.face);
    let k = brdf.k_row(last.face);
    let side = last.reflected.dot(&last.normal);
    receivers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let to_r = r - last.point;
            let dist = to_r.norm();
            let mut magnitude = vec![0.0; k.len()];
            if dist > 0.0 {
                let dir = to_r / dist;
                let visible = dir.dot(&last.normal) * side > 0.0 && !bvh.occluded(&last.point, r, SURFACE_EPSILON);
                if visible {
                    let theta = dir.dot(&last.reflected).clamp(-1.0, 1.0).acos();
                    for j in 0..k.len() {
                        magnitude[j] = last.gain_in[j] * gaussian_lobe(theta, alpha[j]) * k[j];
                    }
                }
            }
            Contribution {
                receiver: i,
                magnitude,
                path_length: last.path_length + dist,
                provenance: Provenance::Specular,
                face: last.face,
            }
        })
        .collect()
}
