//! Monte-Carlo diffraction: points are scattered over high-curvature faces
//! by importance sampling and each one re-radiates with its face's
//! (wide, weak) reflection lobe.

use rand::Rng;
use rayon::prelude::*;

use crate::mesh::{gaussian_lobe, BrdfField, CurvatureField, Mesh};
use crate::raytrace::{reflect, Bvh, Contribution, Provenance, SURFACE_EPSILON};
use crate::{Error, Result, Vec3};

/// Percentile of face curvature magnitudes used as the default threshold.
pub const DEFAULT_THRESHOLD_PERCENTILE: f64 = 75.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    /// Curvature threshold actually used (1/m).
    pub threshold: f64,
    /// Normalized face weights, summing to 1.
    pub weights: Vec<f64>,
    /// Running sum of `weights`; the last entry is exactly 1.
    pub cdf: Vec<f64>,
}

/// Linear-interpolation percentile (`p` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + (v[i + 1] - v[i]) * frac
    } else {
        v[i]
    }
}

/// Face weights `max(C_m - threshold, 0) * area`, normalized, with their
/// cumulative distribution. `threshold = None` uses the 75th percentile of
/// the face curvature magnitudes.
pub fn build_sampling_distribution(
    curv: &CurvatureField,
    mesh: &Mesh,
    threshold: Option<f64>,
) -> Result<SamplingDistribution> {
    let threshold =
        threshold.unwrap_or_else(|| percentile(&curv.face_magnitude, DEFAULT_THRESHOLD_PERCENTILE));
    let raw: Vec<f64> = curv
        .face_magnitude
        .iter()
        .zip(&mesh.face_areas)
        .map(|(c, a)| (c - threshold).max(0.0) * a)
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoCandidates { threshold });
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cdf.push(acc);
    }
    // pin the tail so that every draw in [0, 1) finds a face
    let last = cdf.iter().rposition(|_| true).unwrap();
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap();
    for c in &mut cdf[last_positive..=last] {
        *c = 1.0;
    }
    Ok(SamplingDistribution {
        threshold,
        weights,
        cdf,
    })
}

impl SamplingDistribution {
    /// Face for a uniform draw `u` in `[0, 1)`.
    pub fn face_for(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffractionPoint {
    pub position: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffractionPointSet {
    pub points: Vec<DiffractionPoint>,
    /// Face weights the points were drawn from.
    pub weights: Vec<f64>,
}

impl DiffractionPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `m` points: a face by inverse CDF, then a uniform position on it.
pub fn sample_diffraction_points(
    dist: &SamplingDistribution,
    mesh: &Mesh,
    m: usize,
    rng: &mut impl Rng,
) -> DiffractionPointSet {
    let points = (0..m)
        .map(|_| {
            let face = dist.face_for(rng.random::<f64>());
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let barycentric = [1.0 - r1 - r2, r1, r2];
            let [a, b, c] = mesh.triangle(face);
            DiffractionPoint {
                position: a * barycentric[0] + b * barycentric[1] + c * barycentric[2],
                face,
                barycentric,
            }
        })
        .collect();
    DiffractionPointSet {
        points,
        weights: dist.weights.clone(),
    }
}

/// Contributions of every point to every receiver, ordered point-major.
///
/// Each point scatters with its face's lobe centred on the mirror direction
/// of the incident wave, scaled by `k / M`. Points hidden from the emitter,
/// or receivers hidden from a point, give zero magnitude.
pub fn evaluate_diffraction(
    points: &DiffractionPointSet,
    emitter: &Vec3,
    receivers: &[Vec3],
    mesh: &Mesh,
    bvh: &Bvh,
    brdf: &BrdfField,
) -> Vec<Contribution> {
    evaluate_points(&points.points, points.len(), emitter, receivers, mesh, bvh, brdf)
}

/// As [`evaluate_diffraction`] for a slice of a set of `total` points.
pub fn evaluate_points(
    points: &[DiffractionPoint],
    total: usize,
    emitter: &Vec3,
    receivers: &[Vec3],
    mesh: &Mesh,
    bvh: &Bvh,
    brdf: &BrdfField,
) -> Vec<Contribution> {
    let scale = if total == 0 { 0.0 } else { 1.0 / total as f64 };
    points
        .par_iter()
        .flat_map_iter(|p| {
            let n = mesh.geometric_normals[p.face];
            let inc = p.position - emitter;
            let r_in = inc.norm();
            let d_in = inc / r_in;
            let mirror = reflect(&d_in, &n);
            let emitter_side = -d_in.dot(&n);
            let lit = r_in > 0.0 && emitter_side != 0.0 && !bvh.occluded(emitter, &p.position, SURFACE_EPSILON);
            let alpha = brdf.alpha_row(p.face);
            let k = brdf.k_row(p.face);
            receivers.iter().enumerate().map(move |(i, r)| {
                let out = r - p.position;
                let r_out = out.norm();
                let mut magnitude = vec![0.0; k.len()];
                if lit && r_out > 0.0 {
                    let d_out = out / r_out;
                    if d_out.dot(&n) * emitter_side > 0.0 && !bvh.occluded(&p.position, r, SURFACE_EPSILON) {
                        let theta = d_out.dot(&mirror).clamp(-1.0, 1.0).acos();
                        for j in 0..k.len() {
                            magnitude[j] = k[j] * gaussian_lobe(theta, alpha[j]) * scale;
                        }
                    }
                }
                Contribution {
                    receiver: i,
                    magnitude,
                    path_length: r_in + r_out,
                    provenance: Provenance::Diffraction,
                    face: p.face,
                }
            })
        })
        .collect()
}
