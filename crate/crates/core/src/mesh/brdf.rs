use serde::{Deserialize, Serialize};

use super::CurvatureField;
use crate::{Error, Result};

/// Parameters of the curvature to BRDF mapping.
///
/// Curvature is compared with a frequency dependent reference
/// `C_ref(f) = 2 pi f / c * kappa_scale`; through `s = C/C_ref / (1 + C/C_ref)`
/// the lobe half-width grows from `alpha_min` to `alpha_max` and the
/// reflection strength drops from `k_max` to `k_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    /// Radians.
    pub alpha_min: f64,
    /// Radians.
    pub alpha_max: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub kappa_scale: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            alpha_min: 5f64.to_radians(),
            alpha_max: 150f64.to_radians(),
            k_min: 0.05,
            k_max: 1.0,
            kappa_scale: 1.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMaterial(m));
        let all_finite = [self.alpha_min, self.alpha_max, self.k_min, self.k_max, self.kappa_scale]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return bad("material parameters must be finite".into());
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max <= std::f64::consts::PI) {
            return bad(format!(
                "need 0 < alpha_min <= alpha_max <= pi, got {} and {}",
                self.alpha_min, self.alpha_max
            ));
        }
        if !(0.0 <= self.k_min && self.k_min <= self.k_max && self.k_max <= 1.0) {
            return bad(format!(
                "need 0 <= k_min <= k_max <= 1, got {} and {}",
                self.k_min, self.k_max
            ));
        }
        if self.kappa_scale <= 0.0 {
            return bad(format!("kappa_scale must be positive, got {}", self.kappa_scale));
        }
        Ok(())
    }

    /// Opening angle and strength for curvature magnitude `c_m` at `freq`.
    pub fn map(&self, c_m: f64, freq: f64, speed_of_sound: f64) -> (f64, f64) {
        let c_ref = std::f64::consts::TAU * freq / speed_of_sound * self.kappa_scale;
        let s = sigmoid_ratio(c_m, c_ref);
        (
            self.alpha_min + (self.alpha_max - self.alpha_min) * s,
            self.k_max - (self.k_max - self.k_min) * s,
        )
    }
}

/// `x / (1 + x)` with `x = c / c_ref`; the `c_ref = 0` (DC) limit is 1 for
/// any positive curvature and 0 for zero curvature.
pub fn sigmoid_ratio(c: f64, c_ref: f64) -> f64 {
    if c <= 0.0 {
        0.0
    } else if c_ref <= 0.0 {
        1.0
    } else {
        c / (c_ref + c)
    }
}

/// Gaussian reflection lobe with half-power half-width `alpha`.
#[inline]
pub fn gaussian_lobe(theta: f64, alpha: f64) -> f64 {
    let x = theta / alpha;
    (-std::f64::consts::LN_2 * x * x).exp()
}

/// Per-face, per-frequency BRDF parameters. Storage is face-major:
/// `alpha[face * n_freqs + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrdfField {
    pub freqs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k: Vec<f64>,
}

impl BrdfField {
    pub fn num_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn num_faces(&self) -> usize {
        self.alpha.len() / self.freqs.len().max(1)
    }

    #[inline]
    pub fn alpha_row(&self, face: usize) -> &[f64] {
        let n = self.freqs.len();
        &self.alpha[face * n..(face + 1) * n]
    }

    #[inline]
    pub fn k_row(&self, face: usize) -> &[f64] {
        let n = self.freqs.len();
        &self.k[face * n..(face + 1) * n]
    }

    pub fn concat<'a>(fields: impl IntoIterator<Item = &'a BrdfField>) -> Result<BrdfField> {
        let mut out: Option<BrdfField> = None;
        for f in fields {
            match &mut out {
                None => out = Some(f.clone()),
                Some(o) => {
                    if o.freqs != f.freqs {
                        return Err(Error::GridMismatch {
                            expected: o.freqs.len(),
                            actual: f.freqs.len(),
                        });
                    }
                    o.alpha.extend_from_slice(&f.alpha);
                    o.k.extend_from_slice(&f.k);
                }
            }
        }
        out.ok_or(Error::EmptyMesh)
    }
}

/// Evaluates the material mapping for every face and frequency.
pub fn derive_brdf(
    curv: &CurvatureField,
    freqs: &[f64],
    material: &MaterialParams,
    speed_of_sound: f64,
) -> Result<BrdfField> {
    material.validate()?;
    if freqs.is_empty() {
        return Err(Error::InvalidParameter("BRDF frequency grid is empty".into()));
    }
    if freqs[0] < 0.0 || freqs.windows(2).any(|w| w[1] <= w[0]) || !freqs.iter().all(|f| f.is_finite()) {
        return Err(Error::InvalidParameter(
            "BRDF frequencies must be finite, non-negative and strictly increasing".into(),
        ));
    }
    if !(speed_of_sound > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "speed of sound must be positive, got {speed_of_sound}"
        )));
    }
    let n = freqs.len();
    let mut alpha = Vec::with_capacity(curv.face_magnitude.len() * n);
    let mut k = Vec::with_capacity(curv.face_magnitude.len() * n);
    for &c_m in &curv.face_magnitude {
        for &f in freqs {
            let (a, kk) = material.map(c_m, f, speed_of_sound);
            alpha.push(a);
            k.push(kk);
        }
    }
    Ok(BrdfField {
        freqs: freqs.to_vec(),
        alpha,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{estimate_curvature, primitives, repair_mesh, DEFAULT_MERGE_TOLERANCE};
    use proptest::prelude::*;

    fn field_with(mags: Vec<f64>) -> CurvatureField {
        CurvatureField {
            frames: vec![],
            tensors: vec![],
            k1: vec![],
            k2: vec![],
            face_magnitude: mags,
            isolated_vertices: vec![],
        }
    }

    #[test]
    fn flat_surface_maps_to_endpoints() {
        let m = MaterialParams::default();
        let b = derive_brdf(&field_with(vec![0.0; 5]), &[20e3, 40e3, 80e3], &m, 343.0).unwrap();
        assert!(b.alpha.iter().all(|&a| a == m.alpha_min));
        assert!(b.k.iter().all(|&k| k == m.k_max));
    }

    #[test]
    fn lobe_half_width() {
        assert_eq!(gaussian_lobe(0.0, 0.3), 1.0);
        assert!((gaussian_lobe(0.3, 0.3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn icosphere_values_match_closed_form() {
        let raw = primitives::icosphere(0.1, 3).unwrap();
        let (mesh, _) = repair_mesh(&raw, DEFAULT_MERGE_TOLERANCE).unwrap();
        let curv = estimate_curvature(&mesh);
        let m = MaterialParams::default();
        let b = derive_brdf(&curv, &[40e3], &m, 343.0).unwrap();
        for (face, &c) in curv.face_magnitude.iter().enumerate() {
            // independent evaluation of the mapping
            let x = c / (2.0 * std::f64::consts::PI * 40e3 / 343.0);
            let s = x / (1.0 + x);
            let alpha = 5f64.to_radians() + (150f64 - 5.0).to_radians() * s;
            let k = 1.0 - 0.95 * s;
            assert!((b.alpha_row(face)[0] - alpha).abs() < 1e-12);
            assert!((b.k_row(face)[0] - k).abs() < 1e-12);
        }
        // near 1/R = 10: x ~ 0.01365
        let s = 10.0 / (10.0 + std::f64::consts::TAU * 40e3 / 343.0);
        assert!((b.k_row(0)[0] - (1.0 - 0.95 * s)).abs() < 2e-3);
    }

    #[test]
    fn invalid_material_is_rejected() {
        let cases = [
            MaterialParams { alpha_min: 0.0, ..Default::default() },
            MaterialParams { alpha_max: 4.0, ..Default::default() },
            MaterialParams { k_max: 1.5, ..Default::default() },
            MaterialParams { k_min: 0.8, k_max: 0.5, ..Default::default() },
            MaterialParams { kappa_scale: 0.0, ..Default::default() },
        ];
        for m in cases {
            assert!(matches!(
                derive_brdf(&field_with(vec![1.0]), &[1e3], &m, 343.0),
                Err(Error::InvalidMaterial(_))
            ));
        }
        assert!(derive_brdf(&field_with(vec![1.0]), &[2e3, 1e3], &MaterialParams::default(), 343.0).is_err());
    }

    proptest! {
        #[test]
        fn mapping_is_monotone(c_a in 0.0..1e4f64, ratio in 1.0..100.0f64, f in 1.0..2e5f64) {
            let m = MaterialParams::default();
            let (a_lo, k_lo) = m.map(c_a, f, 343.0);
            let (a_hi, k_hi) = m.map(c_a * ratio, f, 343.0);
            prop_assert!(a_hi >= a_lo);
            prop_assert!(k_hi <= k_lo);
            prop_assert!(a_lo > 0.0 && a_hi <= std::f64::consts::PI);
            prop_assert!((0.0..=1.0).contains(&k_hi) && (0.0..=1.0).contains(&k_lo));
        }
    }
}
