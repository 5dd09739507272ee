//! Sensor description, poses, simulation parameters and direction sets.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Rigid transform from sensor (or object) coordinates to world
/// coordinates.
///
/// Rotations are extrinsic about X, then Y, then Z:
/// `matrix = T(translation) * Rz(gz) * Ry(gy) * Rx(gx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    /// `[gx, gy, gz]` in radians.
    pub angles: [f64; 3],
    matrix: Matrix4<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

pub fn rotation_from_angles(angles: [f64; 3]) -> Matrix3<f64> {
    let [gx, gy, gz] = angles;
    let (sx, cx) = gx.sin_cos();
    let (sy, cy) = gy.sin_cos();
    let (sz, cz) = gz.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Inverse of [`rotation_from_angles`]. At gimbal lock (`|gy| = pi/2`) the
/// X angle is set to zero.
pub fn angles_from_rotation(r: &Matrix3<f64>) -> [f64; 3] {
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let gy = sy.asin();
    if sy.abs() < 1.0 - 1e-12 {
        [r[(2, 1)].atan2(r[(2, 2)]), gy, r[(1, 0)].atan2(r[(0, 0)])]
    } else {
        [0.0, gy, (-r[(0, 1)]).atan2(r[(1, 1)])]
    }
}

impl Pose {
    pub fn new(translation: Vec3, angles: [f64; 3]) -> Pose {
        let rot = rotation_from_angles(angles);
        Pose::from_parts(translation, angles, rot)
    }

    pub fn identity() -> Pose {
        Pose::new(Vec3::zeros(), [0.0; 3])
    }

    /// Angles in degrees, as written in config files.
    pub fn from_degrees(translation: Vec3, angles_deg: [f64; 3]) -> Pose {
        Pose::new(translation, angles_deg.map(f64::to_radians))
    }

    fn from_parts(translation: Vec3, angles: [f64; 3], rot: Matrix3<f64>) -> Pose {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Pose {
            translation,
            angles,
            matrix,
        }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation() * v
    }

    /// `self * inner`: applies `inner` first.
    pub fn compose(&self, inner: &Pose) -> Pose {
        let rot = self.rotation() * inner.rotation();
        let translation = self.rotation() * inner.translation + self.translation;
        Pose::from_parts(translation, angles_from_rotation(&rot), rot)
    }

    /// Rotation by `angle` about a world axis through `center`, applied after
    /// `self`.
    pub fn rotated_about(&self, center: &Vec3, axis: &Vec3, angle: f64) -> Pose {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle)
            .into_inner();
        let rot = r * self.rotation();
        let translation = r * (self.translation - center) + center;
        Pose::from_parts(translation, angles_from_rotation(&rot), rot)
    }
}

/// One emitter and `I >= 1` receivers, positions in the sensor frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    pub emitter: Vec3,
    pub receivers: Vec<Vec3>,
    /// Optional label per receiver, e.g. "left" and "right".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
}

impl SensorArray {
    pub fn new(emitter: Vec3, receivers: Vec<Vec3>) -> Result<SensorArray> {
        let a = SensorArray {
            emitter,
            receivers,
            groups: None,
        };
        a.validate()?;
        Ok(a)
    }

    /// Emitter and a single receiver at the same point.
    pub fn monostatic() -> SensorArray {
        SensorArray {
            emitter: Vec3::zeros(),
            receivers: vec![Vec3::zeros()],
            groups: None,
        }
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<SensorArray> {
        self.groups = Some(groups);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.receivers.is_empty() {
            return Err(Error::InvalidParameter("sensor needs at least one receiver".into()));
        }
        let finite = |p: &Vec3| p.iter().all(|c| c.is_finite());
        if !finite(&self.emitter) || !self.receivers.iter().all(finite) {
            return Err(Error::InvalidParameter("sensor positions must be finite".into()));
        }
        if let Some(g) = &self.groups {
            if g.len() != self.receivers.len() {
                return Err(Error::LengthMismatch {
                    expected: self.receivers.len(),
                    actual: g.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_receivers(&self) -> usize {
        self.receivers.len()
    }

    /// Receiver indices carrying the given group label.
    pub fn group_indices(&self, name: &str) -> Vec<usize> {
        match &self.groups {
            None => Vec::new(),
            Some(g) => g
                .iter()
                .enumerate()
                .filter(|(_, n)| n.as_str() == name)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Receiver positions relative to the emitter, which serves as the array
    /// reference point.
    pub fn relative_receivers(&self) -> Vec<Vec3> {
        self.receivers.iter().map(|p| p - self.emitter).collect()
    }
}

/// Sensor element positions in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSensor {
    pub emitter: Vec3,
    pub receivers: Vec<Vec3>,
    /// Sensor axes in world coordinates (columns: forward, left, up).
    pub orientation: Matrix3<f64>,
}

pub fn transform_sensor(array: &SensorArray, pose: &Pose) -> WorldSensor {
    WorldSensor {
        emitter: pose.transform_point(&array.emitter),
        receivers: array.receivers.iter().map(|p| pose.transform_point(p)).collect(),
        orientation: pose.rotation(),
    }
}

/// Surface normal used for the specular reflection direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMode {
    #[default]
    Geometric,
    /// Barycentric interpolation of the vertex normals.
    Phong,
}

/// Global simulation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// m/s
    pub speed_of_sound: f64,
    /// Hz
    pub sample_rate: f64,
    /// Impulse response length in samples, a power of two.
    pub ir_length: usize,
    pub n_rays: usize,
    pub max_bounces: usize,
    pub n_diffraction_points: usize,
    /// Specular gain `a_r`.
    pub gain_specular: f64,
    /// Diffraction gain `a_d`.
    pub gain_diffraction: f64,
    pub seed: u64,
    /// Frequency points on which the BRDF is evaluated before interpolation
    /// onto the FFT grid.
    pub brdf_bands: usize,
    /// Scale specular contributions by 1/N.
    pub ray_normalization: bool,
    pub normals: NormalMode,
    /// Absolute curvature threshold (1/m) for diffraction sampling. `None`
    /// uses the 75th percentile of the face curvature magnitudes.
    pub diffraction_threshold: Option<f64>,
    /// Analysis band in Hz. `None` takes the call band if a call is
    /// configured, otherwise the full band up to Nyquist.
    pub band: Option<[f64; 2]>,
    /// Width of the raised-cosine band edges, Hz. Zero gives a hard cut.
    pub band_edge_hz: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            speed_of_sound: 343.0,
            sample_rate: 1e6,
            ir_length: 8192,
            n_rays: 100_000,
            max_bounces: 3,
            n_diffraction_points: 10_000,
            gain_specular: 1.0,
            gain_diffraction: 1.0,
            seed: 0,
            brdf_bands: 16,
            ray_normalization: false,
            normals: NormalMode::Geometric,
            diffraction_threshold: None,
            band: None,
            band_edge_hz: 5000.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return bad(format!("speed of sound must be positive, got {}", self.speed_of_sound));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate));
        }
        if self.ir_length < 2 || !self.ir_length.is_power_of_two() {
            return bad(format!("ir_length must be a power of two >= 2, got {}", self.ir_length));
        }
        if self.n_rays == 0 {
            return bad("n_rays must be at least 1".into());
        }
        if self.max_bounces == 0 {
            return bad("max_bounces must be at least 1".into());
        }
        if self.brdf_bands == 0 {
            return bad("brdf_bands must be at least 1".into());
        }
        if !self.gain_specular.is_finite() || !self.gain_diffraction.is_finite() {
            return bad("gains must be finite".into());
        }
        if !(self.band_edge_hz >= 0.0) {
            return bad("band_edge_hz must be non-negative".into());
        }
        if let Some(t) = self.diffraction_threshold {
            if !(t >= 0.0) {
                return bad(format!("diffraction threshold must be non-negative, got {t}"));
            }
        }
        if let Some([lo, hi]) = self.band {
            if !(lo >= 0.0 && lo < hi && hi <= self.nyquist()) {
                return Err(Error::InvalidBand(format!(
                    "band [{lo}, {hi}] Hz must satisfy 0 <= lo < hi <= fs/2"
                )));
            }
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Bins of the one-sided grid, `N_t / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.ir_length / 2 + 1
    }

    pub fn bin_frequency(&self, j: usize) -> f64 {
        j as f64 * self.sample_rate / self.ir_length as f64
    }

    pub fn frequency_grid(&self) -> Vec<f64> {
        (0..self.num_bins()).map(|j| self.bin_frequency(j)).collect()
    }

    /// Longest path (m) that fits in the impulse response without wrapping.
    pub fn max_path_length(&self) -> f64 {
        self.ir_length as f64 / self.sample_rate * self.speed_of_sound
    }
}

/// Mixes a master seed with an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random streams of one simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Rays = 1,
    Diffraction = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream as u64))
}

/// Equal-area cell in polar coordinates about the partition pole (+X).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    /// Colatitude bounds from +X, radians.
    pub theta: [f64; 2],
    /// Longitude bounds, radians; longitude 0 points along +Y.
    pub phi: [f64; 2],
}

impl Region {
    pub fn solid_angle(&self) -> f64 {
        (self.phi[1] - self.phi[0]) * (self.theta[0].cos() - self.theta[1].cos())
    }

    /// Point at the area midpoint in colatitude and the middle longitude.
    /// Polar caps return the pole.
    pub fn center(&self) -> Vec3 {
        if self.theta[0] == 0.0 && self.phi[1] - self.phi[0] >= TAU {
            return Vec3::x();
        }
        if self.theta[1] == PI && self.phi[1] - self.phi[0] >= TAU {
            return -Vec3::x();
        }
        let cos_mid = 0.5 * (self.theta[0].cos() + self.theta[1].cos());
        let phi = 0.5 * (self.phi[0] + self.phi[1]);
        direction_from_polar(cos_mid.clamp(-1.0, 1.0).acos(), phi)
    }
}

/// Colatitude from +X and longitude measured from +Y towards +Z.
pub fn direction_from_polar(theta: f64, phi: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    Vec3::new(c, s * phi.cos(), s * phi.sin())
}

/// Ring of equal-area regions between two colatitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Zone {
    theta: [f64; 2],
    count: usize,
    first: usize,
    phi_offset: f64,
}

/// Zonal equal-area partition of the sphere (or the hemisphere `x >= 0`)
/// into `n` regions: polar cap(s) plus collars whose region counts follow
/// the ideal collar width `sqrt(area)`. Regions are addressed by index so
/// very large partitions need only `O(sqrt n)` memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EqualAreaPartition {
    n: usize,
    hemisphere: bool,
    zones: Vec<Zone>,
}

impl EqualAreaPartition {
    pub fn new(n: usize, hemisphere: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("partition needs n >= 1".into()));
        }
        let total = if hemisphere { TAU } else { 2.0 * TAU };
        let theta_end = if hemisphere { PI / 2.0 } else { PI };
        let area = total / n as f64;
        let counts = if n == 1 {
            vec![1]
        } else {
            let theta_cap = (1.0 - area / TAU).clamp(-1.0, 1.0).acos();
            let caps = if hemisphere { 1 } else { 2 };
            let inner = n.saturating_sub(caps);
            let mut counts = vec![1usize];
            if inner > 0 {
                let span = if hemisphere { theta_end - theta_cap } else { PI - 2.0 * theta_cap };
                let n_collars = ((span / area.sqrt()).round() as usize).max(1);
                let width = span / n_collars as f64;
                let mut carry = 0.0;
                let mut assigned = 0usize;
                for k in 0..n_collars {
                    let a = theta_cap + k as f64 * width;
                    let ideal = TAU * (a.cos() - (a + width).cos()) / area;
                    let m = if k + 1 == n_collars {
                        inner - assigned
                    } else {
                        ((ideal + carry).round().max(0.0) as usize).min(inner - assigned)
                    };
                    carry += ideal - m as f64;
                    assigned += m;
                    if m > 0 {
                        counts.push(m);
                    }
                }
            }
            if !hemisphere {
                counts.push(1);
            }
            counts
        };
        debug_assert_eq!(counts.iter().sum::<usize>(), n);

        let mut zones = Vec::with_capacity(counts.len());
        let mut cum = 0usize;
        let mut prev_theta = 0.0;
        for (z, &m) in counts.iter().enumerate() {
            let first = cum;
            cum += m;
            // exact area bookkeeping: cos(theta_k) = 1 - cum * area / (2 pi)
            let theta = if cum == n {
                theta_end
            } else {
                (1.0 - cum as f64 * area / TAU).clamp(-1.0, 1.0).acos()
            };
            let phi_offset = if z % 2 == 1 && m > 1 { PI / m as f64 } else { 0.0 };
            zones.push(Zone {
                theta: [prev_theta, theta],
                count: m,
                first,
                phi_offset,
            });
            prev_theta = theta;
        }
        Ok(EqualAreaPartition { n, hemisphere, zones })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn hemisphere(&self) -> bool {
        self.hemisphere
    }

    fn zone_of(&self, index: usize) -> &Zone {
        let z = self.zones.partition_point(|z| z.first + z.count <= index);
        &self.zones[z]
    }

    pub fn region(&self, index: usize) -> Region {
        assert!(index < self.n, "region index out of range");
        let z = self.zone_of(index);
        let dphi = TAU / z.count as f64;
        let lo = z.phi_offset + (index - z.first) as f64 * dphi;
        Region {
            theta: z.theta,
            phi: [lo, lo + dphi],
        }
    }

    pub fn direction(&self, index: usize) -> Vec3 {
        self.region(index).center()
    }

    pub fn regions(&self) -> Vec<Region> {
        (0..self.n).map(|i| self.region(i)).collect()
    }

    pub fn directions(&self) -> Vec<Vec3> {
        (0..self.n).map(|i| self.direction(i)).collect()
    }
}

pub fn partition_sphere(n: usize, hemisphere: bool) -> Result<Vec<Region>> {
    Ok(EqualAreaPartition::new(n, hemisphere)?.regions())
}

/// One representative unit direction per equal-area region. With `n = 1`
/// the result is the pole `+X`.
pub fn partition_sphere_directions(n: usize, hemisphere: bool) -> Result<Vec<Vec3>> {
    Ok(EqualAreaPartition::new(n, hemisphere)?.directions())
}
