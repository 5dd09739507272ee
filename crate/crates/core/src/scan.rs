//! Rotation and sphere scans: one simulation per object placement.
//!
//! Each position gets its own seed, `derive_seed(master, index)`, so any row
//! can be recomputed alone. Target strength is reported relative to a 1 m²
//! plate facing the sensor at the object's distance, simulated with the same
//! parameters.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix4, Rotation3, Unit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EarConfig, SimulationConfig};
use crate::ertf::{apply_filter_bank, ErtfFilterBank};
use crate::error::StageExt;
use crate::mesh::primitives::plate;
use crate::mesh::{derive_brdf, estimate_curvature, repair_mesh, MaterialParams, DEFAULT_MERGE_TOLERANCE};
use crate::pipeline::{
    ear_bank, prepare_objects, simulate_scene, spectral_grid, with_workers, PreparedObject, Scene,
};
use crate::scene::{derive_seed, partition_sphere_directions, transform_sensor, Pose, WorldSensor};
use crate::spectral::{combine, energy, forward_real, SpectralGrid};
use crate::{Error, Result, Vec3};

/// Seed index of the reference reflector run.
const REFERENCE_INDEX: u64 = u64::MAX;
/// Side length of the reference plate (m).
const REFERENCE_SIDE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanAxis {
    X,
    Y,
    Z,
}

impl ScanAxis {
    pub fn vector(self) -> Vec3 {
        match self {
            ScanAxis::X => Vec3::x(),
            ScanAxis::Y => Vec3::y(),
            ScanAxis::Z => Vec3::z(),
        }
    }
}

impl FromStr for ScanAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<ScanAxis> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(ScanAxis::X),
            "y" => Ok(ScanAxis::Y),
            "z" => Ok(ScanAxis::Z),
            _ => Err(Error::InvalidParameter(format!("unknown axis '{s}', expected x, y or z"))),
        }
    }
}

/// `start, start + step, ...` up to and including `end` (within rounding).
pub fn scan_angles(start_deg: f64, end_deg: f64, step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg.is_finite()) {
        return Err(Error::InvalidParameter(format!("scan step must be positive, got {step_deg}")));
    }
    if !(start_deg < end_deg && start_deg.is_finite() && end_deg.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scan start must be below end, got {start_deg} and {end_deg}"
        )));
    }
    let n = ((end_deg - start_deg) / step_deg + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start_deg + i as f64 * step_deg).collect())
}

/// Energy of `ir` inside `band` (Hz), from its zero-padded spectrum; the
/// plain time-domain energy when `band` is `None`.
pub fn band_energy(ir: &[f64], sample_rate: f64, band: Option<[f64; 2]>) -> f64 {
    let Some([lo, hi]) = band else {
        return energy(ir);
    };
    let (n, spec) = padded_spectrum(ir);
    let mut e = 0.0;
    for (k, v) in spec.iter().enumerate() {
        let f = k as f64 * sample_rate / n as f64;
        if f < lo || f > hi {
            continue;
        }
        let w = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
        e += w * v.norm_sqr();
    }
    e / n as f64
}

fn padded_spectrum(ir: &[f64]) -> (usize, Vec<rustfft::num_complex::Complex64>) {
    let n = ir.len().next_power_of_two().max(2);
    let mut x = ir.to_vec();
    x.resize(n, 0.0);
    (n, forward_real(&x))
}

/// Bin indices and frequencies reported in scan spectra.
fn spectrum_bins(len: usize, sample_rate: f64, band: Option<[f64; 2]>) -> (Vec<usize>, Vec<f64>) {
    let n = len.next_power_of_two().max(2);
    (0..=n / 2)
        .map(|k| (k, k as f64 * sample_rate / n as f64))
        .filter(|&(_, f)| band.is_none_or(|[lo, hi]| f >= lo && f <= hi))
        .unzip()
}

fn magnitude_db(ir: &[f64], bins: &[usize]) -> Vec<f64> {
    let (_, spec) = padded_spectrum(ir);
    bins.iter().map(|&k| 20.0 * spec[k].norm().max(f64::MIN_POSITIVE).log10()).collect()
}

fn db_ratio(e: f64, reference: f64) -> f64 {
    10.0 * (e / reference).log10()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EarScan {
    /// Per-position ear impulse responses; empty unless kept.
    pub irs: Vec<Vec<f64>>,
    /// Per-position magnitude spectra (dB) at `ScanResult::frequencies`.
    pub spectra_db: Vec<Vec<f64>>,
    /// Per-position band energy of the ear response.
    pub energy: Vec<f64>,
    /// Band energy relative to the reference plate (dB).
    pub target_strength_db: Vec<f64>,
    /// Sphere scans: ear energy over the energy at the emitter position.
    pub realized: Option<Vec<f64>>,
    /// Sphere scans with an analytic ear target: target power per direction.
    pub desired: Option<Vec<f64>>,
    pub reference_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanKind {
    Rotation { axis: ScanAxis },
    Sphere { radius: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScanMetadata {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub n_rays: usize,
    pub n_diffraction_points: usize,
    pub band: Option<[f64; 2]>,
    pub positions: usize,
    pub dropped_contributions: usize,
    pub warnings: Vec<String>,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub kind: ScanKind,
    /// Angle in degrees, or direction index for sphere scans.
    pub positions: Vec<f64>,
    /// Sensor-frame probe directions (sphere scans).
    pub directions: Vec<Vec3>,
    pub frequencies: Vec<f64>,
    pub left: EarScan,
    pub right: EarScan,
    pub metadata: ScanMetadata,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    pub workers: Option<usize>,
    /// Keep per-position ear impulse responses in the result.
    pub keep_irs: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            workers: None,
            keep_irs: true,
        }
    }
}

/// One simulated placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// Combined response at the virtual receiver on the emitter, if present.
    pub reference: Option<Vec<f64>>,
    pub dropped: usize,
}

/// Everything shared by the positions of a scan.
pub struct ScanContext<'a> {
    pub config: &'a SimulationConfig,
    pub grid: SpectralGrid,
    pub objects: Vec<PreparedObject>,
    pub poses: Vec<Pose>,
    pub sensor: WorldSensor,
    pub left: ErtfFilterBank,
    pub right: ErtfFilterBank,
}

impl<'a> ScanContext<'a> {
    pub fn new(config: &'a SimulationConfig) -> Result<ScanContext<'a>> {
        config.validate()?;
        let grid = spectral_grid(config).stage("spectral")?;
        let objects = prepare_objects(config, &grid).stage("mesh")?;
        let poses = config.mesh.objects.iter().map(|o| o.pose()).collect();
        let sensor = transform_sensor(&config.sensor.array()?, &config.sensor.pose());
        let (left, _) = ear_bank(config, &config.ertf.left, config.ertf.left_group.as_deref()).stage("ertf")?;
        let (right, _) = ear_bank(config, &config.ertf.right, config.ertf.right_group.as_deref()).stage("ertf")?;
        Ok(ScanContext {
            config,
            grid,
            objects,
            poses,
            sensor,
            left,
            right,
        })
    }

    fn band(&self) -> Option<[f64; 2]> {
        self.config.analysis_band()
    }

    fn run(&self, scene: &Scene, sensor: &WorldSensor, index: u64) -> Result<ScanRow> {
        let p = &self.config.params;
        let (h, g, stats) = simulate_scene(scene, sensor, p, &self.grid, derive_seed(p.seed, index))?;
        let mut combined = combine(&h, &g, p.gain_specular, p.gain_diffraction).stage("spectral")?;
        let i = self.left.num_channels();
        let reference = (combined.len() > i).then(|| combined.pop().unwrap());
        Ok(ScanRow {
            left: apply_filter_bank(&self.left, &combined).stage("ertf")?,
            right: apply_filter_bank(&self.right, &combined).stage("ertf")?,
            reference,
            dropped: stats.specular_dropped + stats.diffraction_dropped,
        })
    }

    /// Row `index` of a rotation scan: every object rotated by `angle_deg`
    /// about `axis` through its own origin.
    pub fn rotation_row(&self, axis: ScanAxis, angle_deg: f64, index: usize) -> Result<ScanRow> {
        let a = axis.vector();
        let poses: Vec<Pose> = self
            .poses
            .iter()
            .map(|p| p.rotated_about(&p.translation, &a, angle_deg.to_radians()))
            .collect();
        let parts: Vec<_> = self.objects.iter().zip(poses).collect();
        let scene = Scene::assemble(&parts).stage("mesh")?;
        self.run(&scene, &self.sensor, index as u64)
    }

    /// Row `index` of a sphere scan: the first object placed at
    /// `emitter + radius * direction` (sensor frame), the others fixed. A
    /// virtual receiver at the emitter records the incident reference.
    pub fn sphere_row(&self, direction: &Vec3, radius: f64, index: usize) -> Result<ScanRow> {
        let world_dir = self.sensor.orientation * direction.normalize();
        let probe = Pose::new(self.sensor.emitter + radius * world_dir, self.poses[0].angles);
        let mut parts = vec![(&self.objects[0], probe)];
        parts.extend(self.objects.iter().zip(self.poses.iter().cloned()).skip(1));
        let scene = Scene::assemble(&parts).stage("mesh")?;
        let mut sensor = self.sensor.clone();
        sensor.receivers.push(sensor.emitter);
        self.run(&scene, &sensor, index as u64)
    }

    /// Ear energies of a 1 m² plate at `distance` along `direction` (world
    /// frame), facing the emitter.
    pub fn reference_energy(&self, direction: &Vec3, distance: f64) -> Result<(f64, f64)> {
        let (mesh, repair) = repair_mesh(&plate(REFERENCE_SIDE, REFERENCE_SIDE, 8)?, DEFAULT_MERGE_TOLERANCE)?;
        let material = MaterialParams::default();
        let curvature = estimate_curvature(&mesh);
        let brdf = derive_brdf(&curvature, &self.grid.brdf_freqs, &material, self.grid.speed_of_sound)?;
        let obj = PreparedObject {
            repair,
            mesh,
            curvature,
            brdf,
        };
        let d = direction.normalize();
        let rot = Rotation3::rotation_between(&Vec3::z(), &-d)
            .unwrap_or_else(|| Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::x()), std::f64::consts::PI));
        let mut m: Matrix4<f64> = rot.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(self.sensor.emitter + distance * d));
        let scene = Scene::from_transforms(&[(&obj, m)]).stage("reference")?;
        let row = self.run(&scene, &self.sensor, REFERENCE_INDEX).stage("reference")?;
        let fs = self.config.params.sample_rate;
        Ok((band_energy(&row.left, fs, self.band()), band_energy(&row.right, fs, self.band())))
    }

    fn collect(
        &self,
        kind: ScanKind,
        positions: Vec<f64>,
        directions: Vec<Vec3>,
        rows: Vec<ScanRow>,
        reference: (f64, f64),
        opts: &ScanOptions,
        started: Instant,
    ) -> ScanResult {
        let fs = self.config.params.sample_rate;
        let band = self.band();
        let len = rows.first().map_or(self.config.params.ir_length, |r| r.left.len());
        let (bins, frequencies) = spectrum_bins(len, fs, band);
        let mut warnings = Vec::new();
        let mut ear = |pick: fn(&ScanRow) -> &Vec<f64>, e_ref: f64, name: &str| {
            if e_ref <= 0.0 {
                warnings.push(format!("{name} reference energy is zero; target strength undefined"));
            }
            let energy: Vec<f64> = rows.iter().map(|r| band_energy(pick(r), fs, band)).collect();
            let realized = rows.first().and_then(|r| r.reference.as_ref()).map(|_| {
                rows.iter()
                    .zip(&energy)
                    .map(|(r, e)| e / band_energy(r.reference.as_ref().unwrap(), fs, band))
                    .collect()
            });
            EarScan {
                irs: if opts.keep_irs { rows.iter().map(|r| pick(r).clone()).collect() } else { Vec::new() },
                spectra_db: rows.iter().map(|r| magnitude_db(pick(r), &bins)).collect(),
                target_strength_db: energy.iter().map(|&e| db_ratio(e, e_ref)).collect(),
                energy,
                realized,
                desired: None,
                reference_energy: e_ref,
            }
        };
        let mut left = ear(|r| &r.left, reference.0, "left");
        let mut right = ear(|r| &r.right, reference.1, "right");
        if !directions.is_empty() {
            for (scan, cfg) in [(&mut left, &self.config.ertf.left), (&mut right, &self.config.ertf.right)] {
                if let EarConfig::Analytic { target } = cfg {
                    scan.desired = Some(directions.iter().map(|d| target.pattern.power(d)).collect());
                }
            }
        }
        let p = &self.config.params;
        ScanResult {
            kind,
            metadata: ScanMetadata {
                config_hash: self.config.hash(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: p.seed,
                n_rays: p.n_rays,
                n_diffraction_points: p.n_diffraction_points,
                band,
                positions: positions.len(),
                dropped_contributions: rows.iter().map(|r| r.dropped).sum(),
                warnings,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            },
            positions,
            directions,
            frequencies,
            left,
            right,
        }
    }
}

fn object_distance(ctx: &ScanContext) -> (Vec3, f64) {
    let v = ctx.poses[0].translation - ctx.sensor.emitter;
    let d = v.norm();
    if d > 0.0 {
        (v / d, d)
    } else {
        (ctx.sensor.orientation.column(0).into_owned(), 1.0)
    }
}

pub fn run_rotation_scan(
    config: &SimulationConfig,
    axis: ScanAxis,
    start_deg: f64,
    end_deg: f64,
    step_deg: f64,
    opts: &ScanOptions,
) -> Result<ScanResult> {
    let started = Instant::now();
    let angles = scan_angles(start_deg, end_deg, step_deg)?;
    with_workers(opts.workers, || {
        let ctx = ScanContext::new(config)?;
        let rows = angles
            .par_iter()
            .enumerate()
            .map(|(i, &a)| ctx.rotation_row(axis, a, i))
            .collect::<Result<Vec<_>>>()?;
        let (dir, dist) = object_distance(&ctx);
        let reference = ctx.reference_energy(&dir, dist)?;
        Ok(ctx.collect(ScanKind::Rotation { axis }, angles.clone(), Vec::new(), rows, reference, opts, started))
    })?
}

pub fn run_sphere_scan(config: &SimulationConfig, n_points: usize, radius: f64, opts: &ScanOptions) -> Result<ScanResult> {
    let started = Instant::now();
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("scan radius must be positive, got {radius}")));
    }
    let directions = partition_sphere_directions(n_points, true)?;
    with_workers(opts.workers, || {
        let ctx = ScanContext::new(config)?;
        let rows = directions
            .par_iter()
            .enumerate()
            .map(|(i, d)| ctx.sphere_row(d, radius, i))
            .collect::<Result<Vec<_>>>()?;
        let boresight = ctx.sensor.orientation.column(0).into_owned();
        let reference = ctx.reference_energy(&boresight, radius)?;
        let positions = (0..directions.len()).map(|i| i as f64).collect();
        Ok(ctx.collect(ScanKind::Sphere { radius }, positions, directions.clone(), rows, reference, opts, started))
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ObjectConfig, Primitive};
    use crate::scene::{SensorArray, SimParams};

    #[test]
    fn angle_grid() {
        let a = scan_angles(-90.0, 90.0, 1.0).unwrap();
        assert_eq!(a.len(), 181);
        assert_eq!((a[0], a[90], a[180]), (-90.0, 0.0, 90.0));
        assert_eq!(scan_angles(0.0, 1.0, 0.3).unwrap().len(), 4);
        assert!(scan_angles(1.0, 0.0, 1.0).is_err());
        assert!(scan_angles(0.0, 1.0, 0.0).is_err());
        assert_eq!("Y".parse::<ScanAxis>().unwrap(), ScanAxis::Y);
        assert!("w".parse::<ScanAxis>().is_err());
    }

    #[test]
    fn band_energy_matches_time_domain() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let full = band_energy(&x, 1e6, Some([0.0, 5e5]));
        assert!((full - energy(&x)).abs() < 1e-12 * energy(&x));
        let lo = band_energy(&x, 1e6, Some([0.0, 2.5e5]));
        let hi = band_energy(&x, 1e6, Some([2.5e5 + 1.0, 5e5]));
        assert!((lo + hi - full).abs() < 1e-9 * full);
    }

    fn small_config() -> SimulationConfig {
        let obj = ObjectConfig::primitive(Primitive::Plate {
            width_x: 0.05,
            width_y: 0.05,
            divisions: 2,
        })
        .at(Vec3::new(0.3, 0.0, 0.0), [0.0, -90.0, 0.0]);
        let params = SimParams {
            n_rays: 20_000,
            n_diffraction_points: 0,
            ir_length: 4096,
            band: Some([20e3, 80e3]),
            ..SimParams::default()
        };
        SimulationConfig::new(vec![obj], SensorArray::monostatic(), params)
    }

    #[test]
    fn rotation_rows_are_independent() {
        let cfg = small_config();
        let opts = ScanOptions::default();
        let scan = run_rotation_scan(&cfg, ScanAxis::Z, -10.0, 10.0, 5.0, &opts).unwrap();
        assert_eq!(scan.len(), 5);
        assert_eq!(scan.left.spectra_db.len(), 5);
        assert_eq!(scan.left.spectra_db[0].len(), scan.frequencies.len());
        let ctx = ScanContext::new(&cfg).unwrap();
        let row = ctx.rotation_row(ScanAxis::Z, 5.0, 3).unwrap();
        assert_eq!(row.left, scan.left.irs[3]);
        // Normal incidence is the strongest echo.
        let ts = &scan.left.target_strength_db;
        assert!(ts.iter().all(|&t| t <= ts[2]));
        assert!(ts.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn sphere_scan_rows_and_reference() {
        let mut cfg = small_config();
        cfg.mesh.objects[0].primitive = Some(Primitive::Icosphere {
            radius: 0.02,
            subdivisions: 2,
        });
        cfg.params.n_rays = 5000;
        let opts = ScanOptions {
            workers: Some(2),
            keep_irs: false,
        };
        let scan = run_sphere_scan(&cfg, 6, 0.5, &opts).unwrap();
        assert_eq!(scan.len(), 6);
        assert!(scan.left.irs.is_empty());
        let realized = scan.left.realized.as_ref().unwrap();
        assert!(realized.iter().all(|&r| r > 0.0 && r.is_finite()));
        assert!(scan.left.desired.is_none());
    }
}
