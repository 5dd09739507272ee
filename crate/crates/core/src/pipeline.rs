//! End-to-end simulation: mesh preparation, specular tracing and
//! diffraction, impulse-response synthesis, ear filtering and the call.
//!
//! Rays and diffraction points are processed in fixed-size batches whose
//! spectra are summed in batch order, so results do not depend on the
//! number of worker threads.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EarConfig, ObjectConfig, SimulationConfig};
use crate::diffraction::{build_sampling_distribution, evaluate_points, sample_diffraction_points};
use crate::ertf::{fit_fir_bank, load_target_csv, read_bank, ErtfFilterBank, FitReport};
use crate::error::StageExt;
use crate::mesh::{derive_brdf, estimate_curvature, repair_mesh, BrdfField, CurvatureField, Mesh, RepairReport};
use crate::raytrace::{sample_brdf_to_receivers, trace_ray, Bvh, Contribution, RayGenerator, TraceOptions};
use crate::scene::{stream_rng, transform_sensor, Pose, SensorArray, SimParams, Stream, WorldSensor};
use crate::signals::{filter_ears, receive, synthesize_call, BinauralResult, EmittedCall};
use crate::spectral::{ImpulseResponseSet, SpectralGrid, SpectrumAccumulator};
use crate::{Error, Result, Vec3};

/// Rays or diffraction points per accumulation batch.
pub const BATCH_SIZE: usize = 2048;
/// Batches evaluated concurrently before their spectra are merged.
const BATCH_GROUP: usize = 64;

/// Object geometry in its own frame with curvature and BRDF.
#[derive(Clone, Debug)]
pub struct PreparedObject {
    pub mesh: Mesh,
    pub curvature: CurvatureField,
    pub brdf: BrdfField,
    pub repair: RepairReport,
}

pub fn prepare_object(
    obj: &ObjectConfig,
    base: &std::path::Path,
    merge_tolerance: f64,
    grid: &SpectralGrid,
) -> Result<PreparedObject> {
    let raw = obj.load(base)?;
    let (mesh, repair) = repair_mesh(&raw, merge_tolerance)?;
    if repair.non_orientable_components > 0 {
        log::warn!("{} mesh component(s) could not be oriented consistently", repair.non_orientable_components);
    }
    let curvature = estimate_curvature(&mesh);
    let brdf = derive_brdf(&curvature, &grid.brdf_freqs, &obj.material, grid.speed_of_sound)?;
    Ok(PreparedObject {
        mesh,
        curvature,
        brdf,
        repair,
    })
}

/// World-space scene ready for tracing.
#[derive(Clone, Debug)]
pub struct Scene {
    pub mesh: Mesh,
    pub curvature: CurvatureField,
    pub brdf: BrdfField,
    pub bvh: Bvh,
}

impl Scene {
    pub fn assemble(parts: &[(&PreparedObject, Pose)]) -> Result<Scene> {
        let parts: Vec<_> = parts.iter().map(|(o, p)| (*o, *p.matrix())).collect();
        Scene::from_transforms(&parts)
    }

    /// Objects placed by homogeneous object-to-world transforms.
    pub fn from_transforms(parts: &[(&PreparedObject, Matrix4<f64>)]) -> Result<Scene> {
        let meshes: Vec<Mesh> = parts.iter().map(|(o, m)| o.mesh.transformed(m)).collect();
        let mesh = Mesh::concat(&meshes);
        let curvature = CurvatureField::concat(parts.iter().map(|(o, _)| &o.curvature));
        let brdf = BrdfField::concat(parts.iter().map(|(o, _)| &o.brdf))?;
        let bvh = Bvh::build(&mesh);
        Ok(Scene {
            mesh,
            curvature,
            brdf,
            bvh,
        })
    }
}

/// Counters from one scene simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SceneStats {
    pub specular_contributions: usize,
    pub specular_dropped: usize,
    pub diffraction_points: usize,
    pub diffraction_contributions: usize,
    pub diffraction_dropped: usize,
    /// Why the diffraction stage did not run, if it did not.
    pub diffraction_skipped: Option<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Spectra of `n` items, produced batch by batch by `produce` and summed in
/// batch order.
fn accumulate_batched<F>(
    n: usize,
    grid: &SpectralGrid,
    receivers: usize,
    scale: f64,
    produce: F,
) -> Result<SpectrumAccumulator>
where
    F: Fn(Range<usize>) -> Vec<Contribution> + Sync,
{
    let mut total = SpectrumAccumulator::new(grid, receivers);
    let batches = n.div_ceil(BATCH_SIZE);
    let mut start = 0;
    while start < batches {
        let end = (start + BATCH_GROUP).min(batches);
        let parts: Vec<Result<Option<SpectrumAccumulator>>> = (start..end)
            .into_par_iter()
            .map(|b| {
                let contributions = produce(b * BATCH_SIZE..((b + 1) * BATCH_SIZE).min(n));
                if contributions.iter().all(Contribution::is_zero) {
                    return Ok(None);
                }
                let mut acc = SpectrumAccumulator::new(grid, receivers);
                for c in &contributions {
                    acc.add(grid, c, scale)?;
                }
                Ok(Some(acc))
            })
            .collect();
        for p in parts {
            if let Some(acc) = p? {
                total.merge(&acc)?;
            }
        }
        start = end;
    }
    Ok(total)
}

/// Specular and diffraction impulse responses at every receiver of
/// `sensor`.
pub fn simulate_scene(
    scene: &Scene,
    sensor: &WorldSensor,
    params: &SimParams,
    grid: &SpectralGrid,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, SceneStats)> {
    let mut stats = SceneStats::default();
    let receivers = sensor.receivers.len();
    let bands = grid.brdf_freqs.len();

    let t = Instant::now();
    let opts = TraceOptions {
        max_bounces: params.max_bounces,
        normals: params.normals,
    };
    let gen = RayGenerator::new(params.n_rays, sensor, &mut stream_rng(seed, Stream::Rays)).stage("raytrace")?;
    let scale = if params.ray_normalization { 1.0 / params.n_rays as f64 } else { 1.0 };
    let specular = accumulate_batched(params.n_rays, grid, receivers, scale, |range| {
        let mut out = Vec::new();
        for i in range {
            let chain = trace_ray(&gen.ray(i, bands), &scene.mesh, &scene.bvh, &scene.brdf, &opts);
            if !chain.bounces.is_empty() {
                out.extend(sample_brdf_to_receivers(&chain, &sensor.receivers, &scene.bvh, &scene.brdf));
            }
        }
        out
    })
    .stage("raytrace")?;
    stats.specular_contributions = specular.added;
    stats.specular_dropped = specular.dropped;
    stats.timings_ms.insert("raytrace".into(), elapsed_ms(t));

    let t = Instant::now();
    let m = params.n_diffraction_points;
    let diffraction = if m == 0 || params.gain_diffraction == 0.0 {
        stats.diffraction_skipped = Some(if m == 0 { "no diffraction points requested" } else { "diffraction gain is zero" }.into());
        SpectrumAccumulator::new(grid, receivers)
    } else {
        match build_sampling_distribution(&scene.curvature, &scene.mesh, params.diffraction_threshold) {
            Err(Error::NoCandidates { threshold }) => {
                log::warn!("no face exceeds the diffraction threshold {threshold} 1/m; diffraction skipped");
                stats.diffraction_skipped = Some(format!("no face exceeds curvature threshold {threshold} 1/m"));
                SpectrumAccumulator::new(grid, receivers)
            }
            Err(e) => return Err(e).stage("diffraction"),
            Ok(dist) => {
                let points = sample_diffraction_points(&dist, &scene.mesh, m, &mut stream_rng(seed, Stream::Diffraction));
                stats.diffraction_points = points.len();
                accumulate_batched(m, grid, receivers, 1.0, |range| {
                    evaluate_points(
                        &points.points[range],
                        m,
                        &sensor.emitter,
                        &sensor.receivers,
                        &scene.mesh,
                        &scene.bvh,
                        &scene.brdf,
                    )
                })
                .stage("diffraction")?
            }
        }
    };
    stats.diffraction_contributions = diffraction.added;
    stats.diffraction_dropped = diffraction.dropped;
    stats.timings_ms.insert("diffraction".into(), elapsed_ms(t));
    if stats.specular_dropped + stats.diffraction_dropped > 0 {
        log::warn!(
            "{} contribution(s) longer than the impulse response were dropped",
            stats.specular_dropped + stats.diffraction_dropped
        );
    }

    let t = Instant::now();
    let h = specular.impulse_responses(grid).stage("spectral")?;
    let g = diffraction.impulse_responses(grid).stage("spectral")?;
    stats.timings_ms.insert("spectral".into(), elapsed_ms(t));
    Ok((h, g, stats))
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {w} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Spectral grid for a configuration.
pub fn spectral_grid(config: &SimulationConfig) -> Result<SpectralGrid> {
    SpectralGrid::new(&config.params, config.analysis_band())
}

pub fn prepare_objects(config: &SimulationConfig, grid: &SpectralGrid) -> Result<Vec<PreparedObject>> {
    config
        .mesh
        .objects
        .iter()
        .map(|o| prepare_object(o, &config.base_dir, config.mesh.merge_tolerance, grid))
        .collect()
}

/// Expands a bank fitted or loaded for `channels` to the full array.
fn expand_bank(bank: ErtfFilterBank, channels: &[usize], total: usize) -> Result<ErtfFilterBank> {
    if bank.num_channels() == total {
        return Ok(bank);
    }
    if bank.num_channels() != channels.len() {
        return Err(Error::ChannelMismatch {
            bank: bank.num_channels(),
            signal: channels.len(),
        });
    }
    let mut taps = vec![vec![0.0; bank.len()]; total];
    for (row, &c) in bank.taps.iter().zip(channels) {
        taps[c] = row.clone();
    }
    ErtfFilterBank::new(taps, bank.sample_rate)
}

/// Filter bank for one ear plus the fit report when it was fitted.
pub fn ear_bank(
    config: &SimulationConfig,
    ear: &EarConfig,
    group: Option<&str>,
) -> Result<(ErtfFilterBank, Option<FitReport>)> {
    let array = config.sensor.array()?;
    let total = array.num_receivers();
    let channels: Vec<usize> = match group {
        Some(g) => array.group_indices(g),
        None => (0..total).collect(),
    };
    let fs = config.params.sample_rate;
    let sub = SensorArray::new(array.emitter, channels.iter().map(|&i| array.receivers[i]).collect())?;
    let fit = |target: crate::ertf::DirectivityTarget| fit_fir_bank(&target, &sub, &config.fit_options());
    let (bank, report) = match ear {
        EarConfig::Sum => (ErtfFilterBank::unit(channels.len(), fs), None),
        EarConfig::Bank { path } => (read_bank(&config.resolve(path))?, None),
        EarConfig::Csv { path } => {
            let (b, r) = fit(load_target_csv(&config.resolve(path))?)?;
            (b, Some(r))
        }
        EarConfig::Analytic { target } => {
            let band = config
                .analysis_band()
                .unwrap_or([fs / config.params.ir_length as f64, config.params.nyquist()]);
            let (b, r) = fit(target.build(band)?)?;
            (b, Some(r))
        }
    };
    if bank.sample_rate != fs {
        return Err(Error::RateMismatch {
            expected: fs,
            actual: bank.sample_rate,
        });
    }
    Ok((expand_bank(bank, &channels, total)?, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metadata {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub n_rays: usize,
    pub n_diffraction_points: usize,
    pub receivers: usize,
    pub sample_rate: f64,
    pub ir_length: usize,
    pub band: Option<[f64; 2]>,
    pub stats: SceneStats,
    pub repair: Vec<RepairReport>,
    pub fit_left: Option<FitReport>,
    pub fit_right: Option<FitReport>,
    /// Factor applied to the received signals when peak normalization is on.
    pub output_scale: Option<f64>,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub irs: ImpulseResponseSet,
    pub binaural: BinauralResult,
    pub call: Option<EmittedCall>,
    pub left_bank: ErtfFilterBank,
    pub right_bank: ErtfFilterBank,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; the global pool when `None`.
    pub workers: Option<usize>,
}

/// Runs the full pipeline for one configuration. Nothing is written.
pub fn run_simulation(config: &SimulationConfig, opts: &RunOptions) -> Result<SimulationOutput> {
    config.validate()?;
    with_workers(opts.workers, || run_inner(config))?
}

fn run_inner(config: &SimulationConfig) -> Result<SimulationOutput> {
    let mut timings = BTreeMap::new();
    let params = &config.params;
    let grid = spectral_grid(config).stage("spectral")?;

    let t = Instant::now();
    let objects = prepare_objects(config, &grid).stage("mesh")?;
    let parts: Vec<(&PreparedObject, Pose)> = objects
        .iter()
        .zip(&config.mesh.objects)
        .map(|(o, c)| (o, c.pose()))
        .collect();
    let scene = Scene::assemble(&parts).stage("mesh")?;
    timings.insert("mesh".to_string(), elapsed_ms(t));

    let array = config.sensor.array()?;
    let sensor = transform_sensor(&array, &config.sensor.pose());
    let (h, g, stats) = simulate_scene(&scene, &sensor, params, &grid, params.seed)?;
    timings.extend(stats.timings_ms.iter().map(|(k, v)| (k.clone(), *v)));
    let irs = ImpulseResponseSet::new(h, g, params.gain_specular, params.gain_diffraction).stage("spectral")?;

    let t = Instant::now();
    let (left_bank, fit_left) = ear_bank(config, &config.ertf.left, config.ertf.left_group.as_deref()).stage("ertf")?;
    let (right_bank, fit_right) =
        ear_bank(config, &config.ertf.right, config.ertf.right_group.as_deref()).stage("ertf")?;
    let (h_left, h_right) = filter_ears(&irs, &left_bank, &right_bank).stage("ertf")?;
    timings.insert("ertf".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let mut output_scale = None;
    let (call, s_left, s_right) = match &config.call {
        None => (None, Vec::new(), Vec::new()),
        Some(c) => {
            let call = synthesize_call(c.kind, c.f_start, c.f_end, c.duration, c.window, params.sample_rate)
                .stage("signals")?;
            let (mut l, mut r) = receive(&call, params.sample_rate, &h_left, &h_right).stage("signals")?;
            if config.output.normalize_peak {
                let peak = l.iter().chain(&r).fold(0.0f64, |m, x| m.max(x.abs()));
                let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
                l.iter_mut().chain(r.iter_mut()).for_each(|x| *x *= s);
                output_scale = Some(s);
            }
            (Some(call), l, r)
        }
    };
    timings.insert("signals".to_string(), elapsed_ms(t));

    let metadata = Metadata {
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: params.seed,
        n_rays: params.n_rays,
        n_diffraction_points: params.n_diffraction_points,
        receivers: array.num_receivers(),
        sample_rate: params.sample_rate,
        ir_length: params.ir_length,
        band: config.analysis_band(),
        stats,
        repair: objects.iter().map(|o| o.repair.clone()).collect(),
        fit_left,
        fit_right,
        output_scale,
        timings_ms: timings,
    };
    Ok(SimulationOutput {
        irs,
        binaural: BinauralResult {
            h_left,
            h_right,
            s_left,
            s_right,
        },
        call,
        left_bank,
        right_bank,
        metadata,
    })
}

/// Mesh diagnostics as reported by `mesh-info`.
#[derive(Clone, Debug, Serialize)]
pub struct MeshInfo {
    pub input_vertices: usize,
    pub input_faces: usize,
    pub vertices: usize,
    pub faces: usize,
    pub repair: RepairReport,
    pub bounding_box: [Vec3; 2],
    pub area: f64,
    pub curvature_histogram: CurvatureHistogram,
    pub brdf: Vec<BrdfRange>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureHistogram {
    /// Bin edges (1/m).
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Centre of the fullest bin.
    pub mode: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BrdfRange {
    pub frequency: f64,
    pub alpha_deg: [f64; 2],
    pub k: [f64; 2],
}

pub fn mesh_info(
    path: &std::path::Path,
    material: &crate::mesh::MaterialParams,
    freqs: &[f64],
    speed_of_sound: f64,
) -> Result<MeshInfo> {
    let raw = crate::mesh::load_stl(path)?;
    let (mesh, repair) = repair_mesh(&raw, crate::mesh::DEFAULT_MERGE_TOLERANCE)?;
    let curv = estimate_curvature(&mesh);
    let (edges, counts) = curv.histogram(32);
    let fullest = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap_or(0);
    let brdf = derive_brdf(&curv, freqs, material, speed_of_sound)?;
    let range = |v: &mut dyn Iterator<Item = f64>| {
        v.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], x| [lo.min(x), hi.max(x)])
    };
    let brdf = freqs
        .iter()
        .enumerate()
        .map(|(j, &f)| BrdfRange {
            frequency: f,
            alpha_deg: range(&mut (0..mesh.num_faces()).map(|i| brdf.alpha_row(i)[j].to_degrees())),
            k: range(&mut (0..mesh.num_faces()).map(|i| brdf.k_row(i)[j])),
        })
        .collect();
    let (lo, hi) = mesh.bounding_box();
    Ok(MeshInfo {
        input_vertices: raw.vertices.len(),
        input_faces: raw.faces.len(),
        vertices: mesh.num_vertices(),
        faces: mesh.num_faces(),
        repair,
        bounding_box: [lo, hi],
        area: mesh.total_area(),
        curvature_histogram: CurvatureHistogram {
            mode: 0.5 * (edges[fullest] + edges[fullest + 1]),
            edges,
            counts,
        },
        brdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Primitive;

    fn plate_config(d: f64, n_rays: usize) -> SimulationConfig {
        let plate = ObjectConfig::primitive(Primitive::Plate {
            width_x: 2.0,
            width_y: 2.0,
            divisions: 16,
        })
        .at(Vec3::new(d, 0.0, 0.0), [0.0, -90.0, 0.0]);
        let params = SimParams {
            n_rays,
            n_diffraction_points: 0,
            band: None,
            ..SimParams::default()
        };
        SimulationConfig::new(vec![plate], SensorArray::monostatic(), params)
    }

    fn argmax(x: &[f64]) -> usize {
        (0..x.len()).max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs())).unwrap()
    }

    #[test]
    fn plate_echo_delay() {
        let mut cfg = plate_config(1.0, 100_000);
        cfg.mesh.objects[0].material.alpha_min = 1f64.to_radians();
        let out = run_simulation(&cfg, &RunOptions::default()).unwrap();
        let expect = (2.0 / 343.0 * 1e6_f64).round() as i64;
        let h = &out.irs.combined[0];
        let got = argmax(h) as i64;
        assert!((got - expect).abs() <= 1, "{got} vs {expect}");
        assert!(out.metadata.stats.specular_contributions > 0);
        assert_eq!(out.metadata.config_hash, cfg.hash());
    }

    #[test]
    fn zero_diffraction_gain_gives_zero_diffraction_ir() {
        let mut cfg = plate_config(0.5, 5000);
        cfg.mesh.objects[0].primitive = Some(Primitive::Icosphere { radius: 0.1, subdivisions: 3 });
        cfg.params.n_diffraction_points = 500;
        cfg.params.gain_diffraction = 0.0;
        let out = run_simulation(&cfg, &RunOptions::default()).unwrap();
        assert!(out.irs.diffraction[0].iter().all(|&x| x == 0.0));
        assert_eq!(out.irs.combined, out.irs.specular);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = plate_config(0.7, 9000);
        cfg.mesh.objects[0].primitive = Some(Primitive::Icosphere { radius: 0.1, subdivisions: 3 });
        cfg.params.n_diffraction_points = 3000;
        cfg.params.diffraction_threshold = Some(0.0);
        let a = run_simulation(&cfg, &RunOptions { workers: Some(1) }).unwrap();
        let b = run_simulation(&cfg, &RunOptions { workers: Some(3) }).unwrap();
        assert_eq!(a.irs, b.irs);
        assert!(a.metadata.stats.diffraction_contributions > 0);
    }

    #[test]
    fn flat_scene_skips_diffraction() {
        let mut cfg = plate_config(1.0, 1000);
        cfg.params.n_diffraction_points = 100;
        let out = run_simulation(&cfg, &RunOptions::default()).unwrap();
        assert!(out.metadata.stats.diffraction_skipped.is_some());
    }

    #[test]
    fn stage_labels_on_errors() {
        let mut cfg = plate_config(1.0, 10);
        cfg.mesh.objects[0].primitive = Some(Primitive::Plate { width_x: 0.0, width_y: 1.0, divisions: 1 });
        let err = run_simulation(&cfg, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "mesh", .. }), "{err}");
    }
}
