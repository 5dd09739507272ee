use std::path::Path;

use sonotrace::config::{ObjectConfig, Primitive, SimulationConfig};
use sonotrace::mesh::primitives::icosphere;
use sonotrace::mesh::{write_stl_binary, MaterialParams};
use sonotrace::output::{read_wav, verify_outputs, write_scan, write_simulation, EFFECTIVE_CONFIG_FILE};
use sonotrace::pipeline::{mesh_info, run_simulation, RunOptions};
use sonotrace::scan::{run_sphere_scan, ScanContext, ScanOptions};
use sonotrace::scene::{SensorArray, SimParams};
use sonotrace::{Error, Vec3};

/// Sphere loaded from an STL next to the config, plus a cuboid primitive.
fn write_scene(dir: &Path) -> SimulationConfig {
    let stl = dir.join("ball.stl");
    let mut f = std::fs::File::create(&stl).unwrap();
    write_stl_binary(&icosphere(0.05, 3).unwrap(), &mut f).unwrap();
    let text = r#"
[mesh]
objects = [
  { path = "ball.stl", translation = [0.6, 0.1, 0.0] },
  { primitive = { kind = "cuboid", size = [0.05, 0.05, 0.05] }, translation = [0.9, -0.2, 0.0], rotation_deg = [10.0, 20.0, 30.0] },
]

[params]
n_rays = 8000
n_diffraction_points = 400
ir_length = 8192
seed = 11

[call]
kind = "linear_fm"
f_start = 90000.0
f_end = 40000.0
duration = 0.001
"#;
    let cfg_path = dir.join("scene.toml");
    std::fs::write(&cfg_path, text).unwrap();
    SimulationConfig::load(&cfg_path).unwrap()
}

fn wav(dir: &Path, name: &str) -> Vec<f64> {
    read_wav(&dir.join(name)).unwrap().0
}

#[test]
fn simulation_files_round_trip_through_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path());
    let out = run_simulation(&cfg, &RunOptions::default()).unwrap();
    let dir = tmp.path().join("run1");
    write_simulation(&dir, &cfg, &out).unwrap();
    for name in [
        "ir_specular_rx0.wav",
        "ir_diffraction_rx0.wav",
        "ir_combined_rx0.wav",
        "ear_left.wav",
        "received_right.wav",
        "call.wav",
        "impulse_responses.csv",
        "metadata.json",
        EFFECTIVE_CONFIG_FILE,
    ] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let combined = wav(&dir, "ir_combined_rx0.wav");
    assert_eq!(combined.len(), 8192);
    assert!(combined.iter().any(|&x| x != 0.0));
    assert!(out.metadata.stats.diffraction_contributions > 0);
    verify_outputs(&dir, &cfg).unwrap();

    // Re-run from the written effective config, from another directory.
    let again_cfg = SimulationConfig::load(&dir.join(EFFECTIVE_CONFIG_FILE)).unwrap();
    assert_eq!(again_cfg.hash(), cfg.hash());
    let again = run_simulation(&again_cfg, &RunOptions::default()).unwrap();
    assert_eq!(again.irs, out.irs);
    assert_eq!(again.binaural, out.binaural);
    let dir2 = tmp.path().join("run2");
    write_simulation(&dir2, &again_cfg, &again).unwrap();
    for name in ["ir_combined_rx0.wav", "ir_diffraction_rx0.wav", "received_left.wav"] {
        assert_eq!(std::fs::read(dir.join(name)).unwrap(), std::fs::read(dir2.join(name)).unwrap());
    }

    let mut other = cfg.clone();
    other.params.seed += 1;
    assert!(matches!(verify_outputs(&dir, &other), Err(Error::HashMismatch { .. })));
    // The output section does not enter the hash.
    let mut moved = cfg.clone();
    moved.output.directory = "elsewhere".into();
    verify_outputs(&dir, &moved).unwrap();
}

#[test]
fn zero_diffraction_gain_writes_silent_diffraction_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = write_scene(tmp.path());
    cfg.params.gain_diffraction = 0.0;
    let out = run_simulation(&cfg, &RunOptions::default()).unwrap();
    write_simulation(tmp.path(), &cfg, &out).unwrap();
    assert!(wav(tmp.path(), "ir_diffraction_rx0.wav").iter().all(|&x| x == 0.0));
    assert_eq!(wav(tmp.path(), "ir_combined_rx0.wav"), wav(tmp.path(), "ir_specular_rx0.wav"));
}

#[test]
fn worker_counts_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path());
    let mut files = Vec::new();
    for w in [1, 3, 8] {
        let out = run_simulation(&cfg, &RunOptions { workers: Some(w) }).unwrap();
        let dir = tmp.path().join(format!("w{w}"));
        write_simulation(&dir, &cfg, &out).unwrap();
        files.push(
            ["ir_specular_rx0.wav", "ir_diffraction_rx0.wav", "ir_combined_rx0.wav", "received_left.wav"]
                .map(|n| std::fs::read(dir.join(n)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn sphere_scan_rows_rerun_alone_and_csv_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = write_scene(tmp.path());
    cfg.mesh.objects.truncate(1);
    cfg.params.n_rays = 3000;
    cfg.params.n_diffraction_points = 0;
    cfg.params.band = Some([30e3, 90e3]);
    let scan = run_sphere_scan(&cfg, 7, 0.8, &ScanOptions::default()).unwrap();
    let ctx = ScanContext::new(&cfg).unwrap();
    let row = ctx.sphere_row(&scan.directions[4], 0.8, 4).unwrap();
    assert_eq!(row.left, scan.left.irs[4]);

    let dir = tmp.path().join("scan");
    write_scan(&dir, &cfg, &scan).unwrap();
    let mut rdr = csv::Reader::from_path(dir.join("left_spectrum_db.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "direction");
    assert_eq!(header.len(), 1 + scan.frequencies.len());
    assert_eq!(rdr.records().count(), 7);
    let mut rdr = csv::Reader::from_path(dir.join("left_ir.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 1 + scan.left.irs[0].len());
    assert_eq!(rdr.records().count(), 7);
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("direction,dx,dy,dz,left_energy"));
    verify_outputs(&dir, &cfg).unwrap();
}

#[test]
fn mesh_info_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let freqs = [40e3, 80e3];
    let m = MaterialParams::default();

    let cube = tmp.path().join("cube.stl");
    let mut f = std::fs::File::create(&cube).unwrap();
    let raw = sonotrace::mesh::primitives::cuboid(Vec3::new(1.0, 1.0, 1.0)).unwrap();
    // Unshared vertices, as STL stores them.
    let soup: Vec<Vec3> = raw.faces.iter().flat_map(|f| f.map(|i| raw.vertices[i])).collect();
    let faces = (0..raw.faces.len()).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
    write_stl_binary(&sonotrace::mesh::RawMesh::new(soup, faces).unwrap(), &mut f).unwrap();
    drop(f);
    let info = mesh_info(&cube, &m, &freqs, 343.0).unwrap();
    assert_eq!((info.input_vertices, info.input_faces), (36, 12));
    assert_eq!((info.vertices, info.faces), (8, 12));
    assert!((info.area - 6.0).abs() < 1e-9);
    assert_eq!(info.brdf.len(), 2);

    let ball = tmp.path().join("ball.stl");
    let mut f = std::fs::File::create(&ball).unwrap();
    write_stl_binary(&icosphere(0.1, 4).unwrap(), &mut f).unwrap();
    drop(f);
    let info = mesh_info(&ball, &m, &freqs, 343.0).unwrap();
    let h = &info.curvature_histogram;
    let width = h.edges[1] - h.edges[0];
    assert!((h.mode - 10.0).abs() <= 0.05 * 10.0 + width, "mode {}", h.mode);

    let empty = tmp.path().join("empty.stl");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(mesh_info(&empty, &m, &freqs, 343.0), Err(Error::Parse { .. })));
}

#[test]
fn primitive_only_config_builds_in_code() {
    let obj = ObjectConfig::primitive(Primitive::Icosphere {
        radius: 0.05,
        subdivisions: 2,
    })
    .at(Vec3::new(0.5, 0.0, 0.0), [0.0; 3]);
    let params = SimParams {
        n_rays: 2000,
        n_diffraction_points: 0,
        ..Default::default()
    };
    let cfg = SimulationConfig::new(vec![obj], SensorArray::monostatic(), params);
    let text = cfg.to_toml().unwrap();
    assert_eq!(SimulationConfig::from_str(&text).unwrap().hash(), cfg.hash());
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(SimulationConfig::from_str(&json).unwrap().hash(), cfg.hash());
}
