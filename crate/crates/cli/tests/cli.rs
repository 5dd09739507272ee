use std::path::Path;
use std::process::{Command, Output};

fn sonotrace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sonotrace"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SCENE: &str = r#"
[mesh]
objects = [
  { primitive = { kind = "icosphere", radius = 0.05, subdivisions = 2 }, translation = [0.5, 0.0, 0.0] },
]

[sensor]
receivers = [[0.0, 0.004, 0.0], [0.0, -0.004, 0.0], [0.004, 0.0, 0.0]]
groups = ["left", "right", "left"]

[params]
n_rays = 3000
n_diffraction_points = 200
ir_length = 4096
band = [30000.0, 90000.0]

[ertf]
taps = 16
left_group = "left"
right = { source = "analytic", target = { pattern = { kind = "cardioid_power", axis = [1.0, -1.0, 0.0] }, n_directions = 60, n_frequencies = 8 } }

[call]
kind = "hyperbolic_fm"
f_start = 90000.0
f_end = 30000.0
duration = 0.001
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scene.toml"), SCENE).unwrap();
    dir
}

fn metadata(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap()
}

#[test]
fn simulate_is_independent_of_worker_count() {
    let tmp = setup();
    let p = tmp.path();
    ok(&sonotrace(&["simulate", "--config", "scene.toml", "--workers", "1", "--out", "w1"], p));
    ok(&sonotrace(&["simulate", "--config", "scene.toml", "--workers", "8", "--out", "w8"], p));
    for f in ["ir_combined_rx0.wav", "ir_diffraction_rx2.wav", "ear_right.wav", "received_left.wav"] {
        assert_eq!(std::fs::read(p.join("w1").join(f)).unwrap(), std::fs::read(p.join("w8").join(f)).unwrap(), "{f}");
    }
    let m = metadata(&p.join("w1"));
    assert!(m["fit_right"]["residual"].is_number());
    assert!(m["timings_ms"]["raytrace"].is_number());
    assert_eq!(m["config_hash"], metadata(&p.join("w8"))["config_hash"]);

    ok(&sonotrace(&["simulate", "--config", "scene.toml", "--seed", "99", "--out", "s99"], p));
    let m99 = metadata(&p.join("s99"));
    assert_eq!(m99["seed"], 99);
    assert_ne!(m99["config_hash"], m["config_hash"]);

    // The effective config reproduces the run.
    ok(&sonotrace(&["simulate", "--config", "w1/config.effective.toml", "--out", "again"], p));
    assert_eq!(
        std::fs::read(p.join("w1/ir_combined_rx1.wav")).unwrap(),
        std::fs::read(p.join("again/ir_combined_rx1.wav")).unwrap()
    );
}

#[test]
fn rotation_scan_has_one_row_per_angle() {
    let tmp = setup();
    let p = tmp.path();
    let out = sonotrace(
        &["scan-rotation", "--config", "scene.toml", "--axis", "z", "--start", "-90", "--end", "90", "--step", "1", "--out", "rot", "--no-irs"],
        p,
    );
    ok(&out);
    let summary = std::fs::read_to_string(p.join("rot/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 182);
    assert!(lines[0].starts_with("angle_deg,"));
    assert!(lines[1].starts_with("-9e1,"));
    assert!(!p.join("rot/left_ir.csv").exists());
    let spectra = std::fs::read_to_string(p.join("rot/right_spectrum_db.csv")).unwrap();
    assert_eq!(spectra.lines().count(), 182);
}

#[test]
fn sphere_scan_reports_desired_pattern() {
    let tmp = setup();
    let p = tmp.path();
    ok(&sonotrace(&["scan-sphere", "--config", "scene.toml", "--points", "12", "--radius", "0.7", "--out", "sph"], p));
    let summary = std::fs::read_to_string(p.join("sph/summary.csv")).unwrap();
    let header = summary.lines().next().unwrap();
    assert!(header.contains("right_desired") && header.contains("left_realized"));
    assert!(!header.contains("left_desired"));
    assert_eq!(summary.lines().count(), 13);
}

#[test]
fn fit_ertf_writes_banks() {
    let tmp = setup();
    let p = tmp.path();
    let out = sonotrace(&["fit-ertf", "--config", "scene.toml", "--out", "banks"], p);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report[0]["ear"], "left");
    assert!(report[0]["fit"].is_null());
    assert!(report[1]["fit"]["relative_residual"].as_f64().unwrap() < 1.0);
    let bank = std::fs::read(p.join("banks/right.bank")).unwrap();
    assert_eq!(bank.len(), 24 + 3 * 16 * 8);

    // A bank file can stand in for the fitted ear.
    let with_bank = SCENE.replace(
        r#"right = { source = "analytic", target = { pattern = { kind = "cardioid_power", axis = [1.0, -1.0, 0.0] }, n_directions = 60, n_frequencies = 8 } }"#,
        r#"right = { source = "bank", path = "banks/right.bank" }"#,
    );
    std::fs::write(p.join("bank.toml"), with_bank).unwrap();
    ok(&sonotrace(&["simulate", "--config", "bank.toml", "--out", "b"], p));
    ok(&sonotrace(&["simulate", "--config", "scene.toml", "--out", "a"], p));
    assert_eq!(std::fs::read(p.join("a/ear_right.wav")).unwrap(), std::fs::read(p.join("b/ear_right.wav")).unwrap());
}

#[test]
fn mesh_info_and_errors() {
    let tmp = setup();
    let p = tmp.path();
    let cube = "solid c\n".to_string()
        + &[
            [[0, 0, 0], [0, 1, 0], [1, 1, 0]],
            [[0, 0, 0], [1, 1, 0], [1, 0, 0]],
            [[0, 0, 1], [1, 0, 1], [1, 1, 1]],
            [[0, 0, 1], [1, 1, 1], [0, 1, 1]],
            [[0, 0, 0], [1, 0, 0], [1, 0, 1]],
            [[0, 0, 0], [1, 0, 1], [0, 0, 1]],
            [[1, 0, 0], [1, 1, 0], [1, 1, 1]],
            [[1, 0, 0], [1, 1, 1], [1, 0, 1]],
            [[1, 1, 0], [0, 1, 0], [0, 1, 1]],
            [[1, 1, 0], [0, 1, 1], [1, 1, 1]],
            [[0, 1, 0], [0, 0, 0], [0, 0, 1]],
            [[0, 1, 0], [0, 0, 1], [0, 1, 1]],
        ]
        .iter()
        .map(|t| {
            let v: Vec<String> = t.iter().map(|p| format!("vertex {} {} {}\n", p[0], p[1], p[2])).collect();
            format!("facet normal 0 0 0\nouter loop\n{}endloop\nendfacet\n", v.concat())
        })
        .collect::<String>()
        + "endsolid c\n";
    std::fs::write(p.join("cube.stl"), cube).unwrap();
    let out = sonotrace(&["mesh-info", "cube.stl", "--frequency", "40000,80000"], p);
    ok(&out);
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(info["vertices"], 8);
    assert_eq!(info["faces"], 12);
    assert_eq!(info["input_vertices"], 36);
    assert_eq!(info["brdf"].as_array().unwrap().len(), 2);

    std::fs::write(p.join("empty.stl"), "").unwrap();
    let out = sonotrace(&["mesh-info", "empty.stl"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse"));

    std::fs::write(p.join("bad.toml"), "[mesh]\nobjects = []\n").unwrap();
    let out = sonotrace(&["simulate", "--config", "bad.toml"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one object"));
}
