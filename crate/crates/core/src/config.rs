//! Simulation configuration: mesh, sensor and parameter sections plus
//! optional ERTF, call and output sections. TOML and JSON are accepted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ertf::{AnalyticTargetSpec, FitOptions};
use crate::mesh::{primitives, MaterialParams, RawMesh, DEFAULT_MERGE_TOLERANCE};
use crate::scene::{Pose, SensorArray, SimParams};
use crate::signals::{CallKind, Window};
use crate::{Error, Result, Vec3};

/// Generated geometry, centred at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Primitive {
    Icosphere { radius: f64, subdivisions: u32 },
    Cuboid { size: Vec3 },
    /// In the z = 0 plane, facing +Z.
    Plate { width_x: f64, width_y: f64, divisions: usize },
    OpenCylinder { radius: f64, height: f64, segments: usize, rings: usize },
    CappedCylinder { radius: f64, height: f64, segments: usize, rings: usize },
}

impl Primitive {
    pub fn build(&self) -> Result<RawMesh> {
        match *self {
            Primitive::Icosphere { radius, subdivisions } => primitives::icosphere(radius, subdivisions),
            Primitive::Cuboid { size } => primitives::cuboid(size),
            Primitive::Plate { width_x, width_y, divisions } => primitives::plate(width_x, width_y, divisions),
            Primitive::OpenCylinder { radius, height, segments, rings } => {
                primitives::open_cylinder(radius, height, segments, rings)
            }
            Primitive::CappedCylinder { radius, height, segments, rings } => {
                primitives::capped_cylinder(radius, height, segments, rings)
            }
        }
    }
}

/// One scene object: geometry, placement and material mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// STL file, relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitive: Option<Primitive>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub translation: Vec3,
    /// Degrees about X, then Y, then Z.
    #[serde(default)]
    pub rotation_deg: [f64; 3],
    #[serde(default)]
    pub material: MaterialParams,
}

fn one() -> f64 {
    1.0
}

impl ObjectConfig {
    pub fn primitive(primitive: Primitive) -> Self {
        ObjectConfig {
            path: None,
            primitive: Some(primitive),
            scale: 1.0,
            translation: Vec3::zeros(),
            rotation_deg: [0.0; 3],
            material: MaterialParams::default(),
        }
    }

    pub fn at(mut self, translation: Vec3, rotation_deg: [f64; 3]) -> Self {
        self.translation = translation;
        self.rotation_deg = rotation_deg;
        self
    }

    pub fn with_material(mut self, material: MaterialParams) -> Self {
        self.material = material;
        self
    }

    pub fn pose(&self) -> Pose {
        Pose::from_degrees(self.translation, self.rotation_deg)
    }

    /// Geometry in object coordinates, scaled.
    pub fn load(&self, base: &Path) -> Result<RawMesh> {
        let raw = match (&self.path, &self.primitive) {
            (Some(p), None) => crate::mesh::load_stl(&base.join(p))?,
            (None, Some(p)) => p.build()?,
            _ => return Err(Error::Config("each object needs exactly one of `path` or `primitive`".into())),
        };
        Ok(raw.scaled(self.scale))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_merge")]
    pub merge_tolerance: f64,
    pub objects: Vec<ObjectConfig>,
}

fn default_merge() -> f64 {
    DEFAULT_MERGE_TOLERANCE
}

/// Sensor array in its own frame and its pose in the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(default)]
    pub emitter: Vec3,
    pub receivers: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
    #[serde(default)]
    pub translation: Vec3,
    /// Degrees about X, then Y, then Z.
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl SensorConfig {
    pub fn from_array(array: &SensorArray) -> Self {
        SensorConfig {
            emitter: array.emitter,
            receivers: array.receivers.clone(),
            groups: array.groups.clone(),
            translation: Vec3::zeros(),
            rotation_deg: [0.0; 3],
        }
    }

    pub fn array(&self) -> Result<SensorArray> {
        let a = SensorArray::new(self.emitter, self.receivers.clone())?;
        match &self.groups {
            Some(g) => a.with_groups(g.clone()),
            None => Ok(a),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::from_degrees(self.translation, self.rotation_deg)
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig::from_array(&SensorArray::monostatic())
    }
}

/// Source of one ear's filter bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum EarConfig {
    /// Unit taps on the ear's receivers (all receivers without a group).
    Sum,
    /// Binary bank file.
    Bank { path: PathBuf },
    /// Fit against a directivity CSV.
    Csv { path: PathBuf },
    /// Fit against an analytic pattern.
    Analytic { target: AnalyticTargetSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErtfConfig {
    pub left: EarConfig,
    pub right: EarConfig,
    /// Receiver groups feeding each ear; when absent every receiver feeds
    /// both ears.
    pub left_group: Option<String>,
    pub right_group: Option<String>,
    pub taps: usize,
    pub regularization: f64,
    pub delay: Option<f64>,
}

impl Default for ErtfConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        ErtfConfig {
            left: EarConfig::Sum,
            right: EarConfig::Sum,
            left_group: None,
            right_group: None,
            taps: fit.taps,
            regularization: fit.regularization,
            delay: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallConfig {
    pub kind: CallKind,
    pub f_start: f64,
    #[serde(default)]
    pub f_end: f64,
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub window: Window,
}

impl CallConfig {
    pub fn band(&self) -> [f64; 2] {
        match self.kind {
            CallKind::Cf => [self.f_start, self.f_start],
            _ => [self.f_start.min(self.f_end), self.f_start.max(self.f_end)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub wav: bool,
    pub csv: bool,
    /// Scale received signals to unit peak; the factor goes to metadata.
    pub normalize_peak: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            wav: true,
            csv: true,
            normalize_peak: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub mesh: MeshConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub params: SimParams,
    #[serde(default)]
    pub ertf: ErtfConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<CallConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SimulationConfig {
    pub fn new(objects: Vec<ObjectConfig>, sensor: SensorArray, params: SimParams) -> Self {
        SimulationConfig {
            mesh: MeshConfig {
                merge_tolerance: DEFAULT_MERGE_TOLERANCE,
                objects,
            },
            sensor: SensorConfig::from_array(&sensor),
            params,
            ertf: ErtfConfig::default(),
            call: None,
            output: OutputConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::parse("JSON config", e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::parse("TOML config", e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = SimulationConfig::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Analysis band: explicit, else the call band, else the full band.
    pub fn analysis_band(&self) -> Option<[f64; 2]> {
        if let Some(b) = self.params.band {
            return Some(b);
        }
        self.call.as_ref().map(|c| {
            let [lo, hi] = c.band();
            if hi > lo {
                [lo, hi]
            } else {
                let df = self.params.sample_rate / self.params.ir_length as f64;
                [(lo - df).max(0.0), (hi + df).min(self.params.nyquist())]
            }
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            taps: self.ertf.taps,
            regularization: self.ertf.regularization,
            delay: self.ertf.delay,
            sample_rate: self.params.sample_rate,
            speed_of_sound: self.params.speed_of_sound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.params.validate()?;
        let array = self.sensor.array()?;
        if self.mesh.objects.is_empty() {
            return cfg("mesh.objects must list at least one object".into());
        }
        if !(self.mesh.merge_tolerance >= 0.0) {
            return cfg("mesh.merge_tolerance must be non-negative".into());
        }
        for (i, o) in self.mesh.objects.iter().enumerate() {
            match (&o.path, &o.primitive) {
                (Some(p), None) => {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        return cfg(format!("object {i}: mesh file {} does not exist", full.display()));
                    }
                }
                (None, Some(_)) => {}
                _ => return cfg(format!("object {i}: give exactly one of `path` or `primitive`")),
            }
            if !(o.scale > 0.0 && o.scale.is_finite()) {
                return cfg(format!("object {i}: scale must be positive"));
            }
            o.material.validate()?;
        }
        for (name, ear, group) in [
            ("left", &self.ertf.left, &self.ertf.left_group),
            ("right", &self.ertf.right, &self.ertf.right_group),
        ] {
            if let EarConfig::Bank { path } | EarConfig::Csv { path } = ear {
                let full = self.resolve(path);
                if !full.is_file() {
                    return cfg(format!("ertf.{name}: file {} does not exist", full.display()));
                }
            }
            if let Some(g) = group {
                if array.group_indices(g).is_empty() {
                    return cfg(format!("ertf.{name}_group: no receiver is labelled {g:?}"));
                }
            }
        }
        if self.ertf.taps == 0 {
            return cfg("ertf.taps must be at least 1".into());
        }
        if let Some(c) = &self.call {
            crate::signals::synthesize_call(c.kind, c.f_start, c.f_end, c.duration, c.window, self.params.sample_rate)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with every referenced file path made absolute.
    pub fn effective(&self) -> SimulationConfig {
        let mut c = self.clone();
        let abs = |p: &Path| {
            let full = self.resolve(p);
            std::path::absolute(&full).unwrap_or(full)
        };
        for o in &mut c.mesh.objects {
            if let Some(p) = &o.path {
                o.path = Some(abs(p));
            }
        }
        for ear in [&mut c.ertf.left, &mut c.ertf.right] {
            if let EarConfig::Bank { path } | EarConfig::Csv { path } = ear {
                *path = abs(path);
            }
        }
        c
    }

    /// SHA-256 of the canonical JSON form of the effective config, ignoring
    /// the output section.
    pub fn hash(&self) -> String {
        let mut c = self.effective();
        c.output = OutputConfig::default();
        let json = serde_json::to_value(&c).expect("config serializes");
        let digest = Sha256::digest(canonical_json(&json).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// JSON text with object keys sorted at every level.
fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let items: Vec<String> = keys
                .iter()
                .map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&map[*k])))
                .collect();
            format!("{{{}}}", items.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[mesh]
[[mesh.objects]]
primitive = { kind = "plate", width_x = 2.0, width_y = 2.0, divisions = 8 }
translation = [1.0, 0.0, 0.0]
rotation_deg = [0.0, -90.0, 0.0]

[sensor]
emitter = [0.0, 0.0, 0.0]
receivers = [[0.0, 0.01, 0.0], [0.0, -0.01, 0.0]]
groups = ["left", "right"]

[params]
n_rays = 1000
seed = 7

[ertf]
left_group = "left"
right_group = "right"

[call]
kind = "linear_fm"
f_start = 100000.0
f_end = 40000.0
duration = 0.002
"#;

    #[test]
    fn parses_and_validates() {
        let c = SimulationConfig::from_str(EXAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.params.n_rays, 1000);
        assert_eq!(c.params.speed_of_sound, 343.0);
        assert_eq!(c.sensor.receivers.len(), 2);
        assert_eq!(c.ertf.left, EarConfig::Sum);
        assert_eq!(c.analysis_band(), Some([40e3, 100e3]));
    }

    #[test]
    fn toml_and_json_agree() {
        let c = SimulationConfig::from_str(EXAMPLE).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let d = SimulationConfig::from_str(&json).unwrap();
        assert_eq!(c, d);
        let back = SimulationConfig::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn hash_tracks_content_not_output() {
        let c = SimulationConfig::from_str(EXAMPLE).unwrap();
        let mut d = c.clone();
        d.output.directory = PathBuf::from("elsewhere");
        assert_eq!(c.hash(), d.hash());
        d.params.seed = 8;
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(SimulationConfig::from_str("[mesh]\nobjects = []\nbogus = 1"), Err(Error::Parse { .. })));
        let mut c = SimulationConfig::from_str(EXAMPLE).unwrap();
        c.mesh.objects[0].path = Some(PathBuf::from("missing.stl"));
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = SimulationConfig::from_str(EXAMPLE).unwrap();
        c.ertf.left_group = Some("nose".into());
        assert!(c.validate().is_err());
        let mut c = SimulationConfig::from_str(EXAMPLE).unwrap();
        c.params.ir_length = 1000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": {"d": [1, 2], "c": null}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":null,"d":[1,2]},"b":1}"#);
    }
}
