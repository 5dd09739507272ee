//! Writing simulation and scan results to disk.
//!
//! Every output directory holds a `metadata.json` carrying the config hash;
//! [`verify_outputs`] checks it against a config before re-analysis.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SimulationConfig;
use crate::pipeline::SimulationOutput;
use crate::scan::{EarScan, ScanKind, ScanResult};
use crate::{Error, Result};

pub const METADATA_FILE: &str = "metadata.json";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.effective.toml";

fn wav_spec(sample_rate: f64) -> Result<hound::WavSpec> {
    if !(sample_rate >= 1.0 && sample_rate <= u32::MAX as f64 && sample_rate.fract() == 0.0) {
        return Err(Error::InvalidParameter(format!(
            "WAV output needs an integer sample rate, got {sample_rate}"
        )));
    }
    Ok(hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    })
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::parse("WAV file", format!("{}: {other}", path.display())),
    }
}

/// Mono IEEE float32 WAV.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: f64) -> Result<()> {
    let mut w = hound::WavWriter::create(path, wav_spec(sample_rate)?).map_err(|e| wav_error(path, e))?;
    for &x in samples {
        w.write_sample(x as f32).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Samples and sample rate of a mono float WAV.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, f64)> {
    let mut r = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Float {
        return Err(Error::parse("WAV file", format!("{}: expected mono float samples", path.display())));
    }
    let samples = r
        .samples::<f32>()
        .map(|s| s.map(f64::from))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok((samples, spec.sample_rate as f64))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_effective_config(dir: &Path, config: &SimulationConfig) -> Result<()> {
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, config.effective().to_toml()?).map_err(|e| Error::io(&path, e))
}

/// CSV with a header row and one row per record.
fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse("CSV output", e.to_string()))?;
    let csv_err = |e: csv::Error| Error::parse("CSV output", e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Writes IRs, ear responses, received signals and metadata of a single
/// simulation. Returns the written paths.
pub fn write_simulation(dir: &Path, config: &SimulationConfig, out: &SimulationOutput) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let fs_ = config.params.sample_rate;
    let mut written = Vec::new();
    let mut wav = |name: String, x: &[f64]| -> Result<()> {
        let p = dir.join(name);
        write_wav(&p, x, fs_)?;
        written.push(p);
        Ok(())
    };
    if config.output.wav {
        for i in 0..out.irs.num_receivers() {
            wav(format!("ir_specular_rx{i}.wav"), &out.irs.specular[i])?;
            wav(format!("ir_diffraction_rx{i}.wav"), &out.irs.diffraction[i])?;
            wav(format!("ir_combined_rx{i}.wav"), &out.irs.combined[i])?;
        }
        wav("ear_left.wav".into(), &out.binaural.h_left)?;
        wav("ear_right.wav".into(), &out.binaural.h_right)?;
        if let Some(call) = &out.call {
            wav("call.wav".into(), &call.samples)?;
            wav("received_left.wav".into(), &out.binaural.s_left)?;
            wav("received_right.wav".into(), &out.binaural.s_right)?;
        }
    }
    if config.output.csv {
        let p = dir.join("impulse_responses.csv");
        let n = out.irs.ir_length();
        let mut header = vec!["sample".to_string()];
        for kind in ["specular", "diffraction", "combined"] {
            header.extend((0..out.irs.num_receivers()).map(|i| format!("{kind}_rx{i}")));
        }
        let rows = (0..n).map(|t| {
            let mut r = vec![t.to_string()];
            for set in [&out.irs.specular, &out.irs.diffraction, &out.irs.combined] {
                r.extend(set.iter().map(|x| num(x[t])));
            }
            r
        });
        write_csv(&p, &header, rows)?;
        written.push(p);
    }
    let meta = dir.join(METADATA_FILE);
    write_json(&meta, &out.metadata)?;
    written.push(meta);
    write_effective_config(dir, config)?;
    written.push(dir.join(EFFECTIVE_CONFIG_FILE));
    Ok(written)
}

#[derive(Serialize)]
struct ScanIndex<'a> {
    config_hash: &'a str,
    kind: &'a ScanKind,
    frequencies: usize,
    left_reference_energy: f64,
    right_reference_energy: f64,
    #[serde(flatten)]
    metadata: &'a crate::scan::ScanMetadata,
    files: Vec<String>,
}

/// Writes scan matrices (one row per position), a per-position summary and
/// the scan metadata.
pub fn write_scan(dir: &Path, config: &SimulationConfig, scan: &ScanResult) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let axis = match scan.kind {
        ScanKind::Rotation { .. } => "angle_deg",
        ScanKind::Sphere { .. } => "direction",
    };
    let label = |i: usize| match scan.kind {
        ScanKind::Rotation { .. } => num(scan.positions[i]),
        ScanKind::Sphere { .. } => i.to_string(),
    };
    let mut written = Vec::new();
    for (name, ear) in [("left", &scan.left), ("right", &scan.right)] {
        if !ear.irs.is_empty() {
            let p = dir.join(format!("{name}_ir.csv"));
            let mut header = vec![axis.to_string()];
            header.extend((0..ear.irs[0].len()).map(|t| format!("s{t}")));
            let rows = ear.irs.iter().enumerate().map(|(i, ir)| {
                let mut r = vec![label(i)];
                r.extend(ir.iter().map(|&x| num(x)));
                r
            });
            write_csv(&p, &header, rows)?;
            written.push(p);
        }
        let p = dir.join(format!("{name}_spectrum_db.csv"));
        let mut header = vec![axis.to_string()];
        header.extend(scan.frequencies.iter().map(|f| format!("{f}")));
        let rows = ear.spectra_db.iter().enumerate().map(|(i, s)| {
            let mut r = vec![label(i)];
            r.extend(s.iter().map(|&x| num(x)));
            r
        });
        write_csv(&p, &header, rows)?;
        written.push(p);
    }

    let p = dir.join("summary.csv");
    let sphere = !scan.directions.is_empty();
    let mut header = vec![axis.to_string()];
    if sphere {
        header.extend(["dx", "dy", "dz"].map(String::from));
    }
    let ear_columns = |name: &str, ear: &EarScan| {
        let mut h = vec![format!("{name}_energy"), format!("{name}_target_strength_db")];
        if ear.realized.is_some() {
            h.push(format!("{name}_realized"));
        }
        if ear.desired.is_some() {
            h.push(format!("{name}_desired"));
        }
        h
    };
    header.extend(ear_columns("left", &scan.left));
    header.extend(ear_columns("right", &scan.right));
    let ear_values = |ear: &EarScan, i: usize| {
        let mut r = vec![num(ear.energy[i]), num(ear.target_strength_db[i])];
        r.extend(ear.realized.as_ref().map(|v| num(v[i])));
        r.extend(ear.desired.as_ref().map(|v| num(v[i])));
        r
    };
    let rows = (0..scan.len()).map(|i| {
        let mut r = vec![label(i)];
        if sphere {
            r.extend(scan.directions[i].iter().map(|&x| num(x)));
        }
        r.extend(ear_values(&scan.left, i));
        r.extend(ear_values(&scan.right, i));
        r
    });
    write_csv(&p, &header, rows)?;
    written.push(p);

    let hash = config.hash();
    let index = ScanIndex {
        config_hash: &hash,
        kind: &scan.kind,
        frequencies: scan.frequencies.len(),
        left_reference_energy: scan.left.reference_energy,
        right_reference_energy: scan.right.reference_energy,
        metadata: &scan.metadata,
        files: written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    let meta = dir.join(METADATA_FILE);
    write_json(&meta, &index)?;
    written.push(meta);
    write_effective_config(dir, config)?;
    written.push(dir.join(EFFECTIVE_CONFIG_FILE));
    Ok(written)
}

/// Writes any serializable report as pretty JSON to `path`, or to stdout
/// when `path` is `None`.
pub fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Checks that the results in `dir` were produced from `config`.
pub fn verify_outputs(dir: &Path, config: &SimulationConfig) -> Result<()> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::parse("metadata JSON", e.to_string()))?;
    let found = meta
        .get("config_hash")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::parse("metadata JSON", "missing config_hash"))?;
    let expected = config.hash();
    if found != expected {
        return Err(Error::HashMismatch {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x = vec![0.0, 0.5, -0.25, 0.125];
        write_wav(&p, &x, 1e6).unwrap();
        let (y, fs) = read_wav(&p).unwrap();
        assert_eq!(fs, 1e6);
        assert_eq!(y, x);
        assert!(write_wav(&p, &x, 44100.5).is_err());
    }
}
