use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::Deserialize;

use super::{DirectivityTarget, ErtfFilterBank};
use crate::{Error, Result, Vec3};

const HEADER_BYTES: usize = 24;

/// Little-endian `I: u64, L: u64, fs: f64`, then `I * L` row-major `f64`
/// taps. The prefilter is not stored.
pub fn encode_bank(bank: &ErtfFilterBank) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * bank.num_channels() * bank.len());
    out.extend_from_slice(&(bank.num_channels() as u64).to_le_bytes());
    out.extend_from_slice(&(bank.len() as u64).to_le_bytes());
    out.extend_from_slice(&bank.sample_rate.to_le_bytes());
    for x in bank.taps.iter().flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_bank(bytes: &[u8]) -> Result<ErtfFilterBank> {
    let bad = |m: String| Error::parse("filter bank", m);
    if bytes.len() < HEADER_BYTES {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |k: usize| <[u8; 8]>::try_from(&bytes[8 * k..8 * k + 8]).unwrap();
    let channels = u64::from_le_bytes(word(0)) as usize;
    let taps = u64::from_le_bytes(word(1)) as usize;
    let fs = f64::from_le_bytes(word(2));
    let expected = channels
        .checked_mul(taps)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {channels}x{taps} taps, found {}", bytes.len())));
    }
    let rows = (0..channels)
        .map(|i| (0..taps).map(|l| f64::from_le_bytes(word(3 + i * taps + l))).collect())
        .collect();
    ErtfFilterBank::new(rows, fs)
}

pub fn write_bank(path: &Path, bank: &ErtfFilterBank) -> Result<()> {
    std::fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: &Path) -> Result<ErtfFilterBank> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}

#[derive(Deserialize)]
struct Row {
    azimuth_deg: f64,
    elevation_deg: f64,
    frequency_hz: f64,
    gain_re: f64,
    #[serde(default)]
    gain_im: f64,
}

/// Sensor-frame direction: azimuth from +X toward +Y, elevation toward +Z.
fn direction(az_deg: f64, el_deg: f64) -> Vec3 {
    let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Parses a complete direction x frequency grid with columns
/// `azimuth_deg, elevation_deg, frequency_hz, gain_re[, gain_im]`.
pub fn target_from_csv(reader: impl Read) -> Result<DirectivityTarget> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for r in rdr.deserialize::<Row>() {
        rows.push(r.map_err(|e| Error::parse("directivity CSV", e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(Error::parse("directivity CSV", "no rows"));
    }
    let key = |x: f64| x.to_bits();
    let mut dir_index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut dirs = Vec::new();
    let mut freqs: Vec<f64> = Vec::new();
    for r in &rows {
        dir_index.entry((key(r.azimuth_deg), key(r.elevation_deg))).or_insert_with(|| {
            dirs.push(direction(r.azimuth_deg, r.elevation_deg));
            dirs.len() - 1
        });
        if !freqs.contains(&r.frequency_hz) {
            freqs.push(r.frequency_hz);
        }
    }
    freqs.sort_by(f64::total_cmp);
    let mut gains = vec![None; dirs.len() * freqs.len()];
    for r in &rows {
        let d = dir_index[&(key(r.azimuth_deg), key(r.elevation_deg))];
        let f = freqs.iter().position(|&x| x == r.frequency_hz).unwrap();
        gains[f * dirs.len() + d] = Some(Complex64::new(r.gain_re, r.gain_im));
    }
    let missing = gains.iter().filter(|g| g.is_none()).count();
    if missing > 0 {
        return Err(Error::parse(
            "directivity CSV",
            format!("{missing} direction/frequency pairs missing from the grid"),
        ));
    }
    DirectivityTarget::new(dirs, freqs, gains.into_iter().map(Option::unwrap).collect())
}

pub fn load_target_csv(path: &Path) -> Result<DirectivityTarget> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    target_from_csv(std::io::BufReader::new(f))
}
