//! Transfer spectra and impulse responses.
//!
//! Each contribution becomes `H_m(f) exp(-j 2 pi f r / c) / r^2` on the
//! one-sided grid `f_j = j fs / N_t`. The negative exponent puts echoes at
//! positive delay `r / c` under the usual inverse transform.

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::raytrace::Contribution;
use crate::scene::SimParams;
use crate::{Error, Result};

/// Bins between exact re-evaluations of the phase recurrence.
const REANCHOR: usize = 256;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Raised-cosine band window: 1 inside `[lo, hi]`, cosine tapers of width
/// `edge` outside, 0 beyond.
pub fn band_window(f: f64, lo: f64, hi: f64, edge: f64) -> f64 {
    if f >= lo && f <= hi {
        1.0
    } else if edge > 0.0 && f < lo && lo - f < edge {
        0.5 * (1.0 + (std::f64::consts::PI * (lo - f) / edge).cos())
    } else if edge > 0.0 && f > hi && f - hi < edge {
        0.5 * (1.0 + (std::f64::consts::PI * (f - hi) / edge).cos())
    } else {
        0.0
    }
}

/// Frequency grid, analysis band and BRDF band layout shared by all
/// spectra of one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    pub ir_length: usize,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    /// Bins with a non-zero band window.
    pub stored: Range<usize>,
    /// Window over `stored`.
    pub window: Vec<f64>,
    /// Frequencies at which the BRDF is evaluated, spanning `stored`.
    pub brdf_freqs: Vec<f64>,
    /// Per stored bin: lower BRDF band and interpolation fraction.
    interp: Vec<(usize, f64)>,
}

impl SpectralGrid {
    /// `band = None` keeps every bin up to Nyquist.
    pub fn new(params: &SimParams, band: Option<[f64; 2]>) -> Result<SpectralGrid> {
        params.validate()?;
        let n_bins = params.num_bins();
        let (stored, window) = match band {
            None => (0..n_bins, vec![1.0; n_bins]),
            Some([lo, hi]) => {
                if !(lo >= 0.0 && lo < hi && hi <= params.nyquist()) {
                    return Err(Error::InvalidBand(format!("band [{lo}, {hi}] Hz outside [0, fs/2]")));
                }
                let w: Vec<f64> = (0..n_bins)
                    .map(|j| band_window(params.bin_frequency(j), lo, hi, params.band_edge_hz))
                    .collect();
                let first = w.iter().position(|&x| x > 0.0);
                let last = w.iter().rposition(|&x| x > 0.0);
                match (first, last) {
                    (Some(a), Some(b)) => (a..b + 1, w[a..=b].to_vec()),
                    _ => {
                        return Err(Error::InvalidBand(format!(
                            "band [{lo}, {hi}] Hz contains no frequency bin"
                        )))
                    }
                }
            }
        };
        let f0 = params.bin_frequency(stored.start);
        let f1 = params.bin_frequency(stored.end - 1);
        let bands = if f1 > f0 { params.brdf_bands } else { 1 };
        let brdf_freqs: Vec<f64> = if bands == 1 {
            vec![0.5 * (f0 + f1)]
        } else {
            (0..bands).map(|b| f0 + (f1 - f0) * b as f64 / (bands - 1) as f64).collect()
        };
        let interp = stored
            .clone()
            .map(|j| {
                if bands == 1 {
                    return (0, 0.0);
                }
                let x = (params.bin_frequency(j) - f0) / (f1 - f0) * (bands - 1) as f64;
                let i = (x.floor() as usize).min(bands - 2);
                (i, (x - i as f64).clamp(0.0, 1.0))
            })
            .collect();
        Ok(SpectralGrid {
            ir_length: params.ir_length,
            sample_rate: params.sample_rate,
            speed_of_sound: params.speed_of_sound,
            stored,
            window,
            brdf_freqs,
            interp,
        })
    }

    /// Bins of the full one-sided grid.
    pub fn num_bins(&self) -> usize {
        self.ir_length / 2 + 1
    }

    pub fn frequency(&self, j: usize) -> f64 {
        j as f64 * self.sample_rate / self.ir_length as f64
    }

    /// Paths at or beyond this length (m) would wrap around the IR.
    pub fn max_path_length(&self) -> f64 {
        self.ir_length as f64 / self.sample_rate * self.speed_of_sound
    }

    /// Band magnitudes interpolated onto stored bin `s` (0-based in
    /// `stored`).
    #[inline]
    fn magnitude(&self, s: usize, bands: &[f64]) -> f64 {
        let (i, t) = self.interp[s];
        if bands.len() == 1 {
            bands[0]
        } else {
            bands[i] * (1.0 - t) + bands[i + 1] * t
        }
    }

    fn check_bands(&self, c: &Contribution) -> Result<()> {
        if c.magnitude.len() != self.brdf_freqs.len() {
            return Err(Error::GridMismatch {
                expected: self.brdf_freqs.len(),
                actual: c.magnitude.len(),
            });
        }
        Ok(())
    }
}

/// Complex transfer function of one receiver on the full one-sided grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferSpectrum {
    pub receiver: usize,
    pub values: Vec<Complex64>,
}

/// Band-limited spectrum of a single contribution, every bin evaluated
/// directly.
pub fn synthesize_transfer(c: &Contribution, grid: &SpectralGrid) -> Result<TransferSpectrum> {
    grid.check_bands(c)?;
    if !(c.path_length > 0.0) {
        return Err(Error::InvalidParameter(format!("path length must be positive, got {}", c.path_length)));
    }
    let r = c.path_length;
    let mut values = vec![Complex64::new(0.0, 0.0); grid.num_bins()];
    for (s, j) in grid.stored.clone().enumerate() {
        let k = TAU * grid.frequency(j) / grid.speed_of_sound;
        let m = grid.magnitude(s, &c.magnitude) * grid.window[s] / (r * r);
        values[j] = Complex64::from_polar(m, -k * r);
    }
    fix_real_bins(&mut values, grid.ir_length);
    Ok(TransferSpectrum {
        receiver: c.receiver,
        values,
    })
}

/// DC and Nyquist bins of a real signal are real.
fn fix_real_bins(values: &mut [Complex64], n: usize) {
    if let Some(v) = values.first_mut() {
        v.im = 0.0;
    }
    if n % 2 == 0 {
        if let Some(v) = values.get_mut(n / 2) {
            v.im = 0.0;
        }
    }
}

/// Real signal of length `n` from its one-sided spectrum.
pub fn inverse_real(values: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if values.len() != n / 2 + 1 {
        return Err(Error::GridMismatch {
            expected: n / 2 + 1,
            actual: values.len(),
        });
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..values.len()].copy_from_slice(values);
    fix_real_bins(&mut full[..values.len()], n);
    for k in 1..n.div_ceil(2) {
        full[n - k] = full[k].conj();
    }
    plan(n, true).process(&mut full);
    let scale = 1.0 / n as f64;
    Ok(full.iter().map(|z| z.re * scale).collect())
}

/// One-sided spectrum (`n / 2 + 1` bins) of a real signal.
pub fn forward_real(signal: &[f64]) -> Vec<Complex64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    if n > 0 {
        plan(n, false).process(&mut buf);
    }
    buf.truncate(n / 2 + 1);
    buf
}

pub fn to_time_domain(spectrum: &TransferSpectrum, ir_length: usize) -> Result<Vec<f64>> {
    inverse_real(&spectrum.values, ir_length)
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Time-domain energy of a length-`n` real signal given its one-sided
/// spectrum (discrete Parseval).
pub fn spectrum_energy(values: &[Complex64], n: usize) -> f64 {
    let mut e = 0.0;
    for (k, v) in values.iter().enumerate() {
        let w = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        e += w * v.norm_sqr();
    }
    e / n as f64
}

/// Element-wise sum of equal-length responses.
pub fn accumulate(responses: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = responses.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![0.0; first.len()];
    for r in responses {
        if r.len() != out.len() {
            return Err(Error::LengthMismatch {
                expected: out.len(),
                actual: r.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    Ok(out)
}

/// `a_r h + a_d g` per receiver.
pub fn combine(h: &[Vec<f64>], g: &[Vec<f64>], a_r: f64, a_d: f64) -> Result<Vec<Vec<f64>>> {
    if h.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            actual: g.len(),
        });
    }
    h.iter()
        .zip(g)
        .map(|(h, g)| {
            if h.len() != g.len() {
                return Err(Error::LengthMismatch {
                    expected: h.len(),
                    actual: g.len(),
                });
            }
            Ok(h.iter().zip(g).map(|(h, g)| a_r * h + a_d * g).collect())
        })
        .collect()
}

/// Per-receiver specular, diffraction and combined impulse responses.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponseSet {
    pub specular: Vec<Vec<f64>>,
    pub diffraction: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
}

impl ImpulseResponseSet {
    pub fn new(specular: Vec<Vec<f64>>, diffraction: Vec<Vec<f64>>, a_r: f64, a_d: f64) -> Result<Self> {
        let combined = combine(&specular, &diffraction, a_r, a_d)?;
        Ok(ImpulseResponseSet {
            specular,
            diffraction,
            combined,
        })
    }

    pub fn num_receivers(&self) -> usize {
        self.combined.len()
    }

    pub fn ir_length(&self) -> usize {
        self.combined.first().map_or(0, Vec::len)
    }
}

/// Running per-receiver spectrum sum over the stored bins.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumAccumulator {
    values: Vec<Vec<Complex64>>,
    /// Contributions dropped because their delay would wrap.
    pub dropped: usize,
    /// Non-zero contributions added.
    pub added: usize,
}

impl SpectrumAccumulator {
    pub fn new(grid: &SpectralGrid, receivers: usize) -> Self {
        SpectrumAccumulator {
            values: vec![vec![Complex64::new(0.0, 0.0); grid.stored.len()]; receivers],
            dropped: 0,
            added: 0,
        }
    }

    pub fn num_receivers(&self) -> usize {
        self.values.len()
    }

    /// Adds `scale` times the contribution's spectrum (window not yet
    /// applied). Returns `false` if the contribution was dropped.
    pub fn add(&mut self, grid: &SpectralGrid, c: &Contribution, scale: f64) -> Result<bool> {
        grid.check_bands(c)?;
        if c.receiver >= self.values.len() {
            return Err(Error::ChannelMismatch {
                bank: self.values.len(),
                signal: c.receiver + 1,
            });
        }
        if c.is_zero() || scale == 0.0 {
            return Ok(true);
        }
        let r = c.path_length;
        if !(r > 0.0) || r >= grid.max_path_length() {
            self.dropped += 1;
            return Ok(false);
        }
        let amp = scale / (r * r);
        let phase_per_hz = -TAU * r / grid.speed_of_sound;
        let df = grid.sample_rate / grid.ir_length as f64;
        let step = Complex64::from_polar(1.0, phase_per_hz * df);
        let out = &mut self.values[c.receiver];
        let mut z = Complex64::new(0.0, 0.0);
        for (s, j) in grid.stored.clone().enumerate() {
            if s % REANCHOR == 0 {
                z = Complex64::from_polar(1.0, phase_per_hz * grid.frequency(j));
            } else {
                z *= step;
            }
            out[s] += z * (grid.magnitude(s, &c.magnitude) * amp);
        }
        self.added += 1;
        Ok(true)
    }

    /// Adds another accumulator's sums.
    pub fn merge(&mut self, other: &SpectrumAccumulator) -> Result<()> {
        if other.values.len() != self.values.len() {
            return Err(Error::ChannelMismatch {
                bank: self.values.len(),
                signal: other.values.len(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.len() != b.len() {
                return Err(Error::GridMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.dropped += other.dropped;
        self.added += other.added;
        Ok(())
    }

    /// Windowed spectra on the full one-sided grid.
    pub fn spectra(&self, grid: &SpectralGrid) -> Vec<TransferSpectrum> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut values = vec![Complex64::new(0.0, 0.0); grid.num_bins()];
                for (s, j) in grid.stored.clone().enumerate() {
                    values[j] = v[s] * grid.window[s];
                }
                fix_real_bins(&mut values, grid.ir_length);
                TransferSpectrum { receiver: i, values }
            })
            .collect()
    }

    pub fn impulse_responses(&self, grid: &SpectralGrid) -> Result<Vec<Vec<f64>>> {
        self.spectra(grid)
            .iter()
            .map(|s| to_time_domain(s, grid.ir_length))
            .collect()
    }
}
