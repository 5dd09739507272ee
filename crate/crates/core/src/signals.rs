//! Emitted calls, convolution and the final per-ear signals.

use serde::{Deserialize, Serialize};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::ertf::{apply_filter_bank, ErtfFilterBank};
use crate::spectral::ImpulseResponseSet;
use crate::{Error, Result};

/// Output length above which [`convolve`] switches to the FFT.
pub const DIRECT_CONVOLUTION_LIMIT: usize = 1024;

/// Linear convolution by the definition.
pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Linear convolution, `a.len() + b.len() - 1` samples.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    if len <= DIRECT_CONVOLUTION_LIMIT || a.len().min(b.len()) <= 16 {
        return convolve_direct(a, b);
    }
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (d, s) in v.iter_mut().zip(x) {
            d.re = *s;
        }
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..len].iter().map(|z| z.re * scale).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    /// Period changes linearly with time, as in many bat calls.
    HyperbolicFm,
    LinearFm,
    /// Constant frequency at `f_start`.
    Cf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
    /// Cosine-tapered with the given tapered fraction in `[0, 1]`.
    Tukey { ratio: f64 },
}

impl Window {
    pub fn weights(&self, n: usize) -> Vec<f64> {
        use std::f64::consts::PI;
        if n <= 1 {
            return vec![1.0; n];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = i as f64 / m;
                match *self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 * (1.0 - (2.0 * PI * x).cos()),
                    Window::Tukey { ratio } => {
                        let r = ratio.clamp(0.0, 1.0);
                        if r == 0.0 {
                            1.0
                        } else if x < r / 2.0 {
                            0.5 * (1.0 - (2.0 * PI * x / r).cos())
                        } else if x > 1.0 - r / 2.0 {
                            0.5 * (1.0 - (2.0 * PI * (1.0 - x) / r).cos())
                        } else {
                            1.0
                        }
                    }
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmittedCall {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Lowest and highest instantaneous frequency (Hz).
    pub band: [f64; 2],
    pub kind: CallKind,
}

impl EmittedCall {
    /// Seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Phase-continuous windowed call, peak amplitude 1.
pub fn synthesize_call(
    kind: CallKind,
    f_start: f64,
    f_end: f64,
    duration: f64,
    window: Window,
    sample_rate: f64,
) -> Result<EmittedCall> {
    let nyq = sample_rate / 2.0;
    let f_end = if kind == CallKind::Cf { f_start } else { f_end };
    for f in [f_start, f_end] {
        if !(f > 0.0 && f < nyq) {
            return Err(Error::InvalidBand(format!("call frequency {f} Hz outside (0, {nyq}) Hz")));
        }
    }
    let n = (duration * sample_rate).round();
    if !(duration > 0.0) || n < 1.0 {
        return Err(Error::InvalidBand(format!("call duration {duration} s gives no samples")));
    }
    let n = n as usize;
    let t_end = n as f64 / sample_rate;
    let tau = std::f64::consts::TAU;
    let phase = |t: f64| -> f64 {
        match kind {
            CallKind::Cf => tau * f_start * t,
            CallKind::LinearFm => tau * (f_start * t + (f_end - f_start) * t * t / (2.0 * t_end)),
            CallKind::HyperbolicFm => {
                let a = 1.0 / f_start;
                let b = (1.0 / f_end - 1.0 / f_start) / t_end;
                if b.abs() < 1e-300 {
                    tau * f_start * t
                } else {
                    tau / b * ((a + b * t) / a).ln()
                }
            }
        }
    };
    let w = window.weights(n);
    let mut samples: Vec<f64> = (0..n)
        .map(|i| w[i] * phase(i as f64 / sample_rate).sin())
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|x| *x /= peak);
    }
    Ok(EmittedCall {
        samples,
        sample_rate,
        band: [f_start.min(f_end), f_start.max(f_end)],
        kind,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinauralResult {
    pub h_left: Vec<f64>,
    pub h_right: Vec<f64>,
    pub s_left: Vec<f64>,
    pub s_right: Vec<f64>,
}

/// Ear impulse responses from the combined multichannel IR.
pub fn filter_ears(
    irs: &ImpulseResponseSet,
    left: &ErtfFilterBank,
    right: &ErtfFilterBank,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        apply_filter_bank(left, &irs.combined)?,
        apply_filter_bank(right, &irs.combined)?,
    ))
}

/// Convolves both ear responses (sampled at `sample_rate`) with the call.
pub fn receive(call: &EmittedCall, sample_rate: f64, h_left: &[f64], h_right: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if call.sample_rate != sample_rate {
        return Err(Error::RateMismatch {
            expected: sample_rate,
            actual: call.sample_rate,
        });
    }
    Ok((convolve(h_left, &call.samples), convolve(h_right, &call.samples)))
}
