//! Array filter banks that realize a target spatial directivity.
//!
//! A bank holds one FIR filter per receiver. Summing the filtered channels
//! of a far-field plane wave from direction `psi` gives the realized gain
//! `sum_i A_i(f, psi) W_i(f)`, with `A` the array response relative to the
//! emitter and `W_i` the filter frequency responses. Taps are fitted by
//! regularized least squares directly in the tap domain.

mod io;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::scene::{partition_sphere_directions, SensorArray};
use crate::signals::convolve;
use crate::{Error, Result, Vec3};

pub use io::{decode_bank, encode_bank, load_target_csv, read_bank, target_from_csv, write_bank};

/// Far-field steering vector, element `i` = `exp(-j k (d . p_i))` with
/// `p_i` relative to the emitter.
pub fn steering_vector(array: &SensorArray, direction: &Vec3, f: f64, c: f64) -> Vec<Complex64> {
    let k = std::f64::consts::TAU * f / c;
    array
        .relative_receivers()
        .iter()
        .map(|p| Complex64::from_polar(1.0, -k * direction.dot(p)))
        .collect()
}

/// Response of each receiver to a plane wave arriving from `direction`
/// (pointing from the array toward the source). Elements closer to the
/// source lead, so this is the steering vector of `-direction`.
pub fn array_response(array: &SensorArray, direction: &Vec3, f: f64, c: f64) -> Vec<Complex64> {
    steering_vector(array, &-direction, f, c)
}

/// Analytic patterns over the sensor frame, all with unit maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnalyticTarget {
    Omni,
    /// Amplitude `sqrt((1 + cos t) / 2)`, so that power follows a cardioid
    /// about `axis`.
    CardioidPower {
        #[serde(default = "default_axis")]
        axis: Vec3,
    },
    /// `max(cos t, 0)^exponent` about `axis`.
    CosineLobe {
        #[serde(default = "default_axis")]
        axis: Vec3,
        exponent: f64,
    },
}

fn default_axis() -> Vec3 {
    Vec3::x()
}

impl AnalyticTarget {
    pub fn gain(&self, direction: &Vec3) -> f64 {
        let cos = |axis: &Vec3| direction.normalize().dot(&axis.normalize()).clamp(-1.0, 1.0);
        match self {
            AnalyticTarget::Omni => 1.0,
            AnalyticTarget::CardioidPower { axis } => ((1.0 + cos(axis)) / 2.0).sqrt(),
            AnalyticTarget::CosineLobe { axis, exponent } => cos(axis).max(0.0).powf(*exponent),
        }
    }

    /// Power pattern `|gain|^2`.
    pub fn power(&self, direction: &Vec3) -> f64 {
        self.gain(direction).powi(2)
    }
}

/// Target gains `E(f, psi)` on a direction and frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectivityTarget {
    pub directions: Vec<Vec3>,
    pub freqs: Vec<f64>,
    /// Frequency-major: `gains[f * directions.len() + d]`.
    pub gains: Vec<Complex64>,
    /// Per-direction least-squares weights; uniform when `None`.
    pub weights: Option<Vec<f64>>,
}

impl DirectivityTarget {
    pub fn new(directions: Vec<Vec3>, freqs: Vec<f64>, gains: Vec<Complex64>) -> Result<Self> {
        let t = DirectivityTarget {
            directions: directions.iter().map(|d| d.normalize()).collect(),
            freqs,
            gains,
            weights: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_analytic(pattern: &AnalyticTarget, directions: Vec<Vec3>, freqs: Vec<f64>) -> Result<Self> {
        let gains = freqs
            .iter()
            .flat_map(|_| directions.iter().map(|d| Complex64::new(pattern.gain(d), 0.0)))
            .collect();
        DirectivityTarget::new(directions, freqs, gains)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.is_empty() || self.freqs.is_empty() {
            return Err(Error::InvalidParameter("directivity target needs at least one direction and frequency".into()));
        }
        if self.gains.len() != self.directions.len() * self.freqs.len() {
            return Err(Error::LengthMismatch {
                expected: self.directions.len() * self.freqs.len(),
                actual: self.gains.len(),
            });
        }
        if !self.gains.iter().all(|g| g.re.is_finite() && g.im.is_finite())
            || !self.freqs.iter().all(|f| f.is_finite() && *f >= 0.0)
            || !self.directions.iter().all(|d| d.iter().all(|x| x.is_finite()))
        {
            return Err(Error::InvalidParameter("directivity target contains non-finite values".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.directions.len() {
                return Err(Error::LengthMismatch {
                    expected: self.directions.len(),
                    actual: w.len(),
                });
            }
            if !w.iter().all(|x| x.is_finite() && *x >= 0.0) {
                return Err(Error::InvalidParameter("target weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn gain(&self, f: usize, d: usize) -> Complex64 {
        self.gains[f * self.directions.len() + d]
    }

    fn weight(&self, d: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[d])
    }
}

/// Descriptor of an analytic target on a generated grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticTargetSpec {
    pub pattern: AnalyticTarget,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
    /// Only the frontal hemisphere (+X) when true.
    #[serde(default = "default_true")]
    pub hemisphere: bool,
    /// Explicit frequencies (Hz); otherwise `n_frequencies` spread over
    /// `band`.
    #[serde(default)]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default)]
    pub band: Option<[f64; 2]>,
    #[serde(default = "default_frequencies")]
    pub n_frequencies: usize,
}

fn default_directions() -> usize {
    500
}
fn default_true() -> bool {
    true
}
fn default_frequencies() -> usize {
    32
}

impl AnalyticTargetSpec {
    /// `fallback_band` is used when neither frequencies nor a band are set.
    pub fn build(&self, fallback_band: [f64; 2]) -> Result<DirectivityTarget> {
        let freqs = match (&self.frequencies, self.band) {
            (Some(f), _) => f.clone(),
            (None, band) => {
                let [lo, hi] = band.unwrap_or(fallback_band);
                let n = self.n_frequencies.max(1);
                if n == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            }
        };
        let directions = partition_sphere_directions(self.n_directions, self.hemisphere)?;
        DirectivityTarget::from_analytic(&self.pattern, directions, freqs)
    }
}

/// One FIR row per receiver, plus an optional per-channel prefilter.
#[derive(Clone, Debug, PartialEq)]
pub struct ErtfFilterBank {
    pub taps: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub prefilter: Option<Vec<Vec<f64>>>,
}

impl ErtfFilterBank {
    pub fn new(taps: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let bank = ErtfFilterBank {
            taps,
            sample_rate,
            prefilter: None,
        };
        bank.validate()?;
        Ok(bank)
    }

    /// Unit impulses: the bank sums its channels.
    pub fn unit(channels: usize, sample_rate: f64) -> Self {
        ErtfFilterBank {
            taps: vec![vec![1.0]; channels],
            sample_rate,
            prefilter: None,
        }
    }

    pub fn with_prefilter(mut self, prefilter: Vec<Vec<f64>>) -> Result<Self> {
        self.prefilter = Some(prefilter);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.taps.first() else {
            return Err(Error::InvalidParameter("filter bank has no channels".into()));
        };
        if first.is_empty() {
            return Err(Error::InvalidParameter("filter bank has zero taps".into()));
        }
        for row in &self.taps {
            if row.len() != first.len() {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    actual: row.len(),
                });
            }
            if !row.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidParameter("filter taps must be finite".into()));
            }
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidParameter("filter bank sample rate must be positive".into()));
        }
        if let Some(p) = &self.prefilter {
            if p.len() != self.taps.len() {
                return Err(Error::ChannelMismatch {
                    bank: self.taps.len(),
                    signal: p.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.taps.len()
    }

    /// Taps per channel.
    pub fn len(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `W_i(f)`, including the prefilter.
    pub fn frequency_response(&self, channel: usize, f: f64) -> Complex64 {
        let w = -std::f64::consts::TAU * f / self.sample_rate;
        let dtft = |h: &[f64]| {
            h.iter()
                .enumerate()
                .map(|(l, &x)| Complex64::from_polar(x, w * l as f64))
                .sum::<Complex64>()
        };
        let mut r = dtft(&self.taps[channel]);
        if let Some(p) = &self.prefilter {
            r *= dtft(&p[channel]);
        }
        r
    }
}

/// Filters each channel with its row and sums. Output length is the
/// longest input plus the filter length minus one.
pub fn apply_filter_bank(bank: &ErtfFilterBank, channels: &[Vec<f64>]) -> Result<Vec<f64>> {
    if channels.len() != bank.num_channels() {
        return Err(Error::ChannelMismatch {
            bank: bank.num_channels(),
            signal: channels.len(),
        });
    }
    let mut out: Vec<f64> = Vec::new();
    for (i, x) in channels.iter().enumerate() {
        let mut y = match &bank.prefilter {
            Some(p) => convolve(&convolve(x, &p[i]), &bank.taps[i]),
            None => convolve(x, &bank.taps[i]),
        };
        if y.len() > out.len() {
            std::mem::swap(&mut out, &mut y);
        }
        for (o, v) in out.iter_mut().zip(&y) {
            *o += v;
        }
    }
    Ok(out)
}

/// Realized gains, frequency-major over `freqs` x `directions`.
pub fn evaluate_realized_pattern(
    bank: &ErtfFilterBank,
    array: &SensorArray,
    directions: &[Vec3],
    freqs: &[f64],
    c: f64,
) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(freqs.len() * directions.len());
    for &f in freqs {
        let w: Vec<Complex64> = (0..bank.num_channels()).map(|i| bank.frequency_response(i, f)).collect();
        for d in directions {
            let a = array_response(array, &d.normalize(), f, c);
            out.push(a.iter().zip(&w).map(|(a, w)| a * w).sum());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub taps: usize,
    /// Ridge weight relative to the mean diagonal of the normal matrix.
    pub regularization: f64,
    /// Bulk delay (samples) added to the target so that a causal bank can
    /// realize zero-phase patterns. `None` uses `taps / 2`.
    pub delay: Option<f64>,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            taps: 128,
            regularization: 1e-6,
            delay: None,
            sample_rate: 1e6,
            speed_of_sound: 343.0,
        }
    }
}

impl FitOptions {
    pub fn effective_delay(&self) -> f64 {
        self.delay.unwrap_or((self.taps / 2) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    /// Weighted squared misfit `sum w |A W - E|^2`.
    pub residual: f64,
    /// `residual / sum w |E|^2`.
    pub relative_residual: f64,
    /// Ridge weight actually applied to `||taps||^2`.
    pub lambda: f64,
    /// `residual + lambda ||taps||^2`.
    pub objective: f64,
}

/// Target gain with the fitting delay applied.
fn delayed_target(target: &DirectivityTarget, f: usize, d: usize, opts: &FitOptions) -> Complex64 {
    let phase = -std::f64::consts::TAU * target.freqs[f] * opts.effective_delay() / opts.sample_rate;
    target.gain(f, d) * Complex64::from_polar(1.0, phase)
}

/// Misfit and objective of an arbitrary bank under the fit's cost.
pub fn fit_cost(
    bank: &ErtfFilterBank,
    target: &DirectivityTarget,
    array: &SensorArray,
    opts: &FitOptions,
    lambda: f64,
) -> FitReport {
    let realized = evaluate_realized_pattern(bank, array, &target.directions, &target.freqs, opts.speed_of_sound);
    let nd = target.directions.len();
    let (mut residual, mut norm) = (0.0, 0.0);
    for f in 0..target.freqs.len() {
        for d in 0..nd {
            let e = delayed_target(target, f, d, opts);
            let w = target.weight(d);
            residual += w * (realized[f * nd + d] - e).norm_sqr();
            norm += w * e.norm_sqr();
        }
    }
    let taps: f64 = bank.taps.iter().flatten().map(|x| x * x).sum();
    FitReport {
        residual,
        relative_residual: if norm > 0.0 { residual / norm } else { residual },
        lambda,
        objective: residual + lambda * taps,
    }
}

/// Least-squares FIR bank for `target` on `array`.
///
/// The normal matrix has Toeplitz blocks: entry `((i,l),(i',l'))` depends
/// on `l - l'` only, so it is assembled from `2L - 1` lag sums of the
/// per-frequency array covariances.
pub fn fit_fir_bank(
    target: &DirectivityTarget,
    array: &SensorArray,
    opts: &FitOptions,
) -> Result<(ErtfFilterBank, FitReport)> {
    target.validate()?;
    array.validate()?;
    if opts.taps == 0 {
        return Err(Error::InvalidParameter("filter length must be at least 1".into()));
    }
    if !(opts.regularization >= 0.0) {
        return Err(Error::InvalidParameter("regularization must be non-negative".into()));
    }
    let ni = array.num_receivers();
    let nl = opts.taps;
    let nd = target.directions.len();
    let n = ni * nl;

    // per-frequency covariance R_f and projection q_f
    let mut lags = vec![Complex64::new(0.0, 0.0); (2 * nl - 1) * ni * ni];
    let mut rhs = vec![0.0; n];
    for (fi, &f) in target.freqs.iter().enumerate() {
        let a: Vec<Vec<Complex64>> = target
            .directions
            .iter()
            .map(|d| array_response(array, d, f, opts.speed_of_sound))
            .collect();
        let mut r = vec![Complex64::new(0.0, 0.0); ni * ni];
        let mut q = vec![Complex64::new(0.0, 0.0); ni];
        for d in 0..nd {
            let w = target.weight(d);
            if w == 0.0 {
                continue;
            }
            let e = delayed_target(target, fi, d, opts);
            for i in 0..ni {
                let ca = a[d][i].conj() * w;
                q[i] += ca * e;
                for j in 0..ni {
                    r[i * ni + j] += ca * a[d][j];
                }
            }
        }
        let omega = std::f64::consts::TAU * f / opts.sample_rate;
        for m in 0..2 * nl - 1 {
            let lag = m as f64 - (nl - 1) as f64;
            let z = Complex64::from_polar(1.0, omega * lag);
            let block = &mut lags[m * ni * ni..(m + 1) * ni * ni];
            for (b, v) in block.iter_mut().zip(&r) {
                *b += v * z;
            }
        }
        for l in 0..nl {
            let z = Complex64::from_polar(1.0, omega * l as f64);
            for i in 0..ni {
                rhs[i * nl + l] += (q[i] * z).re;
            }
        }
    }

    let mut g = DMatrix::<f64>::zeros(n, n);
    for i in 0..ni {
        for l in 0..nl {
            for j in 0..ni {
                for lp in 0..nl {
                    let m = l + nl - 1 - lp;
                    g[(i * nl + l, j * nl + lp)] = lags[m * ni * ni + i * ni + j].re;
                }
            }
        }
    }
    let lambda = opts.regularization * g.trace() / n as f64;
    for k in 0..n {
        g[(k, k)] += lambda;
    }
    let chol = g.cholesky().ok_or(Error::SingularSystem)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(lo * lo > 1e-13 * hi * hi) {
        return Err(Error::SingularSystem);
    }
    let x = chol.solve(&DVector::from_vec(rhs));
    let taps: Vec<Vec<f64>> = (0..ni).map(|i| x.as_slice()[i * nl..(i + 1) * nl].to_vec()).collect();
    let bank = ErtfFilterBank::new(taps, opts.sample_rate)?;
    let report = fit_cost(&bank, target, array, opts, lambda);
    Ok((bank, report))
}
