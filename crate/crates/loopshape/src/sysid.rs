//! Nonparametric frequency-response estimation and Bode feature reads.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coherence below which a bin does not anchor phase unwrapping.
pub const UNWRAP_COHERENCE: f64 = 0.5;

/// Sampled complex frequency response with per-bin coherence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    frequencies: Vec<f64>,
    response: Vec<Complex64>,
    coherence: Vec<f64>,
}

impl FrequencyResponse {
    pub fn new(frequencies: Vec<f64>, response: Vec<Complex64>, coherence: Vec<f64>) -> Result<Self> {
        if frequencies.len() != response.len() || frequencies.len() != coherence.len() {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {} frequencies, {} responses, {} coherences",
                frequencies.len(),
                response.len(),
                coherence.len()
            )));
        }
        check_grid(&frequencies)?;
        if let Some(c) = coherence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!("coherence {c} outside [0, 1]")));
        }
        Ok(Self { frequencies, response, coherence })
    }

    /// Response with coherence 1 everywhere (models, filters, controllers).
    pub fn exact(frequencies: Vec<f64>, response: Vec<Complex64>) -> Result<Self> {
        let n = frequencies.len();
        Self::new(frequencies, response, vec![1.0; n])
    }

    /// Rebuilds a response from Bode columns (magnitude in dB, phase in degrees).
    pub fn from_bode(frequencies: Vec<f64>, mag_db: &[f64], phase_deg: &[f64], coherence: Vec<f64>) -> Result<Self> {
        if mag_db.len() != phase_deg.len() {
            return Err(Error::InvalidInput("magnitude and phase lengths differ".into()));
        }
        let response = mag_db.iter().zip(phase_deg).map(|(m, p)| Complex64::from_polar(10f64.powf(m / 20.0), p.to_radians())).collect();
        Self::new(frequencies, response, coherence)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn response(&self) -> &[Complex64] {
        &self.response
    }

    pub fn coherence(&self) -> &[f64] {
        &self.coherence
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.response.iter().map(|h| 20.0 * h.norm().log10()).collect()
    }

    /// Unwrapped phase in degrees, continuous across every pair of neighbours.
    ///
    /// The first sample is placed in (-270, 90] so that integrating loops
    /// whose low-frequency phase sits just below -180 deg do not start on the
    /// +180 branch.
    pub fn phase_deg(&self) -> Vec<f64> {
        self.unwrap(false)
    }

    /// Unwrapped phase for reading values off measured data.
    ///
    /// Bins with coherence below [`UNWRAP_COHERENCE`] follow their neighbour,
    /// but the next coherent bin is unwrapped against the last coherent one,
    /// so noise inside a dip cannot shift the branch of everything above it.
    /// The result may jump inside an incoherent gap. Equal to
    /// [`Self::phase_deg`] when every bin is coherent.
    pub fn anchored_phase_deg(&self) -> Vec<f64> {
        self.unwrap(true)
    }

    fn unwrap(&self, anchored: bool) -> Vec<f64> {
        let wrap = |d: f64| d - 360.0 * (d / 360.0).round();
        let mut out = Vec::with_capacity(self.len());
        let mut prev: Option<f64> = None;
        let mut anchor: Option<f64> = None;
        for (h, &c) in self.response.iter().zip(&self.coherence) {
            let raw = h.arg().to_degrees();
            let reliable = !anchored || c >= UNWRAP_COHERENCE;
            let p = match (prev, anchor) {
                (None, _) if raw > 90.0 => raw - 360.0,
                (None, _) => raw,
                (Some(_), Some(a)) if reliable => a + wrap(raw - a),
                (Some(q), _) => q + wrap(raw - q),
            };
            if reliable || anchor.is_none() {
                anchor = Some(p);
            }
            out.push(p);
            prev = Some(p);
        }
        out
    }

    /// Copy with the response multiplied by a complex factor.
    pub fn scaled(&self, g: Complex64) -> Self {
        Self {
            frequencies: self.frequencies.clone(),
            response: self.response.iter().map(|h| h * g).collect(),
            coherence: self.coherence.clone(),
        }
    }

    /// Copy with coherence replaced.
    pub fn with_coherence(&self, coherence: Vec<f64>) -> Result<Self> {
        Self::new(self.frequencies.clone(), self.response.clone(), coherence)
    }

    /// Interpolates onto another grid (log-frequency, linear in dB and degrees).
    pub fn resample(&self, grid: &[f64]) -> Result<Self> {
        check_grid(grid)?;
        let mag = self.magnitude_db();
        let ph = self.anchored_phase_deg();
        let mut m = Vec::with_capacity(grid.len());
        let mut p = Vec::with_capacity(grid.len());
        let mut c = Vec::with_capacity(grid.len());
        for &f in grid {
            m.push(interp_log(&self.frequencies, &mag, f)?);
            p.push(interp_log(&self.frequencies, &ph, f)?);
            c.push(interp_log(&self.frequencies, &self.coherence, f)?.clamp(0.0, 1.0));
        }
        Self::from_bode(grid.to_vec(), &m, &p, c)
    }
}

fn check_grid(f: &[f64]) -> Result<()> {
    if let Some(x) = f.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidInput(format!("frequency {x} is not strictly positive")));
    }
    if f.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

/// Logarithmically spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Linear interpolation of `values` against ln(f).
pub(crate) fn interp_log(grid: &[f64], values: &[f64], f: f64) -> Result<f64> {
    let n = grid.len();
    if n == 0 || !(f >= grid[0] && f <= grid[n - 1]) {
        return Err(Error::Range { f, lo: grid.first().copied().unwrap_or(f64::NAN), hi: grid.last().copied().unwrap_or(f64::NAN) });
    }
    let j = grid.partition_point(|&g| g < f);
    if j < n && grid[j] == f {
        return Ok(values[j]);
    }
    let i = j - 1;
    let t = (f.ln() - grid[i].ln()) / (grid[i + 1].ln() - grid[i].ln());
    Ok(values[i] + t * (values[i + 1] - values[i]))
}

/// A crossing of `level` located between bins `i` and `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Crossing {
    pub index: usize,
    /// Interpolation weight in log-frequency.
    pub t: f64,
    pub frequency: f64,
}

/// Crossings of `level` by `values`, interpolated in log-frequency.
///
/// `downward` restricts to crossings from above (`v[i] > level >= v[i+1]`).
/// Otherwise both directions count, including touching a bin exactly.
pub(crate) fn crossings(grid: &[f64], values: &[f64], level: f64, downward: bool, usable: impl Fn(usize) -> bool) -> Vec<Crossing> {
    let mut out = Vec::new();
    for i in 0..values.len().saturating_sub(1) {
        if !(usable(i) && usable(i + 1)) {
            continue;
        }
        let (a, b) = (values[i] - level, values[i + 1] - level);
        let hit = if downward { a > 0.0 && b <= 0.0 } else { a * b <= 0.0 && a != b };
        if !hit {
            continue;
        }
        let t = a / (a - b);
        let frequency = (grid[i].ln() + t * (grid[i + 1].ln() - grid[i].ln())).exp();
        out.push(Crossing { index: i, t, frequency });
    }
    out
}

/// Welch H1 estimate of the output/input frequency response.
///
/// Hann-windowed segments of `segment_length` samples overlap by
/// `overlap_fraction`. DC and Nyquist bins are dropped.
pub fn estimate_frf(
    input: &[f64],
    output: &[f64],
    sample_period: f64,
    segment_length: usize,
    overlap_fraction: f64,
) -> Result<FrequencyResponse> {
    if input.len() != output.len() {
        return Err(Error::InvalidInput(format!("input has {} samples, output {}", input.len(), output.len())));
    }
    if !(sample_period > 0.0) {
        return Err(Error::InvalidInput("sample period must be positive".into()));
    }
    if segment_length < 4 || !segment_length.is_power_of_two() {
        return Err(Error::InvalidInput(format!("segment length {segment_length} is not a power of two >= 4")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidInput(format!("overlap {overlap_fraction} outside [0, 1)")));
    }
    if input.len() < 2 * segment_length {
        return Err(Error::InsufficientData { required: 2 * segment_length, got: input.len() });
    }

    let n = segment_length;
    let step = (n - (n as f64 * overlap_fraction).floor() as usize).max(1);
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let half = n / 2;
    let mut suu = vec![0.0; half];
    let mut syy = vec![0.0; half];
    let mut syu = vec![Complex64::new(0.0, 0.0); half];
    let mut ubuf = vec![Complex64::new(0.0, 0.0); n];
    let mut ybuf = vec![Complex64::new(0.0, 0.0); n];

    let mut start = 0;
    while start + n <= input.len() {
        for i in 0..n {
            ubuf[i] = Complex64::new(input[start + i] * window[i], 0.0);
            ybuf[i] = Complex64::new(output[start + i] * window[i], 0.0);
        }
        fft.process(&mut ubuf);
        fft.process(&mut ybuf);
        for k in 1..half {
            suu[k] += ubuf[k].norm_sqr();
            syy[k] += ybuf[k].norm_sqr();
            syu[k] += ubuf[k].conj() * ybuf[k];
        }
        start += step;
    }

    let df = 1.0 / (n as f64 * sample_period);
    let mut f = Vec::with_capacity(half - 1);
    let mut h = Vec::with_capacity(half - 1);
    let mut c = Vec::with_capacity(half - 1);
    for k in 1..half {
        f.push(k as f64 * df);
        h.push(if suu[k] > 0.0 { syu[k] / suu[k] } else { Complex64::new(0.0, 0.0) });
        let den = suu[k] * syy[k];
        c.push(if den > 0.0 { (syu[k].norm_sqr() / den).clamp(0.0, 1.0) } else { 0.0 });
    }
    FrequencyResponse::new(f, h, c)
}

/// Contiguous run of bins whose coherence is at or above a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentInterval {
    pub start_index: usize,
    pub end_index: usize,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl CoherentInterval {
    pub fn contains_index(&self, i: usize) -> bool {
        (self.start_index..=self.end_index).contains(&i)
    }
}

/// Maximal intervals with coherence >= `threshold`.
pub fn coherence_mask(frf: &FrequencyResponse, threshold: f64) -> Vec<CoherentInterval> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let f = frf.frequencies();
    for (i, &c) in frf.coherence().iter().enumerate() {
        match (c >= threshold, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                out.push(CoherentInterval { start_index: s, end_index: i - 1, f_lo: f[s], f_hi: f[i - 1] });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        let e = frf.len() - 1;
        out.push(CoherentInterval { start_index: s, end_index: e, f_lo: f[s], f_hi: f[e] });
    }
    out
}

/// The Bode readings the tuning method starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodeFeatures {
    pub f_resonance: f64,
    pub f_antiresonance: f64,
    /// Resonance peak minus antiresonance dip, dB.
    pub peak_gap_db: f64,
    pub f_minus180: f64,
    /// Signed magnitude at `f_minus180`, dB.
    pub initial_margin_reading_db: f64,
}

/// Lowest -180 deg crossing among coherent bins: (frequency, magnitude dB).
pub fn phase_crossover(frf: &FrequencyResponse, coherence_threshold: f64) -> Result<(f64, f64)> {
    let mag = frf.magnitude_db();
    let ph = frf.anchored_phase_deg();
    let coh = frf.coherence();
    let c =
        crossings(frf.frequencies(), &ph, -180.0, true, |i| coh[i] >= coherence_threshold).into_iter().next().ok_or(Error::NoCrossover)?;
    let m = mag[c.index] + c.t * (mag[c.index + 1] - mag[c.index]);
    Ok((c.frequency, m))
}

/// Reads resonance, antiresonance, peak gap and the -180 deg crossover.
///
/// Resonance and antiresonance are located on the magnitude tilted by
/// +20 dB/decade, which removes the rigid-body integrator slope so the
/// flexible-mode pair is the global extremum. The tilt only moves the
/// search; `peak_gap_db` is taken from the raw magnitude. These two reads
/// use every bin because coherence collapses exactly at the dip. The
/// crossover read is restricted to bins with coherence >= `coherence_threshold`.
pub fn extract_features(frf: &FrequencyResponse, coherence_threshold: f64) -> Result<BodeFeatures> {
    let (f_minus180, initial_margin_reading_db) = phase_crossover(frf, coherence_threshold)?;

    let f = frf.frequencies();
    let mag = frf.magnitude_db();
    let tilted: Vec<f64> = mag.iter().zip(f).map(|(m, f)| m + 20.0 * f.log10()).collect();
    let ir = argmax(&tilted);
    if ir == 0 {
        return Err(Error::NoResonance);
    }
    let ia = argmin(&tilted[..ir]);
    let peak_gap_db = mag[ir] - mag[ia];
    if !(peak_gap_db > 0.0) {
        return Err(Error::NoResonance);
    }
    Ok(BodeFeatures { f_resonance: f[ir], f_antiresonance: f[ia], peak_gap_db, f_minus180, initial_margin_reading_db })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Magnitude (dB) and unwrapped phase (deg) at `f`, interpolated in log-frequency.
pub fn read_at(frf: &FrequencyResponse, f: f64) -> Result<(f64, f64)> {
    let grid = frf.frequencies();
    Ok((interp_log(grid, &frf.magnitude_db(), f)?, interp_log(grid, &frf.anchored_phase_deg(), f)?))
}
