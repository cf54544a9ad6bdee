//! Three-parameter notch filter: design, discrete realization, response.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sysid::{BodeFeatures, FrequencyResponse};

/// Smallest finite depth whose -3 dB width exists.
pub const MIN_DEPTH_DB: f64 = 3.010_299_956_639_812;

/// Attenuation at the notch center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NotchDepth {
    Finite(f64),
    Infinite,
}

impl NotchDepth {
    /// Linear gain at the center.
    pub fn center_gain(self) -> f64 {
        match self {
            NotchDepth::Finite(d) => 10f64.powf(-d / 20.0),
            NotchDepth::Infinite => 0.0,
        }
    }
}

impl fmt::Display for NotchDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotchDepth::Finite(d) => write!(f, "{d}"),
            NotchDepth::Infinite => f.write_str("infinite"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DepthRepr {
    Db(f64),
    Word(String),
}

impl Serialize for NotchDepth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NotchDepth::Finite(d) => DepthRepr::Db(*d),
            NotchDepth::Infinite => DepthRepr::Word("infinite".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NotchDepth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match DepthRepr::deserialize(d)? {
            DepthRepr::Db(v) if v.is_infinite() => Ok(NotchDepth::Infinite),
            DepthRepr::Db(v) => Ok(NotchDepth::Finite(v)),
            DepthRepr::Word(w) if matches!(w.as_str(), "infinite" | "inf") => Ok(NotchDepth::Infinite),
            DepthRepr::Word(w) => Err(serde::de::Error::custom(format!("unknown notch depth {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    FiniteHalfGap,
    Infinite,
}

/// Design-level notch: center, -3 dB bandwidth and depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchParams {
    /// Hz
    pub center_frequency: f64,
    /// Hz, measured between the -3 dB points.
    pub bandwidth: f64,
    pub depth_db: NotchDepth,
}

impl NotchParams {
    pub fn new(center_frequency: f64, bandwidth: f64, depth_db: NotchDepth) -> Result<Self> {
        let p = Self { center_frequency, bandwidth, depth_db };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency.is_finite() && self.center_frequency > 0.0) {
            return Err(Error::InvalidInput(format!("notch center must be positive, got {}", self.center_frequency)));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidInput(format!("notch bandwidth must be positive, got {}", self.bandwidth)));
        }
        if let NotchDepth::Finite(d) = self.depth_db {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidInput(format!("notch depth must be positive, got {d}")));
            }
            if d <= MIN_DEPTH_DB {
                return Err(Error::Design(format!("depth {d:.3} dB leaves no -3 dB width")));
            }
        }
        Ok(())
    }

    /// Numerator and denominator damping (ζn, ζd) of the continuous prototype.
    pub fn damping(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let r = self.depth_db.center_gain();
        let zd = self.bandwidth / self.center_frequency / (2.0 * (1.0 - 2.0 * r * r).sqrt());
        Ok((r * zd, zd))
    }

    /// Continuous-time prototype response.
    pub fn prototype_response(&self, frequencies: &[f64]) -> Result<FrequencyResponse> {
        let (zn, zd) = self.damping()?;
        let w0 = 2.0 * PI * self.center_frequency;
        let h = frequencies
            .iter()
            .map(|&f| {
                let s = Complex64::new(0.0, 2.0 * PI * f);
                (s * s + s * 2.0 * zn * w0 + w0 * w0) / (s * s + s * 2.0 * zd * w0 + w0 * w0)
            })
            .collect();
        FrequencyResponse::exact(frequencies.to_vec(), h)
    }

    /// Bilinear transform with prewarping at the center frequency.
    ///
    /// The denominator damping is re-solved on the warped axis so that the
    /// realized filter, not only the prototype, has its -3 dB points `bandwidth`
    /// apart.
    pub fn realize(&self, sample_period: f64) -> Result<NotchBiquad> {
        self.validate()?;
        if !(sample_period > 0.0) {
            return Err(Error::InvalidInput("sample period must be positive".into()));
        }
        let limit = 0.25 / sample_period;
        if self.center_frequency >= limit {
            return Err(Error::Sampling { center: self.center_frequency, limit });
        }
        if self.bandwidth >= 2.0 * limit {
            return Err(Error::Sampling { center: self.bandwidth, limit: 2.0 * limit });
        }
        let t = sample_period;
        let w0 = 2.0 * PI * self.center_frequency;
        let bw = 2.0 * PI * self.bandwidth;
        let k = w0 / (w0 * t / 2.0).tan();
        let warp = |w: f64| k * (w * t / 2.0).tan();

        // Lower edge w1 with warp(w1)·warp(w1 + bw) = w0², bracketed in (0, w0).
        let g = |w1: f64| warp(w1) * warp(w1 + bw) - w0 * w0;
        let (mut lo, mut hi) = (0.0, w0.min(PI / t - bw));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w1 = 0.5 * (lo + hi);
        let r = self.depth_db.center_gain();
        let zd = (warp(w1 + bw) - warp(w1)) / (2.0 * w0 * (1.0 - 2.0 * r * r).sqrt());
        let zn = r * zd;

        let poly = |z: f64| {
            let (a2, a1, a0) = (k * k, 2.0 * z * w0 * k, w0 * w0);
            [a2 + a1 + a0, 2.0 * a0 - 2.0 * a2, a2 - a1 + a0]
        };
        let b = poly(zn);
        let a = poly(zd);
        Ok(NotchBiquad { numerator: [b[0] / a[0], b[1] / a[0], b[2] / a[0]], denominator: [1.0, a[1] / a[0], a[2] / a[0]], sample_period })
    }
}

/// Second-order section `(b0 + b1 z⁻¹ + b2 z⁻²)/(1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchBiquad {
    pub numerator: [f64; 3],
    /// Monic: `denominator[0] == 1`.
    pub denominator: [f64; 3],
    pub sample_period: f64,
}

impl NotchBiquad {
    pub fn eval(&self, f: f64) -> Complex64 {
        let zi = Complex64::from_polar(1.0, -2.0 * PI * f * self.sample_period);
        let [b0, b1, b2] = self.numerator;
        let [a0, a1, a2] = self.denominator;
        (b0 + zi * (b1 + zi * b2)) / (a0 + zi * (a1 + zi * a2))
    }

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        let [_, a1, a2] = self.denominator;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let p1 = (-a1 + disc) / 2.0;
        let p2 = (-a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }

    /// `[b0, b1, b2, a1, a2]`, the commissioning export order.
    pub fn coefficients(&self) -> [f64; 5] {
        let [b0, b1, b2] = self.numerator;
        [b0, b1, b2, self.denominator[1], self.denominator[2]]
    }
}

/// Designs the notch from Bode features and realizes it.
pub fn design_notch(
    features: &BodeFeatures,
    bandwidth_factor: f64,
    depth_mode: DepthMode,
    sample_period: f64,
) -> Result<(NotchParams, NotchBiquad)> {
    if !(1.0..=2.0).contains(&bandwidth_factor) {
        return Err(Error::InvalidInput(format!("bandwidth factor {bandwidth_factor} outside [1, 2]")));
    }
    let depth = match depth_mode {
        DepthMode::FiniteHalfGap => NotchDepth::Finite(features.peak_gap_db / 2.0),
        DepthMode::Infinite => NotchDepth::Infinite,
    };
    let f = features.f_resonance;
    let params = NotchParams::new(f, bandwidth_factor * f, depth)?;
    let biquad = params.realize(sample_period)?;
    Ok((params, biquad))
}

/// Exact discrete-time response on a grid below Nyquist.
pub fn notch_response(biquad: &NotchBiquad, frequencies: &[f64]) -> Result<FrequencyResponse> {
    let nyq = 0.5 / biquad.sample_period;
    if let Some(&f) = frequencies.iter().find(|f| **f >= nyq) {
        return Err(Error::Range { f, lo: 0.0, hi: nyq });
    }
    FrequencyResponse::exact(frequencies.to_vec(), frequencies.iter().map(|&f| biquad.eval(f)).collect())
}

/// Streaming direct-form I state.
#[derive(Debug, Clone)]
pub struct BiquadState {
    b: [f64; 3],
    a: [f64; 3],
    x: [f64; 2],
    y: [f64; 2],
}

impl BiquadState {
    pub fn new(q: &NotchBiquad) -> Self {
        Self { b: q.numerator, a: q.denominator, x: [0.0; 2], y: [0.0; 2] }
    }

    pub fn process(&mut self, input: f64) -> f64 {
        let out = self.b[0] * input + self.b[1] * self.x[0] + self.b[2] * self.x[1] - self.a[1] * self.y[0] - self.a[2] * self.y[1];
        self.x = [input, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }
}

/// Filters a whole signal from zero initial state.
pub fn filter_apply(biquad: &NotchBiquad, signal: &[f64]) -> Vec<f64> {
    let mut st = BiquadState::new(biquad);
    signal.iter().map(|&x| st.process(x)).collect()
}
