//! Margin-based PI synthesis and the relay-feedback baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{compose_loop, margins_gated, MarginReport};
use crate::error::{Error, Result};
use crate::notch::NotchParams;
use crate::plant::{simulate, Drive, ExcitationKind, ExcitationSpec, TwoMassParams};
use crate::sysid::{crossings, phase_crossover, FrequencyResponse};

/// PI speed controller `kp·(1 + 1/(s·ti))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    /// N·m·s/rad
    pub kp: f64,
    /// s
    pub ti: f64,
}

impl PiGains {
    pub fn new(kp: f64, ti: f64) -> Result<Self> {
        let g = Self { kp, ti };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.kp > 0.0 && self.ti.is_finite() && self.ti > 0.0) {
            return Err(Error::InvalidInput(format!("PI gains must be positive, got kp={} ti={}", self.kp, self.ti)));
        }
        Ok(())
    }

    pub fn eval(&self, f: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        self.kp * (s * self.ti + 1.0) / (s * self.ti)
    }
}

pub fn pi_response(gains: PiGains, frequencies: &[f64]) -> Result<FrequencyResponse> {
    gains.validate()?;
    FrequencyResponse::exact(frequencies.to_vec(), frequencies.iter().map(|&f| gains.eval(f)).collect())
}

/// Phase margin matching a damping ratio: atan(2ζ / sqrt(sqrt(1+4ζ⁴) − 2ζ²)), degrees.
pub fn pm_from_damping(zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta <= 2.0) {
        return Err(Error::InvalidInput(format!("damping ratio {zeta} outside (0, 2]")));
    }
    let z2 = zeta * zeta;
    Ok((2.0 * zeta / ((1.0 + 4.0 * z2 * z2).sqrt() - 2.0 * z2).sqrt()).atan().to_degrees())
}

fn default_increment() -> f64 {
    3.0
}
fn default_iterations() -> usize {
    5
}
fn default_pm_tol() -> f64 {
    1.0
}
fn default_am_tol() -> f64 {
    0.5
}
fn default_coherence() -> f64 {
    0.8
}

/// Desired margins and iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub desired_amplitude_margin_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_phase_margin_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_ratio: Option<f64>,
    /// Starting correction added to the desired phase margin.
    #[serde(default)]
    pub phase_offset_deg: f64,
    /// Largest correction applied per iteration.
    #[serde(default = "default_increment")]
    pub offset_increment_deg: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_pm_tol")]
    pub pm_tolerance_deg: f64,
    #[serde(default = "default_am_tol")]
    pub am_tolerance_db: f64,
    /// Bins below this coherence are not read.
    #[serde(default = "default_coherence")]
    pub coherence_threshold: f64,
}

impl MarginSpec {
    pub fn new(amplitude_margin_db: f64, phase_margin_deg: f64) -> Self {
        Self {
            desired_amplitude_margin_db: amplitude_margin_db,
            desired_phase_margin_deg: Some(phase_margin_deg),
            damping_ratio: None,
            phase_offset_deg: 0.0,
            offset_increment_deg: default_increment(),
            max_iterations: default_iterations(),
            pm_tolerance_deg: default_pm_tol(),
            am_tolerance_db: default_am_tol(),
            coherence_threshold: default_coherence(),
        }
    }

    pub fn with_damping(amplitude_margin_db: f64, zeta: f64) -> Self {
        Self { desired_phase_margin_deg: None, damping_ratio: Some(zeta), ..Self::new(amplitude_margin_db, 0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.desired_amplitude_margin_db > 0.0) {
            return Err(Error::InvalidInput("desired amplitude margin must be positive".into()));
        }
        match (self.desired_phase_margin_deg, self.damping_ratio) {
            (Some(pm), None) if pm > 0.0 && pm < 90.0 => {}
            (None, Some(z)) if z > 0.0 && z <= 1.0 => {}
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::InvalidInput("set exactly one of desired phase margin and damping ratio".into()))
            }
            _ => return Err(Error::InvalidInput("phase margin must be in (0, 90) deg, damping in (0, 1]".into())),
        }
        if self.max_iterations == 0 || !(self.pm_tolerance_deg > 0.0 && self.am_tolerance_db > 0.0 && self.offset_increment_deg > 0.0) {
            return Err(Error::InvalidInput("iteration settings must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.coherence_threshold) {
            return Err(Error::InvalidInput("coherence threshold outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Desired phase margin in degrees, from the damping ratio when given.
    pub fn desired_pm(&self) -> Result<f64> {
        self.validate()?;
        match (self.desired_phase_margin_deg, self.damping_ratio) {
            (Some(pm), _) => Ok(pm),
            (None, Some(z)) => pm_from_damping(z),
            (None, None) => unreachable!("validated"),
        }
    }
}

/// How far the PI deviates from a pure gain at the phase crossover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    /// dB added by the PI beyond `kp`.
    pub pi_extra_magnitude_db: f64,
    /// deg of PI phase lag.
    pub pi_phase_lag_deg: f64,
    pub holds: bool,
}

impl AssumptionCheck {
    fn at(gains: PiGains, f: f64) -> Self {
        let wti = 2.0 * PI * f * gains.ti;
        let extra = 10.0 * (1.0 + 1.0 / (wti * wti)).log10();
        let lag = 90.0 - wti.atan().to_degrees();
        Self { pi_extra_magnitude_db: extra, pi_phase_lag_deg: lag, holds: extra < 1.0 && lag < 5.0 }
    }
}

/// Outcome of the margin-based synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub gains: PiGains,
    /// Set when the loop response came from a notch designed by this crate.
    pub notch: Option<NotchParams>,
    /// f_c, Hz
    pub crossover_frequency: f64,
    /// A_fc, dB
    pub read_magnitude_db: f64,
    /// φ_fc, deg
    pub read_phase_deg: f64,
    pub f_minus180: f64,
    pub initial_margin_reading_db: f64,
    pub desired_phase_margin_deg: f64,
    /// Correction in effect for the returned gains.
    pub phase_offset_deg: f64,
    pub achieved: MarginReport,
    pub assumption: AssumptionCheck,
    pub iterations_used: usize,
}

/// PI gains from the reads at f_c.
///
/// `ti = tan(−90 + PM − φ_fc)/(2π f_c)` and `kp` cancels `a_fc` plus the PI's
/// own magnitude at f_c.
pub fn pi_from_reads(fc: f64, a_fc_db: f64, phi_fc_deg: f64, pm_deg: f64) -> Result<PiGains> {
    let arg = -90.0 + pm_deg - phi_fc_deg;
    if !(arg > 0.0 && arg < 90.0) {
        return Err(Error::PhaseInfeasible { arg_deg: arg });
    }
    let w = 2.0 * PI * fc;
    let ti = arg.to_radians().tan() / w;
    let pi_db = 20.0 * (Complex64::new(1.0, 0.0) + Complex64::new(0.0, w * ti).inv()).norm().log10();
    PiGains::new(10f64.powf(-(a_fc_db + pi_db) / 20.0), ti)
}

/// Margin-based PI design on a notch-included plant response.
///
/// f_c is where the magnitude equals the -180 deg reading plus the desired
/// amplitude margin. Among several such points below f_-180 the highest one
/// whose phase admits a positive integral time is used.
pub fn tune_pi(loop_frf: &FrequencyResponse, spec: &MarginSpec) -> Result<TuneResult> {
    let pm_des = spec.desired_pm()?;
    let thr = spec.coherence_threshold;
    let (f180, reading) = phase_crossover(loop_frf, thr).map_err(|e| match e {
        Error::NoCrossover => Error::InfeasibleMargin("phase never crosses -180 deg in the coherent band".into()),
        other => other,
    })?;
    let level = reading + spec.desired_amplitude_margin_db;

    let f = loop_frf.frequencies();
    let mag = loop_frf.magnitude_db();
    let ph = loop_frf.anchored_phase_deg();
    let coh = loop_frf.coherence();
    let mut cands: Vec<(f64, f64)> = crossings(f, &mag, level, false, |i| coh[i] >= thr)
        .into_iter()
        .filter(|c| c.frequency < f180)
        .map(|c| (c.frequency, ph[c.index] + c.t * (ph[c.index + 1] - ph[c.index])))
        .collect();
    cands.reverse();
    if cands.is_empty() {
        return Err(Error::InfeasibleMargin(format!("magnitude never reaches {level:.2} dB below f_-180 = {f180:.1} Hz")));
    }
    let mut offset = spec.phase_offset_deg;
    let mut best: Option<(f64, TuneResult)> = None;
    for it in 1..=spec.max_iterations {
        let target = pm_des + offset;
        let pick = cands.iter().find(|(_, phi)| {
            let a = -90.0 + target - phi;
            a > 0.0 && a < 90.0
        });
        let &(fc, phi) = match pick {
            Some(p) => p,
            None => return Err(Error::PhaseInfeasible { arg_deg: -90.0 + target - cands[0].1 }),
        };
        let gains = pi_from_reads(fc, level, phi, target)?;
        let l = compose_loop(&[loop_frf, &pi_response(gains, f)?])?;
        let achieved = margins_gated(&l, thr);
        let assumption = AssumptionCheck::at(gains, f180);
        let result = TuneResult {
            gains,
            notch: None,
            crossover_frequency: fc,
            read_magnitude_db: level,
            read_phase_deg: phi,
            f_minus180: f180,
            initial_margin_reading_db: reading,
            desired_phase_margin_deg: pm_des,
            phase_offset_deg: offset,
            achieved,
            assumption,
            iterations_used: it,
        };
        let (Some(pm), Some(am)) = (achieved.phase_margin_deg, achieved.gain_margin_db) else {
            if best.is_none() {
                best = Some((f64::INFINITY, result));
            }
            break;
        };
        let pm_err = pm_des - pm;
        let am_err = spec.desired_amplitude_margin_db - am;
        let score = pm_err.abs() / spec.pm_tolerance_deg + am_err.abs() / spec.am_tolerance_db;
        let pm_ok = pm_err.abs() <= spec.pm_tolerance_deg;
        let am_ok = am_err.abs() <= spec.am_tolerance_db;
        if pm_ok && am_ok && assumption.holds {
            return Ok(result);
        }
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, result));
        }
        if pm_ok && !am_ok {
            break;
        }
        offset += if pm_ok { spec.offset_increment_deg } else { pm_err.signum() * pm_err.abs().min(spec.offset_increment_deg) };
    }
    let mut best = best.expect("at least one iteration").1;
    best.iterations_used = best.iterations_used.max(1);
    Err(Error::NonConvergence { best: Box::new(best) })
}

/// Relay limit-cycle measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayOutcome {
    /// rad/s, half peak-to-peak.
    pub oscillation_amplitude: f64,
    pub ultimate_period: f64,
    pub ultimate_gain: f64,
    pub gains: PiGains,
}

pub const RELAY_DURATION: f64 = 0.4;

/// Ultimate gain of a relay of output `d` producing oscillation amplitude `a`.
pub fn ultimate_gain(d: f64, a: f64) -> f64 {
    4.0 * d / (PI * a)
}

/// Ziegler–Nichols PI from ultimate gain and period.
pub fn ziegler_nichols_pi(ku: f64, tu: f64) -> Result<PiGains> {
    PiGains::new(0.45 * ku, tu / 1.2)
}

/// Relay experiment of `duration` seconds; the first half is discarded.
pub fn relay_experiment(
    params: &TwoMassParams,
    relay_amplitude: f64,
    hysteresis: f64,
    sample_period: f64,
    duration: f64,
) -> Result<RelayOutcome> {
    let spec = ExcitationSpec {
        kind: ExcitationKind::Relay,
        amplitude: relay_amplitude,
        duration,
        seed: 0,
        relay_hysteresis: hysteresis,
        measurement_noise: 0.0,
    };
    let tr = simulate(params, Drive::Excitation(&spec), sample_period)?;
    let n = tr.len();
    let tail = &tr.motor_velocity[n / 2..];
    if tail.len() < 8 {
        return Err(Error::NoOscillation);
    }
    let span = |v: &[f64]| {
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) / 2.0
    };
    let a = span(tail);
    let (q1, q2) = tail.split_at(tail.len() / 2);
    let (a1, a2) = (span(q1), span(q2));
    if !(a > 0.0) || (a1 - a2).abs() > 0.1 * a {
        return Err(Error::NoOscillation);
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let mut ups = Vec::new();
    for k in 0..tail.len() - 1 {
        let (y0, y1) = (tail[k] - mean, tail[k + 1] - mean);
        if y0 < 0.0 && y1 >= 0.0 {
            ups.push((k as f64 + y0 / (y0 - y1)) * sample_period);
        }
    }
    if ups.len() < 4 {
        return Err(Error::NoOscillation);
    }
    let periods: Vec<f64> = ups.windows(2).map(|w| w[1] - w[0]).collect();
    let tu = periods.iter().sum::<f64>() / periods.len() as f64;
    let spread = periods.iter().map(|p| (p - tu).abs()).fold(0.0, f64::max);
    if spread > 0.1 * tu {
        return Err(Error::NoOscillation);
    }
    let ku = ultimate_gain(relay_amplitude, a);
    Ok(RelayOutcome { oscillation_amplitude: a, ultimate_period: tu, ultimate_gain: ku, gains: ziegler_nichols_pi(ku, tu)? })
}

/// Relay-feedback Ziegler–Nichols PI.
pub fn relay_tune(params: &TwoMassParams, relay_amplitude: f64, hysteresis: f64, sample_period: f64) -> Result<PiGains> {
    Ok(relay_experiment(params, relay_amplitude, hysteresis, sample_period, RELAY_DURATION)?.gains)
}
