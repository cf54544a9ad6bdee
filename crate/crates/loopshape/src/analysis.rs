//! Loop composition, stability margins, sensitivity and step metrics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::SimTrace;
use crate::sysid::{crossings, FrequencyResponse};

const SINGULAR: f64 = 1e-12;

/// Pointwise product of responses. Coherence is the elementwise minimum.
///
/// Parts on other grids are interpolated onto the first part's grid,
/// restricted to the span all parts share.
pub fn compose_loop(parts: &[&FrequencyResponse]) -> Result<FrequencyResponse> {
    let first = parts.first().ok_or_else(|| Error::InvalidInput("no parts to compose".into()))?;
    let same = |p: &FrequencyResponse| {
        p.len() == first.len() && p.frequencies().iter().zip(first.frequencies()).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs())
    };
    if parts.iter().all(|p| same(p)) {
        let mut h = first.response().to_vec();
        let mut c = first.coherence().to_vec();
        for p in &parts[1..] {
            for i in 0..h.len() {
                h[i] *= p.response()[i];
                c[i] = c[i].min(p.coherence()[i]);
            }
        }
        return FrequencyResponse::new(first.frequencies().to_vec(), h, c);
    }

    let lo = parts.iter().map(|p| p.frequencies()[0]).fold(f64::MIN, f64::max);
    let hi = parts.iter().map(|p| p.frequencies()[p.len() - 1]).fold(f64::MAX, f64::min);
    let grid: Vec<f64> = first.frequencies().iter().copied().filter(|f| *f >= lo && *f <= hi).collect();
    if grid.len() < 2 {
        return Err(Error::Grid(format!("shared span [{lo}, {hi}] Hz holds fewer than two grid points")));
    }
    log::warn!("compose_loop: resampling {} parts onto a common grid of {} points", parts.len(), grid.len());
    let resampled = parts.iter().map(|p| p.resample(&grid)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FrequencyResponse> = resampled.iter().collect();
    compose_loop(&refs)
}

/// Stability margins and closed-loop figures of an open loop.
///
/// `None` marks a quantity that is undefined on the grid (no crossing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub phase_margin_deg: Option<f64>,
    pub gain_margin_db: Option<f64>,
    pub phase_crossover_hz: Option<f64>,
    pub gain_crossover_hz: Option<f64>,
    pub closed_loop_bandwidth_hz: Option<f64>,
    pub sensitivity_peak_db: f64,
}

/// Margins over the whole grid.
pub fn margins(open_loop: &FrequencyResponse) -> MarginReport {
    margins_gated(open_loop, 0.0)
}

/// Margins where crossings are only accepted between bins with coherence
/// at or above `coherence_threshold`.
pub fn margins_gated(open_loop: &FrequencyResponse, coherence_threshold: f64) -> MarginReport {
    let f = open_loop.frequencies();
    let coh = open_loop.coherence();
    let usable = |i: usize| coh[i] >= coherence_threshold;
    let mag = open_loop.magnitude_db();
    let ph = open_loop.anchored_phase_deg();
    let lerp = |v: &[f64], i: usize, t: f64| v[i] + t * (v[i + 1] - v[i]);

    let gc = crossings(f, &mag, 0.0, true, usable).into_iter().next();
    let pc = crossings(f, &ph, -180.0, true, usable).into_iter().next();

    let t_db: Vec<f64> = open_loop.response().iter().map(|l| 20.0 * (l / (l + 1.0)).norm().log10()).collect();
    let bw = crossings(f, &t_db, -3.0, true, usable).into_iter().next();

    let s = sensitivity(open_loop);
    let peak = s
        .frf
        .response()
        .iter()
        .enumerate()
        .filter(|(i, _)| !s.singular_bins.contains(i) && usable(*i))
        .map(|(_, v)| 20.0 * v.norm().log10())
        .fold(f64::NEG_INFINITY, f64::max);

    MarginReport {
        phase_margin_deg: gc.map(|c| 180.0 + lerp(&ph, c.index, c.t)),
        gain_margin_db: pc.map(|c| -lerp(&mag, c.index, c.t)),
        phase_crossover_hz: pc.map(|c| c.frequency),
        gain_crossover_hz: gc.map(|c| c.frequency),
        closed_loop_bandwidth_hz: bw.map(|c| c.frequency),
        sensitivity_peak_db: peak,
    }
}

/// S = 1/(1+L), with bins where |1+L| vanishes reported separately.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// Singular bins carry coherence 0.
    pub frf: FrequencyResponse,
    pub singular_bins: Vec<usize>,
}

pub fn sensitivity(open_loop: &FrequencyResponse) -> Sensitivity {
    let mut singular_bins = Vec::new();
    let mut coh = open_loop.coherence().to_vec();
    let h: Vec<Complex64> = open_loop
        .response()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let d = l + 1.0;
            if d.norm() < SINGULAR {
                singular_bins.push(i);
                coh[i] = 0.0;
            }
            d.inv()
        })
        .collect();
    if !singular_bins.is_empty() {
        log::warn!("sensitivity: {} singular bins excluded", singular_bins.len());
    }
    let frf = FrequencyResponse::new(open_loop.frequencies().to_vec(), h, coh).expect("grid already validated");
    Sensitivity { frf, singular_bins }
}

/// T = L/(1+L).
pub fn complementary_sensitivity(open_loop: &FrequencyResponse) -> FrequencyResponse {
    let h = open_loop.response().iter().map(|l| l / (l + 1.0)).collect();
    FrequencyResponse::new(open_loop.frequencies().to_vec(), h, open_loop.coherence().to_vec()).expect("grid already validated")
}

/// Time-domain figures of a velocity step response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub overshoot_pct: f64,
    /// s, 2 % band, from step onset.
    pub settling_time_s: f64,
    /// rad·s
    pub itae: f64,
    pub steady_state_reached: bool,
}

/// Trapezoidal ∫ t·|e| dt for samples spaced `dt` starting at time `t0`.
pub fn itae(abs_error: &[f64], dt: f64, t0: f64) -> f64 {
    abs_error
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let ta = t0 + k as f64 * dt;
            0.5 * dt * (ta * w[0] + (ta + dt) * w[1])
        })
        .sum()
}

/// Overshoot, 2 % settling time and ITAE measured from the step onset
/// (first nonzero reference sample).
pub fn step_metrics(trace: &SimTrace, reference_value: f64) -> StepMetrics {
    let n = trace.len();
    let dt = trace.sample_period;
    let onset = trace.reference.iter().position(|r| *r != 0.0).unwrap_or(0);
    let y = &trace.motor_velocity[onset.min(n)..];
    if y.is_empty() || !(reference_value > 0.0) {
        return StepMetrics { overshoot_pct: 0.0, settling_time_s: 0.0, itae: 0.0, steady_state_reached: !y.is_empty() };
    }
    let finite = y.iter().all(|v| v.is_finite());
    let peak = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let overshoot_pct = ((peak - reference_value) / reference_value * 100.0).max(0.0);

    let band = 0.02 * reference_value;
    let outside = |v: &f64| !((v - reference_value).abs() <= band);
    let last_out = y.iter().rposition(outside);
    let m = y.len();
    let settling_time_s = match last_out {
        None => 0.0,
        Some(k) => ((k + 1).min(m - 1)) as f64 * dt,
    };
    let tail_start = n - n / 10;
    let steady_state_reached = finite && last_out.is_none_or(|k| k + onset < tail_start);

    let err: Vec<f64> = y.iter().map(|v| (reference_value - v).abs()).collect();
    StepMetrics { overshoot_pct, settling_time_s, itae: itae(&err, dt, 0.0), steady_state_reached }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysid::log_grid;
    use std::f64::consts::PI;

    fn integrator(wu: f64) -> FrequencyResponse {
        let f = log_grid(0.1, 1000.0, 500);
        let h = f.iter().map(|x| Complex64::new(0.0, 2.0 * PI * x / wu).inv()).collect();
        FrequencyResponse::exact(f, h).unwrap()
    }

    #[test]
    fn integrator_margins() {
        let m = margins(&integrator(2.0 * PI * 10.0));
        assert!((m.phase_margin_deg.unwrap() - 90.0).abs() < 1e-9);
        assert!((m.gain_crossover_hz.unwrap() - 10.0).abs() < 1e-6);
        assert!(m.gain_margin_db.is_none());
        assert!(m.phase_crossover_hz.is_none());
        assert!(m.sensitivity_peak_db > -0.01);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let l = integrator(10.0);
        assert_eq!(compose_loop(&[&l]).unwrap(), l);
        let inv = FrequencyResponse::exact(l.frequencies().to_vec(), l.response().iter().map(|h| h.inv()).collect()).unwrap();
        let one = compose_loop(&[&l, &inv]).unwrap();
        assert!(one.magnitude_db().iter().all(|m| m.abs() < 1e-9));
        assert!(one.phase_deg().iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn compose_resamples_and_rejects_disjoint() {
        let a = integrator(10.0);
        let g = log_grid(1.0, 50.0, 77);
        let b = FrequencyResponse::exact(g.clone(), vec![Complex64::new(2.0, 0.0); 77]).unwrap();
        let c = compose_loop(&[&a, &b]).unwrap();
        assert!(c.frequencies()[0] >= 1.0 && *c.frequencies().last().unwrap() <= 50.0);
        let far = FrequencyResponse::exact(vec![5000.0, 6000.0], vec![Complex64::new(1.0, 0.0); 2]).unwrap();
        assert!(matches!(compose_loop(&[&a, &far]), Err(Error::Grid(_))));
    }

    #[test]
    fn zero_loop_sensitivity() {
        let f = log_grid(1.0, 10.0, 5);
        let z = FrequencyResponse::exact(f, vec![Complex64::new(0.0, 0.0); 5]).unwrap();
        let s = sensitivity(&z);
        assert!(s.frf.magnitude_db().iter().all(|m| m.abs() < 1e-12));
        let m1 = FrequencyResponse::exact(log_grid(1.0, 10.0, 3), vec![Complex64::new(-1.0, 0.0); 3]).unwrap();
        assert_eq!(sensitivity(&m1).singular_bins, vec![0, 1, 2]);
    }

    #[test]
    fn flat_step_metrics() {
        let tr = SimTrace::from_velocity(1e-3, vec![5.0; 100], vec![5.0; 100]).unwrap();
        let m = step_metrics(&tr, 5.0);
        assert_eq!((m.overshoot_pct, m.settling_time_s, m.itae), (0.0, 0.0, 0.0));
        assert!(m.steady_state_reached);
    }

    #[test]
    fn onset_offsets_time() {
        let mut r = vec![0.0; 10];
        r.extend(vec![1.0; 90]);
        let mut y = vec![0.0; 12];
        y.extend(vec![1.0; 88]);
        let tr = SimTrace::from_velocity(0.01, r, y).unwrap();
        let m = step_metrics(&tr, 1.0);
        assert!((m.settling_time_s - 0.02).abs() < 1e-12);
        assert!((m.itae - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn late_excursion_flags_instability() {
        let mut y = vec![1.0; 100];
        y[95] = 1.5;
        let tr = SimTrace::from_velocity(1e-3, vec![1.0; 100], y).unwrap();
        assert!(!step_metrics(&tr, 1.0).steady_state_reached);
    }
}
