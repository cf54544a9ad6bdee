//! Two-mass spring-damper plant: frequency response, time-domain simulation
//! and excitation signals.
//!
//! Input is the torque command, output the motor (collocated) velocity. The
//! drive's current loop is folded into an optional first- or second-order
//! torque lag plus an equivalent dead time.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notch::{BiquadState, NotchBiquad};
use crate::pitune::PiGains;
use crate::sysid::FrequencyResponse;

pub const TWIN_MOTOR_INERTIA: f64 = 2.9e-4;
pub const TWIN_RESONANCE_HZ: f64 = 750.0;
pub const RIGID_STIFFNESS: f64 = 5118.0;
pub const RIGID_DAMPING: f64 = 0.117;
pub const FLEXIBLE_STIFFNESS: f64 = 1828.0;
pub const FLEXIBLE_DAMPING: f64 = 0.049;
pub const DEFAULT_SAMPLE_PERIOD: f64 = 125e-6;
pub const DEFAULT_TORQUE_LIMIT: f64 = 10.0;

/// Physical parameters of the rotary two-mass plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoMassParams {
    /// kg·m²
    pub motor_inertia: f64,
    /// kg·m²
    pub load_inertia: f64,
    /// N·m/rad
    pub stiffness: f64,
    /// N·m·s/rad
    pub coupling_damping: f64,
    #[serde(default)]
    pub motor_viscous_friction: f64,
    #[serde(default)]
    pub load_viscous_friction: f64,
    /// Current-loop time constant in seconds, 0 for ideal torque. For a
    /// second-order lag this is 1/ωn.
    #[serde(default)]
    pub torque_lag_time_constant: f64,
    /// Damping ratio of a second-order current loop. `None` selects the
    /// first-order lag 1/(τs + 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torque_lag_damping: Option<f64>,
    /// Total equivalent dead time of the drive in seconds, including the
    /// half-sample delay of the zero-order hold.
    #[serde(default)]
    pub dead_time: f64,
}

/// Load inertia that places the resonance at `f_res` for a given motor inertia and stiffness.
pub fn load_inertia_for_resonance(motor_inertia: f64, stiffness: f64, f_res: f64) -> f64 {
    let w = 2.0 * PI * f_res;
    1.0 / (w * w / stiffness - 1.0 / motor_inertia)
}

impl TwoMassParams {
    /// Synthetic twin of the stiff coupling (resonance at 750 Hz).
    pub fn rigid_twin() -> Self {
        Self::twin(RIGID_STIFFNESS, RIGID_DAMPING)
    }

    /// Synthetic twin of the flexible coupling, same inertias as [`Self::rigid_twin`].
    pub fn flexible_twin() -> Self {
        Self::twin(FLEXIBLE_STIFFNESS, FLEXIBLE_DAMPING)
    }

    fn twin(stiffness: f64, coupling_damping: f64) -> Self {
        Self {
            motor_inertia: TWIN_MOTOR_INERTIA,
            load_inertia: load_inertia_for_resonance(TWIN_MOTOR_INERTIA, RIGID_STIFFNESS, TWIN_RESONANCE_HZ),
            stiffness,
            coupling_damping,
            motor_viscous_friction: 1e-4,
            load_viscous_friction: 1e-4,
            torque_lag_time_constant: 1.0 / (2.0 * PI * 1000.0),
            torque_lag_damping: Some(0.4),
            dead_time: 125e-6,
        }
    }

    /// Same mechanics with an ideal, instantaneous torque actuator.
    pub fn ideal_actuator(mut self) -> Self {
        self.torque_lag_time_constant = 0.0;
        self.torque_lag_damping = None;
        self.dead_time = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("motor_inertia", self.motor_inertia), ("load_inertia", self.load_inertia), ("stiffness", self.stiffness)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("coupling_damping", self.coupling_damping),
            ("motor_viscous_friction", self.motor_viscous_friction),
            ("load_viscous_friction", self.load_viscous_friction),
            ("torque_lag_time_constant", self.torque_lag_time_constant),
            ("dead_time", self.dead_time),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(z) = self.torque_lag_damping {
            if !(z.is_finite() && z > 0.0) {
                return Err(Error::InvalidInput(format!("torque_lag_damping must be positive, got {z}")));
            }
        }
        Ok(())
    }

    /// Undamped resonance of the collocated pair, Hz.
    pub fn resonance_hz(&self) -> f64 {
        let j = self.motor_inertia * self.load_inertia / (self.motor_inertia + self.load_inertia);
        (self.stiffness / j).sqrt() / (2.0 * PI)
    }

    /// Undamped antiresonance (load side locked), Hz.
    pub fn antiresonance_hz(&self) -> f64 {
        (self.stiffness / self.load_inertia).sqrt() / (2.0 * PI)
    }

    fn lag(&self) -> Lag {
        let tau = self.torque_lag_time_constant;
        match (tau > 0.0, self.torque_lag_damping) {
            (false, _) => Lag::None,
            (true, None) => Lag::First(tau),
            (true, Some(z)) => Lag::Second(tau, z),
        }
    }

    /// Mechanical energy: kinetic plus spring, J.
    pub fn energy(&self, s: &MechanicalState) -> f64 {
        0.5 * self.motor_inertia * s.motor_velocity.powi(2)
            + 0.5 * self.load_inertia * s.load_velocity.powi(2)
            + 0.5 * self.stiffness * s.twist_angle.powi(2)
    }
}

#[derive(Debug, Clone, Copy)]
enum Lag {
    None,
    First(f64),
    Second(f64, f64),
}

/// Exact torque-to-motor-velocity response of the linear model.
pub fn analytic_frf(params: &TwoMassParams, frequencies: &[f64]) -> Result<FrequencyResponse> {
    params.validate()?;
    if let Some(f) = frequencies.iter().find(|f| !(**f > 0.0)) {
        return Err(Error::InvalidInput(format!("frequency {f} is not positive")));
    }
    let p = params;
    let lag = p.lag();
    let h = frequencies
        .iter()
        .map(|&f| {
            let s = Complex64::new(0.0, 2.0 * PI * f);
            let c = p.stiffness / s + p.coupling_damping;
            let load = s * p.load_inertia + p.load_viscous_friction + c;
            let motor = s * p.motor_inertia + p.motor_viscous_friction + c;
            let mech = (motor - c * c / load).inv();
            let act = match lag {
                Lag::None => Complex64::new(1.0, 0.0),
                Lag::First(tau) => (s * tau + 1.0).inv(),
                Lag::Second(tau, z) => (s * s * tau * tau + s * 2.0 * z * tau + 1.0).inv(),
            };
            mech * act * (-s * p.dead_time).exp()
        })
        .collect();
    FrequencyResponse::exact(frequencies.to_vec(), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationKind {
    WhiteNoise,
    Step,
    Relay,
}

/// Open-loop experiment description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    /// N·m. Standard deviation for white noise, level for a torque step,
    /// relay output for a relay.
    pub amplitude: f64,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// rad/s, relay only.
    #[serde(default)]
    pub relay_hysteresis: f64,
    /// Standard deviation of additive white noise on the measured motor velocity, rad/s.
    #[serde(default)]
    pub measurement_noise: f64,
}

impl ExcitationSpec {
    pub fn white_noise(amplitude: f64, duration: f64, seed: u64) -> Self {
        Self { kind: ExcitationKind::WhiteNoise, amplitude, duration, seed, relay_hysteresis: 0.0, measurement_noise: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::InvalidInput(format!("excitation amplitude must be positive, got {}", self.amplitude)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidInput(format!("excitation duration must be positive, got {}", self.duration)));
        }
        if !(self.relay_hysteresis >= 0.0 && self.measurement_noise >= 0.0) {
            return Err(Error::InvalidInput("hysteresis and measurement noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// What drives an open-loop [`simulate`] call.
#[derive(Debug, Clone, Copy)]
pub enum Drive<'a> {
    Excitation(&'a ExcitationSpec),
    Torque(&'a [f64]),
}

/// Sampled simulation record. Sample `k` holds the states at `t = k·T` and
/// the command held over `[kT, (k+1)T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub sample_period: f64,
    pub torque_command: Vec<f64>,
    pub reference: Vec<f64>,
    /// Measured motor velocity (includes measurement noise when configured).
    pub motor_velocity: Vec<f64>,
    pub load_velocity: Vec<f64>,
    pub twist_angle: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.motor_velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motor_velocity.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_period
    }

    /// Trace holding only a velocity response; other channels are zero.
    pub fn from_velocity(sample_period: f64, reference: Vec<f64>, motor_velocity: Vec<f64>) -> Result<Self> {
        let n = motor_velocity.len();
        let t = Self {
            sample_period,
            torque_command: vec![0.0; n],
            reference,
            motor_velocity,
            load_velocity: vec![0.0; n],
            twist_angle: vec![0.0; n],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [self.torque_command.len(), self.reference.len(), self.load_velocity.len(), self.twist_angle.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidInput("trace channels have unequal lengths".into()));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::InvalidInput("trace sample period must be positive".into()));
        }
        Ok(())
    }

    /// Writes `t,torque,ref,w_motor,w_load,twist`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "torque", "ref", "w_motor", "w_load", "twist"])?;
        for k in 0..self.len() {
            out.serialize((
                self.time(k),
                self.torque_command[k],
                self.reference[k],
                self.motor_velocity[k],
                self.load_velocity[k],
                self.twist_angle[k],
            ))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut t = Vec::new();
        let mut tr = Self {
            sample_period: 0.0,
            torque_command: Vec::new(),
            reference: Vec::new(),
            motor_velocity: Vec::new(),
            load_velocity: Vec::new(),
            twist_angle: Vec::new(),
        };
        for row in rd.deserialize() {
            let (ti, u, r, wm, wl, th): (f64, f64, f64, f64, f64, f64) = row?;
            t.push(ti);
            tr.torque_command.push(u);
            tr.reference.push(r);
            tr.motor_velocity.push(wm);
            tr.load_velocity.push(wl);
            tr.twist_angle.push(th);
        }
        if t.len() < 2 {
            return Err(Error::InsufficientData { required: 2, got: t.len() });
        }
        tr.sample_period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        tr.validate()?;
        Ok(tr)
    }
}

/// Mechanical state used to start a simulation away from rest.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MechanicalState {
    pub motor_velocity: f64,
    pub load_velocity: f64,
    pub twist_angle: f64,
}

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Fixed-step RK4 integrator of the plant with a sample-and-hold input
/// and a transport delay.
struct Engine {
    p: TwoMassParams,
    lag: Lag,
    x: [f64; 5],
    period: f64,
    /// Input history, newest first.
    held: VecDeque<f64>,
    delay_samples: usize,
    /// Part of the period (from its start) still driven by the older input.
    split: f64,
    rate: f64,
}

impl Engine {
    fn new(p: &TwoMassParams, sample_period: f64, x0: MechanicalState) -> Self {
        let lag = p.lag();
        let transport = (p.dead_time - sample_period / 2.0).max(0.0);
        let delay_samples = (transport / sample_period + 1e-9).floor() as usize;
        let mut split = transport - delay_samples as f64 * sample_period;
        if split < 1e-12 * sample_period {
            split = 0.0;
        }
        let inv_j = 1.0 / p.motor_inertia + 1.0 / p.load_inertia;
        let mech = (p.stiffness * inv_j).sqrt();
        let damp = p.coupling_damping * inv_j + p.motor_viscous_friction / p.motor_inertia + p.load_viscous_friction / p.load_inertia;
        let act = match lag {
            Lag::None => 0.0,
            Lag::First(tau) => 1.0 / tau,
            Lag::Second(tau, z) => (z + (z * z - 1.0).max(0.0).sqrt()) / tau,
        };
        Self {
            p: *p,
            lag,
            x: [x0.motor_velocity, x0.load_velocity, x0.twist_angle, 0.0, 0.0],
            period: sample_period,
            held: VecDeque::from(vec![0.0; delay_samples + 2]),
            delay_samples,
            split,
            rate: mech.max(damp).max(act),
        }
    }

    fn derivs(&self, x: &[f64; 5], u: f64) -> [f64; 5] {
        let p = &self.p;
        let (torque, d3, d4) = match self.lag {
            Lag::None => (u, 0.0, 0.0),
            Lag::First(tau) => (x[3], (u - x[3]) / tau, 0.0),
            Lag::Second(tau, z) => (x[3], x[4], (u - x[3]) / (tau * tau) - 2.0 * z * x[4] / tau),
        };
        let c = p.stiffness * x[2] + p.coupling_damping * (x[0] - x[1]);
        [
            (torque - p.motor_viscous_friction * x[0] - c) / p.motor_inertia,
            (c - p.load_viscous_friction * x[1]) / p.load_inertia,
            x[0] - x[1],
            d3,
            d4,
        ]
    }

    fn advance(&mut self, u: f64, dt: f64) {
        let n = ((dt * self.rate / 0.5).ceil() as usize).max(1);
        let h = dt / n as f64;
        let add = |a: &[f64; 5], k: &[f64; 5], s: f64| std::array::from_fn::<f64, 5, _>(|i| a[i] + s * k[i]);
        for _ in 0..n {
            let x = self.x;
            let k1 = self.derivs(&x, u);
            let k2 = self.derivs(&add(&x, &k1, h / 2.0), u);
            let k3 = self.derivs(&add(&x, &k2, h / 2.0), u);
            let k4 = self.derivs(&add(&x, &k3, h), u);
            self.x = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
    }

    /// Holds `u` from now on and integrates one sample period.
    fn step(&mut self, u: f64) {
        self.held.push_front(u);
        self.held.pop_back();
        let m = self.delay_samples;
        if self.split > 0.0 {
            self.advance(self.held[m + 1], self.split);
            self.advance(self.held[m], self.period - self.split);
        } else {
            self.advance(self.held[m], self.period);
        }
    }

    fn diverged(&self) -> bool {
        self.x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    }
}

fn check_period(params: &TwoMassParams, sample_period: f64) -> Result<()> {
    params.validate()?;
    if !(sample_period.is_finite() && sample_period > 0.0) {
        return Err(Error::InvalidInput("sample period must be positive".into()));
    }
    let f_res = params.resonance_hz();
    if sample_period * f_res * 10.0 > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!("sample period {sample_period} s is not 10x below the resonance period 1/{f_res:.1} Hz")));
    }
    Ok(())
}

/// Runs the plant for `n` samples with a per-sample controller.
///
/// `ctrl(k, measured_velocity)` returns the command held over sample `k`.
fn run<F>(
    params: &TwoMassParams,
    sample_period: f64,
    x0: MechanicalState,
    n: usize,
    noise: Option<(f64, u64)>,
    mut ctrl: F,
) -> Result<SimTrace>
where
    F: FnMut(usize, f64) -> (f64, f64),
{
    let mut e = Engine::new(params, sample_period, x0);
    let mut noise = noise.filter(|(s, _)| *s > 0.0).map(|(s, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        (Normal::new(0.0, s).expect("positive std"), rng)
    });
    let mut tr = SimTrace {
        sample_period,
        torque_command: Vec::with_capacity(n),
        reference: Vec::with_capacity(n),
        motor_velocity: Vec::with_capacity(n),
        load_velocity: Vec::with_capacity(n),
        twist_angle: Vec::with_capacity(n),
    };
    for k in 0..n {
        let mut y = e.x[0];
        if let Some((dist, rng)) = noise.as_mut() {
            y += dist.sample(rng);
        }
        let (u, r) = ctrl(k, y);
        tr.torque_command.push(u);
        tr.reference.push(r);
        tr.motor_velocity.push(y);
        tr.load_velocity.push(e.x[1]);
        tr.twist_angle.push(e.x[2]);
        e.step(u);
        if e.diverged() {
            return Err(Error::Divergence { sample: k + 1 });
        }
    }
    Ok(tr)
}

/// Open-loop simulation from rest.
pub fn simulate(params: &TwoMassParams, drive: Drive<'_>, sample_period: f64) -> Result<SimTrace> {
    simulate_from(params, MechanicalState::default(), drive, sample_period)
}

/// Open-loop simulation from a given mechanical state.
pub fn simulate_from(params: &TwoMassParams, x0: MechanicalState, drive: Drive<'_>, sample_period: f64) -> Result<SimTrace> {
    check_period(params, sample_period)?;
    match drive {
        Drive::Torque(u) => run(params, sample_period, x0, u.len(), None, |k, _| (u[k], 0.0)),
        Drive::Excitation(spec) => {
            spec.validate()?;
            let n = (spec.duration / sample_period).round() as usize;
            let noise = Some((spec.measurement_noise, spec.seed));
            match spec.kind {
                ExcitationKind::WhiteNoise => {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    let dist = Normal::new(0.0, spec.amplitude).expect("positive std");
                    let u: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    run(params, sample_period, x0, n, noise, |k, _| (u[k], 0.0))
                }
                ExcitationKind::Step => run(params, sample_period, x0, n, noise, |_, _| (spec.amplitude, 0.0)),
                ExcitationKind::Relay => {
                    let d = spec.amplitude;
                    let eps = spec.relay_hysteresis;
                    let mut u = d;
                    run(params, sample_period, x0, n, noise, move |_, y| {
                        let e = -y;
                        if e > eps {
                            u = d;
                        } else if e < -eps {
                            u = -d;
                        }
                        (u, 0.0)
                    })
                }
            }
        }
    }
}

/// Discrete PI speed controller with notch and torque saturation.
///
/// Backward-Euler integral. The integrator is clamped to the torque limit
/// and frozen while the output saturates in the direction of the error.
#[derive(Debug, Clone)]
pub struct SpeedController {
    gains: PiGains,
    notch: Option<BiquadState>,
    sample_period: f64,
    limit: f64,
    integral: f64,
}

impl SpeedController {
    pub fn new(gains: PiGains, notch: Option<&NotchBiquad>, sample_period: f64, torque_limit: f64) -> Result<Self> {
        gains.validate()?;
        if !(torque_limit > 0.0) {
            return Err(Error::InvalidInput(format!("torque limit must be positive, got {torque_limit}")));
        }
        if let Some(nb) = notch {
            if (nb.sample_period - sample_period).abs() > 1e-12 * sample_period {
                return Err(Error::InvalidInput("notch sample period differs from the loop's".into()));
            }
        }
        Ok(Self { gains, notch: notch.map(BiquadState::new), sample_period, limit: torque_limit, integral: 0.0 })
    }

    pub fn update(&mut self, error: f64) -> f64 {
        let PiGains { kp, ti } = self.gains;
        let candidate = (self.integral + kp * self.sample_period / ti * error).clamp(-self.limit, self.limit);
        let mut u = kp * error + candidate;
        if let Some(n) = self.notch.as_mut() {
            u = n.process(u);
        }
        let sat = u.clamp(-self.limit, self.limit);
        let winding = sat != u && error.signum() == u.signum();
        if !winding {
            self.integral = candidate;
        }
        sat
    }
}

/// Closed speed loop: PI on the velocity error, optional notch, saturated torque.
pub fn simulate_closed_loop(
    params: &TwoMassParams,
    gains: PiGains,
    notch: Option<&NotchBiquad>,
    reference: &[f64],
    sample_period: f64,
    torque_limit: f64,
) -> Result<SimTrace> {
    check_period(params, sample_period)?;
    let mut c = SpeedController::new(gains, notch, sample_period, torque_limit)?;
    run(params, sample_period, MechanicalState::default(), reference.len(), None, |k, y| (c.update(reference[k] - y), reference[k]))
}

/// Step reference of `value` starting at sample `onset`.
pub fn step_reference(value: f64, onset: usize, n: usize) -> Vec<f64> {
    (0..n).map(|k| if k >= onset { value } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysid::log_grid;

    #[test]
    fn twin_inertia() {
        let p = TwoMassParams::rigid_twin();
        assert!((p.load_inertia - 1.1227786e-3).abs() < 1e-9);
        assert!((p.resonance_hz() - 750.0).abs() < 1e-9);
        assert!((TwoMassParams::flexible_twin().resonance_hz() - 750.0 * (1828.0f64 / 5118.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        let mut p = TwoMassParams::rigid_twin();
        p.stiffness = 0.0;
        assert!(p.validate().is_err());
        let mut p = TwoMassParams::rigid_twin();
        p.coupling_damping = -1.0;
        assert!(p.validate().is_err());
        assert!(analytic_frf(&TwoMassParams::rigid_twin(), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_torque_is_silent() {
        let p = TwoMassParams::rigid_twin();
        let tr = simulate(&p, Drive::Torque(&vec![0.0; 500]), DEFAULT_SAMPLE_PERIOD).unwrap();
        assert!(tr.motor_velocity.iter().chain(&tr.load_velocity).chain(&tr.twist_angle).all(|v| *v == 0.0));
    }

    #[test]
    fn rigid_limit_frf() {
        let mut p = TwoMassParams::rigid_twin().ideal_actuator();
        p.stiffness = 1e9;
        let f = log_grid(1.0, 999.0, 200);
        let frf = analytic_frf(&p, &f).unwrap();
        let j = p.motor_inertia + p.load_inertia;
        let b = p.motor_viscous_friction + p.load_viscous_friction;
        for (fi, h) in f.iter().zip(frf.response()) {
            let rigid = Complex64::new(b, 2.0 * PI * fi * j).inv();
            assert!((20.0 * (h.norm() / rigid.norm()).log10()).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_coarse_sampling() {
        let p = TwoMassParams::rigid_twin();
        assert!(simulate(&p, Drive::Torque(&[0.0; 4]), 2e-4).is_err());
    }

    #[test]
    fn divergence_names_sample() {
        let mut p = TwoMassParams::rigid_twin().ideal_actuator();
        p.motor_viscous_friction = 0.0;
        p.load_viscous_friction = 0.0;
        let u = vec![1e15; 10];
        match simulate(&p, Drive::Torque(&u), DEFAULT_SAMPLE_PERIOD) {
            Err(Error::Divergence { sample }) => assert!((1..=10).contains(&sample)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dead_time_delays_response() {
        let mut p = TwoMassParams::rigid_twin().ideal_actuator();
        let t = DEFAULT_SAMPLE_PERIOD;
        p.dead_time = 2.5 * t;
        let mut u = vec![0.0; 8];
        u[0] = 1.0;
        let tr = simulate(&p, Drive::Torque(&u), t).unwrap();
        // transport delay of 2 samples: nothing moves before t = 2T
        assert_eq!(tr.motor_velocity[1], 0.0);
        assert_eq!(tr.motor_velocity[2], 0.0);
        assert!(tr.motor_velocity[3] > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let p = TwoMassParams::rigid_twin();
        let spec = ExcitationSpec::white_noise(1.0, 0.01, 3);
        let tr = simulate(&p, Drive::Excitation(&spec), DEFAULT_SAMPLE_PERIOD).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,torque,ref,w_motor,w_load,twist\n"));
        let back = SimTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.motor_velocity, tr.motor_velocity);
        assert!((back.sample_period - tr.sample_period).abs() < 1e-15);
    }

    #[test]
    fn relay_oscillates_about_zero() {
        let p = TwoMassParams::rigid_twin();
        let spec = ExcitationSpec { kind: ExcitationKind::Relay, relay_hysteresis: 0.0, ..ExcitationSpec::white_noise(1.0, 0.05, 0) };
        let tr = simulate(&p, Drive::Excitation(&spec), DEFAULT_SAMPLE_PERIOD).unwrap();
        let tail = &tr.motor_velocity[200..];
        assert!(tail.iter().any(|v| *v > 0.0) && tail.iter().any(|v| *v < 0.0));
        assert!(tr.torque_command.iter().all(|u| u.abs() == 1.0));
    }
}
