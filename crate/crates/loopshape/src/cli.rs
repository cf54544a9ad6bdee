//! Project configuration and the command pipelines behind the binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{compose_loop, margins, step_metrics, MarginReport, StepMetrics};
use crate::error::{Error, Result};
use crate::notch::{design_notch, notch_response, DepthMode, NotchBiquad, NotchDepth, NotchParams};
use crate::pitune::{pi_response, relay_experiment, tune_pi, MarginSpec, PiGains, RelayOutcome, TuneResult, RELAY_DURATION};
use crate::plant::{
    analytic_frf, simulate, simulate_closed_loop, step_reference, Drive, ExcitationKind, ExcitationSpec, SimTrace, TwoMassParams,
    DEFAULT_SAMPLE_PERIOD, DEFAULT_TORQUE_LIMIT,
};
use crate::sysid::{coherence_mask, estimate_frf, extract_features, log_grid, BodeFeatures, CoherentInterval, FrequencyResponse};

pub const SCHEMA_VERSION: u32 = 1;
pub const PROPOSED: &str = "PrM";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub coherence_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchConfig {
    pub bandwidth_factor: f64,
    pub depth_mode: DepthMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// rad/s
    pub step_reference: f64,
    /// s
    pub step_duration: f64,
    /// N·m
    pub torque_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayConfig {
    /// N·m
    pub amplitude: f64,
    /// rad/s
    pub hysteresis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotchKeyword {
    None,
    Proposed,
}

/// Notch used by a baseline controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaselineNotch {
    Keyword(NotchKeyword),
    Custom(NotchParams),
}

impl Default for BaselineNotch {
    fn default() -> Self {
        BaselineNotch::Keyword(NotchKeyword::None)
    }
}

/// A comparison controller: fixed gains, or gains from the relay experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ti: Option<f64>,
    #[serde(default)]
    pub relay: bool,
    #[serde(default)]
    pub notch: BaselineNotch,
}

impl Baseline {
    pub fn fixed(kp: f64, ti: f64, notch: BaselineNotch) -> Self {
        Self { kp: Some(kp), ti: Some(ti), relay: false, notch }
    }

    pub fn relay() -> Self {
        Self { kp: None, ti: None, relay: true, notch: BaselineNotch::default() }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match (self.kp, self.ti, self.relay) {
            (Some(kp), Some(ti), false) => PiGains::new(kp, ti).map(|_| ()),
            (None, None, true) => Ok(()),
            _ => Err(Error::Config(format!("baseline {name}: give either kp and ti, or relay = true"))),
        }?;
        if let BaselineNotch::Custom(n) = self.notch {
            n.validate()?;
        }
        Ok(())
    }
}

/// Everything one scenario needs, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    /// s
    pub sample_period: f64,
    pub output_dir: PathBuf,
    pub plant: TwoMassParams,
    pub excitation: ExcitationSpec,
    pub welch: WelchConfig,
    pub notch: NotchConfig,
    pub margins: MarginSpec,
    pub simulation: SimulationConfig,
    pub relay: RelayConfig,
    #[serde(default)]
    pub baselines: BTreeMap<String, Baseline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    Rigid,
    Flexible,
}

impl ProjectConfig {
    pub fn scenario(s: Scenario) -> Self {
        match s {
            Scenario::Rigid => Self::rigid(),
            Scenario::Flexible => Self::flexible(),
        }
    }

    /// Stiff coupling: AM 5.4 dB, PM 65 deg, BW = f_N.
    pub fn rigid() -> Self {
        let mut baselines = BTreeMap::new();
        let ar_notch = NotchParams { center_frequency: 750.0, bandwidth: 750.0, depth_db: NotchDepth::Finite(20.0) };
        baselines.insert("AR".into(), Baseline::fixed(0.369, 4.69e-3, BaselineNotch::Custom(ar_notch)));
        baselines.insert("RF".into(), Baseline::relay());
        baselines.insert("AT".into(), Baseline::fixed(1.05, 8.39e-3, BaselineNotch::Custom(autotune_notch())));
        Self {
            sample_period: DEFAULT_SAMPLE_PERIOD,
            output_dir: PathBuf::from("out"),
            plant: TwoMassParams::rigid_twin(),
            excitation: ExcitationSpec { measurement_noise: 0.1, ..ExcitationSpec::white_noise(1.0, 2.0, 1) },
            welch: WelchConfig { segment_length: 512, overlap_fraction: 0.5, coherence_threshold: 0.8 },
            notch: NotchConfig { bandwidth_factor: 1.0, depth_mode: DepthMode::FiniteHalfGap },
            margins: MarginSpec::new(5.4, 65.0),
            simulation: SimulationConfig { step_reference: 100.0, step_duration: 0.1, torque_limit: DEFAULT_TORQUE_LIMIT },
            relay: RelayConfig { amplitude: 1.0, hysteresis: 0.0 },
            baselines,
        }
    }

    /// Flexible coupling: AM 10 dB, PM 65 deg, BW = 2 f_N.
    pub fn flexible() -> Self {
        let mut c = Self::rigid();
        c.plant = TwoMassParams::flexible_twin();
        c.notch.bandwidth_factor = 2.0;
        c.margins = MarginSpec::new(10.0, 65.0);
        let ar_notch = NotchParams { center_frequency: 450.0, bandwidth: 900.0, depth_db: NotchDepth::Finite(23.5) };
        c.baselines.insert("AR".into(), Baseline::fixed(0.236, 7.79e-3, BaselineNotch::Custom(ar_notch)));
        c
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if !(self.sample_period > 0.0) {
            return Err(Error::Config("sample_period must be positive".into()));
        }
        self.plant.validate().map_err(wrap)?;
        self.excitation.validate().map_err(wrap)?;
        self.margins.validate().map_err(wrap)?;
        let w = &self.welch;
        if !(w.segment_length.is_power_of_two() && w.segment_length >= 4) {
            return Err(Error::Config("welch.segment_length must be a power of two >= 4".into()));
        }
        if !(0.0..1.0).contains(&w.overlap_fraction) || !(0.0..=1.0).contains(&w.coherence_threshold) {
            return Err(Error::Config("welch overlap must be in [0, 1) and threshold in [0, 1]".into()));
        }
        if !(1.0..=2.0).contains(&self.notch.bandwidth_factor) {
            return Err(Error::Config("notch.bandwidth_factor must be in [1, 2]".into()));
        }
        let s = &self.simulation;
        if !(s.step_reference > 0.0 && s.step_duration > 0.0 && s.torque_limit > 0.0) {
            return Err(Error::Config("simulation values must be positive".into()));
        }
        if !(self.relay.amplitude > 0.0 && self.relay.hysteresis >= 0.0) {
            return Err(Error::Config("relay amplitude must be positive, hysteresis non-negative".into()));
        }
        for (name, b) in &self.baselines {
            if name == PROPOSED {
                return Err(Error::Config(format!("baseline name {PROPOSED} is reserved")));
            }
            b.validate(name).map_err(wrap)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Notch printed for the drive's autotune result.
pub fn autotune_notch() -> NotchParams {
    NotchParams { center_frequency: 753.0, bandwidth: 761.0, depth_db: NotchDepth::Infinite }
}

/// Grid for model-based loop evaluation, below Nyquist.
pub fn analysis_grid(sample_period: f64) -> Vec<f64> {
    log_grid(1.0, 0.499 / sample_period, 4000)
}

pub struct Identification {
    pub trace: SimTrace,
    pub frf: FrequencyResponse,
    pub intervals: Vec<CoherentInterval>,
    pub features: BodeFeatures,
}

/// White-noise experiment (or a supplied trace) followed by Welch estimation.
pub fn identify(cfg: &ProjectConfig, trace: Option<SimTrace>) -> Result<Identification> {
    let trace = match trace {
        Some(t) => t,
        None => {
            let mut spec = cfg.excitation;
            spec.kind = ExcitationKind::WhiteNoise;
            simulate(&cfg.plant, Drive::Excitation(&spec), cfg.sample_period)?
        }
    };
    let w = &cfg.welch;
    let frf = estimate_frf(&trace.torque_command, &trace.motor_velocity, trace.sample_period, w.segment_length, w.overlap_fraction)?;
    let intervals = coherence_mask(&frf, w.coherence_threshold);
    let features = extract_features(&frf, w.coherence_threshold)?;
    Ok(Identification { trace, frf, intervals, features })
}

/// Notch plus PI designed from a plant response.
#[derive(Debug, Clone)]
pub struct Design {
    pub features: BodeFeatures,
    pub notch: NotchParams,
    pub biquad: NotchBiquad,
    pub result: TuneResult,
}

/// Feature reads, notch design and PI synthesis on a plant response.
///
/// On non-convergence the error carries the best attempt with its notch set.
pub fn design(plant_frf: &FrequencyResponse, cfg: &ProjectConfig) -> Result<Design> {
    let thr = cfg.welch.coherence_threshold;
    let features = extract_features(plant_frf, thr)?;
    let (notch, biquad) = design_notch(&features, cfg.notch.bandwidth_factor, cfg.notch.depth_mode, cfg.sample_period)?;
    let n = notch_response(&biquad, plant_frf.frequencies())?;
    let shaped = compose_loop(&[plant_frf, &n])?;
    let mut spec = cfg.margins;
    spec.coherence_threshold = thr;
    match tune_pi(&shaped, &spec) {
        Ok(mut result) => {
            result.notch = Some(notch);
            Ok(Design { features, notch, biquad, result })
        }
        Err(Error::NonConvergence { mut best }) => {
            best.notch = Some(notch);
            Err(Error::NonConvergence { best })
        }
        Err(e) => Err(e),
    }
}

/// One controller's closed-loop step result.
#[derive(Debug, Clone, Serialize)]
pub struct ControllerRun {
    pub name: String,
    pub gains: PiGains,
    pub notch: Option<NotchParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relay: Option<RelayOutcome>,
    pub metrics: Option<StepMetrics>,
    pub margins: MarginReport,
    pub unstable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Option<SimTrace>,
}

/// Step response and model-based margins of one controller on the configured plant.
pub fn evaluate_controller(cfg: &ProjectConfig, name: &str, gains: PiGains, notch: Option<NotchParams>) -> Result<ControllerRun> {
    let t = cfg.sample_period;
    let biquad = notch.map(|n| n.realize(t)).transpose()?;
    let grid = analysis_grid(t);
    let mut parts = vec![analytic_frf(&cfg.plant, &grid)?, pi_response(gains, &grid)?];
    if let Some(q) = &biquad {
        parts.push(notch_response(q, &grid)?);
    }
    let refs: Vec<&FrequencyResponse> = parts.iter().collect();
    let margins = margins(&compose_loop(&refs)?);

    let sim = &cfg.simulation;
    let n = (sim.step_duration / t).round() as usize;
    let reference = step_reference(sim.step_reference, 0, n);
    let (metrics, trace, error) = match simulate_closed_loop(&cfg.plant, gains, biquad.as_ref(), &reference, t, sim.torque_limit) {
        Ok(tr) => (Some(step_metrics(&tr, sim.step_reference)), Some(tr), None),
        Err(e @ Error::Divergence { .. }) => (None, None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let unstable = metrics.is_none_or(|m| !m.steady_state_reached);
    Ok(ControllerRun { name: name.to_string(), gains, notch, relay: None, metrics, margins, unstable, error, trace })
}

/// Proposed design plus every configured baseline, sorted by name.
pub fn compare(cfg: &ProjectConfig, proposed: &Design) -> Result<Vec<ControllerRun>> {
    let mut runs = vec![evaluate_controller(cfg, PROPOSED, proposed.result.gains, Some(proposed.notch))?];
    for (name, b) in &cfg.baselines {
        let notch = match b.notch {
            BaselineNotch::Keyword(NotchKeyword::None) => None,
            BaselineNotch::Keyword(NotchKeyword::Proposed) => Some(proposed.notch),
            BaselineNotch::Custom(n) => Some(n),
        };
        let (gains, relay) = if b.relay {
            let r = relay_experiment(&cfg.plant, cfg.relay.amplitude, cfg.relay.hysteresis, cfg.sample_period, RELAY_DURATION)?;
            (r.gains, Some(r))
        } else {
            (PiGains::new(b.kp.unwrap_or_default(), b.ti.unwrap_or_default())?, None)
        };
        let mut run = evaluate_controller(cfg, name, gains, notch)?;
        run.relay = relay;
        runs.push(run);
    }
    runs.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(runs)
}

pub fn write_frf_csv<W: Write>(frf: &FrequencyResponse, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["f_hz", "mag_db", "phase_deg", "coherence"])?;
    let (m, p) = (frf.magnitude_db(), frf.phase_deg());
    for i in 0..frf.len() {
        out.serialize((frf.frequencies()[i], m[i], p[i], frf.coherence()[i]))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frf_csv<R: std::io::Read>(r: R) -> Result<FrequencyResponse> {
    let mut rd = csv::Reader::from_reader(r);
    let (mut f, mut m, mut p, mut c) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in rd.deserialize() {
        let (fi, mi, pi, ci): (f64, f64, f64, f64) = row?;
        f.push(fi);
        m.push(mi);
        p.push(pi);
        c.push(ci);
    }
    FrequencyResponse::from_bode(f, &m, &p, c)
}

fn write_intervals_csv(intervals: &[CoherentInterval], path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["f_lo_hz", "f_hi_hz", "start_index", "end_index"])?;
    for iv in intervals {
        out.serialize((iv.f_lo, iv.f_hi, iv.start_index, iv.end_index))?;
    }
    out.flush()?;
    Ok(())
}

fn write_biquad_csv(q: &NotchBiquad, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["b0", "b1", "b2", "a1", "a2"])?;
    out.serialize(q.coefficients())?;
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn out_dir(cfg: &ProjectConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

pub fn feature_summary(f: &BodeFeatures) -> String {
    format!(
        "f_ar = {:.1} Hz, f_res = {:.1} Hz, A_T = {:.2} dB, f_-180 = {:.1} Hz, reading = {:.2} dB",
        f.f_antiresonance, f.f_resonance, f.peak_gap_db, f.f_minus180, f.initial_margin_reading_db
    )
}

/// Writes `frf.csv` and `coherence_intervals.csv`; returns the feature summary line.
pub fn cmd_identify(cfg: &ProjectConfig, trace: Option<SimTrace>) -> Result<String> {
    let id = identify(cfg, trace)?;
    let dir = out_dir(cfg)?;
    write_frf_csv(&id.frf, fs::File::create(dir.join("frf.csv"))?)?;
    write_intervals_csv(&id.intervals, &dir.join("coherence_intervals.csv"))?;
    Ok(feature_summary(&id.features))
}

/// Writes `tune_report.json` (also on failure, naming the error) and `notch_biquad.csv`.
pub fn cmd_tune(cfg: &ProjectConfig, frf: Option<FrequencyResponse>) -> Result<Design> {
    let dir = out_dir(cfg)?;
    let outcome = match frf {
        Some(f) => Ok(f),
        None => identify(cfg, None).map(|id| id.frf),
    }
    .and_then(|f| design(&f, cfg));
    let report = match &outcome {
        Ok(d) => json!({
            "schema_version": SCHEMA_VERSION,
            "status": "ok",
            "features": d.features,
            "notch": d.notch,
            "notch_biquad": d.biquad.coefficients(),
            "result": d.result,
        }),
        Err(e) => {
            let best = match e {
                Error::NonConvergence { best } => Some(best.as_ref().clone()),
                _ => None,
            };
            json!({
                "schema_version": SCHEMA_VERSION,
                "status": "error",
                "error": e.name(),
                "message": e.to_string(),
                "best_attempt": best,
            })
        }
    };
    write_json(&dir.join("tune_report.json"), &report)?;
    let d = outcome?;
    write_biquad_csv(&d.biquad, &dir.join("notch_biquad.csv"))?;
    Ok(d)
}

/// Runs the configured open-loop excitation and writes `trace.csv`.
pub fn cmd_simulate(cfg: &ProjectConfig) -> Result<SimTrace> {
    let tr = simulate(&cfg.plant, Drive::Excitation(&cfg.excitation), cfg.sample_period)?;
    let dir = out_dir(cfg)?;
    tr.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
    Ok(tr)
}

/// Tunes, then writes `step_<name>.csv` per controller and `comparison.json`.
pub fn cmd_compare(cfg: &ProjectConfig) -> Result<Vec<ControllerRun>> {
    let d = cmd_tune(cfg, None)?;
    let runs = compare(cfg, &d)?;
    let dir = out_dir(cfg)?;
    for r in &runs {
        if let Some(tr) = &r.trace {
            tr.write_csv(fs::File::create(dir.join(format!("step_{}.csv", r.name)))?)?;
        }
    }
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "reference_rad_s": cfg.simulation.step_reference,
        "controllers": runs,
    });
    write_json(&dir.join("comparison.json"), &doc)?;
    Ok(runs)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Text summary of `tune_report.json` and `comparison.json` in the output directory.
pub fn cmd_report(cfg: &ProjectConfig) -> Result<String> {
    let dir = &cfg.output_dir;
    let mut text = String::new();
    let read = |name: &str| -> Result<serde_json::Value> {
        let s = fs::read_to_string(dir.join(name))?;
        serde_json::from_str(&s).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))
    };
    let tune = read("tune_report.json")?;
    if tune["status"] == "ok" {
        let r = &tune["result"];
        text += &format!(
            "proposed: kp = {:.4}, ti = {:.3} ms, f_c = {:.1} Hz, PM = {:.2} deg, AM = {:.2} dB, iterations = {}\n",
            r["gains"]["kp"].as_f64().unwrap_or(f64::NAN),
            r["gains"]["ti"].as_f64().unwrap_or(f64::NAN) * 1e3,
            r["crossover_frequency"].as_f64().unwrap_or(f64::NAN),
            r["achieved"]["phase_margin_deg"].as_f64().unwrap_or(f64::NAN),
            r["achieved"]["gain_margin_db"].as_f64().unwrap_or(f64::NAN),
            r["iterations_used"],
        );
        let n = &tune["notch"];
        text += &format!("notch: center = {} Hz, bandwidth = {} Hz, depth = {} dB\n", n["center_frequency"], n["bandwidth"], n["depth_db"]);
    } else {
        text += &format!("tuning failed: {}\n", tune["message"]);
    }
    if let Ok(cmp) = read("comparison.json") {
        text += &format!(
            "\n{:<8} {:>8} {:>9} {:>8} {:>8} {:>11} {:>12} {:>10}\n",
            "name", "kp", "ti [ms]", "PM", "AM", "overshoot%", "settling ms", "ITAE"
        );
        for c in cmp["controllers"].as_array().into_iter().flatten() {
            let m = &c["metrics"];
            text += &format!(
                "{:<8} {:>8.4} {:>9.3} {:>8} {:>8} {:>11} {:>12} {:>10}{}\n",
                c["name"].as_str().unwrap_or("?"),
                c["gains"]["kp"].as_f64().unwrap_or(f64::NAN),
                c["gains"]["ti"].as_f64().unwrap_or(f64::NAN) * 1e3,
                fmt_opt(c["margins"]["phase_margin_deg"].as_f64(), 2),
                fmt_opt(c["margins"]["gain_margin_db"].as_f64(), 2),
                fmt_opt(m["overshoot_pct"].as_f64(), 2),
                fmt_opt(m["settling_time_s"].as_f64().map(|s| s * 1e3), 2),
                fmt_opt(m["itae"].as_f64(), 5),
                if c["unstable"] == true { "  unstable" } else { "" },
            );
        }
    }
    fs::write(dir.join("report.txt"), &text)?;
    Ok(text)
}

/// Exit status for an error: 2 invalid config, 3 method inapplicable or infeasible, 4 non-convergence, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::InsufficientData { .. } | Error::Sampling { .. } | Error::Design(_) => 2,
        Error::NoCrossover | Error::NoResonance | Error::NoOscillation | Error::InfeasibleMargin(_) | Error::PhaseInfeasible { .. } => 3,
        Error::NonConvergence { .. } => 4,
        _ => 1,
    }
}
