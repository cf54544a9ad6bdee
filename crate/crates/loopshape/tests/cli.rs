use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopshape::cli::{write_frf_csv, Baseline, BaselineNotch, ProjectConfig};
use loopshape::notch::NotchParams;
use loopshape::plant::{analytic_frf, TwoMassParams};
use loopshape::sysid::log_grid;
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_loopshape");

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes `cfg` with its output directory inside the temp dir and runs `verb`.
    fn exec(&self, cfg: &ProjectConfig, out: &str, verb: &str) -> Output {
        let mut cfg = cfg.clone();
        cfg.output_dir = self.path(out);
        let file = self.path(&format!("{out}.toml"));
        fs::write(&file, cfg.to_toml()).unwrap();
        Command::new(BIN).arg("--config").arg(&file).arg(verb).output().unwrap()
    }

    fn json(&self, out: &str, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(out).join(name)).unwrap()).unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The `f_res = ... Hz` value of the feature summary line.
fn reported_resonance(text: &str) -> f64 {
    let rest = text.split("f_res = ").nth(1).expect("summary line");
    rest.split(' ').next().unwrap().parse().unwrap()
}

fn bin_width(cfg: &ProjectConfig) -> f64 {
    1.0 / (cfg.welch.segment_length as f64 * cfg.sample_period)
}

fn controller<'a>(cmp: &'a Value, name: &str) -> &'a Value {
    cmp["controllers"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()
}

fn metric(cmp: &Value, name: &str, key: &str) -> f64 {
    controller(cmp, name)["metrics"][key].as_f64().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn identify_rigid_twin() {
    let r = Run::new();
    let cfg = ProjectConfig::rigid();
    let o = r.exec(&cfg, "id", "identify");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = reported_resonance(&stdout(&o));
    assert!((f - 750.0).abs() <= bin_width(&cfg), "{f}");
    assert!(r.path("id").join("frf.csv").exists());
    let iv = fs::read_to_string(r.path("id").join("coherence_intervals.csv")).unwrap();
    assert!(iv.starts_with("f_lo_hz,f_hi_hz"));
    let frf = fs::read_to_string(r.path("id").join("frf.csv")).unwrap();
    assert!(frf.starts_with("f_hz,mag_db,phase_deg,coherence\n"));
}

#[test]
fn identify_flexible_twin() {
    let r = Run::new();
    let cfg = ProjectConfig::flexible();
    let o = r.exec(&cfg, "id", "identify");
    assert!(o.status.success());
    let f = reported_resonance(&stdout(&o));
    assert!((f - 450.0).abs() <= bin_width(&cfg), "{f}");
}

#[test]
fn short_record_with_huge_segment_is_rejected() {
    let r = Run::new();
    let mut cfg = ProjectConfig::rigid();
    cfg.excitation.duration = 1.0;
    cfg.welch.segment_length = 1 << 15;
    let o = r.exec(&cfg, "id", "identify");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_reaches_phase_margin() {
    let r = Run::new();
    let o = r.exec(&ProjectConfig::rigid(), "t", "tune");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = r.json("t", "tune_report.json");
    assert_eq!(rep["schema_version"], 1);
    assert_eq!(rep["status"], "ok");
    let pm = rep["result"]["achieved"]["phase_margin_deg"].as_f64().unwrap();
    assert!((pm - 65.0).abs() <= 2.0, "{pm}");
    for key in ["crossover_frequency", "read_magnitude_db", "read_phase_deg", "iterations_used"] {
        assert!(rep["result"][key].is_number(), "{key}");
    }
    let csv = fs::read_to_string(r.path("t").join("notch_biquad.csv")).unwrap();
    assert!(csv.starts_with("b0,b1,b2,a1,a2\n"));
}

#[test]
fn damping_ratio_sets_desired_margin() {
    let r = Run::new();
    let mut cfg = ProjectConfig::rigid();
    cfg.margins.desired_phase_margin_deg = None;
    cfg.margins.damping_ratio = Some(0.5);
    let o = r.exec(&cfg, "t", "tune");
    let rep = r.json("t", "tune_report.json");
    let res = match o.status.code() {
        Some(0) => &rep["result"],
        Some(4) => &rep["best_attempt"],
        c => panic!("exit {c:?}"),
    };
    assert!((res["desired_phase_margin_deg"].as_f64().unwrap() - 51.83).abs() < 0.01);
}

/// A vanishing load on a soft spring leaves one inertia with ideal torque.
fn single_mass() -> TwoMassParams {
    let mut p = TwoMassParams::rigid_twin().ideal_actuator();
    p.load_inertia = 1e-9;
    p.stiffness = 1e-9 * (2.0 * PI * 600.0f64).powi(2);
    p.coupling_damping = 0.0;
    p
}

#[test]
fn single_mass_has_no_crossover() {
    let r = Run::new();
    let mut cfg = ProjectConfig::rigid();
    cfg.plant = single_mass();
    let frf = analytic_frf(&cfg.plant, &log_grid(1.0, 3990.0, 500)).unwrap();
    let file = r.path("frf.csv");
    write_frf_csv(&frf, fs::File::create(&file).unwrap()).unwrap();
    cfg.output_dir = r.path("t");
    fs::write(r.path("t.toml"), cfg.to_toml()).unwrap();
    let o = Command::new(BIN).arg("--config").arg(r.path("t.toml")).arg("tune").arg("--frf").arg(&file).output().unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = r.json("t", "tune_report.json");
    assert_eq!(rep["status"], "error");
    assert_eq!(rep["error"], "no_crossover");
}

#[test]
fn simulated_single_mass_has_no_resonance() {
    // Sampling lag drags the measured phase to -180 deg near Nyquist, so the
    // crossover read succeeds and the missing flexible mode is what fails.
    let r = Run::new();
    let mut cfg = ProjectConfig::rigid();
    cfg.plant = single_mass();
    let o = r.exec(&cfg, "t", "tune");
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(r.json("t", "tune_report.json")["error"], "no_resonance");
}

#[test]
fn bad_config_exits_two() {
    let r = Run::new();
    let file = r.path("bad.toml");
    fs::write(&file, "sample_period = -1\n").unwrap();
    let o = Command::new(BIN).arg("--config").arg(&file).arg("tune").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn init_writes_loadable_config() {
    let r = Run::new();
    let file = r.path("init.toml");
    let o = Command::new(BIN).args(["init", "--scenario", "flexible", "--config"]).arg(&file).output().unwrap();
    assert!(o.status.success());
    assert_eq!(ProjectConfig::load(&file).unwrap().plant, TwoMassParams::flexible_twin());
    let again = Command::new(BIN).args(["init", "--config"]).arg(&file).output().unwrap();
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn rigid_comparison_ordering() {
    let r = Run::new();
    let o = r.exec(&ProjectConfig::rigid(), "c", "compare");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cmp = r.json("c", "comparison.json");
    assert_eq!(cmp["schema_version"], 1);
    assert!(metric(&cmp, "PrM", "overshoot_pct") < metric(&cmp, "RF", "overshoot_pct"));
    assert!(metric(&cmp, "PrM", "itae") < metric(&cmp, "RF", "itae"));
    assert!(metric(&cmp, "PrM", "settling_time_s") < metric(&cmp, "AR", "settling_time_s"));
    assert_eq!(controller(&cmp, "PrM")["unstable"], false);
    for name in ["PrM", "AR", "AT", "RF"] {
        let csv = fs::read_to_string(r.path("c").join(format!("step_{name}.csv"))).unwrap();
        assert!(csv.starts_with("t,torque,ref,w_motor,w_load,twist\n"));
    }
}

#[test]
fn flexible_comparison_flags_autotune_unstable() {
    let r = Run::new();
    let o = r.exec(&ProjectConfig::flexible(), "c", "compare");
    assert!(o.status.success());
    let cmp = r.json("c", "comparison.json");
    assert_eq!(controller(&cmp, "AT")["unstable"], true);
    for other in ["AR", "RF"] {
        for key in ["overshoot_pct", "settling_time_s", "itae"] {
            assert!(metric(&cmp, "PrM", key) < metric(&cmp, other, key), "{other} {key}");
        }
    }
}

#[test]
fn controller_against_itself() {
    let r = Run::new();
    let o = r.exec(&ProjectConfig::rigid(), "t", "tune");
    assert!(o.status.success());
    let rep = r.json("t", "tune_report.json");
    let gains = &rep["result"]["gains"];
    let notch: NotchParams = serde_json::from_value(rep["notch"].clone()).unwrap();

    let mut cfg = ProjectConfig::rigid();
    cfg.baselines.clear();
    cfg.baselines
        .insert("Copy".into(), Baseline::fixed(gains["kp"].as_f64().unwrap(), gains["ti"].as_f64().unwrap(), BaselineNotch::Custom(notch)));
    assert!(r.exec(&cfg, "c", "compare").status.success());
    let cmp = r.json("c", "comparison.json");
    let (a, b) = (controller(&cmp, "PrM"), controller(&cmp, "Copy"));
    assert_eq!(a["metrics"], b["metrics"]);
    assert_eq!(a["margins"], b["margins"]);
    assert_eq!(fs::read(r.path("c").join("step_PrM.csv")).unwrap(), fs::read(r.path("c").join("step_Copy.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let r = Run::new();
    let cfg = ProjectConfig::flexible();
    assert!(r.exec(&cfg, "a", "compare").status.success());
    assert!(r.exec(&cfg, "b", "compare").status.success());
    assert!(r.exec(&cfg, "a", "identify").status.success());
    assert!(r.exec(&cfg, "b", "identify").status.success());
    let (a, b) = (dir_bytes(&r.path("a")), dir_bytes(&r.path("b")));
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs");
    }
}

#[test]
fn seed_flag_changes_the_estimate() {
    let r = Run::new();
    let cfg = ProjectConfig::rigid();
    assert!(r.exec(&cfg, "a", "identify").status.success());
    let file = r.path("a.toml");
    let o = Command::new(BIN).arg("--config").arg(&file).args(["--seed", "7", "--out"]).arg(r.path("b")).arg("identify").output().unwrap();
    assert!(o.status.success());
    assert_ne!(fs::read(r.path("a").join("frf.csv")).unwrap(), fs::read(r.path("b").join("frf.csv")).unwrap());
}

#[test]
fn report_summarizes_outputs() {
    let r = Run::new();
    let cfg = ProjectConfig::rigid();
    assert!(r.exec(&cfg, "c", "compare").status.success());
    let o = r.exec(&cfg, "c", "report");
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("proposed: kp = "));
    for name in ["PrM", "AR", "AT", "RF"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
    assert!(r.path("c").join("report.txt").exists());
}
