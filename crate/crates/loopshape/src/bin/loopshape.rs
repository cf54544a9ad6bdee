use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loopshape::cli::{self, ProjectConfig, Scenario};
use loopshape::plant::SimTrace;
use loopshape::Error;

#[derive(Parser)]
#[command(name = "loopshape", version, about = "Notch and PI speed-loop design for two-mass servo drives")]
struct Args {
    /// Scenario file (TOML). Without it the built-in rigid scenario is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the excitation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a scenario file with every default spelled out.
    Init {
        #[arg(long, value_enum, default_value = "rigid")]
        scenario: Scenario,
        #[arg(long)]
        force: bool,
    },
    /// White-noise experiment and Welch estimate.
    Identify {
        /// Identify from a recorded trace CSV instead of simulating.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Notch and PI design.
    Tune {
        /// Use an existing frf.csv instead of identifying.
        #[arg(long)]
        frf: Option<PathBuf>,
    },
    /// Open-loop simulation of the configured excitation.
    Simulate,
    /// Step responses of the proposed and baseline controllers.
    Compare,
    /// Summarize the reports in the output directory.
    Report,
}

fn run(args: Args) -> loopshape::Result<()> {
    if let Cmd::Init { scenario, force } = args.cmd {
        let path = args.config.unwrap_or_else(|| PathBuf::from("loopshape.toml"));
        if path.exists() && !force {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
        }
        let mut cfg = ProjectConfig::scenario(scenario);
        if let Some(s) = args.seed {
            cfg.excitation.seed = s;
        }
        if let Some(o) = args.out {
            cfg.output_dir = o;
        }
        fs::write(&path, cfg.to_toml())?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let mut cfg = match &args.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::rigid(),
    };
    if let Some(s) = args.seed {
        cfg.excitation.seed = s;
    }
    if let Some(o) = args.out {
        cfg.output_dir = o;
    }

    match args.cmd {
        Cmd::Init { .. } => unreachable!(),
        Cmd::Identify { trace } => {
            let trace = trace.map(|p| SimTrace::read_csv(fs::File::open(p)?)).transpose()?;
            println!("{}", cli::cmd_identify(&cfg, trace)?);
        }
        Cmd::Tune { frf } => {
            let frf = frf.map(|p| cli::read_frf_csv(fs::File::open(p)?)).transpose()?;
            let d = cli::cmd_tune(&cfg, frf)?;
            let r = &d.result;
            println!("{}", cli::feature_summary(&d.features));
            println!(
                "kp = {:.4} N·m·s/rad, ti = {:.3} ms, f_c = {:.1} Hz, PM = {:.2} deg, AM = {:.2} dB after {} iteration(s)",
                r.gains.kp,
                r.gains.ti * 1e3,
                r.crossover_frequency,
                r.achieved.phase_margin_deg.unwrap_or(f64::NAN),
                r.achieved.gain_margin_db.unwrap_or(f64::NAN),
                r.iterations_used
            );
        }
        Cmd::Simulate => {
            let tr = cli::cmd_simulate(&cfg)?;
            println!("wrote {} samples to {}", tr.len(), cfg.output_dir.join("trace.csv").display());
        }
        Cmd::Compare => {
            let runs = cli::cmd_compare(&cfg)?;
            for r in runs {
                match r.metrics {
                    Some(m) => println!(
                        "{:<6} overshoot {:6.2} %  settling {:7.2} ms  ITAE {:.5}{}",
                        r.name,
                        m.overshoot_pct,
                        m.settling_time_s * 1e3,
                        m.itae,
                        if r.unstable { "  unstable" } else { "" }
                    ),
                    None => println!("{:<6} unstable ({})", r.name, r.error.unwrap_or_default()),
                }
            }
        }
        Cmd::Report => print!("{}", cli::cmd_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
