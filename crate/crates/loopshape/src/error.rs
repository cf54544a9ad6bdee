use thiserror::Error;

use crate::pitune::TuneResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation diverged at sample {sample}")]
    Divergence { sample: usize },

    #[error("insufficient data: need at least {required} samples, got {got}")]
    InsufficientData { required: usize, got: usize },

    #[error("phase never crosses -180 deg inside the coherent band")]
    NoCrossover,

    #[error("no resonance peak above an antiresonance dip")]
    NoResonance,

    #[error("frequency {f} Hz outside [{lo}, {hi}] Hz")]
    Range { f: f64, lo: f64, hi: f64 },

    #[error("notch center {center} Hz is above a quarter of the sample rate ({limit} Hz)")]
    Sampling { center: f64, limit: f64 },

    #[error("notch design: {0}")]
    Design(String),

    #[error("frequency grids are incompatible: {0}")]
    Grid(String),

    #[error("no crossover-frequency solution: {0}")]
    InfeasibleMargin(String),

    #[error("integral-time argument {arg_deg:.2} deg is outside (0, 90)")]
    PhaseInfeasible { arg_deg: f64 },

    #[error("margins not met after {} iterations", .best.iterations_used)]
    NonConvergence { best: Box<TuneResult> },

    #[error("relay experiment produced no sustained limit cycle")]
    NoOscillation,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable name, used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Divergence { .. } => "divergence",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::NoCrossover => "no_crossover",
            Error::NoResonance => "no_resonance",
            Error::Range { .. } => "range",
            Error::Sampling { .. } => "sampling",
            Error::Design(_) => "design",
            Error::Grid(_) => "grid",
            Error::InfeasibleMargin(_) => "infeasible_margin",
            Error::PhaseInfeasible { .. } => "phase_infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NoOscillation => "no_oscillation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Config(_) => "config",
        }
    }
}
