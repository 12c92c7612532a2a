// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spdc_core::scan::ScanVariable;
use spdc_core::Error;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "spdc-delay", version, about = "Signal-idler delay distributions of type-II SPDC")]
pub struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed; overrides `seed` from the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy, Default)]
pub struct InstrumentFlags {
    /// Run the jitter, histogram and fit chain.
    #[arg(long)]
    pub instrument: bool,
    /// Detector timing jitter; implies --instrument.
    #[arg(long, value_name = "X")]
    pub jitter_fwhm_ps: Option<f64>,
    /// Histogram bin width; implies --instrument.
    #[arg(long, value_name = "X")]
    pub bins_ps: Option<f64>,
}

impl InstrumentFlags {
    pub fn enabled(&self) -> bool {
        self.instrument || self.jitter_fwhm_ps.is_some() || self.bins_ps.is_some()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spatio-temporal correlation map and phase-matching locus.
    Correlations,
    /// Delay distribution at one crystal position.
    Delay {
        /// Crystal position; overrides the configuration.
        #[arg(long, value_name = "MM", allow_hyphen_values = true)]
        z_c_mm: Option<f64>,
        /// Check the FFT result against direct summation.
        #[arg(long)]
        oracle: bool,
        /// Also write the analytic plane-wave model on the same delays.
        #[arg(long)]
        toy_overlay: bool,
        #[command(flatten)]
        instrument: InstrumentFlags,
    },
    /// Mean delay and relative rate versus a swept parameter.
    Scan {
        #[arg(long, value_enum)]
        variable: Option<VariableArg>,
        #[arg(long, allow_hyphen_values = true)]
        start: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        stop: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[command(flatten)]
        instrument: InstrumentFlags,
    },
    /// Fit histogram CSV files; two files also give their relative delay.
    Fit {
        #[arg(required = true, num_args = 1..=2, value_name = "HISTOGRAM")]
        files: Vec<PathBuf>,
        /// Jitter of the histograms, bounding the fitted widths; defaults to
        /// the configured instrument.
        #[arg(long, value_name = "X")]
        jitter_fwhm_ps: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum VariableArg {
    #[value(name = "z_c")]
    ZC,
    #[value(name = "z_cl")]
    ZCl,
    #[value(name = "temperature")]
    Temperature,
}

impl From<VariableArg> for ScanVariable {
    fn from(v: VariableArg) -> Self {
        match v {
            VariableArg::ZC => ScanVariable::ZC,
            VariableArg::ZCl => ScanVariable::ZCl,
            VariableArg::Temperature => ScanVariable::Temperature,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Io(_) => 2,
        Error::FitNotConverged { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spdc-delay: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
