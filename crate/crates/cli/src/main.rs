//! `aaq`: quantize activations, verify fixtures, simulate the accelerator,
//! sweep its configuration space and tabulate memory and compute costs.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_USAGE: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// A fixture or check did not match.
    Verify(String),
    Io(String),
    Usage(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Io(_) => EXIT_IO,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verify(m) | CliError::Io(m) | CliError::Usage(m) => f.write_str(m),
        }
    }
}

/// Library errors split into the stable exit-code classes.
impl From<aaq_core::Error> for CliError {
    fn from(e: aaq_core::Error) -> Self {
        use aaq_core::Error as E;
        match e {
            E::Io(_) | E::Corruption { .. } | E::NonFinite { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "aaq",
    version,
    about = "Token-wise activation quantization and accelerator model"
)]
pub struct Cli {
    /// Flat key = value configuration file (sim., workload., quant. keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every synthetic input.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct WorkloadFlags {
    /// Sequence length.
    #[arg(long)]
    pub ns: u64,
    /// Scheme table, e.g. A:8:4,B:4:4,C:4:0. Groups left out keep the config value.
    #[arg(long)]
    pub schemes: Option<String>,
    /// Keep every activation at 16 bits.
    #[arg(long, conflicts_with = "schemes")]
    pub unquantized: bool,
    /// Chunk attention and transition intermediates four ways.
    #[arg(long)]
    pub chunk4: bool,
    /// Materialize attention scores instead of streaming them.
    #[arg(long)]
    pub no_streaming_mha: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a tensor dump (or a seeded synthetic corpus) into token blocks.
    Quantize {
        /// Tensor dump to quantize.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Generate this many heavy-tailed tokens from --seed instead of reading a file.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Activation group whose scheme to use.
        #[arg(long, default_value = "C")]
        group: String,
        /// Explicit scheme as bits:outliers, overriding --group.
        #[arg(long)]
        scheme: Option<String>,
        /// Base name of the outputs.
        #[arg(long, default_value = "quantized")]
        name: String,
    },
    /// Replay the golden fixtures.
    Verify {
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        /// Regenerate the fixtures from the current code instead of checking them.
        #[arg(long)]
        bless: bool,
    },
    /// Simulate one folding-block trunk.
    Simulate {
        #[command(flatten)]
        workload: WorkloadFlags,
        /// Also write the trace as JSON to this path.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        report: ReportFormat,
    },
    /// Simulate a grid of RMPU and VVPU counts.
    Sweep {
        /// Sequence lengths, comma separated.
        #[arg(long, default_value = "512")]
        ns: String,
        /// RMPU counts as a list (8,16,32) or an inclusive range (1:64).
        #[arg(long, default_value = "32")]
        rmpus: String,
        /// VVPUs per RMPU, same syntax as --rmpus.
        #[arg(long, default_value = "4")]
        vvpus: String,
        /// Scheme table for the simulated traces, as in `simulate`.
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Tabulate weights, peak memory, traffic and INT8-equivalent operations.
    Cost {
        /// Sequence lengths, comma separated.
        #[arg(long, default_value = "256,512,1024,2048")]
        ns: String,
        /// vanilla, chunk4, aaq or all.
        #[arg(long, default_value = "all")]
        variant: String,
    },
    /// Export the per-node trace of one configuration.
    Trace {
        #[command(flatten)]
        workload: WorkloadFlags,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
