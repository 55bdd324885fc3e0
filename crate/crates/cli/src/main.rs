use clap::{Parser, Subcommand, ValueEnum};
use defrisk_cli::report::OutputFormat;
use defrisk_cli::{run_price, run_simulate, run_sweep};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

/// Pricing and verification engine for default-risky, collateralized
/// derivatives.
#[derive(Parser)]
#[command(name = "defrisk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for reports and side files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's engines and cross-check their prices.
    Price { scenario: PathBuf },
    /// Run the scenario once per value of a numeric parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted path of the field to sweep, e.g. parties.b.hazard_rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Run the replication-portfolio simulation.
    Simulate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format.into();
    let result = match &cli.command {
        Command::Price { scenario } => run_price(scenario, &cli.out, format),
        Command::Sweep {
            scenario,
            param,
            values,
        } => run_sweep(scenario, param, values, &cli.out, format),
        Command::Simulate { scenario } => run_simulate(scenario, &cli.out, format),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
