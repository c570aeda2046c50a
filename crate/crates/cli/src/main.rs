//! `evdemand`: run the pipeline stages from a TOML run configuration.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evdemand::config::{Overrides, RunConfig};
use evdemand::ingest::DayType;
use evdemand::pipeline::{self, Source};

#[derive(Parser)]
#[command(
    name = "evdemand",
    version,
    about = "EV trip-chain forecasting and charging-demand simulation"
)]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "evdemand.toml")]
    config: PathBuf,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides the config file.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter the survey files, build trip chains and supervised rows.
    Ingest,
    /// Split rows, train the model suite and write the evaluation table.
    Train {
        /// Also train every model without the duration feature.
        #[arg(long)]
        ablate_duration: bool,
    },
    /// Re-evaluate persisted models on the held-out rows.
    Evaluate,
    /// Simulate charging demand from observed or predicted trips.
    Simulate {
        #[arg(long, default_value = "actual")]
        source: Source,
        /// Model used for predicted trips; overrides the config file.
        #[arg(long)]
        model: Option<String>,
    },
    /// Summarize the run directory into report.txt.
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> evdemand::Result<()> {
    let model = match &cli.command {
        Command::Simulate { model, .. } => model.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.output_dir,
        model,
    };
    let cfg = RunConfig::load(&cli.config, &overrides)?;
    match cli.command {
        Command::Ingest => {
            let out = pipeline::run_ingest(&cfg)?;
            let r = &out.report;
            println!(
                "raw trips {}, EVs {}, kept EV trips {} (WD {}, WED {})",
                r.raw_trip_count, r.ev_count, r.filtered_trip_count, r.wd_count, r.wed_count
            );
            println!(
                "rejected rows {}, flagged rows {}",
                r.rejected_rows.len(),
                r.flagged_rows.len()
            );
            println!(
                "person chains {}, vehicle chains {}, chain splits {}, supervised rows WD {} / WED {}",
                out.person_chains,
                out.vehicle_chains,
                out.anomalies,
                out.rows.get(&DayType::Weekday).unwrap_or(&0),
                out.rows.get(&DayType::Weekend).unwrap_or(&0)
            );
        }
        Command::Train { ablate_duration } => {
            print!("{}", pipeline::run_train(&cfg, ablate_duration)?)
        }
        Command::Evaluate => print!("{}", pipeline::run_evaluate(&cfg)?),
        Command::Simulate { source, .. } => {
            let fleet = pipeline::run_simulate(&cfg, source)?;
            print!("{}", pipeline::summary_text(source, &fleet));
        }
        Command::Report => print!("{}", pipeline::run_report(&cfg)?),
    }
    Ok(())
}
