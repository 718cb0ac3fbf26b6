//! `forge`: command-line front end to the forge toolkit.

mod cmd;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use cmd::filter::FilterArgs;
use cmd::mix::{MixArgs, MixCommand};
use cmd::model::{DiagnoseArgs, GradcheckArgs, SoupArgs, TrainArgs};
use cmd::stats::{FlopsArgs, FootprintArgs, ScheduleArgs, SpikeArgs};
use error::Result;
use manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(
    name = "forge",
    version,
    about = "Pretraining data curation and training-stability toolkit"
)]
struct Cli {
    /// Where to write the run manifest. Defaults to OUTPUT.manifest.json next
    /// to the first output file, or one JSON line on stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a JSONL corpus; writes kept documents and a verdict sidecar.
    Filter(FilterArgs),
    /// Resolve a mixture config into a plan, or sample a plan.
    Mix(MixArgs),
    /// Tabulate a learning-rate schedule as CSV.
    Schedule(ScheduleArgs),
    /// Average checkpoints element-wise.
    Soup(SoupArgs),
    /// Train the reference model and log per-step metrics.
    TrainToy(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Spike score of one column of a metrics CSV.
    Spike(SpikeArgs),
    /// Growth exponents of activations and gradients at initialization.
    DiagnoseInit(DiagnoseArgs),
    /// Training FLOPs as 6 * params * tokens.
    Flops(FlopsArgs),
    /// CO2 and water footprint from energy use.
    Footprint(FootprintArgs),
}

/// Run one subcommand and write its manifest on success.
fn run<A: Serialize>(
    cli: &Cli,
    name: &str,
    args: &A,
    f: impl FnOnce(&mut ManifestBuilder) -> Result<()>,
) -> Result<()> {
    let mut m = ManifestBuilder::new(name, args);
    f(&mut m)?;
    m.write(cli.manifest.as_deref())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Filter(a) => run(cli, "filter", a, |m| cmd::filter::run(a, m)),
        Command::Mix(a) => match &a.command {
            Some(MixCommand::Sample(s)) => {
                run(cli, "mix sample", s, |m| cmd::mix::run_sample(s, m))
            }
            None => run(cli, "mix", a, |m| cmd::mix::run_plan(a, m)),
        },
        Command::Schedule(a) => run(cli, "schedule", a, |m| cmd::stats::run_schedule(a, m)),
        Command::Soup(a) => run(cli, "soup", a, |m| cmd::model::run_soup(a, m)),
        Command::TrainToy(a) => run(cli, "train-toy", a, |m| cmd::model::run_train(a, m)),
        Command::Gradcheck(a) => run(cli, "gradcheck", a, |m| cmd::model::run_gradcheck(a, m)),
        Command::Spike(a) => run(cli, "spike", a, |m| cmd::stats::run_spike(a, m)),
        Command::DiagnoseInit(a) => {
            run(cli, "diagnose-init", a, |m| cmd::model::run_diagnose(a, m))
        }
        Command::Flops(a) => run(cli, "flops", a, |m| cmd::stats::run_flops(a, m)),
        Command::Footprint(a) => run(cli, "footprint", a, |m| cmd::stats::run_footprint(a, m)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("forge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
