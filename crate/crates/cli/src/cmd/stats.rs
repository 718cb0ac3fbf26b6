use std::io::{self, Write};
use std::path::PathBuf;

use clap::Args;
use forge_core::diagnostics::{
    flops_estimate, footprint, spike_score, FootprintInput, DEFAULT_SIGMA, DEFAULT_WINDOW,
};
use forge_core::schedule::ScheduleSpec;
use serde::Serialize;

use super::{parse_count, parse_usize};
use crate::error::{CliError, Result};
use crate::io::{finish, open, print_json, read_json, OutputGuard};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Rows are written for steps 0..=STEPS.
    #[arg(long, value_parser = parse_count)]
    pub steps: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct ScheduleRow {
    step: u64,
    tokens: u64,
    lr: f64,
}

fn write_schedule<W: Write>(w: W, rows: &[(u64, u64, f64)]) -> Result<W, csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    for &(step, tokens, lr) in rows {
        w.serialize(ScheduleRow { step, tokens, lr })?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn run_schedule(args: &ScheduleArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let spec: ScheduleSpec = read_json(&args.spec)?;
    manifest.input(&args.spec).resolved(&spec);
    let rows = spec.table(args.steps)?;
    match &args.csv {
        Some(path) => {
            manifest.output(path);
            let mut guard = OutputGuard::new();
            let file = guard.create(path)?;
            let file = write_schedule(file, &rows).map_err(|e| CliError::io(path)(e.into()))?;
            finish(file, path)?;
            guard.commit();
        }
        None => {
            let out = write_schedule(io::stdout().lock(), &rows)
                .map_err(|e| CliError::io("<stdout>")(e.into()))?;
            finish(out, "<stdout>".as_ref())?;
        }
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SpikeArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = "grad_norm")]
    pub column: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW, value_parser = parse_usize)]
    pub window: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
}

pub fn run_spike(args: &SpikeArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    manifest.input(&args.csv);
    let mut reader = csv::Reader::from_reader(open(&args.csv)?);
    let csv_err = |e: csv::Error| match e.position() {
        Some(pos) => CliError::record(&args.csv, pos.line() as usize, e),
        None => CliError::Validation(format!("{}: {e}", args.csv.display())),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == args.column)
        .ok_or_else(|| {
            CliError::Validation(format!(
                "{}: no column named '{}'",
                args.csv.display(),
                args.column
            ))
        })?;
    let mut series = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw = rec.get(col).unwrap_or("");
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::record(&args.csv, line, format!("'{raw}' is not a number")))?;
        series.push(v);
    }
    let report = spike_score(&series, args.window, args.sigma)?.named(args.column.clone());
    print_json(&report)
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    /// Parameter count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    pub params: u64,
    /// Training tokens; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    pub tokens: u64,
    /// Significant digits printed.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=17))]
    pub digits: u8,
}

pub fn format_sig(x: f64, digits: u8) -> String {
    format!("{:.*e}", usize::from(digits - 1), x)
}

pub fn run_flops(args: &FlopsArgs, _manifest: &mut ManifestBuilder) -> Result<()> {
    let f = flops_estimate(args.params as f64, args.tokens as f64)?;
    println!("{}", format_sig(f, args.digits));
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct FootprintArgs {
    /// Input: {"gpu_power_mwh", "pue", "carbon_intensity_kg_per_kwh", "wue_onsite_l_per_kwh"?, "wue_offsite_l_per_kwh"?}.
    #[arg(long)]
    pub json: PathBuf,
}

pub fn run_footprint(args: &FootprintArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let input: FootprintInput = read_json(&args.json)?;
    manifest.input(&args.json).resolved(&input);
    print_json(&footprint(&input)?)
}
