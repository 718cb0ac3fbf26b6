use std::cell::RefCell;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::rc::Rc;

use clap::{Args, ValueEnum};
use forge_core::corpus::TokenDoc;
use forge_core::diagnostics::growth_exponent;
use forge_core::model::{
    grad_check_stencil, init_checkpoint, random_batch, read_checkpoint, sidecar_path, soup,
    synthetic_mixture_stream, train_toy, write_checkpoint, InitScheme, ModelParams, Stencil,
};
use forge_core::schedule::ScheduleSpec;
use serde::Serialize;

use super::{load_run_config, parse_count, parse_usize};
use crate::error::{CliError, Result};
use crate::io::{finish, print_json, read_json, JsonlDocs, OutputGuard};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct SoupArgs {
    #[arg(required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_soup(args: &SoupArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let mut cks = Vec::with_capacity(args.checkpoints.len());
    for p in &args.checkpoints {
        manifest.input(p);
        cks.push(read_checkpoint(p).map_err(|e| match e {
            e if e.is_io() => e.into(),
            e => CliError::Validation(format!("{}: {e}", p.display())),
        })?);
    }
    let souped = soup(&cks)?;
    manifest.output(&args.out);
    let mut guard = OutputGuard::new();
    guard.track(&args.out);
    guard.track(&sidecar_path(&args.out));
    write_checkpoint(&args.out, &souped)?;
    guard.commit();
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Model config, optionally wrapped as {"model": ..., "train": ...}.
    #[arg(long)]
    pub config: PathBuf,
    /// Learning-rate schedule spec.
    #[arg(long)]
    pub sched: PathBuf,
    #[arg(long, value_parser = parse_count)]
    pub steps: u64,
    /// Per-step CSV with header step,loss,grad_norm.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSONL training documents, cycled as needed; a synthetic mixture when
    /// absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write the final checkpoint here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Endless pass-after-pass reader over a JSONL file. The first parse or I/O
/// error ends the stream and is kept for the caller.
struct CyclingDocs {
    path: PathBuf,
    inner: Option<JsonlDocs<BufReader<File>>>,
    error: Rc<RefCell<Option<CliError>>>,
    yielded: bool,
}

impl Iterator for CyclingDocs {
    type Item = TokenDoc;

    fn next(&mut self) -> Option<TokenDoc> {
        loop {
            if self.inner.is_none() {
                match JsonlDocs::open(&self.path) {
                    Ok(docs) => self.inner = Some(docs),
                    Err(e) => {
                        *self.error.borrow_mut() = Some(e);
                        return None;
                    }
                }
            }
            match self.inner.as_mut()?.next() {
                Some(Ok((_, doc))) => {
                    self.yielded = true;
                    return Some(doc);
                }
                Some(Err(e)) => {
                    *self.error.borrow_mut() = Some(e);
                    return None;
                }
                None if self.yielded => {
                    self.yielded = false;
                    self.inner = None;
                }
                None => return None,
            }
        }
    }
}

#[derive(Serialize)]
struct MetricsRow {
    step: u64,
    loss: f64,
    grad_norm: f64,
}

pub fn run_train(args: &TrainArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let sched: ScheduleSpec = read_json(&args.sched)?;
    manifest
        .input(&args.config)
        .input(&args.sched)
        .seed(cfg.train.seed);

    let error = Rc::new(RefCell::new(None));
    let outcome = match &args.data {
        Some(path) => {
            manifest.input(path);
            let docs = CyclingDocs {
                path: path.clone(),
                inner: None,
                error: Rc::clone(&error),
                yielded: false,
            };
            train_toy(&cfg.model, &cfg.train, docs, &sched, args.steps)
        }
        None => {
            let docs = synthetic_mixture_stream(cfg.model.vocab_size, cfg.train.seed)?;
            train_toy(&cfg.model, &cfg.train, docs, &sched, args.steps)
        }
    };
    if let Some(e) = error.borrow_mut().take() {
        return Err(e);
    }
    let outcome = outcome?;

    manifest.output(&args.metrics);
    let mut guard = OutputGuard::new();
    let file = guard.create(&args.metrics)?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::io(&args.metrics)(e.into());
    for m in &outcome.metrics {
        w.serialize(MetricsRow {
            step: m.step,
            loss: m.loss,
            grad_norm: m.grad_norm,
        })
        .map_err(csv_err)?;
    }
    let file = w
        .into_inner()
        .map_err(|e| CliError::io(&args.metrics)(e.into_error()))?;
    finish(file, &args.metrics)?;
    if let Some(out) = &args.out {
        manifest.output(out);
        guard.track(out);
        guard.track(&sidecar_path(out));
        write_checkpoint(out, &outcome.checkpoint)?;
    }
    manifest.resolved(&serde_json::json!({ "model": cfg.model.resolved(), "train": cfg.train, "schedule": sched }));
    guard.commit();
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilArg {
    FivePoint,
    Central,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub perturbation: f64,
    #[arg(long, value_enum, default_value = "five-point")]
    pub stencil: StencilArg,
    /// Exit with status 1 when the worst relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run_gradcheck(args: &GradcheckArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let cfg = load_run_config(&args.config)?.model;
    manifest
        .input(&args.config)
        .seed(args.seed)
        .resolved(&cfg.resolved());
    let params = ModelParams::<f64>::from_checkpoint(&init_checkpoint(&cfg, args.seed)?)?;
    let stencil = match args.stencil {
        StencilArg::FivePoint => Stencil::FivePoint,
        StencilArg::Central => Stencil::Central,
    };
    let report = grad_check_stencil(
        &params,
        &random_batch(&cfg, args.seed),
        args.perturbation,
        stencil,
    )?;
    print_json(&report)?;
    if report.max_rel_error > args.tolerance {
        return Err(CliError::Validation(format!(
            "max relative error {:e} exceeds tolerance {:e}",
            report.max_rel_error, args.tolerance
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Standard,
    Scaled,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    pub init: InitArg,
    #[arg(long, default_value = "50", value_parser = parse_usize)]
    pub docs: usize,
    /// Tokens per document; the model's max_seq_len when absent.
    #[arg(long, value_parser = parse_usize)]
    pub seq_len: Option<usize>,
    /// Weights come from this seed, documents from seed + 1.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_diagnose(args: &DiagnoseArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let cfg = load_run_config(&args.config)?.model;
    let init = match args.init {
        InitArg::Standard => InitScheme::Standard002,
        InitArg::Scaled => InitScheme::Scaled0424,
    };
    manifest
        .input(&args.config)
        .seed(args.seed)
        .resolved(&cfg.resolved());
    let seq_len = args.seq_len.unwrap_or(cfg.max_seq_len);
    let report = growth_exponent(
        &cfg,
        init,
        args.docs,
        seq_len,
        args.seed,
        args.seed.wrapping_add(1),
    )?;
    print_json(&report)
}
