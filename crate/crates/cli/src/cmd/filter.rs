use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use forge_core::corpus::{
    decontaminate, filter_repeat_docs, star_filter, word_frequency_filter, FilterVerdict, NgramSet,
    RepeatParams, TokenDoc, DEFAULT_DECONTAM_N, DEFAULT_DECONTAM_THRESHOLD,
};
use rayon::prelude::*;
use serde::Serialize;

use super::parse_usize;
use crate::error::{CliError, Result};
use crate::io::{finish, JsonlDocs, OutputGuard};
use crate::manifest::ManifestBuilder;

/// Documents parsed and judged together before results are written.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Repeat,
    Wordfreq,
    Decontam,
    Stars,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    /// Rules to apply, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "repeat")]
    pub rules: Vec<Rule>,
    #[arg(long, default_value = "13", value_parser = parse_usize)]
    pub nmax: usize,
    #[arg(long, default_value = "32", value_parser = parse_usize)]
    pub min_count: usize,
    /// JSONL of evaluation documents whose n-grams define contamination.
    #[arg(long)]
    pub decontam_ngrams: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DECONTAM_N, value_parser = parse_usize)]
    pub decontam_n: usize,
    #[arg(long, default_value_t = DEFAULT_DECONTAM_THRESHOLD)]
    pub decontam_threshold: f64,
    /// Verdict sidecar; defaults to OUT.verdicts.jsonl.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    pub input: PathBuf,
    pub output: PathBuf,
}

struct Rules {
    repeat: Option<RepeatParams>,
    wordfreq: bool,
    decontam: Option<(NgramSet, f64)>,
    stars: bool,
}

impl Rules {
    fn judge(&self, doc: &TokenDoc) -> forge_core::Result<FilterVerdict> {
        let mut v = FilterVerdict::keep(&doc.id);
        if let Some(p) = &self.repeat {
            v.merge(filter_repeat_docs(doc, p));
        }
        if self.wordfreq {
            // documents without words carry no signal for this rule
            if let Some(text) = doc
                .text
                .as_deref()
                .filter(|t| t.split_whitespace().next().is_some())
            {
                v.merge(word_frequency_filter(&doc.id, text)?);
            }
        }
        if let Some((set, threshold)) = &self.decontam {
            v.merge(decontaminate(doc, set, *threshold)?);
        }
        if self.stars {
            v.merge(star_filter(doc));
        }
        Ok(v)
    }
}

fn load_eval_set(path: &Path, n: usize) -> Result<NgramSet> {
    let mut set = NgramSet::new(n)?;
    for item in JsonlDocs::open(path)? {
        let (_, doc) = item?;
        set.insert_sequence(&doc.tokens);
    }
    Ok(set)
}

fn verdicts_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".verdicts.jsonl");
    PathBuf::from(s)
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("FORGE_THREADS") {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Validation(format!(
                "FORGE_THREADS must be a positive integer, got '{raw}'"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))
}

pub fn run(args: &FilterArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let has = |r| args.rules.contains(&r);
    let decontam = if has(Rule::Decontam) {
        let path = args.decontam_ngrams.as_deref().ok_or_else(|| {
            CliError::Usage("--rules decontam needs --decontam-ngrams FILE".into())
        })?;
        if !(args.decontam_threshold > 0.0 && args.decontam_threshold <= 1.0) {
            return Err(CliError::Validation(format!(
                "--decontam-threshold must lie in (0, 1], got {}",
                args.decontam_threshold
            )));
        }
        manifest.input(path);
        Some((
            load_eval_set(path, args.decontam_n)?,
            args.decontam_threshold,
        ))
    } else {
        None
    };
    let rules = Rules {
        repeat: has(Rule::Repeat)
            .then(|| RepeatParams::new(args.nmax, args.min_count))
            .transpose()?,
        wordfreq: has(Rule::Wordfreq),
        decontam,
        stars: has(Rule::Stars),
    };
    let pool = thread_pool()?;

    let verdict_path = args
        .verdicts
        .clone()
        .unwrap_or_else(|| verdicts_path(&args.output));
    manifest
        .input(&args.input)
        .output(&args.output)
        .output(&verdict_path);
    let mut guard = OutputGuard::new();
    let mut out = guard.create(&args.output)?;
    let mut sidecar = guard.create(&verdict_path)?;
    let mut docs = JsonlDocs::open(&args.input)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut chunk: Vec<(usize, TokenDoc)> = Vec::with_capacity(CHUNK);
    let (mut n_in, mut n_kept) = (0u64, 0u64);

    loop {
        chunk.clear();
        for item in docs.by_ref().take(CHUNK) {
            let (line, doc) = item?;
            if !seen.insert(doc.id.clone()) {
                return Err(CliError::record(
                    &args.input,
                    line,
                    format!("duplicate document id '{}'", doc.id),
                ));
            }
            chunk.push((line, doc));
        }
        if chunk.is_empty() {
            break;
        }
        let verdicts: Vec<std::result::Result<FilterVerdict, CliError>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(line, doc)| {
                    rules
                        .judge(doc)
                        .map_err(|e| CliError::record(&args.input, *line, e))
                })
                .collect()
        });
        for ((_, doc), verdict) in chunk.iter().zip(verdicts) {
            let verdict = verdict?;
            let io_out = CliError::io(&args.output);
            if verdict.kept {
                serde_json::to_writer(&mut out, doc).map_err(|e| io_out(e.into()))?;
                out.write_all(b"\n").map_err(CliError::io(&args.output))?;
                n_kept += 1;
            }
            serde_json::to_writer(&mut sidecar, &verdict)
                .map_err(|e| CliError::io(&verdict_path)(e.into()))?;
            sidecar
                .write_all(b"\n")
                .map_err(CliError::io(&verdict_path))?;
            n_in += 1;
        }
    }
    finish(out, &args.output)?;
    finish(sidecar, &verdict_path)?;
    manifest.resolved(&serde_json::json!({ "documents": n_in, "kept": n_kept }));
    guard.commit();
    Ok(())
}
