use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use forge_core::mixture::{
    draw_schedule, microanneal_plan, resolve_config, DocSource, MixtureConfig, MixturePlan,
};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{finish, open, parse_doc, print_json, read_json, OutputGuard};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct MixArgs {
    #[command(subcommand)]
    #[serde(skip)]
    pub command: Option<MixCommand>,
    /// Mixture config: {"sources": [...], "total_tokens"?}.
    #[arg(long, required = true)]
    pub config: Option<PathBuf>,
    /// Read the config as a micro-anneal spec (targets plus background).
    #[arg(long)]
    pub microanneal: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plan output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MixCommand {
    /// Stream the documents of a plan in seeded interleaved order.
    Sample(SampleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Interleave seed; defaults to the seed stored in the plan.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_plan(args: &MixArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("mix needs --config".into()))?;
    manifest.input(path).seed(args.seed);
    let mut plan = if args.microanneal {
        microanneal_plan(&read_json(path)?)?
    } else {
        let config: MixtureConfig = read_json(path)?;
        resolve_config(&config)?
    };
    plan.seed = args.seed;
    plan.selection_seed = args.seed;
    match &args.out {
        Some(out) => {
            manifest.output(out);
            let mut guard = OutputGuard::new();
            let mut w = guard.create(out)?;
            serde_json::to_writer_pretty(&mut w, &plan).map_err(|e| CliError::io(out)(e.into()))?;
            writeln!(w).map_err(CliError::io(out))?;
            finish(w, out)?;
            guard.commit();
        }
        None => print_json(&plan)?,
    }
    Ok(())
}

/// Byte offset and token count of every document in a JSONL file, so the
/// sampler can plan over a corpus without holding it in memory.
struct IndexedCorpus {
    path: PathBuf,
    offsets: Vec<u64>,
    lines: Vec<usize>,
    tokens: Vec<u64>,
}

impl IndexedCorpus {
    fn build(path: &Path) -> Result<Self> {
        let mut reader = open(path)?;
        let mut idx = IndexedCorpus {
            path: path.to_path_buf(),
            offsets: Vec::new(),
            lines: Vec::new(),
            tokens: Vec::new(),
        };
        let (mut offset, mut line_no) = (0u64, 0usize);
        let mut buf = String::new();
        loop {
            buf.clear();
            line_no += 1;
            let n = reader.read_line(&mut buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidData => CliError::record(path, line_no, "invalid UTF-8"),
                _ => CliError::io(path)(e),
            })?;
            if n == 0 {
                break;
            }
            if !buf.trim().is_empty() {
                let doc = parse_doc(path, line_no, buf.trim_end())?;
                idx.offsets.push(offset);
                idx.lines.push(line_no);
                idx.tokens.push(doc.tokens.len() as u64);
            }
            offset += n as u64;
        }
        Ok(idx)
    }

    fn read_doc(&self, file: &mut BufReader<File>, doc: usize, buf: &mut String) -> Result<()> {
        file.seek(SeekFrom::Start(self.offsets[doc]))
            .map_err(CliError::io(&self.path))?;
        buf.clear();
        file.read_line(buf).map_err(CliError::io(&self.path))?;
        // the file changed under us if the record no longer parses
        parse_doc(&self.path, self.lines[doc], buf.trim_end())?;
        Ok(())
    }
}

impl DocSource for IndexedCorpus {
    fn num_docs(&self) -> usize {
        self.offsets.len()
    }

    fn doc_tokens(&self, idx: usize) -> u64 {
        self.tokens[idx]
    }
}

fn resolve_source(plan_path: &Path, source: &Path) -> PathBuf {
    if source.is_absolute() {
        source.to_path_buf()
    } else {
        plan_path.parent().unwrap_or(Path::new(".")).join(source)
    }
}

pub fn run_sample(args: &SampleArgs, manifest: &mut ManifestBuilder) -> Result<()> {
    let plan: MixturePlan = read_json(&args.plan)?;
    let seed = args.seed.unwrap_or(plan.seed);
    manifest.input(&args.plan).seed(seed);

    let mut corpora = Vec::with_capacity(plan.entries.len());
    for entry in &plan.entries {
        let rel = entry.path.as_deref().ok_or_else(|| {
            CliError::Validation(format!("plan source '{}' has no path", entry.name))
        })?;
        let path = resolve_source(&args.plan, Path::new(rel));
        manifest.input(&path);
        corpora.push(IndexedCorpus::build(&path)?);
    }
    let refs: Vec<&IndexedCorpus> = corpora.iter().collect();
    let draws = draw_schedule(&plan, &refs, seed)?;

    manifest.output(&args.out);
    let mut guard = OutputGuard::new();
    let mut out = guard.create(&args.out)?;
    let mut files: Vec<BufReader<File>> = corpora
        .iter()
        .map(|c| open(&c.path))
        .collect::<Result<_>>()?;
    let mut buf = String::new();
    for d in &draws {
        corpora[d.source].read_doc(&mut files[d.source], d.doc, &mut buf)?;
        out.write_all(buf.trim_end().as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(CliError::io(&args.out))?;
    }
    finish(out, &args.out)?;
    manifest.resolved(&serde_json::json!({ "documents": draws.len(), "interleave_seed": seed }));
    guard.commit();
    Ok(())
}
