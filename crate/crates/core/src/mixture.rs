//! Multi-source data mixtures.
//!
//! A mixture is declared as a list of sources, each with the number of
//! tokens it holds and the fraction of it to use (`source_pct`, where `4.0`
//! means four full passes). Planning turns that into per-source token
//! budgets and mix shares; sampling turns a plan plus the actual corpora into
//! a seeded, reproducible interleaved document stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenDoc;
use crate::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub available_tokens: u64,
    /// Fraction of the source to draw; values above 1.0 repeat the data.
    pub source_pct: f64,
}

impl SourceDecl {
    pub fn new(name: impl Into<String>, available_tokens: u64, source_pct: f64) -> Self {
        SourceDecl {
            name: name.into(),
            path: None,
            available_tokens,
            source_pct,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.available_tokens == 0 {
            return Err(ForgeError::validation(format!(
                "source '{}': available_tokens must be positive",
                self.name
            )));
        }
        if !(self.source_pct.is_finite() && self.source_pct > 0.0) {
            return Err(ForgeError::validation(format!(
                "source '{}': source_pct must be positive, got {}",
                self.name, self.source_pct
            )));
        }
        Ok(())
    }

    fn requested_tokens(&self) -> f64 {
        self.available_tokens as f64 * self.source_pct
    }
}

/// On-disk mixture configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub sources: Vec<SourceDecl>,
    /// When set, budgets are rescaled proportionally to hit this total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub available_tokens: u64,
    pub source_pct: f64,
    pub drawn_tokens: u64,
    /// Share of the mixture in percentage points.
    pub mix_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub entries: Vec<PlanEntry>,
    pub total_tokens: u64,
    /// Interleave seed used by `forge mix sample` when none is given.
    #[serde(default)]
    pub seed: u64,
    /// Seed for choosing which documents fill fractional passes. Kept apart
    /// from the interleave seed so reshuffled runs see the same documents.
    #[serde(default)]
    pub selection_seed: u64,
}

impl MixturePlan {
    fn from_budgets(decls: &[SourceDecl], budgets: Vec<u64>) -> Result<Self> {
        let total_tokens: u64 = budgets.iter().sum();
        if total_tokens == 0 {
            return Err(ForgeError::validation("mixture resolves to zero tokens"));
        }
        let entries = decls
            .iter()
            .zip(budgets)
            .map(|(d, drawn)| PlanEntry {
                name: d.name.clone(),
                path: d.path.clone(),
                available_tokens: d.available_tokens,
                source_pct: drawn as f64 / d.available_tokens as f64,
                drawn_tokens: drawn,
                mix_pct: 100.0 * drawn as f64 / total_tokens as f64,
            })
            .collect();
        Ok(MixturePlan {
            entries,
            total_tokens,
            seed: 0,
            selection_seed: 0,
        })
    }

    pub fn entry(&self, name: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Resolve declared sources into token budgets: `drawn = available * source_pct`
/// rounded to whole tokens, and `mix_pct = drawn / total`.
pub fn resolve_mixture(sources: &[SourceDecl]) -> Result<MixturePlan> {
    if sources.is_empty() {
        return Err(ForgeError::validation("mixture needs at least one source"));
    }
    for s in sources {
        s.validate()?;
    }
    let budgets = sources
        .iter()
        .map(|s| s.requested_tokens().round() as u64)
        .collect();
    let mut plan = MixturePlan::from_budgets(sources, budgets)?;
    // keep the declared fraction rather than the rounded one
    for (e, s) in plan.entries.iter_mut().zip(sources) {
        e.source_pct = s.source_pct;
    }
    Ok(plan)
}

/// Resolve a config file, applying the optional `total_tokens` rescale.
pub fn resolve_config(config: &MixtureConfig) -> Result<MixturePlan> {
    let plan = resolve_mixture(&config.sources)?;
    match config.total_tokens {
        None => Ok(plan),
        Some(0) => Err(ForgeError::validation("total_tokens must be positive")),
        Some(total) => {
            let weights: Vec<f64> = plan.entries.iter().map(|e| e.drawn_tokens as f64).collect();
            let budgets = apportion(total, &weights);
            MixturePlan::from_budgets(&config.sources, budgets)
        }
    }
}

/// Split `total` into whole-token parts proportional to `weights`, with the
/// parts summing exactly to `total` (largest-remainder rounding).
fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut short = total.saturating_sub(parts.iter().sum());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        parts[i] += 1;
        short -= 1;
    }
    parts
}

/// A short anneal mixing candidate sources with general background data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroAnnealSpec {
    pub target_sources: Vec<SourceDecl>,
    pub background_source: SourceDecl,
    /// Share of the mix taken by the background source.
    #[serde(default = "MicroAnnealSpec::default_ratio")]
    pub ratio: f64,
    pub total_tokens: u64,
}

impl MicroAnnealSpec {
    fn default_ratio() -> f64 {
        0.5
    }

    /// Size the anneal so that every target token is used once the
    /// background takes `ratio` of the mix.
    pub fn using_all_targets(
        target_sources: Vec<SourceDecl>,
        background_source: SourceDecl,
        ratio: f64,
    ) -> Self {
        let targets: f64 = target_sources
            .iter()
            .map(SourceDecl::requested_tokens)
            .sum();
        let total_tokens = (targets / (1.0 - ratio)).round() as u64;
        MicroAnnealSpec {
            target_sources,
            background_source,
            ratio,
            total_tokens,
        }
    }
}

/// Plan a micro-anneal: the background gets `ratio * total_tokens`, and the
/// targets split the remainder in proportion to their requested tokens.
/// The background entry comes last.
pub fn microanneal_plan(spec: &MicroAnnealSpec) -> Result<MixturePlan> {
    if spec.target_sources.is_empty() {
        return Err(ForgeError::validation(
            "micro-anneal needs at least one target source",
        ));
    }
    for s in spec.target_sources.iter().chain([&spec.background_source]) {
        s.validate()?;
    }
    if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(ForgeError::validation(format!(
            "background ratio must lie in (0, 1), got {}",
            spec.ratio
        )));
    }
    if spec.total_tokens == 0 {
        return Err(ForgeError::validation("total_tokens must be positive"));
    }

    let background = (spec.ratio * spec.total_tokens as f64).round() as u64;
    let remainder = spec.total_tokens - background;
    let weights: Vec<f64> = spec
        .target_sources
        .iter()
        .map(SourceDecl::requested_tokens)
        .collect();
    let available: f64 = weights.iter().sum();
    if remainder as f64 > available.round() {
        return Err(ForgeError::validation(format!(
            "targets provide {available:.0} tokens but the plan needs {remainder}"
        )));
    }
    if background as f64 > spec.background_source.requested_tokens().round() {
        return Err(ForgeError::validation(format!(
            "background source '{}' provides {:.0} tokens but the plan needs {background}",
            spec.background_source.name,
            spec.background_source.requested_tokens()
        )));
    }

    let mut budgets = apportion(remainder, &weights);
    budgets.push(background);
    let decls: Vec<SourceDecl> = spec
        .target_sources
        .iter()
        .cloned()
        .chain([spec.background_source.clone()])
        .collect();
    MixturePlan::from_budgets(&decls, budgets)
}

/// What the sampler needs to know about a corpus: how many documents it has
/// and how long each one is.
pub trait DocSource {
    fn num_docs(&self) -> usize;
    fn doc_tokens(&self, idx: usize) -> u64;
}

impl DocSource for [TokenDoc] {
    fn num_docs(&self) -> usize {
        self.len()
    }

    fn doc_tokens(&self, idx: usize) -> u64 {
        self[idx].tokens.len() as u64
    }
}

impl DocSource for Vec<TokenDoc> {
    fn num_docs(&self) -> usize {
        self.len()
    }

    fn doc_tokens(&self, idx: usize) -> u64 {
        self[idx].tokens.len() as u64
    }
}

/// One emitted document: index into the plan's sources and into that corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Draw {
    pub source: usize,
    pub doc: usize,
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pick documents for one source until its budget is reached. Each pass over
/// the corpus is a seeded permutation, so integral repeat factors use every
/// document exactly that many times and fractional passes take a random
/// subset.
fn select_docs<S: DocSource + ?Sized>(
    entry: &PlanEntry,
    source_idx: usize,
    corpus: &S,
    selection_seed: u64,
) -> Result<Vec<usize>> {
    let budget = entry.drawn_tokens;
    if budget == 0 {
        return Ok(Vec::new());
    }
    let corpus_tokens: u64 = (0..corpus.num_docs()).map(|i| corpus.doc_tokens(i)).sum();
    let exhausted = |drawn| ForgeError::Exhausted {
        source_name: entry.name.clone(),
        drawn,
        budget,
    };
    if corpus_tokens == 0 {
        return Err(exhausted(0));
    }
    if entry.source_pct <= 1.0 && corpus_tokens < budget {
        return Err(exhausted(corpus_tokens));
    }

    let mut selected = Vec::new();
    let mut drawn = 0u64;
    let mut pass = 0u64;
    while drawn < budget {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(selection_seed, source_idx as u64, pass));
        let mut perm: Vec<usize> = (0..corpus.num_docs()).collect();
        perm.shuffle(&mut rng);
        for doc in perm {
            if drawn >= budget {
                break;
            }
            selected.push(doc);
            drawn += corpus.doc_tokens(doc);
        }
        pass += 1;
    }
    Ok(selected)
}

/// Compute the emission order for a plan: a weighted-without-replacement
/// interleave over each source's remaining token budget.
///
/// The multiset of draws depends only on the plan; `seed` only changes the
/// order.
pub fn draw_schedule<S: DocSource + ?Sized>(
    plan: &MixturePlan,
    corpora: &[&S],
    seed: u64,
) -> Result<Vec<Draw>> {
    if corpora.len() != plan.entries.len() {
        return Err(ForgeError::validation(format!(
            "plan has {} sources but {} corpora were supplied",
            plan.entries.len(),
            corpora.len()
        )));
    }

    let mut queues = Vec::with_capacity(corpora.len());
    let mut remaining = Vec::with_capacity(corpora.len());
    for (idx, (entry, corpus)) in plan.entries.iter().zip(corpora).enumerate() {
        let mut docs = select_docs(entry, idx, *corpus, plan.selection_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64, u64::MAX));
        docs.shuffle(&mut rng);
        remaining.push(docs.iter().map(|&d| corpus.doc_tokens(d)).sum::<u64>());
        // pop() takes from the back
        docs.reverse();
        queues.push(docs);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(queues.iter().map(Vec::len).sum());
    loop {
        let total: u64 = remaining.iter().sum();
        let source = if total > 0 {
            let mut ticket = rng.random_range(0..total);
            let mut chosen = 0;
            for (i, &r) in remaining.iter().enumerate() {
                if ticket < r {
                    chosen = i;
                    break;
                }
                ticket -= r;
            }
            chosen
        } else {
            // only zero-length documents are left
            match queues.iter().position(|q| !q.is_empty()) {
                Some(i) => i,
                None => break,
            }
        };
        let doc = queues[source]
            .pop()
            .expect("source with budget has documents");
        remaining[source] -= corpora[source].doc_tokens(doc);
        out.push(Draw { source, doc });
    }
    Ok(out)
}

/// In-memory convenience over [`draw_schedule`].
pub fn sample_mixture(
    plan: &MixturePlan,
    corpora: &[Vec<TokenDoc>],
    seed: u64,
) -> Result<Vec<TokenDoc>> {
    let refs: Vec<&Vec<TokenDoc>> = corpora.iter().collect();
    let draws = draw_schedule(plan, &refs, seed)?;
    Ok(draws
        .into_iter()
        .map(|d| corpora[d.source][d.doc].clone())
        .collect())
}
