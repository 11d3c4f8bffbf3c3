//! End-to-end phases over an output directory: data preparation,
//! training, evaluation and prediction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{ModalityChoice, RunConfig};
use crate::data::{
    assemble_pair, build_vocabulary, feature_ingest, feature_width, ingest_reviews, read_sealed_labels,
    synthesize_domain_pair, write_reviews, write_sealed_labels, CorpusStats, DomainPairDataset, FeatureMap,
    PreparedPair, Split, Vocabulary, PAD,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, normal_baseline, rmse_mae, split_truth, EvalResult, LabelBook};
use crate::layers::TokenMatrix;
use crate::models::{DanVariant, Domain, ItemInput};
use crate::numerics::Tensor;
use crate::training::{
    adapt_target, finetune_shared, infer, pretrain_source, AdaptOutcome, DanModel, FinetuneOutcome, PhaseReport,
    SourceOutcome, TrainConfig,
};

/// A trained phase whose checkpoint and report live under the output
/// directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Source,
    Adapt,
    Finetune,
}

impl Phase {
    fn checkpoint_dir(self) -> &'static str {
        match self {
            Phase::Source => "source",
            Phase::Adapt => "adapted",
            Phase::Finetune => "finetuned",
        }
    }

    fn report_name(self) -> &'static str {
        match self {
            Phase::Source => "source",
            Phase::Adapt => "adapt",
            Phase::Finetune => "finetune",
        }
    }
}

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn pair(&self) -> PathBuf {
        self.root.join("pair.json")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("sealed_labels.jsonl")
    }

    pub fn source_reviews(&self) -> PathBuf {
        self.root.join("source.jsonl")
    }

    pub fn target_reviews(&self) -> PathBuf {
        self.root.join("target.jsonl")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn checkpoint(&self, phase: Phase) -> PathBuf {
        self.root.join("checkpoints").join(phase.checkpoint_dir())
    }

    pub fn report(&self, phase: Phase) -> PathBuf {
        self.root.join("reports").join(format!("{}.csv", phase.report_name()))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_atomic(path, bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_jsonl(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    write_file(path, &buf)
}

pub fn save_pair(path: &Path, ds: &DomainPairDataset) -> Result<()> {
    write_json(path, &ds.to_prepared())
}

pub fn load_pair(path: &Path) -> Result<DomainPairDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let prepared: PreparedPair =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    DomainPairDataset::from_prepared(prepared)
}

pub fn load_features(run: &RunConfig) -> Result<Option<FeatureMap>> {
    match (&run.features, run.modality) {
        (Some(path), _) => feature_ingest(path).map(Some),
        (None, ModalityChoice::Visual) => Err(Error::Config("the visual modality needs a features file".into())),
        (None, ModalityChoice::Text) => Ok(None),
    }
}

fn load_labels(run: &RunConfig, layout: &Layout) -> Result<Option<LabelBook>> {
    let path = match &run.labels {
        Some(p) => p.clone(),
        None if layout.labels().exists() => layout.labels(),
        None => return Ok(None),
    };
    Ok(Some(LabelBook::new(&read_sealed_labels(&path)?)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub source: CorpusStats,
    pub target: CorpusStats,
    pub vocab_size: usize,
    pub shared_users: usize,
    pub shared_items: usize,
}

/// Writes a synthetic pair: raw reviews, the assembled pair and the sealed
/// target labels.
pub fn run_synth(run: &RunConfig) -> Result<SynthSummary> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let pair = synthesize_domain_pair(&run.synth, run.train.seed)?;
    let ds = pair.assemble(run.pair)?;
    write_jsonl(&layout.source_reviews(), |w| write_reviews(w, &pair.source))?;
    write_jsonl(&layout.target_reviews(), |w| write_reviews(w, &pair.target))?;
    write_jsonl(&layout.labels(), |w| write_sealed_labels(w, &pair.sealed_labels))?;
    save_pair(&layout.pair(), &ds)?;
    Ok(SynthSummary {
        source: CorpusStats::of(&pair.source),
        target: CorpusStats::of(&pair.target),
        vocab_size: ds.vocab.len(),
        shared_users: ds.shared_users.len(),
        shared_items: ds.shared_items.len(),
    })
}

/// Reads `input` under the configured schema and writes canonical records.
pub fn run_ingest(run: &RunConfig, input: &Path, output: &Path) -> Result<CorpusStats> {
    let (records, stats) = ingest_reviews(input, run.schema)?;
    write_jsonl(output, |w| write_reviews(w, &records))?;
    Ok(stats)
}

/// Builds a vocabulary over every review of `inputs`.
pub fn run_vocab(run: &RunConfig, inputs: &[PathBuf]) -> Result<Vocabulary> {
    let mut texts = Vec::new();
    for path in inputs {
        let (records, _) = ingest_reviews(path, run.schema)?;
        texts.extend(records.into_iter().map(|r| r.review_text));
    }
    let vocab = build_vocabulary(texts.iter().map(String::as_str), run.pair.min_count);
    write_json(&Layout::new(&run.out).vocab(), &vocab)?;
    Ok(vocab)
}

/// Splits and aligns the configured source and target files.
pub fn run_pair(run: &RunConfig) -> Result<DomainPairDataset> {
    run.validate()?;
    let source = run.source.as_ref().ok_or_else(|| Error::Config("pair needs a source file".into()))?;
    let target = run.target.as_ref().ok_or_else(|| Error::Config("pair needs a target file".into()))?;
    let (src, _) = ingest_reviews(source, run.schema)?;
    let (tgt, _) = ingest_reviews(target, run.schema)?;
    let ds = assemble_pair(src, tgt, run.pair)?;
    save_pair(&Layout::new(&run.out).pair(), &ds)?;
    Ok(ds)
}

/// Refuses variants whose fine-tuning needs shared objects the pair lacks.
pub fn check_variant(variant: DanVariant, ds: &DomainPairDataset) -> Result<()> {
    if variant.aligns_users() && ds.shared_items.is_empty() {
        return Err(Error::Config(format!("{} needs items shared by both domains; the pair has none", variant.label())));
    }
    if variant.aligns_items() && ds.shared_users.is_empty() {
        return Err(Error::Config(format!("{} needs users shared by both domains; the pair has none", variant.label())));
    }
    Ok(())
}

fn train_config(run: &RunConfig, variant: DanVariant) -> TrainConfig {
    TrainConfig { variant, ..run.train.clone() }
}

fn load_phase_input(layout: &Layout, needed: Phase, phase: &str, hint: &str) -> Result<Checkpoint> {
    let dir = layout.checkpoint(needed);
    if !dir.exists() {
        return Err(Error::State(format!("{phase} needs a checkpoint at {}; {hint}", dir.display())));
    }
    Checkpoint::load(&dir)
}

fn resolve_variant(run: &RunConfig, model: &DanModel) -> Result<DanVariant> {
    match run.variant {
        Some(v) if v != model.variant => Err(Error::Config(format!(
            "the checkpoint was trained as {} but {} was requested",
            model.variant.label(),
            v.label()
        ))),
        _ => Ok(model.variant),
    }
}

fn finish(layout: &Layout, phase: Phase, ck: &Checkpoint, report: &PhaseReport) -> Result<()> {
    ck.save(&layout.checkpoint(phase))?;
    write_file(&layout.report(phase), report.to_csv().as_bytes())
}

pub fn run_train_source(run: &RunConfig) -> Result<SourceOutcome> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let ds = load_pair(&layout.pair())?;
    let features = load_features(run)?;
    let variant = run.variant.unwrap_or(DanVariant::UiDan);
    check_variant(variant, &ds)?;
    let config = run.model_config(ds.vocab.len(), features.as_ref().and_then(feature_width))?;
    let mut model = DanModel::new(config, variant, run.train.seed)?;
    let mut report = PhaseReport::default();
    let outcome = pretrain_source(&mut model, &ds, &train_config(run, variant), features.as_ref(), &mut report)?;
    finish(&layout, Phase::Source, &Checkpoint::new(model, ds.vocab.clone(), ds.options.max_len), &report)?;
    Ok(outcome)
}

pub fn run_adapt(run: &RunConfig) -> Result<AdaptOutcome> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let mut ck = load_phase_input(&layout, Phase::Source, "adaptation", "run train-source first")?;
    let variant = resolve_variant(run, &ck.model)?;
    let ds = load_pair(&layout.pair())?;
    let features = load_features(run)?;
    check_variant(variant, &ds)?;
    let mut report = PhaseReport::default();
    let outcome = adapt_target(&mut ck.model, &ds, &train_config(run, variant), features.as_ref(), &mut report)?;
    finish(&layout, Phase::Adapt, &ck, &report)?;
    Ok(outcome)
}

pub fn run_finetune(run: &RunConfig) -> Result<FinetuneOutcome> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let mut ck = load_phase_input(&layout, Phase::Adapt, "fine-tuning", "run adapt first")?;
    let variant = resolve_variant(run, &ck.model)?;
    let ds = load_pair(&layout.pair())?;
    let features = load_features(run)?;
    let mut report = PhaseReport::default();
    let outcome = finetune_shared(&mut ck.model, &ds, &train_config(run, variant), features.as_ref(), &mut report)?;
    finish(&layout, Phase::Finetune, &ck, &report)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Defaults to the most advanced checkpoint under the output directory.
    pub checkpoint: Option<PathBuf>,
    pub domain: Domain,
    pub split: Split,
    /// Scores the source generators on the chosen domain.
    pub source_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { checkpoint: None, domain: Domain::Target, split: Split::Test, source_only: false }
    }
}

fn latest_checkpoint(layout: &Layout) -> Result<PathBuf> {
    [Phase::Finetune, Phase::Adapt, Phase::Source]
        .into_iter()
        .map(|p| layout.checkpoint(p))
        .find(|d| d.exists())
        .ok_or_else(|| {
            Error::State(format!("no checkpoint under {}; run train-source first", layout.root.display()))
        })
}

pub fn run_eval(run: &RunConfig, opts: &EvalOptions) -> Result<EvalResult> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let dir = match &opts.checkpoint {
        Some(d) => d.clone(),
        None => latest_checkpoint(&layout)?,
    };
    let ck = Checkpoint::load(&dir)?;
    let ds = load_pair(&layout.pair())?;
    let features = load_features(run)?;
    let labels = load_labels(run, &layout)?;
    let (generators, name) = match (opts.source_only, opts.domain) {
        (true, _) | (false, Domain::Source) => (&ck.model.source, "source-only".to_string()),
        (false, Domain::Target) => (ck.model.target_generators(), ck.model.variant.label().to_string()),
    };
    evaluate(
        generators,
        &ck.model.head,
        &ds,
        opts.domain,
        opts.split,
        labels.as_ref(),
        features.as_ref(),
        &name,
        run.train.seed,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub variant: String,
    pub n: usize,
    pub seeds: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

/// Draws target predictions from a Normal fitted to source training
/// ratings, over `baseline_seeds` seeds.
pub fn run_baseline(run: &RunConfig, domain: Domain, split: Split) -> Result<BaselineSummary> {
    run.validate()?;
    let layout = Layout::new(&run.out);
    let ds = load_pair(&layout.pair())?;
    let labels = load_labels(run, &layout)?;
    let train = ds.source.ratings(Split::Train)?;
    let truth = split_truth(&ds, domain, split, labels.as_ref())?;
    let (mut rmses, mut maes) = (Vec::new(), Vec::new());
    for s in 0..run.baseline_seeds.max(1) {
        let pred = normal_baseline(&train, truth.len(), run.train.seed.wrapping_add(s as u64))?;
        let (rmse, mae) = rmse_mae(&pred, &truth)?;
        rmses.push(rmse);
        maes.push(mae);
    }
    let (rmse_mean, rmse_std) = mean_std(&rmses);
    let (mae_mean, mae_std) = mean_std(&maes);
    Ok(BaselineSummary { variant: "normal".into(), n: truth.len(), seeds: rmses.len(), rmse_mean, rmse_std, mae_mean, mae_std })
}

/// Raw item input for a single prediction.
#[derive(Debug, Clone)]
pub enum PredictItem {
    Text(String),
    Features(Vec<f64>),
}

fn encode_text(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = vocab.encode(text);
    ids.truncate(max_len);
    if ids.is_empty() {
        ids.push(PAD);
    }
    ids
}

/// Rates one (user text, item) pair with a checkpoint's generators for
/// `domain`.
pub fn run_predict(checkpoint: &Path, domain: Domain, user_text: &str, item: &PredictItem) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let users = TokenMatrix::from_sequences(&[&encode_text(&ck.vocab, user_text, ck.max_len)])?;
    let items = match item {
        PredictItem::Text(t) => {
            ItemInput::Tokens(TokenMatrix::from_sequences(&[&encode_text(&ck.vocab, t, ck.max_len)])?)
        }
        PredictItem::Features(v) => ItemInput::Features(Tensor::matrix(1, v.len(), v.clone())?),
    };
    let generators = match domain {
        Domain::Source => &ck.model.source,
        Domain::Target => ck.model.target_generators(),
    };
    Ok(infer(generators, &ck.model.head, &users, &items)?[0])
}
