//! Flat `key = value` run configuration shared by every pipeline phase.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{PairOptions, Schema, Shift, SynthConfig};
use crate::error::{Error, Result};
use crate::models::{DanVariant, Modality, ModelConfig};
use crate::training::TrainConfig;

/// Which item encoder to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModalityChoice {
    #[default]
    Text,
    Visual,
}

impl FromStr for ModalityChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "unimodal" => Ok(ModalityChoice::Text),
            "visual" | "multimodal" => Ok(ModalityChoice::Visual),
            other => Err(Error::Config(format!("unknown modality {other:?}; use text or visual"))),
        }
    }
}

impl FromStr for Shift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Shift::Identity),
            "remap" => Ok(Shift::Remap),
            other => Err(Error::Config(format!("unknown shift {other:?}; use identity or remap"))),
        }
    }
}

/// Layer widths independent of the vocabulary and feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub interaction_dim: usize,
    pub discriminator_hidden: usize,
    pub dropout: f64,
    pub share_embeddings: bool,
    /// Width of the wide layer in front of the visual projection; 0 drops it.
    pub projection_hidden: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        ModelSettings {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            interaction_dim: m.interaction_dim,
            discriminator_hidden: m.discriminator_hidden,
            dropout: m.dropout,
            share_embeddings: m.share_embeddings,
            projection_hidden: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelSettings,
    pub pair: PairOptions,
    pub synth: SynthConfig,
    /// `None` means "whatever the input checkpoint was trained with".
    pub variant: Option<DanVariant>,
    pub modality: ModalityChoice,
    pub schema: Schema,
    pub out: PathBuf,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Seeds averaged by the Normal baseline.
    pub baseline_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelSettings::default(),
            pair: PairOptions::default(),
            synth: SynthConfig::default(),
            variant: None,
            modality: ModalityChoice::Text,
            schema: Schema::Canonical,
            out: PathBuf::from("out"),
            source: None,
            target: None,
            features: None,
            labels: None,
            baseline_seeds: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}; use true or false"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "out",
        "schema",
        "variant",
        "modality",
        "source",
        "target",
        "features",
        "labels",
        "baseline_seeds",
        "batch_size",
        "adversarial_batch_size",
        "lr",
        "adversarial_lr",
        "finetune_multiplier",
        "lambda",
        "source_epochs",
        "source_patience",
        "adversarial_epochs",
        "band_low",
        "band_high",
        "band_patience",
        "discriminator_warmup_epochs",
        "finetune_epochs",
        "finetune_warmup_epochs",
        "non_saturating",
        "report_wall_time",
        "embed_dim",
        "hidden_dim",
        "interaction_dim",
        "discriminator_hidden",
        "dropout",
        "share_embeddings",
        "projection_hidden",
        "min_count",
        "max_len",
        "synth.users",
        "synth.items",
        "synth.interactions",
        "synth.shared_user_fraction",
        "synth.shared_item_fraction",
        "synth.bias_levels",
        "synth.bias_scale",
        "synth.trait_dims",
        "synth.trait_bins",
        "synth.interaction_scale",
        "synth.noise",
        "synth.filler_vocab",
        "synth.fillers_per_review",
        "synth.shift",
        "synth.trait_rotation_degrees",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse(key, v)?;
                self.pair.seed = t.seed;
            }
            "out" => self.out = PathBuf::from(v),
            "schema" => self.schema = v.parse()?,
            "variant" => self.variant = Some(v.parse()?),
            "modality" => self.modality = v.parse()?,
            "source" => self.source = Some(PathBuf::from(v)),
            "target" => self.target = Some(PathBuf::from(v)),
            "features" => self.features = Some(PathBuf::from(v)),
            "labels" => self.labels = Some(PathBuf::from(v)),
            "baseline_seeds" => self.baseline_seeds = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "adversarial_batch_size" => t.adversarial_batch_size = optional(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "adversarial_lr" => t.adversarial_lr = optional(key, v)?,
            "finetune_multiplier" => t.finetune_multiplier = parse(key, v)?,
            "lambda" => t.lambda = parse(key, v)?,
            "source_epochs" => t.source_epochs = parse(key, v)?,
            "source_patience" => t.source_patience = parse(key, v)?,
            "adversarial_epochs" => t.adversarial_epochs = parse(key, v)?,
            "band_low" => t.band_low = parse(key, v)?,
            "band_high" => t.band_high = parse(key, v)?,
            "band_patience" => t.band_patience = parse(key, v)?,
            "discriminator_warmup_epochs" => t.discriminator_warmup_epochs = parse(key, v)?,
            "finetune_epochs" => t.finetune_epochs = parse(key, v)?,
            "finetune_warmup_epochs" => t.finetune_warmup_epochs = parse(key, v)?,
            "non_saturating" => t.non_saturating = parse_bool(key, v)?,
            "report_wall_time" => t.report_wall_time = parse_bool(key, v)?,
            "embed_dim" => self.model.embed_dim = parse(key, v)?,
            "hidden_dim" => self.model.hidden_dim = parse(key, v)?,
            "interaction_dim" => self.model.interaction_dim = parse(key, v)?,
            "discriminator_hidden" => self.model.discriminator_hidden = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "share_embeddings" => self.model.share_embeddings = parse_bool(key, v)?,
            "projection_hidden" => self.model.projection_hidden = parse(key, v)?,
            "min_count" => self.pair.min_count = parse(key, v)?,
            "max_len" => self.pair.max_len = parse(key, v)?,
            "synth.users" => s.users = parse(key, v)?,
            "synth.items" => s.items = parse(key, v)?,
            "synth.interactions" => s.interactions = parse(key, v)?,
            "synth.shared_user_fraction" => s.shared_user_fraction = parse(key, v)?,
            "synth.shared_item_fraction" => s.shared_item_fraction = parse(key, v)?,
            "synth.bias_levels" => s.bias_levels = parse(key, v)?,
            "synth.bias_scale" => s.bias_scale = parse(key, v)?,
            "synth.trait_dims" => s.trait_dims = parse(key, v)?,
            "synth.trait_bins" => s.trait_bins = parse(key, v)?,
            "synth.interaction_scale" => s.interaction_scale = parse(key, v)?,
            "synth.noise" => s.noise = parse(key, v)?,
            "synth.filler_vocab" => s.filler_vocab = parse(key, v)?,
            "synth.fillers_per_review" => s.fillers_per_review = parse(key, v)?,
            "synth.shift" => s.shift = v.parse()?,
            "synth.trait_rotation_degrees" => s.trait_rotation_degrees = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin} line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("{origin} line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.pair.max_len == 0 || self.pair.min_count == 0 {
            return Err(Error::Config("max_len and min_count must be positive".into()));
        }
        for path in [&self.source, &self.target, &self.features, &self.labels].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        Ok(())
    }

    /// Network widths for a vocabulary of `vocab_size` tokens and, for the
    /// visual modality, feature vectors of `feature_dim` values.
    pub fn model_config(&self, vocab_size: usize, feature_dim: Option<usize>) -> Result<ModelConfig> {
        let modality = match self.modality {
            ModalityChoice::Text => Modality::Text,
            ModalityChoice::Visual => Modality::Visual {
                feature_dim: feature_dim
                    .ok_or_else(|| Error::Config("the visual modality needs a features file".into()))?,
                projection_hidden: (self.model.projection_hidden > 0).then_some(self.model.projection_hidden),
            },
        };
        let cfg = ModelConfig {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            interaction_dim: self.model.interaction_dim,
            discriminator_hidden: self.model.discriminator_hidden,
            dropout: self.model.dropout,
            modality,
            share_embeddings: self.model.share_embeddings,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
