//! Source pre-training, adversarial target adaptation and shared-object
//! fine-tuning.

mod adversarial;
mod infer;
mod report;
mod source;

pub use adversarial::{
    adapt_target, discriminator_objective, finetune_shared, generator_objective, AdaptOutcome, FinetuneOutcome,
    LevelOutcome, LOG_CLAMP,
};
pub use infer::{infer, predict_records, representations, RepCache, EVAL_BATCH};
pub use report::{PhaseReport, ReportRow, CSV_HEADER};
pub use source::{pretrain_source, SourceOutcome};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_BATCH_SIZE;
use crate::error::{Error, Result};
use crate::models::{DanVariant, Discriminator, Domain, GeneratorSet, Level, ModelConfig, Module, ScoringHead};
use crate::numerics::{seeded_rng, sha256_of, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Batch size of the nested adversarial loop when it should differ from
    /// the supervised one. Fine-tuning uses `batch_size`.
    pub adversarial_batch_size: Option<usize>,
    /// Global ADADELTA multiplier η.
    pub lr: f64,
    /// Multiplier of the adversarial and fine-tuning phases when it should
    /// differ from the supervised one.
    pub adversarial_lr: Option<f64>,
    /// Fine-tuning runs at the adversarial multiplier times this.
    pub finetune_multiplier: f64,
    /// Weight λ of the squared-L2 penalty on source generators and head.
    pub lambda: f64,
    pub seed: u64,
    pub variant: DanVariant,
    pub source_epochs: usize,
    /// Epochs without validation improvement before the source phase stops.
    pub source_patience: usize,
    pub adversarial_epochs: usize,
    pub band_low: f64,
    pub band_high: f64,
    /// Consecutive epochs inside the accuracy band that end adaptation.
    pub band_patience: usize,
    /// Discriminator-only epochs before the first generator update.
    pub discriminator_warmup_epochs: usize,
    pub finetune_epochs: usize,
    pub finetune_warmup_epochs: usize,
    /// Generator descends `-log D(target)` instead of `log(1 - D(target))`.
    pub non_saturating: bool,
    /// Records real elapsed seconds in reports; otherwise 0 so reports are
    /// reproducible byte for byte.
    pub report_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            adversarial_batch_size: None,
            lr: 1e-4,
            adversarial_lr: None,
            finetune_multiplier: 1e-3,
            lambda: 1e-4,
            seed: 0,
            variant: DanVariant::UiDan,
            source_epochs: 100,
            source_patience: 5,
            adversarial_epochs: 300,
            band_low: 0.4,
            band_high: 0.6,
            band_patience: 10,
            discriminator_warmup_epochs: 0,
            finetune_epochs: 10,
            finetune_warmup_epochs: 0,
            non_saturating: false,
            report_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.adversarial_batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if let Some(lr) = self.adversarial_lr.filter(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("adversarial_lr {lr} must be positive")));
        }
        if !(self.finetune_multiplier > 0.0 && self.finetune_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "finetune_multiplier {} must be in (0, 1]",
                self.finetune_multiplier
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.source_epochs == 0 || self.adversarial_epochs == 0 || self.source_patience == 0 || self.band_patience == 0 {
            return Err(Error::Config("epoch caps and patiences must be positive".into()));
        }
        if !(0.0 <= self.band_low && self.band_low < self.band_high && self.band_high <= 1.0) {
            return Err(Error::Config(format!("accuracy band [{}, {}] is invalid", self.band_low, self.band_high)));
        }
        Ok(())
    }

    pub fn adversarial_lr(&self) -> f64 {
        self.adversarial_lr.unwrap_or(self.lr)
    }

    pub fn adversarial_batch(&self) -> usize {
        self.adversarial_batch_size.unwrap_or(self.batch_size)
    }

    pub(crate) fn seconds(&self, start: std::time::Instant) -> f64 {
        if self.report_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// How far a model has been trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Initialized,
    SourceTrained,
    Adapted,
    FineTuned,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Initialized => "initialized",
            Stage::SourceTrained => "source-trained",
            Stage::Adapted => "adapted",
            Stage::FineTuned => "fine-tuned",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Initialized, Stage::SourceTrained, Stage::Adapted, Stage::FineTuned]
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown stage {s:?}")))
    }
}

/// Every network of one adaptation run.
#[derive(Debug, Clone)]
pub struct DanModel {
    pub config: ModelConfig,
    pub variant: DanVariant,
    pub stage: Stage,
    pub source: GeneratorSet,
    pub target: GeneratorSet,
    pub head: ScoringHead,
    pub d_interaction: Discriminator,
    pub d_user: Discriminator,
    pub d_item: Discriminator,
}

impl DanModel {
    pub fn new(config: ModelConfig, variant: DanVariant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, 100);
        let source = GeneratorSet::new(&config, Domain::Source, &mut rng)?;
        let target = GeneratorSet::new(&config, Domain::Target, &mut rng)?;
        let head = ScoringHead::new(config.interaction_dim, &mut rng);
        let d_interaction =
            Discriminator::new(Level::Interaction, config.interaction_dim, config.discriminator_hidden, &mut rng);
        let d_user = Discriminator::new(Level::User, config.hidden_dim, config.discriminator_hidden, &mut rng);
        let d_item = Discriminator::new(Level::Item, config.hidden_dim, config.discriminator_hidden, &mut rng);
        Ok(DanModel { config, variant, stage: Stage::Initialized, source, target, head, d_interaction, d_user, d_item })
    }

    pub fn discriminator(&self, level: Level) -> &Discriminator {
        match level {
            Level::Interaction => &self.d_interaction,
            Level::User => &self.d_user,
            Level::Item => &self.d_item,
        }
    }

    pub fn discriminator_mut(&mut self, level: Level) -> &mut Discriminator {
        match level {
            Level::Interaction => &mut self.d_interaction,
            Level::User => &mut self.d_user,
            Level::Item => &mut self.d_item,
        }
    }

    /// SHA-256 over the source generators and the scoring head.
    pub fn source_checksum(&self) -> String {
        let mut sets: Vec<&ParamSet> = self.source.param_sets();
        sets.extend(self.head.param_sets());
        sha256_of(sets)
    }

    /// Every parameter group with a stable name, in a fixed order.
    pub fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = Vec::new();
        let groups: [(&str, &dyn Module); 6] = [
            ("source", &self.source),
            ("target", &self.target),
            ("head", &self.head),
            ("d_interaction", &self.d_interaction),
            ("d_user", &self.d_user),
            ("d_item", &self.d_item),
        ];
        for (prefix, module) in groups {
            for (name, set) in module.named_param_sets() {
                out.push((format!("{prefix}.{name}"), set));
            }
        }
        out
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut out = self.source.param_sets_mut();
        out.extend(self.target.param_sets_mut());
        out.extend(self.head.param_sets_mut());
        out.extend(self.d_interaction.param_sets_mut());
        out.extend(self.d_user.param_sets_mut());
        out.extend(self.d_item.param_sets_mut());
        out
    }

    /// The generators used for target predictions at the current stage.
    pub fn target_generators(&self) -> &GeneratorSet {
        if self.stage >= Stage::Adapted {
            &self.target
        } else {
            &self.source
        }
    }

    pub(crate) fn require_stage(&self, expected: Stage, phase: &str, hint: &str) -> Result<()> {
        if self.stage != expected {
            return Err(Error::State(format!(
                "{phase} needs a {expected} model but this one is {}; {hint}",
                self.stage
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
