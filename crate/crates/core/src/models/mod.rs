//! Generators, discriminators and the scoring head, assembled into the four
//! adaptation variants.

mod generator;

pub use generator::{
    Domain, GeneratorSet, InteractionMapper, ItemEncoder, ItemInput, Representations, TextEncoder,
    VisualEncoder,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer};
use crate::numerics::{sha256_of, ParamSet, Tape, Var};

/// Anything that owns parameter sets.
pub trait Module {
    /// Parameter sets with a stable, hierarchical name each.
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)>;

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet>;

    fn param_sets(&self) -> Vec<&ParamSet> {
        self.named_param_sets().into_iter().map(|(_, s)| s).collect()
    }

    fn num_parameters(&self) -> usize {
        self.param_sets().iter().map(|s| s.num_scalars()).sum()
    }

    fn checksum(&self) -> String {
        sha256_of(self.param_sets())
    }

    fn freeze(&mut self) {
        self.param_sets_mut().into_iter().for_each(ParamSet::freeze);
    }

    fn unfreeze(&mut self) {
        self.param_sets_mut().into_iter().for_each(ParamSet::unfreeze);
    }

    fn zero_grads(&mut self) {
        self.param_sets_mut().into_iter().for_each(ParamSet::zero_grads);
    }
}

/// How items are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    /// Concatenated review text through an LSTM encoder.
    Text,
    /// Precomputed feature vectors through dense projections.
    Visual { feature_dim: usize, projection_hidden: Option<usize> },
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual { .. } => "visual",
        }
    }
}

/// Layer widths of every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub interaction_dim: usize,
    pub discriminator_hidden: usize,
    pub dropout: f64,
    pub modality: Modality,
    /// User and item text encoders of a domain read one embedding table.
    pub share_embeddings: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 64,
            hidden_dim: 256,
            interaction_dim: 512,
            discriminator_hidden: 512,
            dropout: 0.5,
            modality: Modality::Text,
            share_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.interaction_dim,
            self.discriminator_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero layer width in {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Modality::Visual { feature_dim: 0, .. } = self.modality {
            return Err(Error::Config("visual modality needs a positive feature_dim".into()));
        }
        Ok(())
    }
}

/// Source-domain regressor from the interaction representation to a rating.
#[derive(Debug, Clone)]
pub struct ScoringHead {
    pub dense: DenseLayer,
}

impl ScoringHead {
    pub fn new<R: Rng + ?Sized>(interaction_dim: usize, rng: &mut R) -> Self {
        ScoringHead { dense: DenseLayer::new(interaction_dim, 1, Activation::None, rng) }
    }

    /// Unclipped predictions, shape `[B]`.
    pub fn predict(&self, tape: &mut Tape, x_f: Var) -> Result<Var> {
        let out = self.dense.forward(tape, x_f)?;
        let rows = tape.value(out).dims2().0;
        tape.reshape(out, &[rows])
    }
}

impl Module for ScoringHead {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        vec![("dense".to_string(), &self.dense.params)]
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![&mut self.dense.params]
    }
}

/// Which representation a discriminator inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Interaction,
    User,
    Item,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Interaction => "interaction",
            Level::User => "user",
            Level::Item => "item",
        }
    }
}

/// `Dense(512, relu) → Dense(2) → softmax`, columns `[p(source), p(target)]`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub level: Level,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(level: Level, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Discriminator {
            level,
            hidden: DenseLayer::new(input_dim, hidden_dim, Activation::Relu, rng),
            output: DenseLayer::new(hidden_dim, 2, Activation::None, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn discriminate(&self, tape: &mut Tape, rep: Var) -> Result<Var> {
        let shape = tape.value(rep).shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{} discriminator expects width {}, got {shape:?}",
                self.level.as_str(),
                self.input_dim()
            )));
        }
        let h = self.hidden.forward(tape, rep)?;
        let logits = self.output.forward(tape, h)?;
        tape.softmax(logits)
    }
}

impl Module for Discriminator {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        vec![
            ("hidden".to_string(), &self.hidden.params),
            ("output".to_string(), &self.output.params),
        ]
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![&mut self.hidden.params, &mut self.output.params]
    }
}

/// The four instantiations, named by which representation levels are
/// aligned beyond the interaction level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DanVariant {
    /// No shared users or items: interaction-level alignment only.
    UiDan,
    /// Shared items: additionally aligns user representations.
    UDan,
    /// Shared users: additionally aligns item representations.
    IDan,
    /// Shared users and items: both.
    HDan,
}

impl DanVariant {
    pub fn active_discriminators(self) -> Vec<Level> {
        match self {
            DanVariant::UiDan => vec![Level::Interaction],
            DanVariant::UDan => vec![Level::Interaction, Level::User],
            DanVariant::IDan => vec![Level::Interaction, Level::Item],
            DanVariant::HDan => vec![Level::Interaction, Level::User, Level::Item],
        }
    }

    pub fn aligns_users(self) -> bool {
        matches!(self, DanVariant::UDan | DanVariant::HDan)
    }

    pub fn aligns_items(self) -> bool {
        matches!(self, DanVariant::IDan | DanVariant::HDan)
    }

    pub fn label(self) -> &'static str {
        match self {
            DanVariant::UiDan => "UI-DAN",
            DanVariant::UDan => "U-DAN",
            DanVariant::IDan => "I-DAN",
            DanVariant::HDan => "H-DAN",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            DanVariant::UiDan => "ui",
            DanVariant::UDan => "u",
            DanVariant::IDan => "i",
            DanVariant::HDan => "h",
        }
    }
}

impl fmt::Display for DanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DanVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ui" | "ui-dan" => Ok(DanVariant::UiDan),
            "u" | "u-dan" => Ok(DanVariant::UDan),
            "i" | "i-dan" => Ok(DanVariant::IDan),
            "h" | "h-dan" => Ok(DanVariant::HDan),
            other => Err(Error::Config(format!("unknown variant {other:?}; use ui, u, i or h"))),
        }
    }
}
