use rand::Rng;

use super::{Module, ModelConfig, Modality};
use crate::error::{Error, Result};
use crate::layers::{
    dropout, encode_sequence, Activation, DenseLayer, DropoutSpec, EmbeddingTable, LstmCell, Mode,
    TokenMatrix,
};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Dummy domain label: 1 for source, 0 for target.
    pub fn label(self) -> u8 {
        match self {
            Domain::Source => 1,
            Domain::Target => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Embedding → LSTM → masked average pooling.
///
/// `embedding` is `None` when the encoder borrows another encoder's table.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embedding: Option<EmbeddingTable>,
    pub lstm: LstmCell,
}

impl TextEncoder {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, own_table: bool, rng: &mut R) -> Self {
        let embedding = own_table.then(|| EmbeddingTable::new(cfg.vocab_size, cfg.embed_dim, rng));
        TextEncoder { embedding, lstm: LstmCell::new(cfg.embed_dim, cfg.hidden_dim, rng) }
    }

    pub fn encode(&self, tape: &mut Tape, tokens: &TokenMatrix, shared: Option<&EmbeddingTable>) -> Result<Var> {
        let table = self
            .embedding
            .as_ref()
            .or(shared)
            .ok_or_else(|| Error::Config("text encoder has no embedding table".into()))?;
        encode_sequence(table, &self.lstm, tape, tokens)
    }
}

impl Module for TextEncoder {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(("embedding".to_string(), &e.params));
        }
        out.push(("lstm".to_string(), &self.lstm.params));
        out
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(&mut e.params);
        }
        out.push(&mut self.lstm.params);
        out
    }
}

/// Precomputed item features → optional wide hidden layer → projection.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub hidden: Option<DenseLayer>,
    pub projection: DenseLayer,
    feature_dim: usize,
}

impl VisualEncoder {
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn encode(&self, tape: &mut Tape, features: &Tensor) -> Result<Var> {
        let (_, width) = features.dims2();
        if features.shape().len() != 2 || width != self.feature_dim {
            return Err(Error::Dimension(format!(
                "visual encoder expects {} features, got shape {:?}",
                self.feature_dim,
                features.shape()
            )));
        }
        let x = tape.constant(features.clone());
        let x = match &self.hidden {
            Some(h) => h.forward(tape, x)?,
            None => x,
        };
        self.projection.forward(tape, x)
    }
}

impl Module for VisualEncoder {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(("hidden".to_string(), &h.params));
        }
        out.push(("projection".to_string(), &self.projection.params));
        out
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.params);
        }
        out.push(&mut self.projection.params);
        out
    }
}

#[derive(Debug, Clone)]
pub enum ItemEncoder {
    Text(TextEncoder),
    Visual(VisualEncoder),
}

/// What an item is represented by in a batch.
#[derive(Debug, Clone)]
pub enum ItemInput {
    Tokens(TokenMatrix),
    Features(Tensor),
}

impl ItemInput {
    pub fn rows(&self) -> usize {
        match self {
            ItemInput::Tokens(t) => t.rows(),
            ItemInput::Features(f) => f.dims2().0,
        }
    }
}

impl Module for ItemEncoder {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        match self {
            ItemEncoder::Text(t) => t.named_param_sets(),
            ItemEncoder::Visual(v) => v.named_param_sets(),
        }
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        match self {
            ItemEncoder::Text(t) => t.param_sets_mut(),
            ItemEncoder::Visual(v) => v.param_sets_mut(),
        }
    }
}

/// `Dropout(ReLU(Dense(concat(x_u, x_v))))`.
#[derive(Debug, Clone)]
pub struct InteractionMapper {
    pub dense: DenseLayer,
    pub dropout_rate: f64,
}

impl Module for InteractionMapper {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        vec![("dense".to_string(), &self.dense.params)]
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![&mut self.dense.params]
    }
}

/// The user, item and interaction generators of one domain.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub domain: Domain,
    pub user: TextEncoder,
    pub item: ItemEncoder,
    pub interaction: InteractionMapper,
}

impl GeneratorSet {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, domain: Domain, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let user = TextEncoder::new(cfg, true, rng);
        let item = match cfg.modality {
            Modality::Text => ItemEncoder::Text(TextEncoder::new(cfg, !cfg.share_embeddings, rng)),
            Modality::Visual { feature_dim, projection_hidden } => {
                let (hidden, proj_in) = match projection_hidden {
                    Some(w) => (Some(DenseLayer::new(feature_dim, w, Activation::Relu, rng)), w),
                    None => (None, feature_dim),
                };
                let projection = DenseLayer::new(proj_in, cfg.hidden_dim, Activation::Tanh, rng);
                ItemEncoder::Visual(VisualEncoder { hidden, projection, feature_dim })
            }
        };
        let interaction = InteractionMapper {
            dense: DenseLayer::new(2 * cfg.hidden_dim, cfg.interaction_dim, Activation::Relu, rng),
            dropout_rate: cfg.dropout,
        };
        Ok(GeneratorSet { domain, user, item, interaction })
    }

    pub fn representation_dim(&self) -> usize {
        self.user.lstm.hidden_dim()
    }

    pub fn interaction_dim(&self) -> usize {
        self.interaction.dense.output_dim()
    }

    /// Latent user representations `B × hidden`.
    pub fn forward_user(&self, tape: &mut Tape, tokens: &TokenMatrix) -> Result<Var> {
        self.user.encode(tape, tokens, None)
    }

    /// Latent item representations `B × hidden` from tokens or features.
    pub fn forward_item(&self, tape: &mut Tape, input: &ItemInput) -> Result<Var> {
        match (&self.item, input) {
            (ItemEncoder::Text(enc), ItemInput::Tokens(tokens)) => {
                enc.encode(tape, tokens, self.user.embedding.as_ref())
            }
            (ItemEncoder::Visual(enc), ItemInput::Features(f)) => enc.encode(tape, f),
            (ItemEncoder::Text(_), ItemInput::Features(_)) => {
                Err(Error::Config("text item encoder given feature vectors".into()))
            }
            (ItemEncoder::Visual(_), ItemInput::Tokens(_)) => {
                Err(Error::Config("visual item encoder given review tokens".into()))
            }
        }
    }

    /// Interaction representation `B × interaction_dim`; dropout only in
    /// [`Mode::Train`].
    pub fn forward_interaction<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x_u: Var,
        x_v: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.representation_dim();
        let (su, sv) = (tape.value(x_u).shape().to_vec(), tape.value(x_v).shape().to_vec());
        if su.len() != 2 || su[1] != h || sv != su {
            return Err(Error::Dimension(format!(
                "interaction mapper expects two B×{h} inputs, got {su:?} and {sv:?}"
            )));
        }
        let joined = tape.concat_cols(&[x_u, x_v])?;
        let hidden = self.interaction.dense.forward(tape, joined)?;
        dropout(tape, hidden, DropoutSpec::new(self.interaction.dropout_rate, mode)?, rng)
    }

    /// Users and items through all three generators.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        users: &TokenMatrix,
        items: &ItemInput,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Representations> {
        let user = self.forward_user(tape, users)?;
        let item = self.forward_item(tape, items)?;
        let interaction = self.forward_interaction(tape, user, item, mode, rng)?;
        Ok(Representations { user, item, interaction })
    }

    pub fn user_params_mut(&mut self) -> Vec<&mut ParamSet> {
        self.user.param_sets_mut()
    }

    pub fn item_params_mut(&mut self) -> Vec<&mut ParamSet> {
        self.item.param_sets_mut()
    }

    pub fn interaction_params_mut(&mut self) -> Vec<&mut ParamSet> {
        self.interaction.param_sets_mut()
    }
}

impl Module for GeneratorSet {
    fn named_param_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = Vec::new();
        for (n, s) in self.user.named_param_sets() {
            out.push((format!("user.{n}"), s));
        }
        for (n, s) in self.item.named_param_sets() {
            out.push((format!("item.{n}"), s));
        }
        for (n, s) in self.interaction.named_param_sets() {
            out.push((format!("interaction.{n}"), s));
        }
        out
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut out = self.user.param_sets_mut();
        out.extend(self.item.param_sets_mut());
        out.extend(self.interaction.param_sets_mut());
        out
    }
}

/// Tape handles of the three latent representations of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Representations {
    pub user: Var,
    pub item: Var,
    pub interaction: Var,
}
