//! Finite-difference gradient suite over every layer and both adversarial
//! losses.

use rand::Rng;

use crate::error::Result;
use crate::layers::{Activation, DenseLayer, Mode, TokenMatrix};
use crate::models::{Discriminator, Domain, GeneratorSet, ItemInput, Level, Modality, ModelConfig, Module, ScoringHead};
use crate::numerics::{grad_check, grad_check_inputs, seeded_rng, GradCheckReport, Tensor};
use crate::training::{discriminator_objective, generator_objective};

pub const SUITE_EPSILON: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Moves biases away from zero so ReLU units stay off their kink.
fn lift_biases<R: Rng>(sets: Vec<&mut crate::numerics::ParamSet>, rng: &mut R) {
    for set in sets {
        for t in set.tensors_mut() {
            if t.shape().len() == 1 {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.3..0.6));
            }
        }
    }
}

fn tiny_config(vocab_size: usize, modality: Modality, dropout: f64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embed_dim: 3,
        hidden_dim: 4,
        interaction_dim: 5,
        discriminator_hidden: 6,
        dropout,
        modality,
        share_embeddings: false,
    }
}

fn dense_checks(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut out = Vec::new();
    for (name, act) in [("dense/linear", Activation::None), ("dense/relu", Activation::Relu), ("dense/tanh", Activation::Tanh)]
    {
        let mut rng = seeded_rng(seed, 1);
        let mut layer = DenseLayer::new(4, 3, act, &mut rng);
        lift_biases(vec![&mut layer.params], &mut rng);
        let x = random_matrix(5, 4, 0.5, &mut rng);
        let w = random_matrix(5, 3, 1.0, &mut rng);
        let report = grad_check(
            &mut layer,
            |tape, layer| {
                let xv = tape.constant(x.clone());
                let y = layer.forward(tape, xv)?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(y, wv)?;
                tape.sum(p)
            },
            |layer| vec![&mut layer.params],
            SUITE_EPSILON,
            SUITE_TOLERANCE,
        )?;
        out.push(SuiteCheck { name: name.into(), report });
    }
    Ok(out)
}

/// Embeddings, LSTM, masked pooling, interaction layer, dropout under a
/// fixed mask, and the scoring head under the supervised loss.
fn text_pipeline_check(seed: u64) -> Result<SuiteCheck> {
    let mut rng = seeded_rng(seed, 2);
    let cfg = tiny_config(6, Modality::Text, 0.3);
    let mut model = (GeneratorSet::new(&cfg, Domain::Source, &mut rng)?, ScoringHead::new(cfg.interaction_dim, &mut rng));
    lift_biases(model.0.interaction_params_mut(), &mut rng);
    let users = TokenMatrix::from_sequences(&[&[2, 3, 4], &[5], &[1, 2]])?;
    let items = ItemInput::Tokens(TokenMatrix::from_sequences(&[&[4, 4], &[3, 2, 5, 1], &[0]])?);
    // Targets near the initial outputs keep the loss small, so roundoff in
    // the differences stays far below the tolerance.
    let truth = Tensor::vector(vec![0.3, -0.2, 0.1])?;
    let report = grad_check(
        &mut model,
        |tape, (g, head)| {
            let reps = g.forward(tape, &users, &items, Mode::Train, &mut seeded_rng(seed, 3))?;
            let p = head.predict(tape, reps.interaction)?;
            let y = tape.constant(truth.clone());
            tape.mean_squared_error(p, y)
        },
        |(g, head)| {
            let mut sets = g.param_sets_mut();
            sets.extend(head.param_sets_mut());
            sets
        },
        SUITE_EPSILON,
        SUITE_TOLERANCE,
    )?;
    Ok(SuiteCheck { name: "text generators + head".into(), report })
}

fn visual_check(seed: u64) -> Result<SuiteCheck> {
    let mut rng = seeded_rng(seed, 4);
    let cfg = tiny_config(6, Modality::Visual { feature_dim: 7, projection_hidden: Some(5) }, 0.0);
    let mut g = GeneratorSet::new(&cfg, Domain::Source, &mut rng)?;
    lift_biases(g.item_params_mut(), &mut rng);
    let feats = random_matrix(3, 7, 2.0, &mut rng);
    let w = random_matrix(3, cfg.hidden_dim, 1.0, &mut rng);
    let report = grad_check(
        &mut g,
        |tape, g| {
            let v = g.forward_item(tape, &ItemInput::Features(feats.clone()))?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(v, wv)?;
            tape.sum(p)
        },
        |g| g.item_params_mut(),
        SUITE_EPSILON,
        SUITE_TOLERANCE,
    )?;
    Ok(SuiteCheck { name: "visual item encoder".into(), report })
}

fn adversarial_checks(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut rng = seeded_rng(seed, 5);
    let mut d = Discriminator::new(Level::Interaction, 8, 6, &mut rng);
    lift_biases(d.param_sets_mut(), &mut rng);
    let s = random_matrix(3, 8, 1.0, &mut rng);
    let t = random_matrix(4, 8, 1.0, &mut rng);
    let mut out = Vec::new();
    let report = grad_check(
        &mut d,
        |tape, d| {
            let (xs, xt) = (tape.constant(s.clone()), tape.constant(t.clone()));
            Ok(discriminator_objective(tape, d, xs, xt)?.0)
        },
        |d| d.param_sets_mut(),
        SUITE_EPSILON,
        SUITE_TOLERANCE,
    )?;
    out.push(SuiteCheck { name: "discriminator loss / weights".into(), report });
    let report = grad_check_inputs(
        |tape, v| Ok(discriminator_objective(tape, &d, v[0], v[1])?.0),
        vec![s.clone(), t.clone()],
        SUITE_EPSILON,
        SUITE_TOLERANCE,
    )?;
    out.push(SuiteCheck { name: "discriminator loss / inputs".into(), report });
    for (name, non_saturating) in [("generator loss", false), ("generator loss, non-saturating", true)] {
        let report = grad_check_inputs(
            |tape, v| generator_objective(tape, &d, v[0], non_saturating),
            vec![t.clone()],
            SUITE_EPSILON,
            SUITE_TOLERANCE,
        )?;
        out.push(SuiteCheck { name: format!("{name} / target reps"), report });
    }
    Ok(out)
}

/// Runs every check with central differences at `SUITE_EPSILON`.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut out = dense_checks(seed)?;
    out.push(text_pipeline_check(seed)?);
    out.push(visual_check(seed)?);
    out.extend(adversarial_checks(seed)?);
    Ok(out)
}
