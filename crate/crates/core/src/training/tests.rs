use super::*;
use crate::data::{assemble_pair, synthesize_domain_pair, DomainPairDataset, PairOptions, ReviewRecord, Split, SynthConfig};
use crate::layers::DenseLayer;
use crate::models::Modality;
use crate::numerics::{grad_check, Tape, Tensor};
use rand::Rng;

fn tiny_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embed_dim: 4,
        hidden_dim: 4,
        interaction_dim: 8,
        discriminator_hidden: 8,
        dropout: 0.0,
        modality: Modality::Text,
        share_embeddings: false,
    }
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        lr: 1.0,
        finetune_multiplier: 0.1,
        source_epochs: 3,
        adversarial_epochs: 2,
        finetune_epochs: 1,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn tiny_pair(shared: f64, seed: u64) -> DomainPairDataset {
    let cfg = SynthConfig {
        users: 30,
        items: 20,
        interactions: 150,
        shared_user_fraction: shared,
        shared_item_fraction: shared,
        ..SynthConfig::default()
    };
    synthesize_domain_pair(&cfg, seed)
        .unwrap()
        .assemble(PairOptions { min_count: 1, max_len: 12, seed })
        .unwrap()
}

fn uniform_discriminator(input: usize) -> Discriminator {
    let mut d = Discriminator::new(Level::Interaction, input, 3, &mut seeded_rng(0, 0));
    for s in d.param_sets_mut() {
        s.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
    }
    d
}

/// Discriminator whose source probability is `sigmoid(2k·x0)` exactly.
fn steep_discriminator(k: f64) -> Discriminator {
    let mut d = uniform_discriminator(2);
    d.hidden = DenseLayer::from_weights(
        Tensor::matrix(2, 3, vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
        Tensor::zeros(&[3]),
        crate::layers::Activation::Relu,
    )
    .unwrap();
    d.output = DenseLayer::from_weights(
        Tensor::matrix(3, 2, vec![k, -k, -k, k, 0.0, 0.0]).unwrap(),
        Tensor::zeros(&[2]),
        crate::layers::Activation::None,
    )
    .unwrap();
    d
}

#[test]
fn losses_at_a_uniform_discriminator() {
    let d = uniform_discriminator(3);
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::full(&[4, 3], 0.3));
    let t = tape.constant(Tensor::full(&[5, 3], -1.2));
    let (lf, _) = discriminator_objective(&mut tape, &d, s, t).unwrap();
    assert!((tape.value(lf).data()[0] - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    assert!((tape.value(lf).data()[0] + 1.3863).abs() < 1e-4);
    let lm = generator_objective(&mut tape, &d, t, false).unwrap();
    assert!((tape.value(lm).data()[0] + std::f64::consts::LN_2).abs() < 1e-4);
    let ns = generator_objective(&mut tape, &d, t, true).unwrap();
    assert!((tape.value(ns).data()[0] - std::f64::consts::LN_2).abs() < 1e-4);
}

#[test]
fn losses_at_the_limits() {
    let d = steep_discriminator(50.0);
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 2.0, 0.0]).unwrap());
    let t = tape.constant(Tensor::matrix(2, 2, vec![-1.0, 0.0, -2.0, 0.0]).unwrap());
    let (lf, acc) = discriminator_objective(&mut tape, &d, s, t).unwrap();
    let v = tape.value(lf).data()[0];
    assert!(v <= 0.0 && v > -1e-9, "{v}");
    assert_eq!(acc, 1.0);
    // Target rows classified as source: fooled, loss pinned at the clamp.
    let lm = generator_objective(&mut tape, &d, s, false).unwrap();
    assert!((tape.value(lm).data()[0] - LOG_CLAMP.ln()).abs() < 1e-6);
}

#[test]
fn adversarial_losses_pass_gradient_checks() {
    let mut rng = seeded_rng(3, 0);
    let mut d = Discriminator::new(Level::Interaction, 8, 6, &mut rng);
    for v in d.hidden.params.get_mut(1).data_mut() {
        *v = rng.random_range(0.3..0.6);
    }
    let s = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let t = Tensor::matrix(4, 8, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let report = grad_check(
        &mut d,
        |tape, d| {
            let (xs, xt) = (tape.constant(s.clone()), tape.constant(t.clone()));
            Ok(discriminator_objective(tape, d, xs, xt)?.0)
        },
        |d| d.param_sets_mut(),
        1e-5,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{report}");

    for non_saturating in [false, true] {
        let d = d.clone();
        let report = crate::numerics::grad_check_inputs(
            |tape, vars| generator_objective(tape, &d, vars[0], non_saturating),
            vec![t.clone()],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn one_generator_step_descends() {
    let d = steep_discriminator(1.0);
    let mut set = ParamSet::new();
    set.push("x", Tensor::matrix(3, 2, vec![-0.5, 0.1, -0.2, 0.4, -0.9, 0.0]).unwrap());
    let loss_of = |set: &ParamSet| {
        let mut tape = Tape::new();
        let x = tape.param(set, 0);
        let l = generator_objective(&mut tape, &d, x, false).unwrap();
        (tape.value(l).data()[0], tape.backward(l).unwrap())
    };
    let (before, grads) = loss_of(&set);
    grads.accumulate_into(&mut set);
    crate::optim::Adadelta::with_lr(1.0)
        .step(&mut crate::optim::OptimizerBinding::descend(vec![&mut set]))
        .unwrap();
    let (after, _) = loss_of(&set);
    assert!(after < before, "{after} !< {before}");
}

fn constant_rating_pair() -> DomainPairDataset {
    let words = ["alpha", "beta", "gamma", "delta", "eps"];
    let recs: Vec<ReviewRecord> = (0..200)
        .map(|i| ReviewRecord {
            user_id: format!("u{}", i % 20),
            item_id: format!("i{}", i % 13),
            rating: Some(4.0),
            review_text: format!("{} {}", words[i % 5], words[(i / 5) % 5]),
            image_feature_id: None,
        })
        .collect();
    assemble_pair(recs.clone(), recs, PairOptions { min_count: 1, max_len: 8, seed: 1 }).unwrap()
}

#[test]
fn constant_ratings_are_fitted() {
    let ds = constant_rating_pair();
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    let cfg = TrainConfig { batch_size: 16, lr: 0.3, lambda: 0.0, source_epochs: 200, source_patience: 200, ..tiny_train_config() };
    let mut report = PhaseReport::default();
    let out = pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert!(out.best_valid_mse < 1e-3, "{out:?}");
    let pred = predict_records(&model.source, &model.head, &ds, Domain::Source, ds.source.split(Split::Test), None).unwrap();
    assert!(pred.iter().all(|p| (p - 4.0).abs() < 0.05), "{pred:?}");
    assert_eq!(model.stage, Stage::SourceTrained);
    assert_eq!(report.phase("source").count(), out.epochs_run);
}

#[test]
fn heavy_regularization_shrinks_parameters() {
    let ds = tiny_pair(0.0, 2);
    let norm = |lambda: f64| {
        let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
        let cfg = TrainConfig { lambda, source_epochs: 4, source_patience: 10, ..tiny_train_config() };
        pretrain_source(&mut model, &ds, &cfg, None, &mut PhaseReport::default()).unwrap();
        model.source.param_sets().iter().map(|s| s.squared_norm()).sum::<f64>()
    };
    assert!(norm(1e3) < norm(0.0));
}

#[test]
fn phases_must_run_in_order() {
    let ds = tiny_pair(0.3, 3);
    let cfg = tiny_train_config();
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::HDan, 1).unwrap();
    let mut report = PhaseReport::default();
    assert!(matches!(adapt_target(&mut model, &ds, &cfg, None, &mut report), Err(Error::State(_))));
    assert!(matches!(finetune_shared(&mut model, &ds, &cfg, None, &mut report), Err(Error::State(_))));
    pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert!(matches!(pretrain_source(&mut model, &ds, &cfg, None, &mut report), Err(Error::State(_))));
    assert!(matches!(finetune_shared(&mut model, &ds, &cfg, None, &mut report), Err(Error::State(_))));
}

#[test]
fn source_is_frozen_through_adaptation_and_finetuning() {
    let ds = tiny_pair(0.3, 4);
    let cfg = TrainConfig { discriminator_warmup_epochs: 1, finetune_warmup_epochs: 1, ..tiny_train_config() };
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::HDan, 1).unwrap();
    let mut report = PhaseReport::default();
    pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    let before = model.source_checksum();
    let target_before = model.target.checksum();
    let out = adapt_target(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert_eq!(out.epochs_run, 2);
    assert_ne!(model.target.checksum(), target_before);
    let ft = finetune_shared(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert_eq!(ft.levels.iter().map(|l| l.level).collect::<Vec<_>>(), [Level::User, Level::Item]);
    assert_eq!(model.source_checksum(), before);
    assert_eq!(model.stage, Stage::FineTuned);
    for row in &report.rows {
        if let Some(acc) = row.d_acc {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let phases: Vec<&str> = report.rows.iter().map(|r| r.phase.as_str()).collect();
    for p in ["source", "adapt-warmup", "adapt", "finetune-user-warmup", "finetune-user", "finetune-item"] {
        assert!(phases.contains(&p), "{p} missing from {phases:?}");
    }
}

#[test]
fn adaptation_starts_from_a_copy_of_the_source() {
    let ds = tiny_pair(0.0, 6);
    let cfg = TrainConfig { adversarial_epochs: 1, ..tiny_train_config() };
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    let mut report = PhaseReport::default();
    pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    let out = adapt_target(&mut model, &ds, &cfg, None, &mut report).unwrap();
    // Before any update the target clouds come from copied generators, so
    // the epoch-0 statistics use identical networks on both sides.
    let records = ds.target.split(Split::Valid);
    let via_source = representations(&model.source, &ds, Domain::Target, records, None, Level::Interaction).unwrap();
    assert!(via_source.is_finite());
    assert!(out.initial.d_cross > 0.0);
}

#[test]
fn ui_variant_skips_finetuning() {
    let ds = tiny_pair(0.0, 7);
    let cfg = TrainConfig { adversarial_epochs: 1, ..tiny_train_config() };
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    let mut report = PhaseReport::default();
    pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    adapt_target(&mut model, &ds, &cfg, None, &mut report).unwrap();
    let checksum = model.target.checksum();
    let rows = report.rows.len();
    let out = finetune_shared(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert!(out.levels.is_empty());
    assert_eq!(model.target.checksum(), checksum);
    assert_eq!(report.rows.len(), rows);
}

#[test]
fn shared_variant_without_shared_objects_is_config_error() {
    let ds = tiny_pair(0.0, 8);
    let cfg = TrainConfig { adversarial_epochs: 1, ..tiny_train_config() };
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::IDan, 1).unwrap();
    let mut report = PhaseReport::default();
    pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
    adapt_target(&mut model, &ds, &cfg, None, &mut report).unwrap();
    assert!(matches!(finetune_shared(&mut model, &ds, &cfg, None, &mut report), Err(Error::Config(_))));
}

#[test]
fn identical_runs_produce_identical_reports() {
    let ds = tiny_pair(0.3, 9);
    let cfg = TrainConfig { variant: DanVariant::HDan, ..tiny_train_config() };
    let run = || {
        let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::HDan, 3).unwrap();
        let mut report = PhaseReport::default();
        pretrain_source(&mut model, &ds, &cfg, None, &mut report).unwrap();
        adapt_target(&mut model, &ds, &cfg, None, &mut report).unwrap();
        finetune_shared(&mut model, &ds, &cfg, None, &mut report).unwrap();
        (report.to_csv(), model.target.checksum())
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_is_a_training_error() {
    let ds = tiny_pair(0.0, 10);
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    model.head.dense.params.get_mut(1).data_mut()[0] = f64::NAN;
    let err = pretrain_source(&mut model, &ds, &tiny_train_config(), None, &mut PhaseReport::default()).unwrap_err();
    assert!(matches!(&err, Error::Training(m) if m.contains("epoch 1")), "{err}");
}

#[test]
fn constant_head_infers_its_bias() {
    let ds = tiny_pair(0.0, 11);
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    model.head.dense.params.get_mut(0).data_mut().fill(0.0);
    model.head.dense.params.get_mut(1).data_mut()[0] = 3.0;
    let records = ds.target.split(Split::Test);
    let a = predict_records(&model.target, &model.head, &ds, Domain::Target, records, None).unwrap();
    assert!(a.iter().all(|&p| p == 3.0));
    let b = predict_records(&model.source, &model.head, &ds, Domain::Target, records, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn copied_target_matches_source_only_path_bitwise() {
    let ds = tiny_pair(0.0, 12);
    let mut model = DanModel::new(tiny_model_config(ds.vocab.len()), DanVariant::UiDan, 1).unwrap();
    crate::optim::copy_parameters(&model.source.param_sets(), &mut model.target.param_sets_mut()).unwrap();
    let records = ds.target.split(Split::Test);
    let a = predict_records(&model.target, &model.head, &ds, Domain::Target, records, None).unwrap();
    let b = predict_records(&model.source, &model.head, &ds, Domain::Target, records, None).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { finetune_multiplier: 2.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { band_low: 0.7, ..TrainConfig::default() }.validate().is_err());
}
