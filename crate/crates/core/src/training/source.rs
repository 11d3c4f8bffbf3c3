use std::time::Instant;

use serde::Serialize;

use super::infer::predict_records;
use super::report::{PhaseReport, ReportRow};
use super::{DanModel, Stage, TrainConfig};
use crate::data::{batches, make_batch, DomainPairDataset, FeatureMap, Split};
use crate::error::{Error, Result};
use crate::eval::rmse_mae;
use crate::layers::Mode;
use crate::models::{Domain, GeneratorSet, Module, ScoringHead};
use crate::numerics::{seeded_rng, ParamSet, Tape, Tensor};
use crate::optim::{add_l2_gradient, copy_parameters, Adadelta, OptimizerBinding};

const DROPOUT_STREAM: u64 = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    /// Mean batch MSE of the last epoch run.
    pub final_train_mse: f64,
}

fn source_sets(model: &mut DanModel) -> Vec<&mut ParamSet> {
    let mut sets = model.source.param_sets_mut();
    sets.extend(model.head.param_sets_mut());
    sets
}

/// One supervised step on a batch of source records; returns the batch MSE.
pub(crate) fn supervised_step(
    model: &mut DanModel,
    ds: &DomainPairDataset,
    records: &[usize],
    features: Option<&FeatureMap>,
    opt: &Adadelta,
    lambda: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let batch = make_batch(ds, Domain::Source, records, features)?;
    let ratings = batch.ratings.ok_or_else(|| Error::Data("source batch has unrated records".into()))?;
    let mut tape = Tape::new();
    let reps = model.source.forward(&mut tape, &batch.users, &batch.items, Mode::Train, rng)?;
    let pred = model.head.predict(&mut tape, reps.interaction)?;
    let truth = tape.constant(Tensor::vector(ratings)?);
    let loss = tape.mean_squared_error(pred, truth)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    let mut sets = source_sets(model);
    for s in sets.iter_mut() {
        s.zero_grads();
        grads.accumulate_into(s);
    }
    add_l2_gradient(&mut sets, lambda);
    opt.step(&mut OptimizerBinding::descend(sets))?;
    Ok(value)
}

/// Minimizes source rating MSE plus `λ‖Θ‖²` with early stopping on the
/// validation MSE; the best validation parameters are kept.
pub fn pretrain_source(
    model: &mut DanModel,
    ds: &DomainPairDataset,
    cfg: &TrainConfig,
    features: Option<&FeatureMap>,
    report: &mut PhaseReport,
) -> Result<SourceOutcome> {
    cfg.validate()?;
    model.require_stage(Stage::Initialized, "source pre-training", "start from a fresh model")?;
    let opt = Adadelta::with_lr(cfg.lr);
    let valid: Vec<usize> = match ds.source.split(Split::Valid) {
        [] => ds.source.split(Split::Train).to_vec(),
        v => v.to_vec(),
    };
    let valid_truth: Vec<f64> = valid
        .iter()
        .map(|&r| ds.source.rating(r).ok_or_else(|| Error::Data(format!("source record {r} has no rating"))))
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, usize, GeneratorSet, ScoringHead)> = None;
    let mut since_best = 0;
    let mut outcome = SourceOutcome { epochs_run: 0, best_epoch: 0, best_valid_mse: f64::INFINITY, final_train_mse: f64::NAN };
    for epoch in 1..=cfg.source_epochs {
        let start = Instant::now();
        let mut rng = seeded_rng(cfg.seed, DROPOUT_STREAM + epoch as u64);
        let (mut total, mut rows) = (0.0, 0usize);
        for records in batches(ds, Domain::Source, Split::Train, cfg.batch_size, cfg.seed, epoch) {
            let mse = supervised_step(model, ds, &records, features, &opt, cfg.lambda, &mut rng)?;
            if !mse.is_finite() {
                return Err(Error::Training(format!("source loss diverged ({mse}) in epoch {epoch}")));
            }
            total += mse * records.len() as f64;
            rows += records.len();
        }
        let train_mse = total / rows as f64;
        let pred = predict_records(&model.source, &model.head, ds, Domain::Source, &valid, features)?;
        let (valid_rmse, _) = rmse_mae(&pred, &valid_truth)?;
        let valid_mse = valid_rmse * valid_rmse;
        if !valid_mse.is_finite() {
            return Err(Error::Training(format!("validation loss diverged in epoch {epoch}")));
        }
        let mut row = ReportRow::new("source", epoch);
        row.sup_loss = Some(train_mse);
        row.seconds = cfg.seconds(start);
        report.push(row);
        outcome.epochs_run = epoch;
        outcome.final_train_mse = train_mse;

        if best.as_ref().is_none_or(|(b, ..)| valid_mse < *b) {
            best = Some((valid_mse, epoch, model.source.clone(), model.head.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.source_patience {
                break;
            }
        }
    }
    if let Some((mse, epoch, source, head)) = best {
        outcome.best_epoch = epoch;
        outcome.best_valid_mse = mse;
        copy_parameters(&source.param_sets(), &mut model.source.param_sets_mut())?;
        copy_parameters(&head.param_sets(), &mut model.head.param_sets_mut())?;
    }
    model.stage = Stage::SourceTrained;
    Ok(outcome)
}
