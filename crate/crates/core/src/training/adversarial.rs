use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::infer::{representations, RepCache};
use super::report::{PhaseReport, ReportRow};
use super::{DanModel, Stage, TrainConfig};
use crate::data::{batches, item_inputs, make_batch, user_tokens, Batch, DomainPairDataset, FeatureMap, Split};
use crate::error::{Error, Result};
use crate::eval::{alignment_stats, discriminator_accuracy, AlignmentStats};
use crate::layers::Mode;
use crate::models::{DanVariant, Discriminator, Domain, GeneratorSet, Level, Module};
use crate::numerics::{seeded_rng, ParamSet, Tape, Tensor, Var};
use crate::optim::{copy_parameters, Adadelta, OptimizerBinding};

/// Lower clamp applied to probabilities before every log.
pub const LOG_CLAMP: f64 = 1e-7;

fn log_column(tape: &mut Tape, probs: Var, col: usize) -> Result<Var> {
    let p = tape.slice_cols(probs, col, 1)?;
    let p = tape.clamp(p, LOG_CLAMP, 1.0)?;
    tape.log(p)
}

fn argmax_hits(tape: &Tape, probs: Var, col: usize) -> usize {
    tape.value(probs)
        .data()
        .chunks(2)
        .filter(|p| if col == 0 { p[0] > p[1] } else { p[1] >= p[0] })
        .count()
}

/// `mean log D(source) + mean log(1 − D(target))`, with `D` the
/// source-class probability, and the accuracy of `d` on the `2B` rows.
pub fn discriminator_objective(tape: &mut Tape, d: &Discriminator, source: Var, target: Var) -> Result<(Var, f64)> {
    let ps = d.discriminate(tape, source)?;
    let pt = d.discriminate(tape, target)?;
    let hits = argmax_hits(tape, ps, 0) + argmax_hits(tape, pt, 1);
    let total = tape.value(ps).dims2().0 + tape.value(pt).dims2().0;
    let ls = log_column(tape, ps, 0)?;
    let lt = log_column(tape, pt, 1)?;
    let ms = tape.mean(ls)?;
    let mt = tape.mean(lt)?;
    Ok((tape.add(ms, mt)?, hits as f64 / total as f64))
}

/// `mean log(1 − D(target))`, or `−mean log D(target)` when
/// `non_saturating`.
pub fn generator_objective(tape: &mut Tape, d: &Discriminator, target: Var, non_saturating: bool) -> Result<Var> {
    let pt = d.discriminate(tape, target)?;
    if non_saturating {
        let l = log_column(tape, pt, 0)?;
        let m = tape.mean(l)?;
        tape.scale(m, -1.0)
    } else {
        let l = log_column(tape, pt, 1)?;
        tape.mean(l)
    }
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

fn check_finite(value: f64, what: &str, phase: &str, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what} diverged ({value}) in {phase} epoch {epoch}")))
    }
}

fn apply(grads: &crate::numerics::Gradients, sets: Vec<&mut ParamSet>, opt: &Adadelta, ascend: bool) -> Result<()> {
    let mut sets = sets;
    for s in sets.iter_mut() {
        s.zero_grads();
        grads.accumulate_into(s);
    }
    let mut binding = if ascend { OptimizerBinding::ascend(sets) } else { OptimizerBinding::descend(sets) };
    opt.step(&mut binding)
}

/// One alternating update. The discriminator learns on detached target
/// representations; the generator then descends against a frozen copy of
/// the updated discriminator, reusing the same forward pass.
#[allow(clippy::too_many_arguments)]
fn adversarial_step(
    tape: &mut Tape,
    source: Var,
    target: Var,
    d: &mut Discriminator,
    generator_sets: Option<Vec<&mut ParamSet>>,
    d_opt: &Adadelta,
    g_opt: &Adadelta,
    non_saturating: bool,
) -> Result<(f64, Option<f64>, f64)> {
    let detached = tape.detach(target);
    let (lf, acc) = discriminator_objective(tape, d, source, detached)?;
    let lf_value = scalar(tape, lf);
    if !lf_value.is_finite() {
        return Ok((lf_value, None, acc));
    }
    let grads = tape.backward(lf)?;
    apply(&grads, d.param_sets_mut(), d_opt, true)?;

    let Some(sets) = generator_sets else {
        return Ok((lf_value, None, acc));
    };
    let mut frozen = d.clone();
    frozen.freeze();
    let lm = generator_objective(tape, &frozen, target, non_saturating)?;
    let lm_value = scalar(tape, lm);
    if lm_value.is_finite() {
        let grads = tape.backward(lm)?;
        apply(&grads, sets, g_opt, false)?;
    }
    Ok((lf_value, Some(lm_value), acc))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptOutcome {
    pub epochs_run: usize,
    /// Held-out statistics before the first generator update.
    pub initial: AlignmentStats,
    /// Held-out statistics after each adversarial epoch.
    pub history: Vec<AlignmentStats>,
    /// Whether the accuracy band was held for the configured patience.
    pub converged: bool,
}

impl AdaptOutcome {
    pub fn final_stats(&self) -> AlignmentStats {
        *self.history.last().unwrap_or(&self.initial)
    }
}

fn held_out(data: &crate::data::DomainData) -> Vec<usize> {
    match data.split(Split::Valid) {
        v if v.len() >= 2 => v.to_vec(),
        _ => data.split(Split::Train).to_vec(),
    }
}

struct HeldOut {
    source: Tensor,
    source_records: Vec<usize>,
    target_records: Vec<usize>,
}

impl HeldOut {
    fn stats(
        &self,
        target: &GeneratorSet,
        ds: &DomainPairDataset,
        features: Option<&FeatureMap>,
        level: Level,
        d: &Discriminator,
    ) -> Result<AlignmentStats> {
        let t = representations(target, ds, Domain::Target, &self.target_records, features, level)?;
        alignment_stats(&self.source, &t, d)
    }
}

const ADAPT_STREAM: u64 = 30_000;

/// Trains the target generators against the interaction-level
/// discriminator: nested loops over source batches (outer) and target
/// batches (inner), one discriminator ascent and one generator descent per
/// batch pair.
pub fn adapt_target(
    model: &mut DanModel,
    ds: &DomainPairDataset,
    cfg: &TrainConfig,
    features: Option<&FeatureMap>,
    report: &mut PhaseReport,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    model.require_stage(Stage::SourceTrained, "adaptation", "run source pre-training first")?;
    copy_parameters(&model.source.param_sets(), &mut model.target.param_sets_mut())?;
    model.target.unfreeze();
    model.source.freeze();
    model.head.freeze();
    let opt = Adadelta::with_lr(cfg.adversarial_lr());

    let source_train = ds.source.split(Split::Train);
    let cache = RepCache::build(&model.source, ds, Domain::Source, source_train, features, Level::Interaction)?;
    let source_records = held_out(&ds.source);
    let held = HeldOut {
        source: representations(&model.source, ds, Domain::Source, &source_records, features, Level::Interaction)?,
        source_records,
        target_records: held_out(&ds.target),
    };
    debug_assert!(!held.source_records.is_empty());

    let epoch_inputs = |epoch: usize| -> Result<(Vec<Vec<usize>>, Vec<Batch>)> {
        let outer = batches(ds, Domain::Source, Split::Train, cfg.adversarial_batch(), cfg.seed ^ ADAPT_STREAM, epoch);
        let inner = batches(ds, Domain::Target, Split::Train, cfg.adversarial_batch(), cfg.seed ^ ADAPT_STREAM, epoch)
            .iter()
            .map(|b| make_batch(ds, Domain::Target, b, features))
            .collect::<Result<Vec<_>>>()?;
        Ok((outer, inner))
    };

    let mut rng = seeded_rng(cfg.seed, ADAPT_STREAM);
    let mut run_epoch = |model: &mut DanModel, epoch: usize, phase: &str, train_generator: bool| -> Result<ReportRow> {
        let start = Instant::now();
        let (outer, inner) = epoch_inputs(epoch)?;
        // Frozen target generators give the same representations every step.
        let fixed_target = match train_generator {
            true => None,
            false => Some(RepCache::build(
                &model.target,
                ds,
                Domain::Target,
                ds.target.split(Split::Train),
                features,
                Level::Interaction,
            )?),
        };
        let (mut lf_sum, mut lm_sum, mut steps) = (0.0, 0.0, 0usize);
        for s_records in &outer {
            let s_reps = cache.gather(s_records)?;
            for t_batch in &inner {
                let mut tape = Tape::new();
                let xt = match &fixed_target {
                    Some(c) => tape.constant(c.gather(&t_batch.records)?),
                    None => {
                        model.target.forward(&mut tape, &t_batch.users, &t_batch.items, Mode::Eval, &mut rng)?.interaction
                    }
                };
                let xs = tape.constant(s_reps.clone());
                let gen_sets = train_generator.then(|| model.target.param_sets_mut());
                let (lf, lm, _) = adversarial_step(
                    &mut tape,
                    xs,
                    xt,
                    &mut model.d_interaction,
                    gen_sets,
                    &opt,
                    &opt,
                    cfg.non_saturating,
                )?;
                check_finite(lf, "discriminator loss", phase, epoch)?;
                if let Some(lm) = lm {
                    check_finite(lm, "generator loss", phase, epoch)?;
                    lm_sum += lm;
                }
                lf_sum += lf;
                steps += 1;
            }
        }
        let mut row = ReportRow::new(phase, epoch);
        row.d_loss = Some(lf_sum / steps as f64);
        if train_generator {
            row.g_loss = Some(lm_sum / steps as f64);
        }
        row.seconds = cfg.seconds(start);
        Ok(row)
    };

    for epoch in 1..=cfg.discriminator_warmup_epochs {
        let mut row = run_epoch(model, epoch, "adapt-warmup", false)?;
        row.d_acc = Some(held.stats(&model.target, ds, features, Level::Interaction, &model.d_interaction)?.d_acc);
        report.push(row);
    }
    let initial = held.stats(&model.target, ds, features, Level::Interaction, &model.d_interaction)?;
    let mut row = ReportRow::new("adapt", 0);
    row.d_acc = Some(initial.d_acc);
    report.push(row);

    let mut history = Vec::new();
    let mut in_band = 0;
    let mut converged = false;
    let offset = cfg.discriminator_warmup_epochs;
    for epoch in 1..=cfg.adversarial_epochs {
        let mut row = run_epoch(model, offset + epoch, "adapt", true)?;
        row.epoch = epoch;
        let stats = held.stats(&model.target, ds, features, Level::Interaction, &model.d_interaction)?;
        row.d_acc = Some(stats.d_acc);
        report.push(row);
        history.push(stats);
        if (cfg.band_low..=cfg.band_high).contains(&stats.d_acc) {
            in_band += 1;
            if in_band >= cfg.band_patience {
                converged = true;
                break;
            }
        } else {
            in_band = 0;
        }
    }
    model.stage = Stage::Adapted;
    Ok(AdaptOutcome { epochs_run: history.len(), initial, history, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelOutcome {
    pub level: Level,
    /// Held-out accuracy of the level discriminator before the first
    /// generator update.
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FinetuneOutcome {
    pub levels: Vec<LevelOutcome>,
}

const FINETUNE_STREAM: u64 = 40_000;

fn level_inputs(
    gen: &GeneratorSet,
    tape: &mut Tape,
    ds: &DomainPairDataset,
    domain: Domain,
    records: &[usize],
    features: Option<&FeatureMap>,
    level: Level,
) -> Result<Var> {
    match level {
        Level::User => gen.forward_user(tape, &user_tokens(ds, domain, records)?),
        Level::Item => gen.forward_item(tape, &item_inputs(ds, domain, records, features)?),
        Level::Interaction => Err(Error::Argument("fine-tuning aligns user or item levels only".into())),
    }
}

fn level_accuracy(
    model: &DanModel,
    ds: &DomainPairDataset,
    features: Option<&FeatureMap>,
    level: Level,
    source_reps: &Tensor,
    target_records: &[usize],
) -> Result<f64> {
    let t = representations(&model.target, ds, Domain::Target, target_records, features, level)?;
    discriminator_accuracy(model.discriminator(level), source_reps, &t)
}

fn finetune_level(
    model: &mut DanModel,
    ds: &DomainPairDataset,
    cfg: &TrainConfig,
    features: Option<&FeatureMap>,
    report: &mut PhaseReport,
    level: Level,
) -> Result<LevelOutcome> {
    // Users are aligned over shared items and items over shared users.
    let (pairs, phase) = match level {
        Level::User => (ds.shared_item_pairs(), "finetune-user"),
        Level::Item => (ds.shared_user_pairs(), "finetune-item"),
        Level::Interaction => unreachable!("interaction level is aligned by adapt_target"),
    };
    if pairs.is_empty() {
        let needed = if level == Level::User { "shared items" } else { "shared users" };
        return Err(Error::Config(format!(
            "{} needs {needed} with training reviews in both domains, found none",
            model.variant.label()
        )));
    }
    let base = Adadelta::with_lr(cfg.adversarial_lr());
    let tuned = Adadelta::with_lr(cfg.adversarial_lr() * cfg.finetune_multiplier);
    let source_side: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let cache = RepCache::build(&model.source, ds, Domain::Source, &source_side, features, level)?;
    let held_source = held_out(&ds.source);
    let held_target = held_out(&ds.target);
    let held_source_reps = representations(&model.source, ds, Domain::Source, &held_source, features, level)?;

    let stream = FINETUNE_STREAM + if level == Level::User { 0 } else { 1000 };
    let run_epoch = |model: &mut DanModel, epoch: usize, train_generator: bool, opt: &Adadelta| -> Result<ReportRow> {
        let start = Instant::now();
        let mut order = pairs.clone();
        order.shuffle(&mut seeded_rng(cfg.seed, stream + epoch as u64));
        let (mut lf_sum, mut lm_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let s_records: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            let t_records: Vec<usize> = chunk.iter().map(|p| p.1).collect();
            let mut tape = Tape::new();
            let xt = level_inputs(&model.target, &mut tape, ds, Domain::Target, &t_records, features, level)?;
            let xs = tape.constant(cache.gather(&s_records)?);
            let gen_sets = train_generator.then(|| match level {
                Level::User => model.target.user_params_mut(),
                _ => model.target.item_params_mut(),
            });
            let d = match level {
                Level::User => &mut model.d_user,
                _ => &mut model.d_item,
            };
            let (lf, lm, _) = adversarial_step(&mut tape, xs, xt, d, gen_sets, opt, opt, cfg.non_saturating)?;
            check_finite(lf, "discriminator loss", "fine-tuning", epoch)?;
            if let Some(lm) = lm {
                check_finite(lm, "generator loss", "fine-tuning", epoch)?;
                lm_sum += lm;
            }
            lf_sum += lf;
            steps += 1;
        }
        let mut row = ReportRow::new(phase, epoch);
        row.d_loss = Some(lf_sum / steps as f64);
        if train_generator {
            row.g_loss = Some(lm_sum / steps as f64);
        }
        row.seconds = cfg.seconds(start);
        Ok(row)
    };

    for epoch in 1..=cfg.finetune_warmup_epochs {
        let mut row = run_epoch(model, epoch, false, &base)?;
        row.phase = format!("{phase}-warmup");
        row.d_acc = Some(level_accuracy(model, ds, features, level, &held_source_reps, &held_target)?);
        report.push(row);
    }
    let accuracy_before = level_accuracy(model, ds, features, level, &held_source_reps, &held_target)?;
    let mut row = ReportRow::new(phase, 0);
    row.d_acc = Some(accuracy_before);
    report.push(row);

    let mut history = Vec::new();
    for epoch in 1..=cfg.finetune_epochs {
        let mut row = run_epoch(model, cfg.finetune_warmup_epochs + epoch, true, &tuned)?;
        row.epoch = epoch;
        let acc = level_accuracy(model, ds, features, level, &held_source_reps, &held_target)?;
        row.d_acc = Some(acc);
        report.push(row);
        history.push(acc);
    }
    Ok(LevelOutcome { level, accuracy_before, accuracy_after: *history.last().unwrap_or(&accuracy_before), history })
}

/// Aligns target user and/or item generators on shared objects at the
/// reduced learning rate: users first, then items. A no-op for UI-DAN.
pub fn finetune_shared(
    model: &mut DanModel,
    ds: &DomainPairDataset,
    cfg: &TrainConfig,
    features: Option<&FeatureMap>,
    report: &mut PhaseReport,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    model.require_stage(Stage::Adapted, "fine-tuning", "run adaptation first")?;
    if model.variant == DanVariant::UiDan {
        return Ok(FinetuneOutcome::default());
    }
    // Check every needed shared set before touching parameters.
    if model.variant.aligns_users() && ds.shared_item_pairs().is_empty() {
        return Err(Error::Config(format!("{} needs shared items, found none", model.variant.label())));
    }
    if model.variant.aligns_items() && ds.shared_user_pairs().is_empty() {
        return Err(Error::Config(format!("{} needs shared users, found none", model.variant.label())));
    }
    model.source.freeze();
    model.head.freeze();
    let mut outcome = FinetuneOutcome::default();
    if model.variant.aligns_users() {
        outcome.levels.push(finetune_level(model, ds, cfg, features, report, Level::User)?);
    }
    if model.variant.aligns_items() {
        outcome.levels.push(finetune_level(model, ds, cfg, features, report, Level::Item)?);
    }
    model.stage = Stage::FineTuned;
    Ok(outcome)
}
