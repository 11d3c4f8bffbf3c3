use std::collections::HashMap;

use crate::data::{item_inputs, make_batch, sequential_batches, user_tokens, DomainPairDataset, FeatureMap};
use crate::error::{Error, Result};
use crate::layers::{Mode, TokenMatrix};
use crate::models::{Domain, GeneratorSet, ItemInput, Level, ScoringHead};
use crate::numerics::{seeded_rng, Tape, Tensor};

/// Rows per forward pass outside training.
pub const EVAL_BATCH: usize = 512;

/// Eval-mode ratings `G_y(G_f(G_u(users), G_v(items)))`.
pub fn infer(generators: &GeneratorSet, head: &ScoringHead, users: &TokenMatrix, items: &ItemInput) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    // Eval mode never draws from the stream.
    let mut rng = seeded_rng(0, 0);
    let reps = generators.forward(&mut tape, users, items, Mode::Eval, &mut rng)?;
    let pred = head.predict(&mut tape, reps.interaction)?;
    Ok(tape.value(pred).data().to_vec())
}

/// Predictions for records of one domain, in the given order.
pub fn predict_records(
    generators: &GeneratorSet,
    head: &ScoringHead,
    ds: &DomainPairDataset,
    domain: Domain,
    records: &[usize],
    features: Option<&FeatureMap>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in sequential_batches(records, EVAL_BATCH) {
        let batch = make_batch(ds, domain, &chunk, features)?;
        out.extend(infer(generators, head, &batch.users, &batch.items)?);
    }
    Ok(out)
}

/// Eval-mode representations at one level for records of one domain,
/// rows in the given order.
pub fn representations(
    generators: &GeneratorSet,
    ds: &DomainPairDataset,
    domain: Domain,
    records: &[usize],
    features: Option<&FeatureMap>,
    level: Level,
) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::Argument("no records to represent".into()));
    }
    let mut rng = seeded_rng(0, 0);
    let mut flat = Vec::new();
    let mut width = 0;
    for chunk in sequential_batches(records, EVAL_BATCH) {
        let mut tape = Tape::new();
        let var = match level {
            Level::User => generators.forward_user(&mut tape, &user_tokens(ds, domain, &chunk)?)?,
            Level::Item => generators.forward_item(&mut tape, &item_inputs(ds, domain, &chunk, features)?)?,
            Level::Interaction => {
                let batch = make_batch(ds, domain, &chunk, features)?;
                generators.forward(&mut tape, &batch.users, &batch.items, Mode::Eval, &mut rng)?.interaction
            }
        };
        let value = tape.value(var);
        width = value.dims2().1;
        flat.extend_from_slice(value.data());
    }
    Tensor::matrix(records.len(), width, flat)
}

/// Precomputed representation rows keyed by record index.
#[derive(Debug, Clone)]
pub struct RepCache {
    rows: HashMap<usize, usize>,
    values: Tensor,
}

impl RepCache {
    pub fn build(
        generators: &GeneratorSet,
        ds: &DomainPairDataset,
        domain: Domain,
        records: &[usize],
        features: Option<&FeatureMap>,
        level: Level,
    ) -> Result<Self> {
        let mut unique = records.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let values = representations(generators, ds, domain, &unique, features, level)?;
        let rows = unique.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        Ok(RepCache { rows, values })
    }

    pub fn width(&self) -> usize {
        self.values.dims2().1
    }

    pub fn gather(&self, records: &[usize]) -> Result<Tensor> {
        let w = self.width();
        let mut flat = Vec::with_capacity(records.len() * w);
        for r in records {
            let row = self.rows.get(r).ok_or_else(|| Error::State(format!("record {r} is not cached")))?;
            flat.extend_from_slice(self.values.row(*row));
        }
        Tensor::matrix(records.len(), w, flat)
    }
}
