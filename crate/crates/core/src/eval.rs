//! Rating metrics, the Normal baseline and representation-alignment
//! statistics.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DomainPairDataset, FeatureMap, SealedLabel, Split};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Domain, GeneratorSet, ScoringHead};
use crate::numerics::{seeded_rng, Tape, Tensor};
use crate::training::predict_records;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
    pub variant: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub d_intra_s: f64,
    pub d_intra_t: f64,
    pub d_cross: f64,
    pub d_acc: f64,
}

pub fn rmse_mae(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "need equal non-zero lengths, got {} predictions and {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

/// Relative difference `2|a − b| / (a + b)` in percent.
pub fn delta_metric(ours: f64, baseline: f64) -> Result<f64> {
    if !(ours > 0.0 && baseline > 0.0) {
        return Err(Error::Argument(format!("delta needs positive scores, got {ours} and {baseline}")));
    }
    Ok(200.0 * (ours - baseline).abs() / (ours + baseline))
}

/// Draws `n` predictions from a Normal fitted to the training ratings
/// (population standard deviation). Unclipped.
pub fn normal_baseline(train: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    if train.len() < 2 {
        return Err(Error::Argument(format!("normal baseline needs at least 2 ratings, got {}", train.len())));
    }
    let m = train.len() as f64;
    let mu = train.iter().sum::<f64>() / m;
    let sigma = (train.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / m).sqrt();
    if sigma == 0.0 {
        return Ok(vec![mu; n]);
    }
    let dist = Normal::new(mu, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = seeded_rng(seed, 0);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

fn mean_distance(a: &Tensor, b: &Tensor, skip_diagonal: bool) -> f64 {
    let (na, _) = a.dims2();
    let (nb, _) = b.dims2();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..na {
        let start = if skip_diagonal { i + 1 } else { 0 };
        for j in start..nb {
            let d: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            total += d.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Accuracy of `d` on source rows (label source) and target rows.
pub fn discriminator_accuracy(d: &Discriminator, source: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let xs = tape.constant(source.clone());
    let xt = tape.constant(target.clone());
    let ps = d.discriminate(&mut tape, xs)?;
    let pt = d.discriminate(&mut tape, xt)?;
    let correct_s = tape.value(ps).data().chunks(2).filter(|p| p[0] > p[1]).count();
    let correct_t = tape.value(pt).data().chunks(2).filter(|p| p[1] >= p[0]).count();
    let total = source.dims2().0 + target.dims2().0;
    Ok((correct_s + correct_t) as f64 / total as f64)
}

/// Mean pairwise Euclidean distances within and across two clouds of
/// representations, plus the held-out accuracy of `d` on them.
pub fn alignment_stats(source: &Tensor, target: &Tensor, d: &Discriminator) -> Result<AlignmentStats> {
    let (ns, ws) = source.dims2();
    let (nt, wt) = target.dims2();
    if ns < 2 || nt < 2 || ws != wt {
        return Err(Error::Argument(format!(
            "alignment needs two clouds of at least 2 same-width rows, got {:?} and {:?}",
            source.shape(),
            target.shape()
        )));
    }
    Ok(AlignmentStats {
        d_intra_s: mean_distance(source, source, true),
        d_intra_t: mean_distance(target, target, true),
        d_cross: mean_distance(source, target, false),
        d_acc: discriminator_accuracy(d, source, target)?,
    })
}

/// Ground-truth ratings keyed by (user, item).
#[derive(Debug, Clone, Default)]
pub struct LabelBook {
    labels: HashMap<(String, String), f64>,
}

impl LabelBook {
    pub fn new(labels: &[SealedLabel]) -> Self {
        let mut map = HashMap::new();
        for l in labels {
            map.entry((l.user_id.clone(), l.item_id.clone())).or_insert(l.rating);
        }
        LabelBook { labels: map }
    }

    pub fn get(&self, user: &str, item: &str) -> Option<f64> {
        self.labels.get(&(user.to_string(), item.to_string())).copied()
    }
}

/// Ratings of a split, taken from the records or else from `labels`.
pub fn split_truth(ds: &DomainPairDataset, domain: Domain, split: Split, labels: Option<&LabelBook>) -> Result<Vec<f64>> {
    let data = ds.domain(domain);
    data.split(split)
        .iter()
        .map(|&r| {
            let rec = data.record(r);
            rec.rating
                .or_else(|| labels.and_then(|l| l.get(&rec.user_id, &rec.item_id)))
                .ok_or_else(|| {
                    Error::Data(format!(
                        "no rating for {} interaction ({}, {})",
                        domain.as_str(),
                        rec.user_id,
                        rec.item_id
                    ))
                })
        })
        .collect()
}

/// Scores `generators` + `head` on a split of one domain.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    generators: &GeneratorSet,
    head: &ScoringHead,
    ds: &DomainPairDataset,
    domain: Domain,
    split: Split,
    labels: Option<&LabelBook>,
    features: Option<&FeatureMap>,
    variant: &str,
    seed: u64,
) -> Result<EvalResult> {
    let truth = split_truth(ds, domain, split, labels)?;
    let pred = predict_records(generators, head, ds, domain, ds.domain(domain).split(split), features)?;
    let (rmse, mae) = rmse_mae(&pred, &truth)?;
    Ok(EvalResult { rmse, mae, n: truth.len(), variant: variant.to_string(), seed })
}

/// The unadapted source model applied to target data.
pub fn source_only_eval(
    source: &GeneratorSet,
    head: &ScoringHead,
    ds: &DomainPairDataset,
    split: Split,
    labels: Option<&LabelBook>,
    features: Option<&FeatureMap>,
    seed: u64,
) -> Result<EvalResult> {
    evaluate(source, head, ds, Domain::Target, split, labels, features, "source-only", seed)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
