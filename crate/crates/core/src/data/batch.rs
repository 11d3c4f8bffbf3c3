use rand::seq::SliceRandom;
use rand::Rng;

use super::features::FeatureMap;
use super::pair::{DomainData, DomainPairDataset, Split};
use crate::error::{Error, Result};
use crate::layers::TokenMatrix;
use crate::models::{Domain, ItemInput};
use crate::numerics::{seeded_rng, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 512;

/// Model-ready rows of one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub records: Vec<usize>,
    pub users: TokenMatrix,
    pub items: ItemInput,
    /// Present only when every record carries a rating.
    pub ratings: Option<Vec<f64>>,
    /// 1 for source rows, 0 for target rows.
    pub domain_labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Shuffles a copy of `indices` and cuts it into batches; the last batch
/// may be short.
pub fn batch_indices<R: Rng + ?Sized>(indices: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn stream_for(domain: Domain, split: Split, epoch: usize) -> u64 {
    let d = match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    };
    let s = match split {
        Split::Train => 0,
        Split::Valid => 1,
        Split::Test => 2,
    };
    1000 + (epoch as u64) * 8 + d * 4 + s
}

/// Record indices of one epoch's batches for a domain split.
pub fn batches(
    ds: &DomainPairDataset,
    domain: Domain,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = seeded_rng(seed, stream_for(domain, split, epoch));
    batch_indices(ds.domain(domain).split(split), batch_size, &mut rng)
}

/// Unshuffled batches, for evaluation.
pub fn sequential_batches(indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    indices.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn token_matrix(seqs: &[Vec<u32>]) -> Result<TokenMatrix> {
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    TokenMatrix::from_sequences(&refs)
}

pub fn item_features(data: &DomainData, records: &[usize], features: &FeatureMap) -> Result<Tensor> {
    let mut width = None;
    let mut flat = Vec::new();
    for &r in records {
        let rec = data.record(r);
        let key = rec.image_feature_id.as_deref().unwrap_or(&rec.item_id);
        let f = features
            .get(key)
            .ok_or_else(|| Error::Data(format!("no features for item {:?} (key {key:?})", rec.item_id)))?;
        if *width.get_or_insert(f.len()) != f.len() {
            return Err(Error::Data(format!("feature width mismatch at item {:?}", rec.item_id)));
        }
        flat.extend_from_slice(f);
    }
    Tensor::matrix(records.len(), width.unwrap_or(0), flat)
}

/// Builds the user texts, item texts (or features) and labels of the given
/// records, leaving each record's own review out of its texts.
pub fn make_batch(
    ds: &DomainPairDataset,
    domain: Domain,
    records: &[usize],
    features: Option<&FeatureMap>,
) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let data = ds.domain(domain);
    let user_texts: Vec<Vec<u32>> = records.iter().map(|&r| data.user_text(r)).collect();
    let items = match features {
        Some(map) => ItemInput::Features(item_features(data, records, map)?),
        None => {
            let texts: Vec<Vec<u32>> = records.iter().map(|&r| data.item_text(r)).collect();
            ItemInput::Tokens(token_matrix(&texts)?)
        }
    };
    let ratings: Option<Vec<f64>> = records.iter().map(|&r| data.rating(r)).collect();
    Ok(Batch {
        records: records.to_vec(),
        users: token_matrix(&user_texts)?,
        items,
        ratings,
        domain_labels: vec![domain.label(); records.len()],
    })
}

/// User texts only, for user-level alignment batches.
pub fn user_tokens(ds: &DomainPairDataset, domain: Domain, records: &[usize]) -> Result<TokenMatrix> {
    let data = ds.domain(domain);
    token_matrix(&records.iter().map(|&r| data.user_text(r)).collect::<Vec<_>>())
}

/// Item inputs only, for item-level alignment batches.
pub fn item_inputs(
    ds: &DomainPairDataset,
    domain: Domain,
    records: &[usize],
    features: Option<&FeatureMap>,
) -> Result<ItemInput> {
    let data = ds.domain(domain);
    match features {
        Some(map) => Ok(ItemInput::Features(item_features(data, records, map)?)),
        None => Ok(ItemInput::Tokens(token_matrix(
            &records.iter().map(|&r| data.item_text(r)).collect::<Vec<_>>(),
        )?)),
    }
}
