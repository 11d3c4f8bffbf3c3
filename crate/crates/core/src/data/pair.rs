use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::records::ReviewRecord;
use super::vocab::{build_vocabulary, Vocabulary, DEFAULT_MIN_COUNT, PAD};
use crate::error::{Error, Result};
use crate::models::Domain;
use crate::numerics::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn slot(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOptions {
    pub min_count: usize,
    /// Concatenated texts are cut to this many tokens.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions { min_count: DEFAULT_MIN_COUNT, max_len: 500, seed: 0 }
    }
}

/// One domain's records, splits and per-user/per-item training reviews.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub domain: Domain,
    records: Vec<ReviewRecord>,
    tokens: Vec<Vec<u32>>,
    splits: [Vec<usize>; 3],
    users: Vec<String>,
    items: Vec<String>,
    user_of: Vec<usize>,
    item_of: Vec<usize>,
    user_train: Vec<Vec<usize>>,
    item_train: Vec<Vec<usize>>,
    max_len: usize,
}

fn split_indices(n: usize, seed: u64, stream: u64) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, stream));
    let n_train = (0.8 * n as f64).round() as usize;
    let n_valid = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..n_train + n_valid].to_vec();
    let mut test = order[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    [train, valid, test]
}

fn dense_ids<'a>(ids: impl Iterator<Item = &'a str>) -> (Vec<String>, BTreeMap<String, usize>) {
    let set: BTreeSet<&str> = ids.collect();
    let names: Vec<String> = set.into_iter().map(str::to_string).collect();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    (names, index)
}

impl DomainData {
    fn build(
        domain: Domain,
        records: Vec<ReviewRecord>,
        splits: [Vec<usize>; 3],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let n = records.len();
        let mut seen = vec![false; n];
        for &i in splits.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::Data(format!(
                    "{} split index {i} is out of range or repeated",
                    domain.as_str()
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data(format!("{} splits do not cover every record", domain.as_str())));
        }
        if splits[0].is_empty() {
            return Err(Error::Config(format!("{} domain has no training interactions", domain.as_str())));
        }
        let (users, user_index) = dense_ids(records.iter().map(|r| r.user_id.as_str()));
        let (items, item_index) = dense_ids(records.iter().map(|r| r.item_id.as_str()));
        let user_of: Vec<usize> = records.iter().map(|r| user_index[&r.user_id]).collect();
        let item_of: Vec<usize> = records.iter().map(|r| item_index[&r.item_id]).collect();
        let mut user_train = vec![Vec::new(); users.len()];
        let mut item_train = vec![Vec::new(); items.len()];
        for &i in &splits[0] {
            user_train[user_of[i]].push(i);
            item_train[item_of[i]].push(i);
        }
        let tokens = records.iter().map(|r| vocab.encode(&r.review_text)).collect();
        Ok(DomainData {
            domain,
            records,
            tokens,
            splits,
            users,
            items,
            user_of,
            item_of,
            user_train,
            item_train,
            max_len,
        })
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &ReviewRecord {
        &self.records[i]
    }

    pub fn split(&self, split: Split) -> &[usize] {
        &self.splits[split.slot()]
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn user_of(&self, record: usize) -> usize {
        self.user_of[record]
    }

    pub fn item_of(&self, record: usize) -> usize {
        self.item_of[record]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(id)).ok()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.binary_search_by(|v| v.as_str().cmp(id)).ok()
    }

    /// Training reviews of a user, ascending by record index.
    pub fn user_reviews(&self, user: usize) -> &[usize] {
        &self.user_train[user]
    }

    pub fn item_reviews(&self, item: usize) -> &[usize] {
        &self.item_train[item]
    }

    pub fn review_tokens(&self, record: usize) -> &[u32] {
        &self.tokens[record]
    }

    fn concatenate(&self, reviews: &[usize], exclude: Option<usize>) -> Vec<u32> {
        let mut out = Vec::new();
        for &r in reviews {
            if Some(r) == exclude {
                continue;
            }
            out.extend_from_slice(&self.tokens[r]);
            if out.len() >= self.max_len {
                break;
            }
        }
        out.truncate(self.max_len);
        if out.is_empty() {
            // Nothing to read: a lone padding token.
            out.push(PAD);
        }
        out
    }

    /// The user's concatenated training reviews without the review of
    /// `record` itself.
    pub fn user_text(&self, record: usize) -> Vec<u32> {
        self.concatenate(&self.user_train[self.user_of[record]], Some(record))
    }

    pub fn item_text(&self, record: usize) -> Vec<u32> {
        self.concatenate(&self.item_train[self.item_of[record]], Some(record))
    }

    pub fn user_text_by_index(&self, user: usize) -> Vec<u32> {
        self.concatenate(&self.user_train[user], None)
    }

    pub fn item_text_by_index(&self, item: usize) -> Vec<u32> {
        self.concatenate(&self.item_train[item], None)
    }

    pub fn rating(&self, record: usize) -> Option<f64> {
        self.records[record].rating
    }

    /// Ratings of a split, failing if any is missing.
    pub fn ratings(&self, split: Split) -> Result<Vec<f64>> {
        self.split(split)
            .iter()
            .map(|&i| {
                self.records[i].rating.ok_or_else(|| {
                    Error::Data(format!(
                        "{} record {i} ({}, {}) has no rating",
                        self.domain.as_str(),
                        self.records[i].user_id,
                        self.records[i].item_id
                    ))
                })
            })
            .collect()
    }
}

/// A user or item present in both domains, with equally many training
/// reviews drawn from each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedObject {
    pub id: String,
    pub source_reviews: Vec<usize>,
    pub target_reviews: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DomainPairDataset {
    pub options: PairOptions,
    pub vocab: Vocabulary,
    pub source: DomainData,
    pub target: DomainData,
    pub shared_users: Vec<SharedObject>,
    pub shared_items: Vec<SharedObject>,
}

/// Serializable form: records, splits and vocabulary. Everything else is
/// rebuilt deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedPair {
    pub options: PairOptions,
    pub vocab: Vocabulary,
    pub source: PreparedDomain,
    pub target: PreparedDomain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedDomain {
    pub records: Vec<ReviewRecord>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

fn align_shared(
    source_train: &[Vec<usize>],
    target_train: &[Vec<usize>],
    source_names: &[String],
    target_names: &[String],
    seed: u64,
    stream: u64,
) -> Vec<SharedObject> {
    let mut rng = seeded_rng(seed, stream);
    let mut out = Vec::new();
    for (si, name) in source_names.iter().enumerate() {
        let Ok(ti) = target_names.binary_search(name) else { continue };
        let mut s = source_train[si].clone();
        let mut t = target_train[ti].clone();
        let keep = s.len().min(t.len());
        if s.len() > keep {
            s.shuffle(&mut rng);
            s.truncate(keep);
            s.sort_unstable();
        }
        if t.len() > keep {
            t.shuffle(&mut rng);
            t.truncate(keep);
            t.sort_unstable();
        }
        out.push(SharedObject { id: name.clone(), source_reviews: s, target_reviews: t });
    }
    out
}

const SOURCE_SPLIT_STREAM: u64 = 1;
const TARGET_SPLIT_STREAM: u64 = 2;
const SHARED_USER_STREAM: u64 = 3;
const SHARED_ITEM_STREAM: u64 = 4;

/// Splits both corpora 80/10/10, builds the joint vocabulary from training
/// text and aligns shared users and items.
pub fn assemble_pair(
    source: Vec<ReviewRecord>,
    target: Vec<ReviewRecord>,
    options: PairOptions,
) -> Result<DomainPairDataset> {
    if options.max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let s_splits = split_indices(source.len(), options.seed, SOURCE_SPLIT_STREAM);
    let t_splits = split_indices(target.len(), options.seed, TARGET_SPLIT_STREAM);
    let texts = s_splits[0]
        .iter()
        .map(|&i| source[i].review_text.as_str())
        .chain(t_splits[0].iter().map(|&i| target[i].review_text.as_str()));
    let vocab = build_vocabulary(texts, options.min_count);
    let [train, valid, test] = s_splits;
    let s = PreparedDomain { records: source, train, valid, test };
    let [train, valid, test] = t_splits;
    let t = PreparedDomain { records: target, train, valid, test };
    DomainPairDataset::from_prepared(PreparedPair { options, vocab, source: s, target: t })
}

impl DomainPairDataset {
    pub fn from_prepared(p: PreparedPair) -> Result<Self> {
        let vocab = p.vocab.reindexed();
        let build = |domain, d: PreparedDomain| {
            DomainData::build(domain, d.records, [d.train, d.valid, d.test], &vocab, p.options.max_len)
        };
        let source = build(Domain::Source, p.source)?;
        let target = build(Domain::Target, p.target)?;
        let shared_users = align_shared(
            &source.user_train,
            &target.user_train,
            &source.users,
            &target.users,
            p.options.seed,
            SHARED_USER_STREAM,
        );
        let shared_items = align_shared(
            &source.item_train,
            &target.item_train,
            &source.items,
            &target.items,
            p.options.seed,
            SHARED_ITEM_STREAM,
        );
        Ok(DomainPairDataset { options: p.options, vocab, source, target, shared_users, shared_items })
    }

    pub fn to_prepared(&self) -> PreparedPair {
        let dom = |d: &DomainData| PreparedDomain {
            records: d.records.clone(),
            train: d.splits[0].clone(),
            valid: d.splits[1].clone(),
            test: d.splits[2].clone(),
        };
        PreparedPair {
            options: self.options,
            vocab: self.vocab.clone(),
            source: dom(&self.source),
            target: dom(&self.target),
        }
    }

    pub fn domain(&self, domain: Domain) -> &DomainData {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// Aligned (source, target) review pairs over shared items: each pair
    /// contributes one source and one target user.
    pub fn shared_item_pairs(&self) -> Vec<(usize, usize)> {
        zip_pairs(&self.shared_items)
    }

    /// Aligned (source, target) review pairs over shared users.
    pub fn shared_user_pairs(&self) -> Vec<(usize, usize)> {
        zip_pairs(&self.shared_users)
    }
}

fn zip_pairs(objects: &[SharedObject]) -> Vec<(usize, usize)> {
    objects
        .iter()
        .flat_map(|o| o.source_reviews.iter().copied().zip(o.target_reviews.iter().copied()))
        .collect()
}
