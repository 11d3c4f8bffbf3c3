//! Synthetic domain pairs with a planted preference model.
//!
//! Users and items carry a bias level and a small trait vector. A rating is
//! `3 + b_u + b_v + α·⟨p_u, q_v⟩/k + noise`, clipped to `[1, 5]`. Each
//! review renders both parties through a fixed code: one bias token per
//! party, one binned trait token per dimension and party, and some filler
//! words, in shuffled order. The target domain draws a fresh population
//! from the same model (sharing a configurable fraction of users and items
//! with the source) and renders it with a shifted code.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pair::{assemble_pair, DomainPairDataset, PairOptions};
use super::records::{ReviewRecord, SealedLabel, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// How the target domain's text code differs from the source's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shift {
    /// Same code in both domains.
    Identity,
    /// Target reviews use their own filler vocabulary.
    Remap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub shared_user_fraction: f64,
    pub shared_item_fraction: f64,
    pub bias_levels: usize,
    pub bias_scale: f64,
    pub trait_dims: usize,
    pub trait_bins: usize,
    pub interaction_scale: f64,
    pub noise: f64,
    pub filler_vocab: usize,
    pub fillers_per_review: usize,
    pub shift: Shift,
    /// Rotation of the first two trait dimensions in the target's rendering.
    pub trait_rotation_degrees: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 100,
            interactions: 2000,
            shared_user_fraction: 0.0,
            shared_item_fraction: 0.0,
            bias_levels: 5,
            bias_scale: 0.8,
            trait_dims: 2,
            trait_bins: 4,
            interaction_scale: 0.5,
            noise: 0.2,
            filler_vocab: 16,
            fillers_per_review: 2,
            shift: Shift::Remap,
            trait_rotation_degrees: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("users", self.users),
            ("items", self.items),
            ("interactions", self.interactions),
            ("bias_levels", self.bias_levels),
            ("trait_bins", self.trait_bins),
            ("filler_vocab", self.filler_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("synthetic {name} must be positive")));
            }
        }
        if self.interactions * 2 > self.users * self.items {
            return Err(Error::Config(format!(
                "{} interactions is too dense for {} users x {} items",
                self.interactions, self.users, self.items
            )));
        }
        for (name, f) in [("shared_user_fraction", self.shared_user_fraction), ("shared_item_fraction", self.shared_item_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} {f} outside [0, 1]")));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise {} must be a finite non-negative number", self.noise)));
        }
        if self.trait_rotation_degrees != 0.0 && self.trait_dims < 2 {
            return Err(Error::Config("trait rotation needs at least two trait dimensions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Party {
    id: String,
    level: usize,
    traits: Vec<f64>,
}

/// Source reviews (rated), target reviews (unrated) and the target labels.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: Vec<ReviewRecord>,
    pub target: Vec<ReviewRecord>,
    pub sealed_labels: Vec<SealedLabel>,
}

impl SyntheticPair {
    pub fn assemble(&self, options: PairOptions) -> Result<DomainPairDataset> {
        assemble_pair(self.source.clone(), self.target.clone(), options)
    }
}

fn draw_party<R: Rng>(id: String, cfg: &SynthConfig, rng: &mut R) -> Party {
    let level = rng.random_range(0..cfg.bias_levels);
    let traits = (0..cfg.trait_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
    Party { id, level, traits }
}

fn bias(cfg: &SynthConfig, level: usize) -> f64 {
    if cfg.bias_levels == 1 {
        return 0.0;
    }
    cfg.bias_scale * (2.0 * level as f64 / (cfg.bias_levels - 1) as f64 - 1.0)
}

fn trait_bin(cfg: &SynthConfig, v: f64) -> usize {
    let b = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * cfg.trait_bins as f64).floor() as usize;
    b.min(cfg.trait_bins - 1)
}

fn rendered_traits(cfg: &SynthConfig, traits: &[f64], rotate: bool) -> Vec<f64> {
    let mut t = traits.to_vec();
    if rotate && cfg.trait_rotation_degrees != 0.0 {
        let (s, c) = cfg.trait_rotation_degrees.to_radians().sin_cos();
        let (a, b) = (traits[0], traits[1]);
        t[0] = c * a - s * b;
        t[1] = s * a + c * b;
    }
    t
}

fn render_review<R: Rng>(cfg: &SynthConfig, user: &Party, item: &Party, target: bool, rng: &mut R) -> String {
    let mut words = vec![format!("ub{}", user.level), format!("ib{}", item.level)];
    for (d, v) in rendered_traits(cfg, &user.traits, target).iter().enumerate() {
        words.push(format!("ut{d}x{}", trait_bin(cfg, *v)));
    }
    for (d, v) in rendered_traits(cfg, &item.traits, target).iter().enumerate() {
        words.push(format!("it{d}x{}", trait_bin(cfg, *v)));
    }
    let filler = if target && cfg.shift == Shift::Remap { "tw" } else { "sw" };
    for _ in 0..cfg.fillers_per_review {
        words.push(format!("{filler}{}", rng.random_range(0..cfg.filler_vocab)));
    }
    words.shuffle(rng);
    words.join(" ")
}

fn rate<R: Rng>(cfg: &SynthConfig, user: &Party, item: &Party, noise: &Normal<f64>, rng: &mut R) -> f64 {
    let k = cfg.trait_dims.max(1) as f64;
    let dot: f64 = user.traits.iter().zip(&item.traits).map(|(a, b)| a * b).sum();
    let r = 3.0 + bias(cfg, user.level) + bias(cfg, item.level) + cfg.interaction_scale * dot / k + noise.sample(rng);
    r.clamp(RATING_MIN, RATING_MAX)
}

fn sample_pairs<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.interactions);
    while out.len() < cfg.interactions {
        let pair = (rng.random_range(0..cfg.users), rng.random_range(0..cfg.items));
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    out
}

fn domain_records<R: Rng>(
    cfg: &SynthConfig,
    users: &[Party],
    items: &[Party],
    target: bool,
    rng: &mut R,
) -> Result<Vec<(ReviewRecord, f64)>> {
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let pairs = sample_pairs(cfg, rng);
    Ok(pairs
        .into_iter()
        .map(|(u, v)| {
            let (user, item) = (&users[u], &items[v]);
            let rating = rate(cfg, user, item, &noise, rng);
            let record = ReviewRecord {
                user_id: user.id.clone(),
                item_id: item.id.clone(),
                rating: Some(rating),
                review_text: render_review(cfg, user, item, target, rng),
                image_feature_id: None,
            };
            (record, rating)
        })
        .collect())
}

pub fn synthesize_domain_pair(cfg: &SynthConfig, seed: u64) -> Result<SyntheticPair> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed, 7);
    let source_users: Vec<Party> = (0..cfg.users).map(|i| draw_party(format!("su{i}"), cfg, &mut rng)).collect();
    let source_items: Vec<Party> = (0..cfg.items).map(|i| draw_party(format!("si{i}"), cfg, &mut rng)).collect();
    let n_shared_users = (cfg.shared_user_fraction * cfg.users as f64).round() as usize;
    let n_shared_items = (cfg.shared_item_fraction * cfg.items as f64).round() as usize;
    let target_users: Vec<Party> = (0..cfg.users)
        .map(|i| {
            if i < n_shared_users {
                source_users[i].clone()
            } else {
                draw_party(format!("tu{i}"), cfg, &mut rng)
            }
        })
        .collect();
    let target_items: Vec<Party> = (0..cfg.items)
        .map(|i| {
            if i < n_shared_items {
                source_items[i].clone()
            } else {
                draw_party(format!("ti{i}"), cfg, &mut rng)
            }
        })
        .collect();

    let source = domain_records(cfg, &source_users, &source_items, false, &mut rng)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let mut target = Vec::with_capacity(cfg.interactions);
    let mut sealed_labels = Vec::with_capacity(cfg.interactions);
    for (mut record, rating) in domain_records(cfg, &target_users, &target_items, true, &mut rng)? {
        record.rating = None;
        sealed_labels.push(SealedLabel {
            user_id: record.user_id.clone(),
            item_id: record.item_id.clone(),
            rating,
        });
        target.push(record);
    }
    Ok(SyntheticPair { source, target, sealed_labels })
}
