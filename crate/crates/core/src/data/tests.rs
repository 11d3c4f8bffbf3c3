use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::models::{Domain, ItemInput};
use crate::Error;

fn record(user: &str, item: &str, rating: f64, text: &str) -> ReviewRecord {
    ReviewRecord {
        user_id: user.into(),
        item_id: item.into(),
        rating: Some(rating),
        review_text: text.into(),
        image_feature_id: None,
    }
}

fn opts(seed: u64) -> PairOptions {
    PairOptions { min_count: 1, max_len: 500, seed }
}

fn corpus(prefix: &str, users: &[&str], n: usize) -> Vec<ReviewRecord> {
    (0..n)
        .map(|i| {
            let u = users[i % users.len()];
            record(u, &format!("{prefix}item{}", i % 3), 1.0 + (i % 5) as f64, &format!("{prefix} word{i} m{prefix}{i}"))
        })
        .collect()
}

#[test]
fn disjoint_domains_share_nothing() {
    let ds = assemble_pair(corpus("s", &["a", "b"], 10), corpus("t", &["c", "d"], 10), opts(1)).unwrap();
    assert!(ds.shared_users.is_empty());
    assert!(ds.shared_items.is_empty());
    assert!(ds.shared_user_pairs().is_empty());
}

#[test]
fn shared_users_get_equal_review_counts() {
    let src = corpus("s", &["x", "y", "s1", "s2", "s3"], 10);
    let tgt = corpus("t", &["x", "y"], 10);
    let ds = assemble_pair(src, tgt, opts(3)).unwrap();
    assert_eq!(ds.shared_users.iter().map(|o| o.id.as_str()).collect::<Vec<_>>(), ["x", "y"]);
    for shared in &ds.shared_users {
        // Oracle: count training reviews per side straight from the splits.
        let count = |d: &DomainData| {
            d.split(Split::Train).iter().filter(|&&r| d.record(r).user_id == shared.id).count()
        };
        let expected = count(&ds.source).min(count(&ds.target));
        assert_eq!(shared.source_reviews.len(), expected);
        assert_eq!(shared.target_reviews.len(), expected);
        for &r in &shared.source_reviews {
            assert_eq!(ds.source.record(r).user_id, shared.id);
            assert!(ds.source.split(Split::Train).contains(&r));
        }
        for &r in &shared.target_reviews {
            assert_eq!(ds.target.record(r).user_id, shared.id);
        }
    }
}

#[test]
fn same_seed_same_splits() {
    let a = assemble_pair(corpus("s", &["a"], 40), corpus("t", &["b"], 40), opts(9)).unwrap();
    let b = assemble_pair(corpus("s", &["a"], 40), corpus("t", &["b"], 40), opts(9)).unwrap();
    let c = assemble_pair(corpus("s", &["a"], 40), corpus("t", &["b"], 40), opts(10)).unwrap();
    for split in Split::ALL {
        assert_eq!(a.source.split(split), b.source.split(split));
        assert_eq!(a.target.split(split), b.target.split(split));
    }
    assert_ne!(a.source.split(Split::Train), c.source.split(Split::Train));
}

#[test]
fn empty_domain_is_config_error() {
    let err = assemble_pair(corpus("s", &["a"], 10), Vec::new(), opts(0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn vocabulary_ignores_held_out_text() {
    let ds = assemble_pair(corpus("s", &["a"], 20), corpus("t", &["b"], 20), opts(4)).unwrap();
    for d in [&ds.source, &ds.target] {
        for &r in d.split(Split::Test).iter().chain(d.split(Split::Valid)) {
            let marker = tokenize(&d.record(r).review_text).pop().unwrap();
            assert!(!ds.vocab.contains(&marker), "{marker} leaked into vocabulary");
        }
        for &r in d.split(Split::Train) {
            let marker = tokenize(&d.record(r).review_text).pop().unwrap();
            assert!(ds.vocab.contains(&marker));
        }
    }
}

#[test]
fn own_review_never_reaches_its_texts() {
    let ds = assemble_pair(corpus("s", &["a", "b"], 30), corpus("t", &["c"], 30), opts(5)).unwrap();
    for d in [&ds.source, &ds.target] {
        for r in 0..d.records().len() {
            let own = ds.vocab.encode(&d.record(r).review_text);
            let marker = *own.last().unwrap();
            let user_text = d.user_text(r);
            let item_text = d.item_text(r);
            if marker != UNK {
                assert!(!user_text.contains(&marker));
                assert!(!item_text.contains(&marker));
            }
            // Every other training review of the user is present.
            for &other in d.user_reviews(d.user_of(r)) {
                if other != r {
                    let m = *ds.vocab.encode(&d.record(other).review_text).last().unwrap();
                    assert!(user_text.contains(&m));
                }
            }
        }
    }
}

#[test]
fn texts_are_truncated_and_never_empty() {
    let mut ds_opts = opts(6);
    ds_opts.max_len = 4;
    let src = vec![record("solo", "i", 3.0, "only review here"), record("a", "j", 3.0, "x y z"), record("a", "j", 4.0, "p q r")];
    let ds = assemble_pair(src.clone(), src, ds_opts).unwrap();
    for r in 0..3 {
        let t = ds.source.user_text(r);
        assert!(!t.is_empty() && t.len() <= 4);
    }
    let solo = ds.source.records().iter().position(|r| r.user_id == "solo").unwrap();
    assert_eq!(ds.source.user_text(solo), [PAD]);
}

#[test]
fn batch_sizes_and_partition() {
    let idx: Vec<usize> = (0..10).collect();
    let mut rng = crate::numerics::seeded_rng(1, 0);
    let b = batch_indices(&idx, 4, &mut rng);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    let all: BTreeSet<usize> = b.iter().flatten().copied().collect();
    assert_eq!(all.len(), 10);
    assert_eq!(b.iter().flatten().count(), 10);

    let ds = assemble_pair(corpus("s", &["a"], 50), corpus("t", &["b"], 50), opts(2)).unwrap();
    let e0 = batches(&ds, Domain::Source, Split::Train, 16, 3, 0);
    assert_eq!(e0, batches(&ds, Domain::Source, Split::Train, 16, 3, 0));
    assert_ne!(e0, batches(&ds, Domain::Source, Split::Train, 16, 3, 1));
    let mut flat: Vec<usize> = e0.into_iter().flatten().collect();
    flat.sort_unstable();
    assert_eq!(flat, ds.source.split(Split::Train));
}

#[test]
fn target_batches_carry_labels_not_ratings() {
    let pair = synthesize_domain_pair(&SynthConfig { interactions: 300, ..SynthConfig::default() }, 1).unwrap();
    let ds = pair.assemble(PairOptions { max_len: 16, ..opts(1) }).unwrap();
    let rows = &ds.target.split(Split::Train)[..8];
    let b = make_batch(&ds, Domain::Target, rows, None).unwrap();
    assert!(b.ratings.is_none());
    assert_eq!(b.domain_labels, vec![0; 8]);
    assert!(b.users.max_length() <= 16);
    let s = make_batch(&ds, Domain::Source, &ds.source.split(Split::Train)[..5], None).unwrap();
    assert_eq!(s.ratings.as_ref().unwrap().len(), 5);
    assert_eq!(s.domain_labels, vec![1; 5]);
    assert!(matches!(s.items, ItemInput::Tokens(_)));
}

#[test]
fn feature_batches_follow_item_ids() {
    let src = vec![record("a", "i1", 3.0, "w"), record("b", "i2", 4.0, "w")];
    let ds = assemble_pair(src.clone(), src, opts(0)).unwrap();
    let mut map = FeatureMap::new();
    map.insert("i1".into(), vec![1.0, 2.0]);
    map.insert("i2".into(), vec![3.0, 4.0]);
    let rows = [ds.source.records().iter().position(|r| r.item_id == "i2").unwrap()];
    let b = make_batch(&ds, Domain::Source, &rows, Some(&map)).unwrap();
    match b.items {
        ItemInput::Features(f) => assert_eq!(f.data(), &[3.0, 4.0]),
        _ => panic!("expected features"),
    }
    map.remove("i2");
    assert!(matches!(make_batch(&ds, Domain::Source, &rows, Some(&map)), Err(Error::Data(_))));
}

#[test]
fn prepared_round_trip_preserves_everything() {
    let pair = synthesize_domain_pair(
        &SynthConfig { interactions: 200, shared_user_fraction: 0.3, ..SynthConfig::default() },
        5,
    )
    .unwrap();
    let ds = pair.assemble(opts(5)).unwrap();
    let json = serde_json::to_string(&ds.to_prepared()).unwrap();
    let back = DomainPairDataset::from_prepared(serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.vocab, ds.vocab);
    assert_eq!(back.shared_users, ds.shared_users);
    for r in 0..ds.target.records().len() {
        assert_eq!(back.target.user_text(r), ds.target.user_text(r));
        assert_eq!(back.target.item_text(r), ds.target.item_text(r));
    }
    assert_eq!(serde_json::to_string(&back.to_prepared()).unwrap(), json);
}

#[test]
fn synthetic_pairs_are_seed_deterministic() {
    let cfg = SynthConfig { interactions: 300, ..SynthConfig::default() };
    let a = synthesize_domain_pair(&cfg, 11).unwrap();
    let b = synthesize_domain_pair(&cfg, 11).unwrap();
    let c = synthesize_domain_pair(&cfg, 12).unwrap();
    assert_eq!(a.source, b.source);
    assert_eq!(a.target, b.target);
    assert_eq!(a.sealed_labels, b.sealed_labels);
    assert_ne!(a.source, c.source);
    assert!(a.target.iter().all(|r| r.rating.is_none()));
    assert_eq!(a.sealed_labels.len(), a.target.len());
}

fn histogram(ratings: impl Iterator<Item = f64>) -> [f64; 4] {
    let mut h = [0.0; 4];
    let mut n = 0.0;
    for r in ratings {
        h[((r - 1.0).floor() as usize).min(3)] += 1.0;
        n += 1.0;
    }
    h.map(|c| c / n)
}

#[test]
fn identity_shift_keeps_rating_marginals() {
    let cfg = SynthConfig { interactions: 5000, users: 500, items: 300, shift: Shift::Identity, ..SynthConfig::default() };
    let pair = synthesize_domain_pair(&cfg, 21).unwrap();
    let hs = histogram(pair.source.iter().map(|r| r.rating.unwrap()));
    let ht = histogram(pair.sealed_labels.iter().map(|l| l.rating));
    for (a, b) in hs.iter().zip(ht) {
        // Population draws of 500 users and 300 items dominate the noise.
        assert!((a - b).abs() < 0.06, "{hs:?} vs {ht:?}");
    }
    let words = |rs: &[ReviewRecord]| -> BTreeSet<String> { rs.iter().flat_map(|r| tokenize(&r.review_text)).collect() };
    assert_eq!(words(&pair.source), words(&pair.target));
}

#[test]
fn remap_shift_changes_only_fillers() {
    let pair = synthesize_domain_pair(&SynthConfig { interactions: 500, ..SynthConfig::default() }, 2).unwrap();
    let words = |rs: &[ReviewRecord]| -> BTreeSet<String> { rs.iter().flat_map(|r| tokenize(&r.review_text)).collect() };
    let (s, t) = (words(&pair.source), words(&pair.target));
    assert!(s.iter().all(|w| !w.starts_with("tw")));
    assert!(t.iter().all(|w| !w.starts_with("sw")));
    let signal = |set: &BTreeSet<String>| -> BTreeSet<String> {
        set.iter().filter(|w| !w.starts_with("sw") && !w.starts_with("tw")).cloned().collect()
    };
    assert_eq!(signal(&s), signal(&t));
}

#[test]
fn shared_fraction_reuses_ids() {
    let cfg = SynthConfig { shared_user_fraction: 0.3, shared_item_fraction: 0.2, ..SynthConfig::default() };
    let pair = synthesize_domain_pair(&cfg, 4).unwrap();
    let ids = |rs: &[ReviewRecord], f: fn(&ReviewRecord) -> &str| -> BTreeSet<String> {
        rs.iter().map(|r| f(r).to_string()).collect()
    };
    let su = ids(&pair.source, |r| &r.user_id);
    let tu = ids(&pair.target, |r| &r.user_id);
    let shared = su.intersection(&tu).count();
    assert!(shared > 40 && shared <= 60, "{shared}");
    let si = ids(&pair.source, |r| &r.item_id);
    let ti = ids(&pair.target, |r| &r.item_id);
    assert!(si.intersection(&ti).count() <= 20);
}

#[test]
fn noiseless_planted_model_is_linearly_recoverable() {
    // Oracle probe: least squares on bias-token indicators of the user's and
    // item's texts. With no interaction term and no noise the ratings are a
    // linear function of the two bias levels.
    let cfg = SynthConfig { noise: 0.0, interaction_scale: 0.0, interactions: 1500, ..SynthConfig::default() };
    let ds = synthesize_domain_pair(&cfg, 8).unwrap().assemble(opts(8)).unwrap();
    let d = &ds.source;
    let feature_ids: Vec<u32> = (0..cfg.bias_levels)
        .flat_map(|l| [ds.vocab.id(&format!("ub{l}")), ds.vocab.id(&format!("ib{l}"))])
        .collect();
    let features = |r: usize| -> Vec<f64> {
        let (u, v) = (d.user_text(r), d.item_text(r));
        let mut row = vec![1.0];
        for (k, &id) in feature_ids.iter().enumerate() {
            let text = if k % 2 == 0 { &u } else { &v };
            // Majority token: the party's own bias level is in every review.
            let share = text.iter().filter(|&&t| t == id).count() as f64 / text.len() as f64;
            let max_share = feature_ids
                .iter()
                .skip(k % 2)
                .step_by(2)
                .map(|&o| text.iter().filter(|&&t| t == o).count())
                .max()
                .unwrap() as f64
                / text.len() as f64;
            row.push(if share == max_share && share > 0.0 { 1.0 } else { 0.0 });
        }
        row
    };
    let usable = |r: &usize| d.user_reviews(d.user_of(*r)).len() > 3 && d.item_reviews(d.item_of(*r)).len() > 3;
    let train: Vec<usize> = d.split(Split::Train).iter().copied().filter(usable).collect();
    let test: Vec<usize> = d.split(Split::Test).iter().copied().filter(usable).collect();
    let x = nalgebra::DMatrix::from_fn(train.len(), 1 + feature_ids.len(), |i, j| features(train[i])[j]);
    let y = nalgebra::DVector::from_iterator(train.len(), train.iter().map(|&r| d.rating(r).unwrap()));
    let beta = x.clone().svd(true, true).solve(&y, 1e-9).unwrap();
    let mse: f64 = test
        .iter()
        .map(|&r| {
            let f = features(r);
            let pred: f64 = f.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            (pred - d.rating(r).unwrap()).powi(2)
        })
        .sum::<f64>()
        / test.len() as f64;
    assert!(test.len() > 50);
    assert!(mse.sqrt() < 0.1, "probe RMSE {}", mse.sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_partition_with_expected_fractions(n in 1usize..400, seed in 0u64..1000) {
        let recs: Vec<ReviewRecord> = (0..n).map(|i| record(&format!("u{}", i % 7), "i", 3.0, "w")).collect();
        let ds = assemble_pair(recs.clone(), recs, opts(seed)).unwrap();
        let d = &ds.source;
        let mut all: Vec<usize> = Split::ALL.iter().flat_map(|&s| d.split(s).to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (split, frac) in [(Split::Train, 0.8), (Split::Valid, 0.1), (Split::Test, 0.1)] {
            let got = d.split(split).len() as f64;
            prop_assert!((got - frac * n as f64).abs() <= 1.0, "{:?}: {} of {}", split, got, n);
        }
    }
}
