//! Review corpora, vocabulary, domain pairing, batching and synthetic
//! domain pairs.

mod batch;
mod features;
mod pair;
mod records;
mod synth;
mod vocab;

pub use batch::{
    batch_indices, batches, item_features, item_inputs, make_batch, sequential_batches, user_tokens, Batch,
    DEFAULT_BATCH_SIZE,
};
pub use features::{feature_ingest, feature_width, parse_features, FeatureMap};
pub use pair::{
    assemble_pair, DomainData, DomainPairDataset, PairOptions, PreparedDomain, PreparedPair, SharedObject, Split,
};
pub use records::{
    check_rating, ingest_reviews, parse_reviews, parse_sealed_labels, read_sealed_labels, write_reviews,
    write_sealed_labels, CorpusStats, ReviewRecord, Schema, SealedLabel, RATING_MAX, RATING_MIN,
};
pub use synth::{synthesize_domain_pair, Shift, SynthConfig, SyntheticPair};
pub use vocab::{build_vocabulary, tokenize, Vocabulary, DEFAULT_MIN_COUNT, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[cfg(test)]
mod tests;
