//! Shared fixtures for the benchmarks.

use orpo_core::data::{
    corpus_texts, filter_and_tokenize, make_synthetic_corpus, split, TokenizeConfig,
};
use orpo_core::lm::build_vocab;
use orpo_core::{DatasetSplit, LMConfig, TinyLM};

pub struct Fixture {
    pub split: DatasetSplit,
    pub model: TinyLM,
}

/// Synthetic corpus of `n` triples with a default-sized policy.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let rows = make_synthetic_corpus(n, seed);
    let vocab = build_vocab(&corpus_texts(&rows), 1, false).expect("synthetic corpus is non-empty");
    let (triples, stats) = filter_and_tokenize(&rows, &vocab, &TokenizeConfig::default());
    let split = split(triples, [0.8, 0.1, 0.1], seed, stats).expect("valid fractions");
    let config = LMConfig {
        vocab_size: vocab.len(),
        embed_dim: 16,
        hidden_dim: 48,
        context_window: 4,
        seed: seed as u32,
    };
    Fixture {
        split,
        model: TinyLM::new(config).expect("valid config"),
    }
}
