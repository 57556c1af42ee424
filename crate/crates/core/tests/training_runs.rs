use orpo_core::data::{
    corpus_texts, filter_and_tokenize, make_synthetic_corpus, split, TokenizeConfig,
};
use orpo_core::lm::{build_vocab, read_checkpoint, write_checkpoint};
use orpo_core::trainer::{telemetry_to_csv, train};
use orpo_core::{DatasetSplit, LMConfig, LossKind, TinyLM, TrainConfig};

fn small() -> (TinyLM, DatasetSplit) {
    let rows = make_synthetic_corpus(240, 17);
    let vocab = build_vocab(&corpus_texts(&rows), 1, false).unwrap();
    let (triples, stats) = filter_and_tokenize(&rows, &vocab, &TokenizeConfig::default());
    let split = split(triples, [0.8, 0.1, 0.1], 17, stats).unwrap();
    let model = TinyLM::new(LMConfig {
        vocab_size: vocab.len(),
        embed_dim: 8,
        hidden_dim: 16,
        context_window: 4,
        seed: 17,
    })
    .unwrap();
    (model, split)
}

fn bits(m: &TinyLM) -> Vec<u64> {
    m.tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|x| x.to_bits()))
        .collect()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn training_is_independent_of_thread_count() {
    let (model, split) = small();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let one = in_pool(1, || train(model.clone(), &split, &cfg).unwrap());
    let four = in_pool(4, || train(model.clone(), &split, &cfg).unwrap());
    assert_eq!(
        telemetry_to_csv(&one.telemetry),
        telemetry_to_csv(&four.telemetry)
    );
    assert_eq!(bits(&one.model), bits(&four.model));
}

#[test]
fn dpo_reference_stays_frozen() {
    let (model, split) = small();
    let cfg = TrainConfig {
        loss_kind: LossKind::Dpo,
        epochs: 1,
        batch_size: 16,
        seed: 5,
        ..Default::default()
    };
    let outcome = train(model.clone(), &split, &cfg).unwrap();
    let reference = outcome.reference.expect("dpo keeps its reference");
    assert_eq!(bits(&reference), bits(&model));
    assert_ne!(bits(&outcome.model), bits(&model));

    let mut bytes = Vec::new();
    write_checkpoint(&reference, &mut bytes).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(bits(&back), bits(&model));
    assert_eq!(back.config, model.config);
}

#[test]
fn other_losses_keep_no_reference() {
    let (model, split) = small();
    for kind in [LossKind::Sft, LossKind::Orpo, LossKind::OrpoPr] {
        let cfg = TrainConfig {
            loss_kind: kind,
            max_steps: Some(2),
            ..Default::default()
        };
        let o = train(model.clone(), &split, &cfg).unwrap();
        assert!(o.reference.is_none());
        assert_eq!(
            o.forward_passes,
            2 * (o.telemetry.len() * cfg.batch_size.min(split.train.len())) as u64
        );
    }
}
