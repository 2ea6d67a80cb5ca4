use biant_core::data::{generate_corpus, ScenarioConfig};
use biant_core::generate::{generate_candidates, GenerationConfig, Strategy};
use biant_core::model::{init_params, ModelConfig};
use biant_core::prompt::{PreambleMode, TokenSpace};
use biant_core::sequence::make_forward_instances;
use biant_core::train::{train, TrainConfig};
use biant_core::vocab::Vocabulary;

#[test]
fn every_constrained_generation_has_exact_length() {
    let vocab = Vocabulary::demo();
    let corpus = generate_corpus(
        &vocab,
        &ScenarioConfig {
            num_videos: 40,
            ..Default::default()
        },
    )
    .unwrap();
    let space = TokenSpace::new(&vocab, 96);
    let model = ModelConfig {
        vocab_size: space.size(),
        embed_dim: 16,
        mlp_hidden: 32,
        ..Default::default()
    };
    let random = init_params(&model).unwrap();
    let (trained, _) = train(
        &corpus.train,
        &space,
        &TrainConfig {
            epochs: 1,
            ..Default::default()
        },
        &model,
    )
    .unwrap();
    let gen = GenerationConfig {
        k: 10,
        strategy: Strategy::AllSampled,
        temperature: 1.5,
        ..Default::default()
    };
    let mut count = 0;
    for params in [&random, &trained] {
        for mode in [PreambleMode::SpecialToken, PreambleMode::DetailedDescription] {
            for inst in corpus
                .test
                .iter()
                .flat_map(|v| make_forward_instances(v, &Default::default()))
                .step_by(3)
            {
                let set = generate_candidates(params, &space, &inst.observed, 20, &gen, mode, &inst.id()).unwrap();
                for c in &set.candidates {
                    assert_eq!(c.len(), 20);
                    assert!(c.iter().all(|a| vocab.contains(*a)));
                    count += 1;
                }
            }
        }
    }
    assert!(count >= 1000, "only {count} generations");
}
