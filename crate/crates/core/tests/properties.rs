use hmt_core::corpus::{generate_synthetic, DocSpec, GenConfig};
use hmt_core::eval::{f1_scores, path_sensitivity, Scope};
use hmt_core::{oracle, DecodeMode, HmtModel, LabelPath, ModelConfig, PredictOptions, Proposal, Taxonomy, Vocabulary};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gen_config(branching: Vec<usize>) -> GenConfig {
    GenConfig {
        branching,
        vocab_size: 80,
        signature_tokens: 2,
        documents: vec![
            DocSpec {
                doc_type: "title".into(),
                length: 3,
            },
            DocSpec {
                doc_type: "abstract".into(),
                length: 7,
            },
        ],
        train: 12,
        valid: 0,
        test: 0,
        ..GenConfig::default()
    }
}

fn small_model(branching: Vec<usize>, seed: u64) -> (HmtModel, Vec<Proposal>) {
    let gen = gen_config(branching);
    let corpus = generate_synthetic(&gen, seed).unwrap();
    let proposals = corpus.proposals(&corpus.train).unwrap();
    let vocab = Vocabulary::from_proposals(&gen.doc_types(), &proposals);
    let config = ModelConfig {
        hidden_dim: 8,
        encoder_layers: 1,
        decoder_layers: 1,
        num_heads: 2,
        dropout_p: 0.0,
        init_seed: seed,
        ..ModelConfig::desk()
    };
    (HmtModel::new(config, vocab, corpus.taxonomy).unwrap(), proposals)
}

fn paths(taxonomy: &Taxonomy, seed: u64, n: usize, valid: bool) -> Vec<LabelPath> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0..=taxonomy.max_depth());
            oracle::random_path(&mut rng, taxonomy, len, valid)
        })
        .collect()
}

fn branching() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1usize..4, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn f1_is_bounded_and_micro_is_symmetric(b in branching(), seed in 0u64..1000, n in 1usize..30) {
        let t = Taxonomy::balanced(&b).unwrap();
        let preds = paths(&t, seed, n, false);
        let truths = paths(&t, seed + 1, n, true);
        for scope in [Scope::Overall, Scope::Level(1), Scope::Below(1)] {
            let f = f1_scores(&preds, &truths, scope).unwrap();
            prop_assert!((0.0..=1.0).contains(&f.micro));
            prop_assert!((0.0..=1.0).contains(&f.macro_));
            let g = f1_scores(&truths, &preds, scope).unwrap();
            prop_assert!((f.micro - g.micro).abs() < 1e-12);
        }
        let counts = path_sensitivity(&preds, &truths);
        prop_assert_eq!(counts.total(), n);
    }

    #[test]
    fn constrained_decoding_is_always_valid(b in branching(), seed in 0u64..1000, temp in 0.05f64..5.0) {
        let (model, proposals) = small_model(b, seed);
        let options = PredictOptions { mode: DecodeMode::Constrained, temperature: temp, ..PredictOptions::default() };
        for p in proposals.iter().take(4) {
            let pred = model.predict(p, &options).unwrap();
            prop_assert!(pred.valid);
            prop_assert!(model.taxonomy().validate_path(&pred.path).unwrap());
        }
    }

    #[test]
    fn score_is_the_product_of_chosen_probabilities(b in branching(), seed in 0u64..1000, constrained in any::<bool>()) {
        let (model, proposals) = small_model(b, seed);
        let mode = if constrained { DecodeMode::Constrained } else { DecodeMode::Greedy };
        let options = PredictOptions { mode, ..PredictOptions::default() };
        for p in proposals.iter().take(3) {
            let pred = model.predict(p, &options).unwrap();
            let product: f64 = pred.levels.iter().map(|l| l.prob).product();
            prop_assert!((pred.score - product).abs() <= 1e-15 * product.max(1.0));
            for l in &pred.levels {
                prop_assert!(l.prob > 0.0 && l.prob <= 1.0);
                let total: f64 = l.distribution.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert_eq!(l.distribution.len(), model.taxonomy().level(l.level).len() + 1);
            }
            let decided = pred.path.len() + usize::from(pred.path.terminated);
            prop_assert_eq!(pred.levels.len(), decided);
        }
    }

    #[test]
    fn expert_prefix_is_kept(b in branching(), seed in 0u64..1000) {
        let (model, proposals) = small_model(b, seed);
        for p in proposals.iter().take(3) {
            let gold = p.gold.clone().unwrap();
            let prefix = gold.labels[..gold.len().min(1)].to_vec();
            let options = PredictOptions { expert_prefix: prefix.clone(), ..PredictOptions::default() };
            let pred = model.predict(p, &options).unwrap();
            prop_assert_eq!(&pred.path.labels[..prefix.len()], &prefix[..]);
        }
    }

    #[test]
    fn checkpoint_bytes_are_stable(b in branching(), seed in 0u64..1000) {
        let (model, _) = small_model(b, seed);
        let bytes = model.to_bytes();
        let back = HmtModel::from_bytes(&bytes, model.taxonomy()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn generated_gold_paths_are_valid_and_ids_unique(b in branching(), seed in 0u64..1000) {
        let mut gen = gen_config(b);
        gen.valid = 5;
        gen.test = 5;
        let corpus = generate_synthetic(&gen, seed).unwrap();
        let mut ids = std::collections::HashSet::new();
        for split in [&corpus.train, &corpus.valid, &corpus.test] {
            for p in corpus.proposals(split).unwrap() {
                prop_assert!(ids.insert(p.id.clone()));
                let gold = p.gold.unwrap();
                prop_assert!(!gold.is_empty());
                prop_assert!(corpus.taxonomy.validate_path(&gold).unwrap());
            }
        }
    }
}

#[test]
fn full_prefix_returns_without_decoding() {
    let (model, proposals) = small_model(vec![2, 2], 1);
    let gold = model.taxonomy().gold_path(&["A", "A01"]).unwrap();
    let options = PredictOptions {
        expert_prefix: gold.labels.clone(),
        ..PredictOptions::default()
    };
    let pred = model.predict(&proposals[0], &options).unwrap();
    assert_eq!(pred.path.labels, gold.labels);
    assert!(!pred.path.terminated);
    assert!(pred.levels.is_empty());
    assert_eq!(pred.score, 1.0);
}
