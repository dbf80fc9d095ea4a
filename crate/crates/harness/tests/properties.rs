use std::io::Cursor;
use std::path::{Path, PathBuf};

use mase_core::{EmbeddingMatrix64, TokenSequence};
use mase_harness::bridge::BridgeClient;
use mase_harness::config::ExplainerConfig;
use mase_harness::corpus::{generate_corpus, read_dataset, write_dataset, LabelRule, SyntheticCorpusSpec};
use mase_harness::{run_experiment, ExperimentConfig, ExplainerKind, RunOptions};
use proptest::prelude::*;

fn planted_spec() -> impl Strategy<Value = SyntheticCorpusSpec> {
    (2usize..10, 1usize..6, any::<u64>(), 0.0f64..=1.0).prop_flat_map(|(n, kw, seed, frac)| {
        (
            Just(n),
            Just(kw),
            1..=n,
            (n.max(kw + 1))..(n + 30),
            Just(seed),
            Just(frac),
        )
            .prop_map(|(n, kw, planted, vocab, seed, frac)| SyntheticCorpusSpec {
                vocab,
                dim: 4,
                seq_len: n,
                instances: 25,
                rule: LabelRule::PlantedKeyword {
                    planted,
                    keyword_ids: kw,
                    positive_fraction: frac,
                },
                seed,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planted_labels_are_a_function_of_tokens(spec in planted_spec()) {
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        prop_assert_eq!(&a.instances, &b.instances);
        let LabelRule::PlantedKeyword { planted, keyword_ids, .. } = spec.rule else { unreachable!() };
        for (seq, label) in &a.instances {
            let hits = seq.tokens().iter().filter(|t| (t.0 as usize) <= keyword_ids).count();
            prop_assert_eq!(*label, usize::from(hits > 0));
            prop_assert!(hits == 0 || hits == planted);
            prop_assert!(seq.tokens().iter().all(|t| t.0 >= 1 && t.0 as usize <= spec.vocab));
        }
    }

    #[test]
    fn planted_count_above_length_is_rejected(n in 1usize..10, extra in 1usize..5) {
        let spec = SyntheticCorpusSpec {
            vocab: 50,
            dim: 3,
            seq_len: n,
            instances: 5,
            rule: LabelRule::PlantedKeyword { planted: n + extra, keyword_ids: 1, positive_fraction: 0.5 },
            seed: 0,
        };
        prop_assert!(generate_corpus(&spec).is_err());
    }

    #[test]
    fn dataset_text_round_trips(rows in prop::collection::vec((prop::collection::vec(0u32..100_000, 1..12), 0usize..3), 1..20)) {
        let data: Vec<(TokenSequence, usize)> = rows
            .iter()
            .map(|(ids, y)| (TokenSequence::from_ids(ids).unwrap(), *y))
            .collect();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = read_dataset(Cursor::new(buf), Path::new("x")).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn request_floats_are_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6)) {
        let e = EmbeddingMatrix64::from_rows(3, 2, values.clone()).unwrap();
        let line = BridgeClient::request_line(1, &[e]);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let back: Vec<u64> = v["batch"][0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().to_bits()).collect();
        let bits: Vec<u64> = values.iter().map(|x| if *x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() }).collect();
        let back: Vec<u64> = back.into_iter().map(|b| if f64::from_bits(b) == 0.0 { 0.0f64.to_bits() } else { b }).collect();
        prop_assert_eq!(back, bits);
    }

    #[test]
    fn hash_depends_on_content_not_output_dir(seeds in prop::collection::btree_set(0u64..1000, 1..6), dir in "[a-z]{1,12}") {
        let mut a = ExperimentConfig::default();
        a.experiment.seeds = seeds.iter().copied().collect();
        let mut b = a.clone();
        b.output.dir = PathBuf::from(dir);
        prop_assert_eq!(a.hash(), b.hash());
        let back = ExperimentConfig::from_toml(&a.to_toml(), Path::new("-")).unwrap();
        prop_assert_eq!(back.hash(), a.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn row_count_is_explainers_times_ks_times_seeds(
        n_ex in 1usize..4,
        ks in prop::collection::btree_set(1usize..=6, 1..4),
        seeds in prop::collection::btree_set(0u64..50, 1..4),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig {
            corpus: SyntheticCorpusSpec { vocab: 20, dim: 4, seq_len: 6, instances: 15, ..SyntheticCorpusSpec::default() },
            ..ExperimentConfig::default()
        };
        c.probe.epochs = 20;
        c.experiment.seeds = seeds.iter().copied().collect();
        c.experiment.ks = ks.iter().copied().collect();
        c.experiment.infidelity_samples = 10;
        c.explainers = [ExplainerKind::Random, ExplainerKind::Occlusion, ExplainerKind::GradL2][..n_ex]
            .iter()
            .map(|k| ExplainerConfig::new(*k))
            .collect();
        c.output.dir = dir.path().to_path_buf();
        run_experiment(&c, RunOptions::default()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("deltas.csv")).unwrap();
        prop_assert_eq!(text.lines().count(), 1 + n_ex * ks.len() * seeds.len());
    }
}
