use mase_core::scalar::logistic;
use mase_core::{embed, BlackBoxModel, TokenSequence};
use mase_harness::corpus::{generate_corpus, LabelRule, SyntheticCorpusSpec};
use mase_harness::probe::{train_linear_probe, ProbeSpec};
use mase_harness::HarnessError;
use ndarray::Axis;

fn teacher_spec(seed: u64) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        vocab: 200,
        dim: 16,
        seq_len: 20,
        instances: 500,
        rule: LabelRule::LinearTeacher {
            weights: None,
            bias: 0.0,
        },
        seed,
    }
}

#[test]
fn separable_corpus_reaches_095_training_accuracy() {
    for seed in 0..10 {
        let c = generate_corpus(&teacher_spec(seed)).unwrap();
        let p = train_linear_probe(&c.table, &c.instances, &ProbeSpec::default(), seed).unwrap();
        assert!(p.train_accuracy >= 0.95, "seed {seed}: {}", p.train_accuracy);
    }
}

#[test]
fn reported_accuracy_matches_the_returned_model() {
    let c = generate_corpus(&teacher_spec(3)).unwrap();
    let p = train_linear_probe(&c.table, &c.instances, &ProbeSpec::default(), 1).unwrap();
    let hits = c
        .instances
        .iter()
        .filter(|(s, y)| {
            let e = embed(&c.table, s).unwrap();
            usize::from(p.model.evaluate(&e).unwrap() >= 0.5) == *y
        })
        .count();
    assert_eq!(hits as f64 / c.instances.len() as f64, p.train_accuracy);
}

#[test]
fn model_is_logistic_regression_on_mean_pooled_embeddings() {
    let c = generate_corpus(&teacher_spec(4)).unwrap();
    let p = train_linear_probe(&c.table, &c.instances, &ProbeSpec::default(), 2).unwrap();
    for (s, _) in c.instances.iter().take(50) {
        let e = embed(&c.table, s).unwrap();
        let pooled = e.mean_axis(Axis(0)).unwrap();
        let expected = logistic(p.bias + p.pooled_weights.dot(&pooled));
        assert!((p.model.evaluate(&e).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = generate_corpus(&teacher_spec(5)).unwrap();
    for standardize in [false, true] {
        let frozen = |epochs| ProbeSpec {
            epochs,
            learning_rate: 0.0,
            standardize,
            ..ProbeSpec::default()
        };
        let a = train_linear_probe(&c.table, &c.instances, &frozen(0), 9).unwrap();
        let b = train_linear_probe(&c.table, &c.instances, &frozen(500), 9).unwrap();
        assert_eq!(a.fitted_weights, b.fitted_weights);
        assert_eq!(a.fitted_bias, 0.0);
        assert_eq!(b.fitted_bias, 0.0);
        if !standardize {
            assert_eq!(a.pooled_weights, b.fitted_weights);
        }
    }
}

#[test]
fn same_seed_gives_identical_weights() {
    let c = generate_corpus(&teacher_spec(6)).unwrap();
    let spec = ProbeSpec {
        epochs: 50,
        ..ProbeSpec::default()
    };
    let a = train_linear_probe(&c.table, &c.instances, &spec, 11).unwrap();
    let b = train_linear_probe(&c.table, &c.instances, &spec, 11).unwrap();
    let d = train_linear_probe(&c.table, &c.instances, &spec, 12).unwrap();
    assert_eq!(a.pooled_weights, b.pooled_weights);
    assert_eq!(a.bias, b.bias);
    assert_ne!(a.pooled_weights, d.pooled_weights);
}

#[test]
fn non_binary_labels_are_unsupported() {
    let c = generate_corpus(&teacher_spec(7)).unwrap();
    let mut data = c.instances.clone();
    data[3].1 = 2;
    let err = train_linear_probe(&c.table, &data, &ProbeSpec::default(), 0).unwrap_err();
    assert!(matches!(err, HarnessError::Unsupported(_)), "{err}");
}

#[test]
fn unequal_lengths_and_empty_data_are_rejected() {
    let c = generate_corpus(&teacher_spec(8)).unwrap();
    let mut data = c.instances[..10].to_vec();
    data.push((TokenSequence::from_ids(&[1, 2, 3]).unwrap(), 0));
    assert!(train_linear_probe(&c.table, &data, &ProbeSpec::default(), 0).is_err());
    assert!(train_linear_probe(&c.table, &[], &ProbeSpec::default(), 0).is_err());
}
