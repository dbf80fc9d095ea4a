mod common;

use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use common::{random_linear_bag, rng, spawn_server, write_model, Mode};
use mase_core::rng::substream;
use mase_core::{explain, BlackBoxModel, EmbeddingMatrix64, PerturbationSpec64};
use mase_harness::bridge::{conformance, serve, BridgeClient, BridgeModel, Endpoint};
use mase_harness::HarnessError;
use rand::Rng;
use rand_distr::StandardNormal;

const M: usize = 6;
const SHORT: Duration = Duration::from_secs(5);

fn matrices(count: usize, n: usize, seed: u64) -> Vec<EmbeddingMatrix64> {
    let mut r = substream(seed, 9);
    (0..count)
        .map(|_| {
            let data = (0..n * M).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            EmbeddingMatrix64::from_rows(n, M, data).unwrap()
        })
        .collect()
}

#[test]
fn echo_server_scores_are_one_half() {
    let server = spawn_server(Mode::Echo);
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr.clone()), M, SHORT).unwrap();
    let s = c.evaluate(&matrices(7, 4, 1)).unwrap();
    assert_eq!(s.len(), 7);
    assert!(s.iter().all(|x| x.value == 0.5));
}

#[test]
fn request_floats_round_trip_bit_exactly() {
    let batch = matrices(3, 5, 2);
    let line = BridgeClient::request_line(42, &batch);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["id"], 42);
    for (e, flat) in batch.iter().zip(v["batch"].as_array().unwrap()) {
        let parsed: Vec<f64> = flat.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let original: Vec<f64> = e.iter().copied().collect();
        assert_eq!(parsed, original);
    }
}

fn remote_matches_in_process(endpoint: Endpoint, model: &mase_core::ToyLinearBagModel64) {
    let remote = BridgeModel::connect(&endpoint, M, SHORT).unwrap();
    let probes = matrices(25, 8, 3);
    let a = remote.evaluate_batch(&probes).unwrap();
    let b = model.evaluate_batch(&probes).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (seed, e) in probes.iter().take(3).enumerate() {
        let spec = PerturbationSpec64::isotropic(0.1, 300, seed as u64);
        let gr = explain(&remote, e, &spec, None).unwrap();
        let gl = explain(model, e, &spec, None).unwrap();
        assert_eq!(gr.ranking(), gl.ranking());
        assert_eq!(gr.scores, gl.scores);
    }
}

#[test]
fn tcp_round_trip_matches_in_process_model() {
    let model = random_linear_bag(4, M);
    let server = spawn_server(Mode::Model(Arc::new(model.clone())));
    remote_matches_in_process(Endpoint::Tcp(server.addr), &model);
}

#[test]
fn subprocess_round_trip_matches_in_process_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    let model = random_linear_bag(5, M);
    write_model(&path, &model);
    let argv = vec![
        env!("CARGO_BIN_EXE_mase").to_string(),
        "serve".into(),
        "--model".into(),
        path.to_string_lossy().into_owned(),
    ];
    remote_matches_in_process(Endpoint::Command(argv), &model);
}

#[test]
fn slow_server_times_out() {
    let server = spawn_server(Mode::Slow(Duration::from_millis(800)));
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, Duration::from_millis(150)).unwrap();
    match c.evaluate(&matrices(1, 3, 6)) {
        Err(HarnessError::Timeout(d)) => assert_eq!(d, Duration::from_millis(150)),
        other => panic!("expected a timeout, got {other:?}"),
    }
}

#[test]
fn malformed_reply_names_the_line() {
    let server = spawn_server(Mode::Malformed);
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, SHORT).unwrap();
    let err = c.evaluate(&matrices(1, 3, 7)).unwrap_err();
    match &err {
        // line 1 was the ready message
        HarnessError::Bridge { line, message } => {
            assert_eq!(*line, 2);
            assert!(message.contains("malformed"), "{message}");
        }
        other => panic!("expected a bridge error, got {other:?}"),
    }
    assert!(err.to_string().contains("line 2"));
}

#[test]
fn mismatched_reply_id_is_a_violation() {
    let server = spawn_server(Mode::WrongId);
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, SHORT).unwrap();
    let err = c.evaluate(&matrices(1, 3, 8)).unwrap_err().to_string();
    assert!(err.contains("does not match request id 1"), "{err}");
}

#[test]
fn dimension_disagreement_fails_the_handshake() {
    let server = spawn_server(Mode::WrongDim);
    let err = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, SHORT)
        .err()
        .unwrap()
        .to_string();
    assert!(err.contains("dim"), "{err}");
}

#[test]
fn wrong_width_batch_is_rejected_before_sending() {
    let server = spawn_server(Mode::Echo);
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M + 1, SHORT).unwrap();
    assert!(c.evaluate(&matrices(1, 3, 9)).is_err());
    assert_eq!(server.requests.load(std::sync::atomic::Ordering::SeqCst), 0);
}

#[test]
fn out_of_range_score_is_rejected() {
    let model = mase_core::model::FnModel::new(M, |_e: &EmbeddingMatrix64| 1.5);
    let server = spawn_server(Mode::Model(Arc::new(model)));
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, SHORT).unwrap();
    let err = c.evaluate(&matrices(1, 3, 10)).unwrap_err().to_string();
    assert!(err.contains("outside [0, 1]"), "{err}");
}

#[test]
fn closed_connection_is_reported() {
    let model: Arc<dyn BlackBoxModel<f64>> = Arc::new(random_linear_bag(11, M));
    let server = spawn_server(Mode::DropAfter(model, 0));
    let mut c = BridgeClient::connect(&Endpoint::Tcp(server.addr), M, SHORT).unwrap();
    let err = c.evaluate(&matrices(1, 3, 11)).unwrap_err().to_string();
    assert!(err.contains("connection closed"), "{err}");
}

#[test]
fn serve_loop_handles_every_message_kind() {
    let model = random_linear_bag(12, 2);
    let input = concat!(
        "{\"type\":\"hello\",\"dim\":3}\n",
        "{\"type\":\"hello\",\"dim\":2}\n",
        "garbage\n",
        "{\"type\":\"evaluate\",\"id\":1,\"batch\":[[0.5,0.25],[1,0,0,1]]}\n",
        "{\"type\":\"evaluate\",\"id\":2,\"batch\":[[1,2,3]]}\n",
        "{\"type\":\"mystery\",\"id\":3}\n",
    );
    let mut out = Vec::new();
    serve(&model, Cursor::new(input), &mut out, false).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["type"], "error");
    assert_eq!(lines[1], serde_json::json!({"type": "ready", "dim": 2}));
    assert_eq!(lines[2]["id"], -1);
    assert_eq!(lines[3]["type"], "scores");
    let w = model.weights.clone();
    let pre = |rows: &[[f64; 2]]| model.bias + rows.iter().map(|r| r[0] * w[0] + r[1] * w[1]).sum::<f64>();
    let expected = [
        1.0 / (1.0 + (-pre(&[[0.5, 0.25]])).exp()),
        1.0 / (1.0 + (-pre(&[[1.0, 0.0], [0.0, 1.0]])).exp()),
    ];
    for (got, want) in lines[3]["scores"].as_array().unwrap().iter().zip(expected) {
        assert!((got.as_f64().unwrap() - want).abs() < 1e-15);
    }
    assert_eq!(lines[4]["type"], "error");
    assert_eq!(lines[4]["id"], 2);
    assert_eq!(lines[5]["type"], "error");
}

#[test]
fn conformance_passes_a_correct_server_and_flags_a_broken_one() {
    let model = random_linear_bag(13, M);
    let good = spawn_server(Mode::Model(Arc::new(model.clone())));
    let outcomes = conformance(&Endpoint::Tcp(good.addr), M, Some(&model), SHORT);
    assert_eq!(outcomes.len(), 8);
    assert!(outcomes.iter().all(|o| o.passed), "{outcomes:?}");

    let bad = spawn_server(Mode::WrongId);
    let outcomes = conformance(&Endpoint::Tcp(bad.addr), M, None, SHORT);
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    assert!(failed.contains(&"scores"));
    assert!(failed.contains(&"malformed-request"));
}

#[test]
fn bridged_model_works_inside_the_masking_protocol() {
    let model = random_linear_bag(14, M);
    let server = spawn_server(Mode::Model(Arc::new(model.clone())));
    let remote = BridgeModel::connect(&Endpoint::Tcp(server.addr), M, SHORT).unwrap();
    let mut r = rng(14);
    let mut table = mase_core::EmbeddingTable64::new(M).unwrap();
    for id in 1..=30u32 {
        let row = ndarray::Array1::from_shape_fn(M, |_| r.random_range(-1.0..1.0));
        table.insert(mase_core::TokenId(id), row).unwrap();
    }
    let data: Vec<_> = (0..12)
        .map(|_| {
            let ids: Vec<u32> = (0..6).map(|_| r.random_range(1..=30)).collect();
            (
                mase_core::TokenSequence::from_ids(&ids).unwrap(),
                r.random_range(0..2usize),
            )
        })
        .collect();
    let ex = mase_core::Explainer64::Mase {
        spec: PerturbationSpec64::isotropic(0.1, 200, 0),
        sparse: None,
    };
    let a = mase_core::metrics::masking_outcomes(&remote, &table, &data, &ex, &[1, 3], 7).unwrap();
    let b = mase_core::metrics::masking_outcomes(&model, &table, &data, &ex, &[1, 3], 7).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.still_correct, y.still_correct);
        assert_eq!(
            x.saliency.as_ref().map(|s| &s.scores),
            y.saliency.as_ref().map(|s| &s.scores)
        );
    }
}
