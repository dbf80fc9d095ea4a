#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use mase_core::{BlackBoxModel, ToyLinearBagModel64, ToyModel64};
use mase_harness::bridge::serve;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed)
}

pub fn random_linear_bag(seed: u64, m: usize) -> ToyLinearBagModel64 {
    let mut r = rng(seed);
    let w = Array1::from_shape_fn(m, |_| r.random_range(-1.0..1.0));
    ToyLinearBagModel64::new(w, r.random_range(-0.2..0.2))
}

pub fn write_model(path: &Path, model: &ToyLinearBagModel64) {
    let mut buf = Vec::new();
    ToyModel64::LinearBag(model.clone()).write_text(&mut buf).unwrap();
    std::fs::write(path, buf).unwrap();
}

/// Behaviour of the in-test TCP server.
#[derive(Clone)]
pub enum Mode {
    /// Score 0.5 for every input.
    Echo,
    /// The real protocol loop over a model.
    Model(Arc<dyn BlackBoxModel<f64>>),
    /// A proper handshake, then a non-JSON line for every request.
    Malformed,
    /// Replies carry the request id plus one.
    WrongId,
    /// Sleeps before every reply.
    Slow(Duration),
    /// Serves `Model` but drops the connection once the server as a whole
    /// has answered `n` evaluate requests; later connections work.
    DropAfter(Arc<dyn BlackBoxModel<f64>>, usize),
    /// Ready for a different dimension than asked.
    WrongDim,
}

pub struct TestServer {
    pub addr: String,
    pub requests: Arc<AtomicUsize>,
}

pub fn spawn_server(mode: Mode) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&requests);
    let dropped = Arc::new(AtomicUsize::new(0));
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let mode = mode.clone();
            let counter = Arc::clone(&counter);
            let dropped = Arc::clone(&dropped);
            thread::spawn(move || handle(stream, mode, counter, dropped));
        }
    });
    TestServer { addr, requests }
}

fn handle(stream: TcpStream, mode: Mode, counter: Arc<AtomicUsize>, dropped: Arc<AtomicUsize>) {
    let reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    if let Mode::Model(model) = &mode {
        let _ = serve(model.as_ref(), reader, out, false);
        return;
    }
    for line in reader.lines() {
        let Ok(line) = line else { return };
        let msg: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let id = msg["id"].as_u64().unwrap_or(0);
        let reply = match msg["type"].as_str() {
            Some("hello") => {
                let dim = msg["dim"].as_u64().unwrap();
                let dim = if matches!(mode, Mode::WrongDim) { dim + 1 } else { dim };
                format!("{{\"type\":\"ready\",\"dim\":{dim}}}")
            }
            Some("evaluate") => {
                let n = counter.fetch_add(1, Ordering::SeqCst) + 1;
                let batch = msg["batch"].as_array().unwrap();
                match &mode {
                    Mode::Echo | Mode::WrongDim => scores(id, &vec![0.5; batch.len()]),
                    Mode::Malformed => "{\"type\": \"scores\", \"id\": ".to_string(),
                    Mode::WrongId => scores(id + 1, &vec![0.5; batch.len()]),
                    Mode::Slow(d) => {
                        thread::sleep(*d);
                        scores(id, &vec![0.5; batch.len()])
                    }
                    Mode::DropAfter(model, limit) => {
                        if n > *limit && dropped.fetch_add(1, Ordering::SeqCst) == 0 {
                            return;
                        }
                        let dim = model.dim();
                        let mats: Vec<_> = batch
                            .iter()
                            .map(|b| {
                                let flat: Vec<f64> =
                                    b.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
                                mase_core::EmbeddingMatrix64::from_rows(flat.len() / dim, dim, flat).unwrap()
                            })
                            .collect();
                        scores(id, &model.evaluate_batch(&mats).unwrap())
                    }
                    Mode::Model(_) => unreachable!(),
                }
            }
            _ => "{\"type\":\"error\",\"id\":-1,\"message\":\"unknown\"}".to_string(),
        };
        if out.write_all(format!("{reply}\n").as_bytes()).is_err() {
            return;
        }
    }
}

fn scores(id: u64, values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    format!("{{\"type\":\"scores\",\"id\":{id},\"scores\":[{}]}}", items.join(","))
}
