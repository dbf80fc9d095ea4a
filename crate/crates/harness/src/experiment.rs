//! Benchmark orchestration: corpus, probe, explanations, masking and
//! infidelity for every (seed, explainer) cell, with checkpointing.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use mase_core::estimators::regression_inputs;
use mase_core::metrics::{
    infidelity_on_inputs, masking_outcomes, predict_label, summarize_outcomes, DeltaAccuracyResult, InstanceOutcome,
};
use mase_core::model::BinaryClassView;
use mase_core::rng::child_seed;
use mase_core::{embed, BlackBoxModel, EmbeddingMatrix64, PerturbationSpec64, RegressionInputs64, ToyModel64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::config::{ExperimentConfig, ModelConfig};
use crate::corpus::{generate_corpus, Corpus};
use crate::error::{HarnessError, Result};
use crate::probe::train_linear_probe;
use crate::report;

const PROBE_STREAM: u64 = 1;
const EXPLAIN_STREAM: u64 = 2;
pub const INFIDELITY_STREAM: u64 = 3;

/// Mean infidelity over the correctly classified instances of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfidelityStat {
    pub mean: f64,
    pub std_error: f64,
    pub instances: usize,
}

/// Results of one explainer on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    pub explainer: String,
    /// `CC`, correctly classified before masking.
    pub correct: usize,
    /// `CC_after` per masking size, in configuration order.
    pub correct_after: Vec<usize>,
    pub infidelity: Option<InfidelityStat>,
}

impl Cell {
    /// Delta at the `j`-th masking size; `None` when `CC = 0`.
    pub fn delta(&self, j: usize, literal: bool) -> Option<f64> {
        let r = DeltaAccuracyResult::new(self.correct, self.correct_after[j]);
        if literal {
            r.literal_delta()
        } else {
            r.delta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub corpus_seed: u64,
    pub instances: usize,
    pub positives: usize,
    /// Training accuracy of the per-seed probe.
    pub probe_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config_hash: String,
    pub model: String,
    pub dataset: String,
    pub explainers: Vec<String>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub literal_delta: bool,
    pub seed_info: Vec<SeedInfo>,
    pub cells: Vec<Cell>,
}

impl ExperimentResults {
    pub fn cell(&self, seed: u64, explainer: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.seed == seed && c.explainer == explainer)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    seed_info: Vec<SeedInfo>,
    cells: Vec<Cell>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Reuse completed cells from a checkpoint with the same config hash.
    pub resume: bool,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resume: true,
            verbose: false,
        }
    }
}

/// A model fixed for the whole run (file or bridge); `None` means a probe
/// is trained per seed.
fn resolve_model(config: &ExperimentConfig) -> Result<Option<Arc<dyn BlackBoxModel<f64>>>> {
    match &config.model {
        ModelConfig::Probe {} => Ok(None),
        ModelConfig::File { path } => {
            let f = std::fs::File::open(path)?;
            let model = ToyModel64::read_text(std::io::BufReader::new(f))?;
            Ok(Some(Arc::new(model)))
        }
        ModelConfig::Bridge { .. } => {
            let (endpoint, timeout) = config
                .model
                .endpoint()
                .ok_or_else(|| HarnessError::Config("bridge model without an endpoint".into()))?;
            Ok(Some(Arc::new(BridgeModel::connect(
                &endpoint,
                config.corpus.dim,
                timeout,
            )?)))
        }
    }
}

/// The corpus of experiment seed `seed`.
pub fn seed_corpus(config: &ExperimentConfig, seed: u64) -> Result<Corpus> {
    let mut spec = config.corpus.clone();
    spec.seed = child_seed(config.corpus.seed, seed);
    generate_corpus(&spec)
}

fn load_checkpoint(path: &Path, hash: &str, verbose: bool) -> Option<Checkpoint> {
    let text = std::fs::read_to_string(path).ok()?;
    match serde_json::from_str::<Checkpoint>(&text) {
        Ok(c) if c.config_hash == hash => Some(c),
        Ok(_) => {
            if verbose {
                eprintln!("ignoring checkpoint {} from a different configuration", path.display());
            }
            None
        }
        Err(e) => {
            if verbose {
                eprintln!("ignoring unreadable checkpoint {}: {e}", path.display());
            }
            None
        }
    }
}

/// Perturbation batches shared by every explainer of a seed, one per
/// correctly classified instance. Instance `i` uses seed `child_seed(seed, i)`.
pub fn infidelity_inputs(
    model: &dyn BlackBoxModel<f64>,
    embeddings: &[EmbeddingMatrix64],
    labels: &[usize],
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<Option<RegressionInputs64>>> {
    embeddings
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(index, (e, &label))| {
            let run = || -> mase_core::Result<Option<RegressionInputs64>> {
                if predict_label(model, e)? != label {
                    return Ok(None);
                }
                let view = BinaryClassView {
                    inner: model,
                    class: label,
                };
                let spec = PerturbationSpec64::isotropic(sigma, samples, child_seed(seed, index as u64));
                regression_inputs(&view, e, &spec).map(Some)
            };
            run().map_err(|source| {
                HarnessError::Core(mase_core::Error::Instance {
                    index,
                    source: Box::new(source),
                })
            })
        })
        .collect()
}

/// Mean infidelity of the explained outcomes on their shared batches;
/// `None` when nothing was explained.
pub fn infidelity_stat(
    outcomes: &[InstanceOutcome<f64>],
    inputs: &[Option<RegressionInputs64>],
) -> Result<Option<InfidelityStat>> {
    let mut values = Vec::new();
    for o in outcomes {
        if let (Some(gamma), Some(inp)) = (&o.saliency, &inputs[o.index]) {
            values.push(infidelity_on_inputs(gamma.scores.view(), inp)?.value);
        }
    }
    Ok((!values.is_empty()).then(|| {
        let (mean, std_error) = mean_and_se(&values);
        InfidelityStat {
            mean,
            std_error,
            instances: values.len(),
        }
    }))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every cell and writes the reports into the output directory. On a
/// failure the checkpoint keeps the completed cells and the error is
/// returned.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<ExperimentResults> {
    let started = Instant::now();
    config.validate()?;
    let hash = config.hash();
    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    let mut checkpoint = options
        .resume
        .then(|| load_checkpoint(&checkpoint_path, &hash, options.verbose))
        .flatten()
        .unwrap_or_else(|| Checkpoint {
            config_hash: hash.clone(),
            seed_info: Vec::new(),
            cells: Vec::new(),
        });
    let fixed = resolve_model(config)?;
    let labels: Vec<String> = config.explainers.iter().map(|e| e.label()).collect();
    let ks = &config.experiment.ks;

    for (si, &seed) in config.experiment.seeds.iter().enumerate() {
        let pending: Vec<usize> = (0..labels.len())
            .filter(|&j| {
                !checkpoint
                    .cells
                    .iter()
                    .any(|c| c.seed == seed && c.explainer == labels[j])
            })
            .collect();
        if pending.is_empty() && checkpoint.seed_info.iter().any(|s| s.seed == seed) {
            continue;
        }
        let corpus = seed_corpus(config, seed)?;
        let mut data = corpus.instances.clone();
        if let Some(limit) = config.experiment.max_instances {
            data.truncate(limit);
        }
        let (model, probe_accuracy): (Arc<dyn BlackBoxModel<f64>>, _) = match &fixed {
            Some(m) => (Arc::clone(m), None),
            None => {
                let probe = train_linear_probe(
                    &corpus.table,
                    &corpus.instances,
                    &config.probe,
                    child_seed(seed, PROBE_STREAM),
                )?;
                let acc = probe.train_accuracy;
                (Arc::new(probe.model), Some(acc))
            }
        };
        if model.dim() != corpus.table.dim() {
            return Err(HarnessError::Config(format!(
                "model dimension {} does not match corpus dimension {}",
                model.dim(),
                corpus.table.dim()
            )));
        }
        if options.verbose {
            eprintln!(
                "seed {seed} ({}/{}): {} instances{}",
                si + 1,
                config.experiment.seeds.len(),
                data.len(),
                probe_accuracy.map_or(String::new(), |a| format!(", probe accuracy {a:.3}"))
            );
        }
        checkpoint.seed_info.retain(|s| s.seed != seed);
        checkpoint.seed_info.push(SeedInfo {
            seed,
            corpus_seed: child_seed(config.corpus.seed, seed),
            instances: data.len(),
            positives: data.iter().filter(|(_, y)| *y == 1).count(),
            probe_accuracy,
        });

        let background: Vec<EmbeddingMatrix64> = corpus
            .instances
            .iter()
            .take(config.experiment.background)
            .map(|(s, _)| embed(&corpus.table, s))
            .collect::<mase_core::Result<_>>()?;
        let infid = if config.experiment.infidelity_samples > 0 && !pending.is_empty() {
            let embeddings: Vec<EmbeddingMatrix64> = data
                .iter()
                .map(|(s, _)| embed(&corpus.table, s))
                .collect::<mase_core::Result<_>>()?;
            let ys: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
            Some(infidelity_inputs(
                model.as_ref(),
                &embeddings,
                &ys,
                config.experiment.infidelity_sigma,
                config.experiment.infidelity_samples,
                child_seed(seed, INFIDELITY_STREAM),
            )?)
        } else {
            None
        };

        for j in pending {
            let t = Instant::now();
            let explainer = config.explainers[j].build(&background)?;
            let outcomes = masking_outcomes(
                model.as_ref(),
                &corpus.table,
                &data,
                &explainer,
                ks,
                child_seed(seed, EXPLAIN_STREAM),
            )?;
            let summary = summarize_outcomes(&outcomes, ks.len());
            let infidelity = match &infid {
                Some(inputs) => infidelity_stat(&outcomes, inputs)?,
                None => None,
            };
            let cell = Cell {
                seed,
                explainer: labels[j].clone(),
                correct: summary.first().map_or(0, |r| r.correct),
                correct_after: summary.iter().map(|r| r.correct_after).collect(),
                infidelity,
            };
            if options.verbose {
                let deltas: Vec<String> = (0..ks.len())
                    .map(|q| {
                        cell.delta(q, config.experiment.literal_delta)
                            .map_or("-".into(), |d| format!("{d:.3}"))
                    })
                    .collect();
                eprintln!(
                    "  {:<14} CC={:<4} delta[{}] {:.1}s",
                    labels[j],
                    cell.correct,
                    deltas.join(" "),
                    t.elapsed().as_secs_f64()
                );
            }
            checkpoint.cells.push(cell);
            report::write_atomic(&checkpoint_path, serde_json::to_string(&checkpoint).unwrap().as_bytes())?;
        }
    }

    let mut cells = Vec::new();
    for label in &labels {
        for &seed in &config.experiment.seeds {
            let cell = checkpoint
                .cells
                .iter()
                .find(|c| c.seed == seed && &c.explainer == label)
                .expect("every cell has run");
            cells.push(cell.clone());
        }
    }
    let seed_info = config
        .experiment
        .seeds
        .iter()
        .filter_map(|s| checkpoint.seed_info.iter().find(|i| i.seed == *s).cloned())
        .collect();
    let results = ExperimentResults {
        config_hash: hash,
        model: config.model_name(),
        dataset: config.dataset_name(),
        explainers: labels,
        ks: ks.clone(),
        seeds: config.experiment.seeds.clone(),
        literal_delta: config.experiment.literal_delta,
        seed_info,
        cells,
    };
    report::write_reports(&results, config, &dir, started.elapsed())?;
    Ok(results)
}
