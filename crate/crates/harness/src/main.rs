use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mase_core::metrics::{masking_outcomes, predict_label, summarize_outcomes};
use mase_core::model::BinaryClassView;
use mase_core::{embed, BlackBoxModel, EmbeddingMatrix64, TokenSequence, ToyModel64};
use mase_harness::bridge::{conformance, serve, BridgeModel, Endpoint, DEFAULT_TIMEOUT};
use mase_harness::config::ExplainerConfig;
use mase_harness::corpus::{generate_corpus, load_corpus, save_corpus};
use mase_harness::experiment::{infidelity_inputs, infidelity_stat};
use mase_harness::heatmap::heatmap_html;
use mase_harness::probe::train_linear_probe;
use mase_harness::{run_experiment, ExperimentConfig, ExplainerKind, Overrides, RunOptions};

#[derive(Parser)]
#[command(
    name = "mase",
    version,
    about = "Embedding-perturbation saliency for text classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus into a directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus seed (overrides the configured one).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear probe on a corpus directory and write the model file.
    TrainProbe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one input and write its saliency CSV.
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        method: MethodArgs,
        /// Corpus directory with embeddings.txt and dataset.tsv.
        #[arg(long)]
        data: PathBuf,
        /// Index into dataset.tsv.
        #[arg(long, conflicts_with = "tokens", required_unless_present = "tokens")]
        instance: Option<usize>,
        /// Whitespace-separated token ids.
        #[arg(long)]
        tokens: Option<String>,
        /// Class to explain; defaults to the predicted label.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Saliency CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an HTML heatmap fragment.
        #[arg(long)]
        html: Option<PathBuf>,
    },
    /// Accuracy drop after top-k masking for one method on a corpus.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,15")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturbations per instance for infidelity; 0 skips it.
        #[arg(long, default_value_t = 200)]
        infidelity_samples: usize,
        #[arg(long, default_value_t = 0.1)]
        infidelity_sigma: f64,
    },
    /// Run a configured benchmark and write its reports.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run this single experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long = "sparse-L")]
        sparse_l: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ignore an existing checkpoint.
        #[arg(long)]
        fresh: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the protocol conformance suite against a bridge server.
    BridgeCheck {
        #[arg(long, conflicts_with = "command", required_unless_present = "command")]
        connect: Option<String>,
        #[arg(long)]
        command: Option<String>,
        #[arg(long)]
        dim: usize,
        /// In-process reference model for score and ranking agreement.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
        timeout: f64,
    },
    /// Serve a model file over the bridge protocol on stdin/stdout or TCP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// `host:port` to listen on; stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
        /// Log request ids to stderr.
        #[arg(long)]
        log: bool,
    },
    /// Print the default benchmark configuration as TOML.
    PrintConfig,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file in the toy-model text format.
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    /// Bridge server address.
    #[arg(long, group = "source")]
    connect: Option<String>,
    /// Bridge server command line, split on whitespace.
    #[arg(long, group = "source")]
    command: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
    timeout: f64,
}

#[derive(Args)]
struct MethodArgs {
    /// mase, mase-sparse, random, occlusion, lime, kernel-shap, permutation or grad-l2.
    #[arg(long, default_value = "mase")]
    method: String,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "sparse-L")]
    sparse_l: Option<f64>,
}

fn read_model(path: &Path) -> anyhow::Result<ToyModel64> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ToyModel64::read_text(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

impl ModelArgs {
    fn open(&self, dim: usize) -> anyhow::Result<Arc<dyn BlackBoxModel<f64>>> {
        let timeout = Duration::from_secs_f64(self.timeout);
        let endpoint = match (&self.model, &self.connect, &self.command) {
            (Some(p), _, _) => return Ok(Arc::new(read_model(p)?)),
            (_, Some(addr), _) => Endpoint::Tcp(addr.clone()),
            (_, _, Some(cmd)) => Endpoint::Command(cmd.split_whitespace().map(str::to_owned).collect()),
            _ => bail!("one of --model, --connect or --command is required"),
        };
        Ok(Arc::new(BridgeModel::connect(&endpoint, dim, timeout)?))
    }
}

impl MethodArgs {
    fn config(&self) -> anyhow::Result<ExplainerConfig> {
        let (name, sparse) = match self.method.as_str() {
            "mase-sparse" => ("mase", Some(self.sparse_l.unwrap_or(0.0))),
            m => (m, self.sparse_l),
        };
        let kind: ExplainerKind = serde_json::from_value(serde_json::Value::from(name))
            .map_err(|_| anyhow::anyhow!("unknown method {:?}", self.method))?;
        let mut c = ExplainerConfig::new(kind);
        c.sigma = self.sigma;
        c.samples = self.samples;
        c.sparse_l = sparse;
        Ok(c)
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn parse_tokens(text: &str) -> anyhow::Result<TokenSequence> {
    let ids = text
        .split_whitespace()
        .map(|t| t.parse::<u32>().with_context(|| format!("bad token id {t:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(TokenSequence::from_ids(&ids)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::GenData { config, seed, out } => {
            let mut spec = load_config(config.as_deref())?.corpus;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let corpus = generate_corpus(&spec)?;
            save_corpus(&corpus, &out)?;
            eprintln!(
                "wrote {} instances ({} positive) to {}",
                corpus.instances.len(),
                corpus.positives(),
                out.display()
            );
        }
        Cmd::TrainProbe {
            data,
            config,
            seed,
            out,
        } => {
            let spec = load_config(config.as_deref())?.probe;
            let corpus = load_corpus(&data)?;
            let probe = train_linear_probe(&corpus.table, &corpus.instances, &spec, seed)?;
            let mut buf = Vec::new();
            ToyModel64::LinearBag(probe.model).write_text(&mut buf)?;
            mase_harness::report::write_atomic(&out, &buf)?;
            eprintln!("training accuracy {:.4}", probe.train_accuracy);
        }
        Cmd::Explain {
            model,
            method,
            data,
            instance,
            tokens,
            class,
            seed,
            out,
            html,
        } => {
            let corpus = load_corpus(&data)?;
            let seq = match (instance, tokens) {
                (Some(i), _) => corpus
                    .instances
                    .get(i)
                    .map(|(s, _)| s.clone())
                    .with_context(|| format!("instance {i} out of range ({} instances)", corpus.instances.len()))?,
                (None, Some(t)) => parse_tokens(&t)?,
                (None, None) => bail!("give --instance or --tokens"),
            };
            let model = model.open(corpus.table.dim())?;
            let e = embed(&corpus.table, &seq)?;
            let class = match class {
                Some(c) if c > 1 => bail!("class {c}: only binary models are supported"),
                Some(c) => c,
                None => predict_label(model.as_ref(), &e)?,
            };
            let explainer = method.config()?.build(&background(&corpus)?)?;
            let view = BinaryClassView {
                inner: model.as_ref(),
                class,
            };
            let saliency = explainer.explain(&view, &e, seed)?.with_param("class", class);
            let mut buf = Vec::new();
            saliency.write_csv(&seq, &mut buf)?;
            match out {
                Some(p) => mase_harness::report::write_atomic(&p, &buf)?,
                None => std::io::stdout().write_all(&buf)?,
            }
            if let Some(p) = html {
                mase_harness::report::write_atomic(&p, heatmap_html(&seq, &saliency, None).as_bytes())?;
            }
        }
        Cmd::Evaluate {
            model,
            method,
            data,
            k,
            seed,
            infidelity_samples,
            infidelity_sigma,
        } => {
            let corpus = load_corpus(&data)?;
            let model = model.open(corpus.table.dim())?;
            let explainer = method.config()?.build(&background(&corpus)?)?;
            let outcomes = masking_outcomes(model.as_ref(), &corpus.table, &corpus.instances, &explainer, &k, seed)?;
            println!("k,CC,CC_after,delta");
            for (k, r) in k.iter().zip(summarize_outcomes(&outcomes, k.len())) {
                let delta = r.delta.map_or(String::new(), |d| d.to_string());
                println!("{k},{},{},{delta}", r.correct, r.correct_after);
            }
            if infidelity_samples > 0 {
                let embeddings: Vec<_> = outcomes.iter().map(|o| o.embedding.clone()).collect();
                let labels: Vec<_> = outcomes.iter().map(|o| o.label).collect();
                let inputs = infidelity_inputs(
                    model.as_ref(),
                    &embeddings,
                    &labels,
                    infidelity_sigma,
                    infidelity_samples,
                    mase_core::rng::child_seed(seed, mase_harness::experiment::INFIDELITY_STREAM),
                )?;
                match infidelity_stat(&outcomes, &inputs)? {
                    Some(s) => println!("infidelity {} ± {} over {} instances", s.mean, s.std_error, s.instances),
                    None => println!("infidelity undefined: no correctly classified instances"),
                }
            }
        }
        Cmd::Benchmark {
            config,
            seed,
            sigma,
            samples,
            sparse_l,
            out,
            fresh,
            quiet,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.apply(&Overrides {
                seed,
                sigma,
                samples,
                sparse_l,
                out,
            });
            let results = run_experiment(
                &cfg,
                RunOptions {
                    resume: !fresh,
                    verbose: !quiet,
                },
            )?;
            print!("{}", mase_harness::report::summary_table(&results));
            eprintln!("reports in {}", cfg.output.dir.display());
        }
        Cmd::BridgeCheck {
            connect,
            command,
            dim,
            model,
            timeout,
        } => {
            let endpoint = match (connect, command) {
                (Some(a), _) => Endpoint::Tcp(a),
                (None, Some(c)) => Endpoint::Command(c.split_whitespace().map(str::to_owned).collect()),
                (None, None) => bail!("give --connect or --command"),
            };
            let reference = model.as_deref().map(read_model).transpose()?;
            let outcomes = conformance(
                &endpoint,
                dim,
                reference.as_ref().map(|m| m as &dyn BlackBoxModel<f64>),
                Duration::from_secs_f64(timeout),
            );
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            if failed > 0 {
                bail!("{failed} of {} conformance checks failed", outcomes.len());
            }
        }
        Cmd::Serve { model, listen, log } => {
            let model = read_model(&model)?;
            match listen {
                None => serve(&model, std::io::stdin().lock(), std::io::stdout().lock(), log)?,
                Some(addr) => {
                    let listener = std::net::TcpListener::bind(&addr)?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    for stream in listener.incoming() {
                        let stream = stream?;
                        let reader = BufReader::new(stream.try_clone()?);
                        if let Err(e) = serve(&model, reader, stream, log) {
                            eprintln!("connection ended: {e}");
                        }
                    }
                }
            }
        }
        Cmd::PrintConfig => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn background(corpus: &mase_harness::corpus::Corpus) -> anyhow::Result<Vec<EmbeddingMatrix64>> {
    let n = ExperimentConfig::default().experiment.background;
    Ok(corpus
        .instances
        .iter()
        .take(n)
        .map(|(s, _)| embed(&corpus.table, s))
        .collect::<mase_core::Result<_>>()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
