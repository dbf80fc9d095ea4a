//! TOML experiment configuration.
//!
//! Every table rejects unknown keys, and [`ExperimentConfig::validate`]
//! checks the whole file before any work starts.

use std::path::{Path, PathBuf};
use std::time::Duration;

use mase_core::baselines::{KernelSpec, ShapReplacement};
use mase_core::nlgp::{DEFAULT_SAMPLES, DEFAULT_SIGMA};
use mase_core::{CovarianceEstimate, EmbeddingMatrix64, Explainer64, PerturbStyle, PerturbationSpec64, SparseSpec64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{Endpoint, DEFAULT_TIMEOUT};
use crate::corpus::SyntheticCorpusSpec;
use crate::error::{HarnessError, Result};
use crate::probe::ProbeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: SyntheticCorpusSpec,
    pub probe: ProbeSpec,
    pub model: ModelConfig,
    pub experiment: ExperimentSection,
    pub explainers: Vec<ExplainerConfig>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticCorpusSpec::default(),
            probe: ProbeSpec::default(),
            model: ModelConfig::default(),
            experiment: ExperimentSection::default(),
            explainers: vec![
                ExplainerConfig::new(ExplainerKind::Mase),
                ExplainerConfig::new(ExplainerKind::Random),
            ],
            output: OutputConfig::default(),
        }
    }
}

/// The model being explained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// A linear probe trained per seed on the generated corpus. A struct
    /// variant so that stray keys are rejected.
    Probe {},
    /// A fixed model file in the toy-model text format.
    File { path: PathBuf },
    /// An out-of-process model; exactly one of `connect` and `command`.
    Bridge {
        #[serde(default)]
        connect: Option<String>,
        #[serde(default)]
        command: Option<Vec<String>>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Probe {}
    }
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

impl ModelConfig {
    pub fn name(&self) -> String {
        match self {
            ModelConfig::Probe {} => "linear-probe".into(),
            ModelConfig::File { path } => path
                .file_stem()
                .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned()),
            ModelConfig::Bridge { .. } => "bridge".into(),
        }
    }

    pub fn endpoint(&self) -> Option<(Endpoint, Duration)> {
        match self {
            ModelConfig::Bridge {
                connect,
                command,
                timeout_secs,
            } => {
                let endpoint = match (connect, command) {
                    (Some(addr), _) => Endpoint::Tcp(addr.clone()),
                    (None, Some(argv)) => Endpoint::Command(argv.clone()),
                    (None, None) => return None,
                };
                Some((endpoint, Duration::from_secs_f64(*timeout_secs)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Experiment seeds; each yields its own corpus, probe and explanations.
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    /// Perturbations per instance for the infidelity estimate; 0 disables it.
    pub infidelity_samples: usize,
    pub infidelity_sigma: f64,
    /// Evaluate only the first instances of each corpus.
    pub max_instances: Option<usize>,
    /// Corpus instances used as background by permutation importance and
    /// background-replacement SHAP.
    pub background: usize,
    /// Report `|CC − MC| / CC` with `MC` the count misclassified after
    /// masking, instead of the flipped fraction `(CC − CC_after) / CC`.
    pub literal_delta: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            ks: vec![1, 5, 10, 15],
            infidelity_samples: 200,
            infidelity_sigma: DEFAULT_SIGMA,
            max_instances: None,
            background: 20,
            literal_delta: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Mase,
    Random,
    Occlusion,
    Lime,
    KernelShap,
    Permutation,
    GradL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StyleConfig {
    #[default]
    NormalizedAdditive,
    PureScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceConfig {
    #[default]
    Empirical,
    Nominal,
}

/// One `[[explainers]]` entry. Parameters that do not apply to `kind` are
/// rejected by validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerConfig {
    pub kind: ExplainerKind,
    /// Report label; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub sparse_l: Option<f64>,
    #[serde(default)]
    pub style: Option<StyleConfig>,
    #[serde(default)]
    pub covariance: Option<CovarianceConfig>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub penalty: Option<f64>,
    #[serde(default)]
    pub max_features: Option<usize>,
    /// Kernel SHAP: replace absent words by background rows instead of MASK.
    #[serde(default)]
    pub use_background: Option<bool>,
    #[serde(default)]
    pub repeats: Option<usize>,
}

pub const LIME_WIDTH: f64 = 0.25;
pub const LIME_SAMPLES: usize = 1000;
pub const SHAP_SAMPLES: usize = 2048;
pub const PERMUTATION_REPEATS: usize = 10;

impl ExplainerConfig {
    pub fn new(kind: ExplainerKind) -> Self {
        Self {
            kind,
            label: None,
            sigma: None,
            samples: None,
            sparse_l: None,
            style: None,
            covariance: None,
            width: None,
            penalty: None,
            max_features: None,
            use_background: None,
            repeats: None,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match (self.kind, self.sparse_l) {
            (ExplainerKind::Mase, Some(_)) => "mase-sparse".into(),
            (kind, _) => serde_json::to_value(kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let label = self.label();
        let fail = |msg: String| Err(HarnessError::Config(format!("explainer {label:?}: {msg}")));
        let given = [
            ("sigma", self.sigma.is_some()),
            ("samples", self.samples.is_some()),
            ("sparse_l", self.sparse_l.is_some()),
            ("style", self.style.is_some()),
            ("covariance", self.covariance.is_some()),
            ("width", self.width.is_some()),
            ("penalty", self.penalty.is_some()),
            ("max_features", self.max_features.is_some()),
            ("use_background", self.use_background.is_some()),
            ("repeats", self.repeats.is_some()),
        ];
        let allowed: &[&str] = match self.kind {
            ExplainerKind::Mase => &["sigma", "samples", "sparse_l", "style", "covariance"],
            ExplainerKind::Lime => &["samples", "width", "penalty", "max_features"],
            ExplainerKind::KernelShap => &["samples", "use_background"],
            ExplainerKind::Permutation => &["repeats"],
            ExplainerKind::Random | ExplainerKind::Occlusion | ExplainerKind::GradL2 => &[],
        };
        for (name, present) in given {
            if present && !allowed.contains(&name) {
                return fail(format!("parameter {name} does not apply to this method"));
            }
        }
        if self.samples == Some(0) {
            return fail("samples must be positive".into());
        }
        if self.repeats == Some(0) {
            return fail("repeats must be positive".into());
        }
        if self.max_features == Some(0) {
            return fail("max_features must be positive".into());
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("sigma {s} must be positive and finite"));
            }
        }
        if let Some(l) = self.sparse_l {
            if !(l >= 0.0 && l.is_finite()) {
                return fail(format!("sparse_l {l} must be non-negative and finite"));
            }
        }
        if let Some(w) = self.width {
            if !(w > 0.0 && w.is_finite()) {
                return fail(format!("width {w} must be positive and finite"));
            }
        }
        if let Some(p) = self.penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return fail(format!("penalty {p} must be non-negative and finite"));
            }
        }
        Ok(())
    }

    /// The configured explainer; `background` feeds the methods that need
    /// reference inputs.
    pub fn build(&self, background: &[EmbeddingMatrix64]) -> Result<Explainer64> {
        self.validate()?;
        let needs_background = matches!(self.kind, ExplainerKind::Permutation)
            || (self.kind == ExplainerKind::KernelShap && self.use_background == Some(true));
        if needs_background && background.is_empty() {
            return Err(HarnessError::Config(format!(
                "explainer {:?} needs a non-empty background set",
                self.label()
            )));
        }
        Ok(match self.kind {
            ExplainerKind::Mase => {
                let style = match self.style.unwrap_or_default() {
                    StyleConfig::NormalizedAdditive => PerturbStyle::NormalizedAdditive,
                    StyleConfig::PureScaling => PerturbStyle::PureScaling,
                };
                let estimate = match self.covariance.unwrap_or_default() {
                    CovarianceConfig::Empirical => CovarianceEstimate::Empirical,
                    CovarianceConfig::Nominal => CovarianceEstimate::Nominal,
                };
                let spec = PerturbationSpec64::isotropic(
                    self.sigma.unwrap_or(DEFAULT_SIGMA),
                    self.samples.unwrap_or(DEFAULT_SAMPLES),
                    0,
                )
                .with_style(style)
                .with_covariance_estimate(estimate);
                Explainer64::Mase {
                    spec,
                    sparse: self.sparse_l.map(SparseSpec64::new),
                }
            }
            ExplainerKind::Random => Explainer64::Random,
            ExplainerKind::Occlusion => Explainer64::Occlusion,
            ExplainerKind::GradL2 => Explainer64::GradL2,
            ExplainerKind::Lime => Explainer64::Lime {
                samples: self.samples.unwrap_or(LIME_SAMPLES),
                kernel: KernelSpec::lime(self.width.unwrap_or(LIME_WIDTH), self.penalty.unwrap_or(0.0)),
                max_features: self.max_features,
            },
            ExplainerKind::KernelShap => Explainer64::KernelShap {
                samples: self.samples.unwrap_or(SHAP_SAMPLES),
                replacement: if self.use_background == Some(true) {
                    ShapReplacement::Background(background.to_vec())
                } else {
                    ShapReplacement::Mask
                },
            },
            ExplainerKind::Permutation => Explainer64::Permutation {
                background: background.to_vec(),
                repeats: self.repeats.unwrap_or(PERMUTATION_REPEATS),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub model_name: Option<String>,
    pub dataset_name: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            model_name: None,
            dataset_name: None,
        }
    }
}

/// Command-line overrides applied on top of a loaded file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub samples: Option<usize>,
    pub sparse_l: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies overrides. `sigma`, `samples` and `sparse_l` apply to every
    /// MASE explainer.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.experiment.seeds = vec![seed];
        }
        for e in self.explainers.iter_mut().filter(|e| e.kind == ExplainerKind::Mase) {
            if o.sigma.is_some() {
                e.sigma = o.sigma;
            }
            if o.samples.is_some() {
                e.samples = o.samples;
            }
            if o.sparse_l.is_some() {
                e.sparse_l = o.sparse_l;
            }
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        self.corpus.validate()?;
        let p = &self.probe;
        if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) {
            return fail(format!("probe learning rate {} must be non-negative", p.learning_rate));
        }
        if !(p.init_scale >= 0.0 && p.init_scale.is_finite()) {
            return fail(format!("probe init scale {} must be non-negative", p.init_scale));
        }
        match &self.model {
            ModelConfig::Bridge {
                connect,
                command,
                timeout_secs,
            } => {
                if connect.is_some() == command.is_some() {
                    return fail("bridge model needs exactly one of connect and command".into());
                }
                if command.as_ref().is_some_and(Vec::is_empty) {
                    return fail("bridge command is empty".into());
                }
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return fail(format!("bridge timeout {timeout_secs} must be positive"));
                }
            }
            ModelConfig::File { path } if !path.is_file() => {
                return fail(format!("model file {} does not exist", path.display()));
            }
            _ => {}
        }
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return fail("no experiment seeds".into());
        }
        let mut seen = x.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != x.seeds.len() {
            return fail("experiment seeds repeat".into());
        }
        if x.ks.is_empty() {
            return fail("no masking sizes ks".into());
        }
        if let Some(&k) = x.ks.iter().find(|&&k| k == 0 || k > self.corpus.seq_len) {
            return fail(format!("masking size {k} outside 1..={}", self.corpus.seq_len));
        }
        if x.infidelity_samples > 0 && !(x.infidelity_sigma > 0.0 && x.infidelity_sigma.is_finite()) {
            return fail(format!("infidelity sigma {} must be positive", x.infidelity_sigma));
        }
        if x.max_instances == Some(0) {
            return fail("max_instances must be positive".into());
        }
        if self.explainers.is_empty() {
            return fail("no explainers".into());
        }
        let mut labels = Vec::new();
        for e in &self.explainers {
            e.validate()?;
            let label = e.label();
            if label.is_empty() || label.contains([',', '\n', '"']) {
                return fail(format!("explainer label {label:?} is empty or not CSV-safe"));
            }
            if labels.contains(&label) {
                return fail(format!("duplicate explainer label {label:?}; set distinct labels"));
            }
            labels.push(label);
            let needs_background = e.kind == ExplainerKind::Permutation || e.use_background == Some(true);
            if needs_background && x.background == 0 {
                return fail(format!("explainer {:?} needs experiment.background > 0", e.label()));
            }
        }
        for name in [&self.output.model_name, &self.output.dataset_name]
            .into_iter()
            .flatten()
        {
            if name.contains([',', '\n', '"']) {
                return fail(format!("name {name:?} is not CSV-safe"));
            }
        }
        Ok(())
    }

    pub fn model_name(&self) -> String {
        self.output.model_name.clone().unwrap_or_else(|| self.model.name())
    }

    pub fn dataset_name(&self) -> String {
        self.output
            .dataset_name
            .clone()
            .unwrap_or_else(|| format!("synthetic-{}", self.corpus.rule.name()))
    }

    /// SHA-256 of everything that affects results. The output directory is
    /// excluded; the report names are included.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
