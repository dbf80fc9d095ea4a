//! Seeded synthetic text-classification corpora.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use mase_core::rng::substream;
use mase_core::{embed, EmbeddingTable64, TokenId, TokenSequence, ToyLinearBagModel64};
use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// How labels are assigned to generated sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LabelRule {
    /// Label 1 iff `b + Σᵢ w·Eᵢ > 0`. Weights are drawn from the corpus
    /// seed when not given.
    LinearTeacher {
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        bias: f64,
    },
    /// Label 1 iff the sequence contains a keyword (ids `1..=keyword_ids`).
    /// Positive sequences carry `planted` keyword occurrences at distinct
    /// positions; negatives contain none.
    PlantedKeyword {
        #[serde(default = "one")]
        planted: usize,
        #[serde(default = "one")]
        keyword_ids: usize,
        #[serde(default = "half")]
        positive_fraction: f64,
    },
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

impl LabelRule {
    pub fn name(&self) -> &'static str {
        match self {
            LabelRule::LinearTeacher { .. } => "linear-teacher",
            LabelRule::PlantedKeyword { .. } => "planted-keyword",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub vocab: usize,
    pub dim: usize,
    pub seq_len: usize,
    pub instances: usize,
    pub rule: LabelRule,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            vocab: 200,
            dim: 64,
            seq_len: 20,
            instances: 500,
            rule: LabelRule::PlantedKeyword {
                planted: 1,
                keyword_ids: 1,
                positive_fraction: 0.5,
            },
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Spec(msg));
        if self.dim == 0 || self.seq_len == 0 || self.instances == 0 {
            return fail("dim, seq_len and instances must all be positive".into());
        }
        if self.vocab < self.seq_len {
            return fail(format!(
                "vocabulary {} is smaller than sequence length {}",
                self.vocab, self.seq_len
            ));
        }
        if self.vocab > u32::MAX as usize - 1 {
            return fail(format!("vocabulary {} too large", self.vocab));
        }
        match &self.rule {
            LabelRule::LinearTeacher { weights, bias } => {
                if let Some(w) = weights {
                    if w.len() != self.dim {
                        return fail(format!("teacher has {} weights for dimension {}", w.len(), self.dim));
                    }
                    if w.iter().any(|v| !v.is_finite()) {
                        return fail("teacher weights must be finite".into());
                    }
                }
                if !bias.is_finite() {
                    return fail("teacher bias must be finite".into());
                }
            }
            LabelRule::PlantedKeyword {
                planted,
                keyword_ids,
                positive_fraction,
            } => {
                if *planted == 0 || *planted > self.seq_len {
                    return fail(format!("planted count {planted} must be in 1..={}", self.seq_len));
                }
                if *keyword_ids == 0 || *keyword_ids >= self.vocab {
                    return fail(format!("keyword id count {keyword_ids} must be in 1..{}", self.vocab));
                }
                if !(0.0..=1.0).contains(positive_fraction) {
                    return fail(format!("positive fraction {positive_fraction} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub table: EmbeddingTable64,
    pub instances: Vec<(TokenSequence, usize)>,
    /// The labelling model of a linear-teacher corpus.
    pub teacher: Option<ToyLinearBagModel64>,
}

impl Corpus {
    pub fn seq_len(&self) -> usize {
        self.instances.first().map_or(0, |(s, _)| s.len())
    }

    pub fn positives(&self) -> usize {
        self.instances.iter().filter(|(_, y)| *y == 1).count()
    }
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Generates the embedding table (ids `1..=vocab`, unit-norm Gaussian rows)
/// and labelled sequences. Deterministic given the spec.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut table = EmbeddingTable64::new(spec.dim)?;
    let mut rng = substream(spec.seed, 0);
    for id in 1..=spec.vocab {
        table.insert(TokenId(id as u32), unit_gaussian(&mut rng, spec.dim))?;
    }
    let mut rng = substream(spec.seed, 1);
    let n = spec.seq_len;
    let (instances, teacher) = match &spec.rule {
        LabelRule::LinearTeacher { weights, bias } => {
            let w = match weights {
                Some(w) => Array1::from(w.clone()),
                None => {
                    let mut wr = substream(spec.seed, 2);
                    Array1::from_shape_fn(spec.dim, |_| wr.sample::<f64, _>(StandardNormal))
                }
            };
            let teacher = ToyLinearBagModel64::new(w, *bias);
            let mut out = Vec::with_capacity(spec.instances);
            for _ in 0..spec.instances {
                let ids: Vec<u32> = (0..n).map(|_| rng.random_range(1..=spec.vocab as u32)).collect();
                let seq = TokenSequence::from_ids(&ids)?;
                let score = teacher.pre_link(&embed(&table, &seq)?);
                out.push((seq, usize::from(score > 0.0)));
            }
            (out, Some(teacher))
        }
        LabelRule::PlantedKeyword {
            planted,
            keyword_ids,
            positive_fraction,
        } => {
            let first_filler = *keyword_ids as u32 + 1;
            let mut out = Vec::with_capacity(spec.instances);
            for _ in 0..spec.instances {
                let positive = rng.random_bool(*positive_fraction);
                let mut ids: Vec<u32> = (0..n)
                    .map(|_| rng.random_range(first_filler..=spec.vocab as u32))
                    .collect();
                if positive {
                    for pos in rand::seq::index::sample(&mut rng, n, *planted) {
                        ids[pos] = rng.random_range(1..first_filler);
                    }
                }
                out.push((TokenSequence::from_ids(&ids)?, usize::from(positive)));
            }
            (out, None)
        }
    };
    Ok(Corpus {
        table,
        instances,
        teacher,
    })
}

/// Writes one instance per line: `label<TAB>id id …`.
pub fn write_dataset<W: Write>(instances: &[(TokenSequence, usize)], mut out: W) -> Result<()> {
    let mut line = String::new();
    for (seq, label) in instances {
        line.clear();
        write!(line, "{label}\t").unwrap();
        for (k, t) in seq.tokens().iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            write!(line, "{}", t.0).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R, path: &Path) -> Result<Vec<(TokenSequence, usize)>> {
    let parse_err = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, ids) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(k + 1, "expected `label<TAB>ids`".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(k + 1, format!("bad label {label:?}")))?;
        let ids = ids
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| parse_err(k + 1, format!("bad token id {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = TokenSequence::from_ids(&ids).map_err(|e| parse_err(k + 1, e.to_string()))?;
        out.push((seq, label));
    }
    Ok(out)
}

/// Writes `embeddings.txt`, `dataset.tsv` and, for teacher corpora,
/// `teacher.txt` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    corpus.table.write_text(&mut buf)?;
    crate::report::write_atomic(&dir.join("embeddings.txt"), &buf)?;
    buf.clear();
    write_dataset(&corpus.instances, &mut buf)?;
    crate::report::write_atomic(&dir.join("dataset.tsv"), &buf)?;
    if let Some(t) = &corpus.teacher {
        buf.clear();
        mase_core::ToyModel64::LinearBag(t.clone()).write_text(&mut buf)?;
        crate::report::write_atomic(&dir.join("teacher.txt"), &buf)?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let open = |name: &str| -> Result<std::io::BufReader<std::fs::File>> {
        Ok(std::io::BufReader::new(std::fs::File::open(dir.join(name))?))
    };
    let table = EmbeddingTable64::read_text(open("embeddings.txt")?)?;
    let instances = read_dataset(open("dataset.tsv")?, &dir.join("dataset.tsv"))?;
    let teacher = match std::fs::File::open(dir.join("teacher.txt")) {
        Ok(f) => match mase_core::ToyModel64::read_text(std::io::BufReader::new(f))? {
            mase_core::ToyModel64::LinearBag(m) => Some(m),
            mase_core::ToyModel64::TwoLayer(_) => None,
        },
        Err(_) => None,
    };
    Ok(Corpus {
        table,
        instances,
        teacher,
    })
}
