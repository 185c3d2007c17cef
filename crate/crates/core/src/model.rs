//! Domain types shared across the crate and their on-disk formats.
//!
//! Sample sets, probabilistic embeddings and combined embeddings are stored
//! as JSON lines, one sentence per line. Evaluation datasets are TSV, except
//! rank pools which are JSON lines. Every loader validates its records, so a
//! value obtained from this module always satisfies its type invariants.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the vectors of a [`SampleSet`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// MC-dropout passes over one sentence.
    Model,
    /// Deterministic passes over augmented variants of one sentence.
    Data,
    /// A single deterministic pass.
    Plain,
}

/// Source of uncertainty a [`ProbEmbedding`] was estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMode {
    Model,
    Data,
}

impl From<UncertaintyMode> for SampleMode {
    fn from(m: UncertaintyMode) -> Self {
        match m {
            UncertaintyMode::Model => SampleMode::Model,
            UncertaintyMode::Data => SampleMode::Data,
        }
    }
}

fn check_finite(what: &str, id: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{what} of {id:?} has non-finite entries"
        )))
    }
}

/// N embedding vectors of one sentence under one sampling mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleSetRepr")]
pub struct SampleSet {
    sentence_id: String,
    mode: SampleMode,
    dim: usize,
    samples: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct SampleSetRepr {
    sentence_id: String,
    mode: SampleMode,
    dim: usize,
    samples: Vec<Vec<f64>>,
}

impl TryFrom<SampleSetRepr> for SampleSet {
    type Error = Error;
    fn try_from(r: SampleSetRepr) -> Result<Self> {
        SampleSet::with_dim(r.sentence_id, r.mode, r.dim, r.samples)
    }
}

impl SampleSet {
    /// Builds a set, taking the dimension from the first sample.
    pub fn new(
        sentence_id: impl Into<String>,
        mode: SampleMode,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = samples.first().map_or(0, Vec::len);
        Self::with_dim(sentence_id, mode, dim, samples)
    }

    pub fn with_dim(
        sentence_id: impl Into<String>,
        mode: SampleMode,
        dim: usize,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let sentence_id = sentence_id.into();
        if samples.is_empty() {
            return Err(Error::Validation(format!(
                "sample set {sentence_id:?} has no samples"
            )));
        }
        if dim == 0 {
            return Err(Error::Validation(format!(
                "sample set {sentence_id:?} has dim 0"
            )));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(Error::Validation(format!(
                "sample set {sentence_id:?}: sample {i} has length {} but dim is {dim}",
                s.len()
            )));
        }
        if mode == SampleMode::Plain && samples.len() != 1 {
            return Err(Error::Validation(format!(
                "sample set {sentence_id:?}: plain mode requires exactly one sample, got {}",
                samples.len()
            )));
        }
        for s in &samples {
            check_finite("sample", &sentence_id, s)?;
        }
        Ok(SampleSet {
            sentence_id,
            mode,
            dim,
            samples,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }
}

/// Mean and banded (diagonal) covariance of one sentence under one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProbEmbeddingRepr")]
pub struct ProbEmbedding {
    sentence_id: String,
    mode: UncertaintyMode,
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
    n_samples: usize,
}

#[derive(Deserialize)]
struct ProbEmbeddingRepr {
    sentence_id: String,
    mode: UncertaintyMode,
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
    n_samples: usize,
}

impl TryFrom<ProbEmbeddingRepr> for ProbEmbedding {
    type Error = Error;
    fn try_from(r: ProbEmbeddingRepr) -> Result<Self> {
        ProbEmbedding::new(r.sentence_id, r.mode, r.mu, r.sigma_diag, r.n_samples)
    }
}

fn check_moments(id: &str, mu: &[f64], sigma_diag: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::Validation(format!("embedding {id:?} is empty")));
    }
    if mu.len() != sigma_diag.len() {
        return Err(Error::Validation(format!(
            "embedding {id:?}: mu has length {} but sigma_diag has {}",
            mu.len(),
            sigma_diag.len()
        )));
    }
    check_finite("mu", id, mu)?;
    check_finite("sigma_diag", id, sigma_diag)?;
    if sigma_diag.iter().any(|&s| s < 0.0) {
        return Err(Error::Validation(format!(
            "embedding {id:?}: negative variance"
        )));
    }
    Ok(())
}

impl ProbEmbedding {
    pub fn new(
        sentence_id: impl Into<String>,
        mode: UncertaintyMode,
        mu: Vec<f64>,
        sigma_diag: Vec<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        let sentence_id = sentence_id.into();
        check_moments(&sentence_id, &mu, &sigma_diag)?;
        Ok(ProbEmbedding {
            sentence_id,
            mode,
            mu,
            sigma_diag,
            n_samples,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn mode(&self) -> UncertaintyMode {
        self.mode
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_diag(&self) -> &[f64] {
        &self.sigma_diag
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The task-facing representation: model and data estimates averaged.
///
/// `sentence` carries the source text when known so that evaluation files,
/// which reference sentences by text, can be joined against embedding files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CombinedRepr")]
pub struct CombinedEmbedding {
    sentence_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    sentence: Option<String>,
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
}

#[derive(Deserialize)]
struct CombinedRepr {
    sentence_id: String,
    #[serde(default)]
    sentence: Option<String>,
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
}

impl TryFrom<CombinedRepr> for CombinedEmbedding {
    type Error = Error;
    fn try_from(r: CombinedRepr) -> Result<Self> {
        Ok(CombinedEmbedding::new(r.sentence_id, r.mu, r.sigma_diag)?.with_sentence(r.sentence))
    }
}

impl CombinedEmbedding {
    pub fn new(sentence_id: impl Into<String>, mu: Vec<f64>, sigma_diag: Vec<f64>) -> Result<Self> {
        let sentence_id = sentence_id.into();
        check_moments(&sentence_id, &mu, &sigma_diag)?;
        Ok(CombinedEmbedding {
            sentence_id,
            sentence: None,
            mu,
            sigma_diag,
        })
    }

    pub fn with_sentence(mut self, sentence: Option<String>) -> Self {
        self.sentence = sentence;
        self
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn sentence(&self) -> Option<&str> {
        self.sentence.as_deref()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_diag(&self) -> &[f64] {
        &self.sigma_diag
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Copy with the given coordinates zeroed in both mu and sigma_diag.
    pub fn with_zeroed(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        for &i in indices {
            out.mu[i] = 0.0;
            out.sigma_diag[i] = 0.0;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// JSON lines

/// Writes one JSON object per line.
pub fn write_jsonl<'a, T, I, W>(items: I, mut sink: W) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
    W: Write,
{
    for item in items {
        serde_json::to_writer(&mut sink, item).map_err(|e| Error::Stream(e.into()))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads non-blank JSON lines. An input without any record is an error.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(source: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    if out.is_empty() {
        return Err(Error::Validation("no records".into()));
    }
    Ok(out)
}

pub fn save_sample_set<W: Write>(set: &SampleSet, sink: W) -> Result<()> {
    write_jsonl([set], sink)
}

pub fn save_sample_sets<W: Write>(sets: &[SampleSet], sink: W) -> Result<()> {
    write_jsonl(sets, sink)
}

/// Reads a stream holding exactly one sample set.
pub fn load_sample_set<R: BufRead>(source: R) -> Result<SampleSet> {
    let mut sets = load_sample_sets(source)?;
    if sets.len() != 1 {
        return Err(Error::Validation(format!(
            "expected one sample set, found {}",
            sets.len()
        )));
    }
    Ok(sets.remove(0))
}

pub fn load_sample_sets<R: BufRead>(source: R) -> Result<Vec<SampleSet>> {
    read_jsonl(source)
}

pub fn load_prob_embeddings<R: BufRead>(source: R) -> Result<Vec<ProbEmbedding>> {
    read_jsonl(source)
}

pub fn load_combined_embeddings<R: BufRead>(source: R) -> Result<Vec<CombinedEmbedding>> {
    read_jsonl(source)
}

// ---------------------------------------------------------------------------
// Evaluation datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    ScoredPairs,
    RankPools,
    AnalogyQuads,
    LabeledSentences,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scored_pairs" => Ok(DatasetKind::ScoredPairs),
            "rank_pools" => Ok(DatasetKind::RankPools),
            "analogy_quads" => Ok(DatasetKind::AnalogyQuads),
            "labeled_sentences" => Ok(DatasetKind::LabeledSentences),
            _ => Err(Error::Argument(format!("unknown dataset kind {s:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetKind::ScoredPairs => "scored_pairs",
            DatasetKind::RankPools => "rank_pools",
            DatasetKind::AnalogyQuads => "analogy_quads",
            DatasetKind::LabeledSentences => "labeled_sentences",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub sent_a: String,
    pub sent_b: String,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPool {
    pub query: String,
    pub positive: String,
    pub pool: Vec<String>,
}

impl RankPool {
    pub fn validate(&self) -> Result<()> {
        match self.pool.iter().filter(|s| **s == self.positive).count() {
            1 => Ok(()),
            0 => Err(Error::Validation(format!(
                "pool for query {:?} lacks its positive",
                self.query
            ))),
            n => Err(Error::Validation(format!(
                "pool for query {:?} contains its positive {n} times",
                self.query
            ))),
        }
    }

    /// Index of the positive within the pool.
    pub fn positive_index(&self) -> usize {
        self.pool
            .iter()
            .position(|s| *s == self.positive)
            .expect("validated pool contains its positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyQuad {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalDataset {
    ScoredPairs(Vec<ScoredPair>),
    RankPools(Vec<RankPool>),
    AnalogyQuads(Vec<AnalogyQuad>),
    LabeledSentences(Vec<LabeledSentence>),
}

impl EvalDataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            EvalDataset::ScoredPairs(_) => DatasetKind::ScoredPairs,
            EvalDataset::RankPools(_) => DatasetKind::RankPools,
            EvalDataset::AnalogyQuads(_) => DatasetKind::AnalogyQuads,
            EvalDataset::LabeledSentences(_) => DatasetKind::LabeledSentences,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EvalDataset::ScoredPairs(r) => r.len(),
            EvalDataset::RankPools(r) => r.len(),
            EvalDataset::AnalogyQuads(r) => r.len(),
            EvalDataset::LabeledSentences(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every distinct sentence referenced by the dataset, in first-seen order.
    pub fn sentences(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut push = |s: &String| {
            if seen.insert(s.clone()) {
                out.push(s.clone());
            }
        };
        match self {
            EvalDataset::ScoredPairs(r) => r.iter().for_each(|p| {
                push(&p.sent_a);
                push(&p.sent_b);
            }),
            EvalDataset::RankPools(r) => r.iter().for_each(|p| {
                push(&p.query);
                p.pool.iter().for_each(&mut push);
            }),
            EvalDataset::AnalogyQuads(r) => r.iter().for_each(|q| {
                for s in [&q.a, &q.b, &q.c, &q.d] {
                    push(s);
                }
            }),
            EvalDataset::LabeledSentences(r) => r.iter().for_each(|l| push(&l.sentence)),
        }
        out
    }

    pub fn as_scored_pairs(&self) -> Result<&[ScoredPair]> {
        match self {
            EvalDataset::ScoredPairs(r) => Ok(r),
            other => Err(Error::Argument(format!(
                "expected scored_pairs dataset, got {}",
                other.kind()
            ))),
        }
    }

    pub fn as_rank_pools(&self) -> Result<&[RankPool]> {
        match self {
            EvalDataset::RankPools(r) => Ok(r),
            other => Err(Error::Argument(format!(
                "expected rank_pools dataset, got {}",
                other.kind()
            ))),
        }
    }

    pub fn as_analogy_quads(&self) -> Result<&[AnalogyQuad]> {
        match self {
            EvalDataset::AnalogyQuads(r) => Ok(r),
            other => Err(Error::Argument(format!(
                "expected analogy_quads dataset, got {}",
                other.kind()
            ))),
        }
    }

    pub fn as_labeled(&self) -> Result<&[LabeledSentence]> {
        match self {
            EvalDataset::LabeledSentences(r) => Ok(r),
            other => Err(Error::Argument(format!(
                "expected labeled_sentences dataset, got {}",
                other.kind()
            ))),
        }
    }
}

fn tsv_fields<R: BufRead>(source: R, arity: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if fields.len() < arity {
            return Err(Error::Schema {
                line: i + 1,
                message: format!(
                    "expected {arity} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        if let Some(j) = fields[..arity].iter().position(|f| f.trim().is_empty()) {
            return Err(Error::Schema {
                line: i + 1,
                message: format!("field {} is empty", j + 1),
            });
        }
        rows.push((i + 1, fields));
    }
    if rows.is_empty() {
        return Err(Error::Validation("no records".into()));
    }
    Ok(rows)
}

/// Loads an evaluation dataset of the given kind and validates every record.
pub fn load_eval_dataset<R: BufRead>(source: R, kind: DatasetKind) -> Result<EvalDataset> {
    match kind {
        DatasetKind::ScoredPairs => {
            let rows = tsv_fields(source, 3)?;
            let mut out = Vec::with_capacity(rows.len());
            for (line, f) in rows {
                let gold: f64 = f[2].trim().parse().map_err(|_| Error::Schema {
                    line,
                    message: format!("gold score {:?} is not a number", f[2]),
                })?;
                if !gold.is_finite() {
                    return Err(Error::Validation(format!(
                        "line {line}: gold score is not finite"
                    )));
                }
                out.push(ScoredPair {
                    sent_a: f[0].clone(),
                    sent_b: f[1].clone(),
                    gold,
                });
            }
            Ok(EvalDataset::ScoredPairs(out))
        }
        DatasetKind::RankPools => {
            #[derive(Deserialize)]
            struct Repr {
                query: Option<String>,
                positive: Option<String>,
                pool: Option<Vec<String>>,
            }
            let mut out = Vec::new();
            for (i, line) in source.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: Repr = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                let missing = |name: &str| Error::Schema {
                    line: i + 1,
                    message: format!("missing field {name:?}"),
                };
                let pool = RankPool {
                    query: r.query.ok_or_else(|| missing("query"))?,
                    positive: r.positive.ok_or_else(|| missing("positive"))?,
                    pool: r.pool.ok_or_else(|| missing("pool"))?,
                };
                pool.validate()?;
                out.push(pool);
            }
            if out.is_empty() {
                return Err(Error::Validation("no records".into()));
            }
            Ok(EvalDataset::RankPools(out))
        }
        DatasetKind::AnalogyQuads => {
            let rows = tsv_fields(source, 4)?;
            Ok(EvalDataset::AnalogyQuads(
                rows.into_iter()
                    .map(|(_, mut f)| {
                        f.truncate(4);
                        let d = f.pop().unwrap();
                        let c = f.pop().unwrap();
                        let b = f.pop().unwrap();
                        let a = f.pop().unwrap();
                        AnalogyQuad { a, b, c, d }
                    })
                    .collect(),
            ))
        }
        DatasetKind::LabeledSentences => {
            let rows = tsv_fields(source, 2)?;
            Ok(EvalDataset::LabeledSentences(
                rows.into_iter()
                    .map(|(_, f)| LabeledSentence {
                        sentence: f[0].clone(),
                        label: f[1].trim().to_owned(),
                    })
                    .collect(),
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Theory reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Theorem1,
    Theorem2,
    EstimatorTradeoff,
    UnifiedVsIndividual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub label: String,
    pub value: f64,
}

/// Outcome of one numeric experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub experiment: Experiment,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub measurements: Vec<Measurement>,
}

impl TheoryReport {
    pub fn new(
        experiment: Experiment,
        parameters: BTreeMap<String, serde_json::Value>,
        measurements: Vec<Measurement>,
    ) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::Validation(
                "theory report without measurements".into(),
            ));
        }
        Ok(TheoryReport {
            experiment,
            parameters,
            measurements,
        })
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.measurements
            .iter()
            .find(|m| m.label == label)
            .map(|m| m.value)
    }
}

pub(crate) fn measurement(label: impl Into<String>, value: f64) -> Measurement {
    Measurement {
        label: label.into(),
        value,
    }
}
