//! Corpus to combined embeddings: sampling, estimation and combination.
//!
//! Sampling goes through [`SampleBackend`], implemented by the in-process
//! toy encoder and by the HTTP client. Everything downstream of the
//! backend is backend-agnostic.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{AnalysisMetric, AnalysisRecord};
use crate::augment::{augment_n, Vocab};
use crate::distance::{combine, point, DistanceConfig};
use crate::encoder::{EncoderConfig, Pooling, ToyEncoder};
use crate::error::{Error, Result};
use crate::estimator::estimate;
use crate::eval::{eval_scored_pairs, index_by_sentence};
use crate::model::{self, CombinedEmbedding, EvalDataset, ProbEmbedding, SampleSet, ScoredPair};
use crate::service::{ClientConfig, EmbedRequest, ServiceClient, WireMode};

pub const ENDPOINT_ENV: &str = "SEN2PRO_ENDPOINT";

/// Produces sample sets for a batch of sentences.
pub trait SampleBackend: Send + Sync {
    /// Returns one set per sentence, in order, with ids taken from `ids`.
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>>;

    /// Identifies everything that influences the produced values.
    fn digest(&self) -> String;
}

fn relabel(set: SampleSet, id: &str) -> Result<SampleSet> {
    if set.sentence_id() == id {
        return Ok(set);
    }
    let (mode, dim) = (set.mode(), set.dim());
    SampleSet::with_dim(id, mode, dim, set.into_samples())
}

/// The in-process toy encoder. Augmentation draws words from `vocab`.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    encoder: ToyEncoder,
    vocab: Vocab,
}

impl ToyBackend {
    pub fn new(encoder: ToyEncoder, vocab: Vocab) -> Self {
        ToyBackend { encoder, vocab }
    }

    pub fn encoder(&self) -> &ToyEncoder {
        &self.encoder
    }

    fn sample_one(
        &self,
        id: &str,
        sentence: &str,
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<SampleSet> {
        match mode {
            WireMode::Plain => {
                if n != 1 {
                    return Err(Error::Argument(
                        "plain mode takes exactly one sample".into(),
                    ));
                }
                SampleSet::new(
                    id,
                    mode.sample_mode(),
                    vec![self.encoder.encode(sentence, None)?],
                )
            }
            WireMode::McDropout => self.encoder.encode_mc(id, sentence, n, seed),
            // Augmented variants go through the fixed encoder: dropout off.
            WireMode::Augment => {
                let samples = augment_n(sentence, n, seed, &self.vocab)?
                    .iter()
                    .map(|v| self.encoder.encode(v, None))
                    .collect::<Result<Vec<_>>>()?;
                SampleSet::new(id, mode.sample_mode(), samples)
            }
        }
    }
}

impl SampleBackend for ToyBackend {
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>> {
        ids.par_iter()
            .zip(sentences.par_iter())
            .map(|(id, s)| self.sample_one(id, s, mode, n, seed))
            .collect()
    }

    fn digest(&self) -> String {
        format!(
            "toy:{:016x}:{:016x}",
            self.encoder.config().digest(),
            self.vocab.digest()
        )
    }
}

/// A remote encoder service.
#[derive(Debug)]
pub struct RemoteBackend {
    client: ServiceClient,
    pooling: Pooling,
}

impl RemoteBackend {
    pub fn new(client: ServiceClient, pooling: Pooling) -> Self {
        RemoteBackend { client, pooling }
    }

    pub fn client(&self) -> &ServiceClient {
        &self.client
    }
}

impl SampleBackend for RemoteBackend {
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>> {
        let req = EmbedRequest {
            sentences: sentences.to_vec(),
            mode,
            n,
            seed,
            pooling: self.pooling,
        };
        self.client
            .fetch_samples(&req)?
            .into_iter()
            .zip(ids)
            .map(|(set, id)| relabel(set, id))
            .collect()
    }

    fn digest(&self) -> String {
        format!("remote:{}:{:?}", self.client.endpoint(), self.pooling)
    }
}

/// Counts calls that reach the wrapped backend.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: SampleBackend> SampleBackend for CountingBackend<B> {
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.sample(ids, sentences, mode, n, seed)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

/// On-disk cache of sample sets keyed by a content hash of
/// (sentence, mode, n, seed, backend digest). Only misses reach the backend.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: SampleBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedBackend { inner, dir })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn key_path(&self, sentence: &str, mode: WireMode, n: usize, seed: u64) -> PathBuf {
        let mut h = Sha256::new();
        for part in [
            sentence.as_bytes(),
            format!("{mode:?}").as_bytes(),
            &(n as u64).to_le_bytes(),
            &seed.to_le_bytes(),
            self.inner.digest().as_bytes(),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.jsonl"))
    }
}

impl<B: SampleBackend> SampleBackend for CachedBackend<B> {
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>> {
        let mut out: Vec<Option<SampleSet>> = Vec::with_capacity(ids.len());
        let mut misses = Vec::new();
        for (i, (id, s)) in ids.iter().zip(sentences).enumerate() {
            let path = self.key_path(s, mode, n, seed);
            if path.exists() {
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                out.push(Some(relabel(
                    model::load_sample_set(BufReader::new(file))?,
                    id,
                )?));
            } else {
                out.push(None);
                misses.push(i);
            }
        }
        if !misses.is_empty() {
            let miss_ids: Vec<String> = misses.iter().map(|&i| ids[i].clone()).collect();
            let miss_text: Vec<String> = misses.iter().map(|&i| sentences[i].clone()).collect();
            let fresh = self.inner.sample(&miss_ids, &miss_text, mode, n, seed)?;
            for (&i, set) in misses.iter().zip(fresh) {
                let path = self.key_path(&sentences[i], mode, n, seed);
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                model::save_sample_set(&set, BufWriter::new(file)).map_err(|e| match e {
                    Error::Stream(source) => Error::io(&path, source),
                    other => other,
                })?;
                out[i] = Some(set);
            }
        }
        Ok(out.into_iter().map(|s| s.expect("filled")).collect())
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Toy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub n_model: usize,
    pub n_data: usize,
    pub master_seed: u64,
    pub encoder: EncoderConfig,
    pub endpoint: Option<String>,
    /// Pooling requested from a remote backend.
    pub pooling: Pooling,
    pub distance: DistanceConfig,
    pub cache_dir: Option<PathBuf>,
    /// Augmentation word list; defaults to the corpus's own tokens.
    pub vocab_file: Option<PathBuf>,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            backend: BackendKind::Toy,
            n_model: 15,
            n_data: 15,
            master_seed: 0,
            encoder: EncoderConfig::default(),
            endpoint: None,
            pooling: Pooling::FirstLastAvg,
            distance: DistanceConfig::default(),
            cache_dir: None,
            vocab_file: None,
            batch_size: 32,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_model == 0 || self.n_data == 0 {
            return Err(Error::Validation(
                "n_model and n_data must be at least 1".into(),
            ));
        }
        self.distance.validate()?;
        if self.backend == BackendKind::Toy {
            self.encoder.validate()?;
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Endpoint from `SEN2PRO_ENDPOINT`, else from the config.
    pub fn resolved_endpoint(&self) -> Result<String> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.is_empty())
            .or_else(|| self.endpoint.clone())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "remote backend needs an endpoint (config or {ENDPOINT_ENV})"
                ))
            })
    }

    fn vocab_for(&self, sentences: &[String]) -> Result<Vocab> {
        match &self.vocab_file {
            Some(path) => {
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                Vocab::from_reader(BufReader::new(file))
            }
            None => Vocab::from_corpus(sentences),
        }
    }

    /// The backend this configuration describes, with caching if enabled.
    pub fn build_backend(&self, sentences: &[String]) -> Result<Box<dyn SampleBackend>> {
        let base: Box<dyn SampleBackend> = match self.backend {
            BackendKind::Toy => {
                let vocab = self.vocab_for(sentences)?;
                Box::new(ToyBackend::new(
                    ToyEncoder::new(self.encoder.clone())?,
                    vocab,
                ))
            }
            BackendKind::Remote => {
                let client = ServiceClient::new(
                    self.resolved_endpoint()?,
                    ClientConfig {
                        timeout: Duration::from_secs(self.timeout_secs),
                        batch_size: self.batch_size,
                        max_in_flight: self.max_in_flight,
                    },
                );
                let info = client.health_check()?;
                log::info!(
                    "remote backend {} ({}), dim {}",
                    client.endpoint(),
                    info.model,
                    info.dim
                );
                Box::new(RemoteBackend::new(client, self.pooling))
            }
        };
        Ok(match &self.cache_dir {
            Some(dir) => Box::new(CachedBackend::new(base, dir)?),
            None => base,
        })
    }
}

impl<B: SampleBackend + ?Sized> SampleBackend for Box<B> {
    fn sample(
        &self,
        ids: &[String],
        sentences: &[String],
        mode: WireMode,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleSet>> {
        (**self).sample(ids, sentences, mode, n, seed)
    }

    fn digest(&self) -> String {
        (**self).digest()
    }
}

/// Everything produced for a corpus, index-aligned with the input sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEmbedding {
    pub model_sets: Vec<SampleSet>,
    pub data_sets: Vec<SampleSet>,
    pub model_estimates: Vec<ProbEmbedding>,
    pub data_estimates: Vec<ProbEmbedding>,
    pub combined: Vec<CombinedEmbedding>,
}

fn check_corpus(sentences: &[String]) -> Result<Vec<String>> {
    if sentences.is_empty() {
        return Err(Error::Argument("corpus is empty".into()));
    }
    Ok((0..sentences.len()).map(|i| i.to_string()).collect())
}

fn uniform_dim(sets: &[SampleSet]) -> Result<()> {
    if let Some(first) = sets.first() {
        if let Some(bad) = sets.iter().find(|s| s.dim() != first.dim()) {
            return Err(Error::Validation(format!(
                "backend returned dim {} for {:?} but {} elsewhere",
                bad.dim(),
                bad.sentence_id(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Samples, estimates and combines every sentence; ids are corpus indices.
pub fn embed_corpus_with<B: SampleBackend + ?Sized>(
    backend: &B,
    sentences: &[String],
    cfg: &PipelineConfig,
) -> Result<CorpusEmbedding> {
    cfg.validate()?;
    let ids = check_corpus(sentences)?;
    let model_sets = backend.sample(
        &ids,
        sentences,
        WireMode::McDropout,
        cfg.n_model,
        cfg.master_seed,
    )?;
    let data_sets = backend.sample(
        &ids,
        sentences,
        WireMode::Augment,
        cfg.n_data,
        cfg.master_seed,
    )?;
    if model_sets.len() != sentences.len() || data_sets.len() != sentences.len() {
        return Err(Error::Validation(
            "backend returned the wrong number of sample sets".into(),
        ));
    }
    uniform_dim(&model_sets)?;
    uniform_dim(&data_sets)?;
    if model_sets[0].dim() != data_sets[0].dim() {
        return Err(Error::Validation(
            "model and data samples differ in dimension".into(),
        ));
    }
    let model_estimates: Vec<ProbEmbedding> =
        model_sets.par_iter().map(estimate).collect::<Result<_>>()?;
    let data_estimates: Vec<ProbEmbedding> =
        data_sets.par_iter().map(estimate).collect::<Result<_>>()?;
    let combined = model_estimates
        .iter()
        .zip(&data_estimates)
        .zip(sentences)
        .map(|((m, d), s)| Ok(combine(m, d)?.with_sentence(Some(s.clone()))))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusEmbedding {
        model_sets,
        data_sets,
        model_estimates,
        data_estimates,
        combined,
    })
}

/// [`embed_corpus_with`] using the backend described by `cfg`.
pub fn embed_corpus(sentences: &[String], cfg: &PipelineConfig) -> Result<Vec<CombinedEmbedding>> {
    Ok(embed_corpus_detailed(sentences, cfg)?.combined)
}

pub fn embed_corpus_detailed(
    sentences: &[String],
    cfg: &PipelineConfig,
) -> Result<CorpusEmbedding> {
    cfg.validate()?;
    let backend = cfg.build_backend(sentences)?;
    embed_corpus_with(&backend, sentences, cfg)
}

/// Point embeddings from one deterministic pass (zero variance).
pub fn embed_plain_with<B: SampleBackend + ?Sized>(
    backend: &B,
    sentences: &[String],
) -> Result<Vec<CombinedEmbedding>> {
    let ids = check_corpus(sentences)?;
    backend
        .sample(&ids, sentences, WireMode::Plain, 1, 0)?
        .into_iter()
        .zip(sentences)
        .map(|(set, s)| {
            let id = set.sentence_id().to_string();
            Ok(point(&id, set.into_samples().remove(0))?.with_sentence(Some(s.clone())))
        })
        .collect()
}

/// Corpus sentences followed by any dataset sentence not already present.
pub fn merged_sentences(corpus: &[String], pairs: &[ScoredPair]) -> Vec<String> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    let extra = EvalDataset::ScoredPairs(pairs.to_vec()).sentences();
    for s in corpus.iter().chain(&extra) {
        if seen.insert(s.clone()) {
            out.push(s.clone());
        }
    }
    out
}

/// Evaluation metric (Spearman) as a function of the sampling number, with
/// `n_model = n_data = n` and everything else fixed. Duplicates in `n_grid`
/// produce duplicate records.
pub fn sampling_sweep(
    corpus: &[String],
    pairs: &[ScoredPair],
    n_grid: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<AnalysisRecord>> {
    if n_grid.is_empty() {
        return Err(Error::Argument("n_grid is empty".into()));
    }
    let sentences = merged_sentences(corpus, pairs);
    let backend = cfg.build_backend(&sentences)?;
    n_grid
        .iter()
        .map(|&n| {
            let run = PipelineConfig {
                n_model: n,
                n_data: n,
                ..cfg.clone()
            };
            let emb = embed_corpus_with(&backend, &sentences, &run)?;
            let index = index_by_sentence(emb.combined)?;
            let r = eval_scored_pairs(pairs, &index, &cfg.distance)?;
            AnalysisRecord::new(
                AnalysisMetric::SweepSpearman,
                r.spearman,
                BTreeMap::from([
                    ("n".to_string(), json!(n)),
                    ("pearson".to_string(), json!(r.pearson)),
                    ("pairs".to_string(), json!(r.n)),
                    ("seed".to_string(), json!(cfg.master_seed)),
                ]),
            )
        })
        .collect()
}
