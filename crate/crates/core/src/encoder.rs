//! A tiny, seedable transformer encoder with MC dropout.
//!
//! Weights are never trained or stored: they are regenerated from
//! `(config, weight_seed)`. Dropout masks come from a ChaCha stream keyed by
//! the per-pass dropout seed, so every forward pass is reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SampleMode, SampleSet};
use crate::seed::{self, fnv1a, mix, sentence_hash};

pub const CLS_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Token mean over non-CLS positions of (block 1 output + last block output) / 2.
    #[default]
    FirstLastAvg,
    /// Last block output at the CLS position.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub pooling: Pooling,
    pub weight_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 1024,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ffn: 64,
            max_len: 64,
            dropout_p: 0.1,
            pooling: Pooling::FirstLastAvg,
            weight_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.vocab_size < 3 {
            return bad(format!(
                "vocab_size must be at least 3, got {}",
                self.vocab_size
            ));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.d_ffn == 0 || self.max_len == 0 {
            return bad("n_layers, d_ffn and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            ));
        }
        Ok(())
    }

    /// Stable digest of the configuration, used for cache keys.
    pub fn digest(&self) -> u64 {
        fnv1a(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

/// Dense row-major matrix, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        Matrix { rows, cols, data }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x * self + bias` for a row vector `x` of length `rows`.
    fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = bias.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

fn uniform_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn generate(d: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerNorm {
            gain: uniform_vec(d, rng).into_iter().map(|u| 1.0 + u).collect(),
            bias: uniform_vec(d, rng),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln_attn: LayerNorm,
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    bq: Vec<f64>,
    bk: Vec<f64>,
    bv: Vec<f64>,
    bo: Vec<f64>,
    ln_ffn: LayerNorm,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

impl Block {
    fn generate(cfg: &EncoderConfig, layer: usize) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ffn;
        let r = |name: &str| seed::named_rng(cfg.weight_seed, &format!("block{layer}.{name}"));
        Block {
            ln_attn: LayerNorm::generate(d, &mut r("ln_attn")),
            wq: Matrix::uniform(d, d, &mut r("wq")),
            wk: Matrix::uniform(d, d, &mut r("wk")),
            wv: Matrix::uniform(d, d, &mut r("wv")),
            wo: Matrix::uniform(d, d, &mut r("wo")),
            bq: uniform_vec(d, &mut r("bq")),
            bk: uniform_vec(d, &mut r("bk")),
            bv: uniform_vec(d, &mut r("bv")),
            bo: uniform_vec(d, &mut r("bo")),
            ln_ffn: LayerNorm::generate(d, &mut r("ln_ffn")),
            w1: Matrix::uniform(d, f, &mut r("w1")),
            b1: uniform_vec(f, &mut r("b1")),
            w2: Matrix::uniform(f, d, &mut r("w2")),
            b2: uniform_vec(d, &mut r("b2")),
        }
    }
}

/// All encoder parameters, derived from `weight_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    token_embedding: Matrix,
    positions: Matrix,
    blocks: Vec<Block>,
}

impl EncoderWeights {
    pub fn generate(cfg: &EncoderConfig) -> Self {
        let d = cfg.d_model;
        let token_embedding = Matrix::uniform(
            cfg.vocab_size,
            d,
            &mut seed::named_rng(cfg.weight_seed, "token_embedding"),
        );
        let mut positions = Matrix {
            rows: cfg.max_len,
            cols: d,
            data: vec![0.0; cfg.max_len * d],
        };
        for pos in 0..cfg.max_len {
            for i in 0..d {
                let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                let angle = pos as f64 * freq;
                positions.data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        let blocks = (0..cfg.n_layers).map(|l| Block::generate(cfg, l)).collect();
        EncoderWeights {
            token_embedding,
            positions,
            blocks,
        }
    }

    fn all_finite(&self) -> bool {
        let mats = std::iter::once(&self.token_embedding).chain(
            self.blocks
                .iter()
                .flat_map(|b| [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2]),
        );
        mats.flat_map(|m| m.data.iter()).all(|v| v.is_finite())
    }
}

/// Bernoulli(1 - p) keep-masks scaled by 1 / (1 - p), drawn in call order.
struct Dropout {
    keep: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn new(p: f64, seed: Option<u64>) -> Self {
        Dropout {
            keep: 1.0 - p,
            rng: seed.filter(|_| p > 0.0).map(seed::rng),
        }
    }

    fn apply(&mut self, x: &mut [f64]) {
        let Some(rng) = self.rng.as_mut() else { return };
        let scale = 1.0 / self.keep;
        for v in x {
            if rng.random::<f64>() < self.keep {
                *v *= scale;
            } else {
                *v = 0.0;
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh())
}

/// The toy encoder: configuration plus regenerated weights.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: EncoderConfig,
    weights: EncoderWeights,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let weights = EncoderWeights::generate(&config);
        if !weights.all_finite() {
            return Err(Error::Numeric("generated weights are not finite".into()));
        }
        Ok(ToyEncoder { config, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.config.d_model
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        tokenize(text, &self.config)
    }

    /// One forward pass. `dropout_seed = None` disables dropout.
    pub fn encode(&self, sentence: &str, dropout_seed: Option<u64>) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let w = &self.weights;
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let ids = self.tokenize(sentence);
        let len = ids.len();
        let mut dropout = Dropout::new(cfg.dropout_p, dropout_seed);

        let mut x: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                w.token_embedding
                    .row(id)
                    .iter()
                    .zip(w.positions.row(pos))
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();
        for row in &mut x {
            dropout.apply(row);
        }

        let mut first: Option<Vec<Vec<f64>>> = None;
        let scale = 1.0 / (dh as f64).sqrt();
        for block in &w.blocks {
            let normed: Vec<Vec<f64>> = x.iter().map(|r| block.ln_attn.apply(r)).collect();
            let q: Vec<Vec<f64>> = normed
                .iter()
                .map(|h| block.wq.affine(h, &block.bq))
                .collect();
            let k: Vec<Vec<f64>> = normed
                .iter()
                .map(|h| block.wk.affine(h, &block.bk))
                .collect();
            let v: Vec<Vec<f64>> = normed
                .iter()
                .map(|h| block.wv.affine(h, &block.bv))
                .collect();

            for t in 0..len {
                let mut ctx = vec![0.0; d];
                for h in 0..heads {
                    let span = h * dh..(h + 1) * dh;
                    let scores: Vec<f64> = (0..len)
                        .map(|s| {
                            q[t][span.clone()]
                                .iter()
                                .zip(&k[s][span.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                * scale
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (s, e) in exps.iter().enumerate() {
                        let a = e / z;
                        for (c, vv) in ctx[span.clone()].iter_mut().zip(&v[s][span.clone()]) {
                            *c += a * vv;
                        }
                    }
                }
                let mut out = block.wo.affine(&ctx, &block.bo);
                dropout.apply(&mut out);
                for (xi, o) in x[t].iter_mut().zip(out) {
                    *xi += o;
                }
            }

            for row in x.iter_mut() {
                let h = block.ln_ffn.apply(row);
                let mut hidden: Vec<f64> = block
                    .w1
                    .affine(&h, &block.b1)
                    .into_iter()
                    .map(gelu)
                    .collect();
                dropout.apply(&mut hidden);
                let out = block.w2.affine(&hidden, &block.b2);
                for (xi, o) in row.iter_mut().zip(out) {
                    *xi += o;
                }
            }
            if first.is_none() {
                first = Some(x.clone());
            }
        }

        let pooled = match cfg.pooling {
            Pooling::Cls => x[0].clone(),
            Pooling::FirstLastAvg => {
                let first = first.expect("at least one block");
                // A sentence with no words pools over the CLS position alone.
                let positions: Vec<usize> = if len > 1 { (1..len).collect() } else { vec![0] };
                let mut acc = vec![0.0; d];
                for &t in &positions {
                    for i in 0..d {
                        acc[i] += 0.5 * (first[t][i] + x[t][i]);
                    }
                }
                let n = positions.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
        };
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite encoder output for {sentence:?}"
            )));
        }
        Ok(pooled)
    }

    /// Dropout seed used for sample `i` of `sentence` under `master_seed`.
    pub fn sample_seed(sentence: &str, master_seed: u64, i: usize) -> u64 {
        mix(master_seed, sentence_hash(sentence), i as u64)
    }

    /// `n` MC-dropout passes over one sentence. Samples are computed in
    /// parallel; each depends only on its own derived seed.
    pub fn encode_mc(
        &self,
        sentence_id: &str,
        sentence: &str,
        n: usize,
        master_seed: u64,
    ) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::Argument("encode_mc needs n >= 1".into()));
        }
        let samples = (0..n)
            .into_par_iter()
            .map(|i| self.encode(sentence, Some(Self::sample_seed(sentence, master_seed, i))))
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(sentence_id, SampleMode::Model, samples)
    }
}

/// Lowercase, split on whitespace, hash each word into `1..vocab_size-1`,
/// prepend CLS and truncate to `max_len`.
pub fn tokenize(text: &str, cfg: &EncoderConfig) -> Vec<usize> {
    let buckets = (cfg.vocab_size - 2) as u64;
    std::iter::once(CLS_ID)
        .chain(
            text.to_lowercase()
                .split_whitespace()
                .map(|w| 1 + (fnv1a(w.as_bytes()) % buckets) as usize),
        )
        .take(cfg.max_len)
        .collect()
}
