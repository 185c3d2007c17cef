//! Evaluation machinery: correlations, ranking, analogy, system-level
//! aggregation and a frozen-feature linear probe.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{distance, feature_vector, similarity_score, DistanceConfig};
use crate::error::{Error, Result};
use crate::model::{AnalogyQuad, CombinedEmbedding, LabeledSentence, RankPool, ScoredPair};
use crate::seed;

/// Embeddings looked up by sentence text.
pub type EmbeddingIndex = HashMap<String, CombinedEmbedding>;

/// Indexes embeddings by their sentence text, falling back to the id.
pub fn index_by_sentence<I: IntoIterator<Item = CombinedEmbedding>>(
    embeddings: I,
) -> Result<EmbeddingIndex> {
    let mut index = HashMap::new();
    let mut dim = None;
    for e in embeddings {
        if *dim.get_or_insert(e.dim()) != e.dim() {
            return Err(Error::Validation(format!(
                "embedding {:?} has dim {} but others have {}",
                e.sentence_id(),
                e.dim(),
                dim.unwrap()
            )));
        }
        let key = e.sentence().unwrap_or(e.sentence_id()).to_owned();
        index.insert(key, e);
    }
    Ok(index)
}

pub(crate) fn lookup<'a>(
    index: &'a EmbeddingIndex,
    sentence: &str,
) -> Result<&'a CombinedEmbedding> {
    index
        .get(sentence)
        .ok_or_else(|| Error::MissingEmbedding(sentence.to_owned()))
}

/// One machine-readable result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub spearman: f64,
    pub pearson: f64,
    pub n: usize,
}

fn pearson_of(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "zero variance in correlation input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson and Spearman (Pearson on average ranks) correlations.
pub fn correlation(pred: &[f64], gold: &[f64]) -> Result<CorrelationResult> {
    if pred.len() != gold.len() {
        return Err(Error::Argument(format!(
            "correlation inputs differ in length: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Argument(
            "correlation needs at least two points".into(),
        ));
    }
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::Argument("correlation inputs must be finite".into()));
    }
    Ok(CorrelationResult {
        pearson: pearson_of(pred, gold)?,
        spearman: pearson_of(&average_ranks(pred), &average_ranks(gold))?,
        n: pred.len(),
    })
}

/// Similarity per pair, correlated against the gold scores.
pub fn eval_scored_pairs(
    pairs: &[ScoredPair],
    embeddings: &EmbeddingIndex,
    cfg: &DistanceConfig,
) -> Result<CorrelationResult> {
    let (pred, gold) = pair_scores(pairs, embeddings, cfg)?;
    correlation(&pred, &gold)
}

pub(crate) fn pair_scores(
    pairs: &[ScoredPair],
    embeddings: &EmbeddingIndex,
    cfg: &DistanceConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::with_capacity(pairs.len());
    let mut gold = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = lookup(embeddings, &p.sent_a)?;
        let b = lookup(embeddings, &p.sent_b)?;
        check_dim(a, b)?;
        pred.push(similarity_score(a, b, cfg));
        gold.push(p.gold);
    }
    Ok((pred, gold))
}

fn check_dim(a: &CombinedEmbedding, b: &CombinedEmbedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "embeddings {:?} and {:?} differ in dimension",
            a.sentence_id(),
            b.sentence_id()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub mrr: f64,
    pub hits_at: BTreeMap<usize, f64>,
    pub n: usize,
}

pub const DEFAULT_HITS: [usize; 3] = [1, 3, 10];

/// 1-based rank of the positive: candidates sorted by ascending distance,
/// ties broken by pool index.
pub fn positive_rank(distances: &[f64], positive: usize) -> usize {
    let dp = distances[positive];
    1 + distances
        .iter()
        .enumerate()
        .filter(|&(j, &d)| d < dp || (d == dp && j < positive))
        .count()
}

pub fn eval_rank(
    pools: &[RankPool],
    embeddings: &EmbeddingIndex,
    cfg: &DistanceConfig,
    hits: &[usize],
) -> Result<RankResult> {
    if pools.is_empty() {
        return Err(Error::Argument("no rank pools".into()));
    }
    let mut rr = 0.0;
    let mut hit_counts = vec![0usize; hits.len()];
    for pool in pools {
        pool.validate()?;
        let q = lookup(embeddings, &pool.query)?;
        let distances = pool
            .pool
            .iter()
            .map(|s| {
                let c = lookup(embeddings, s)?;
                check_dim(q, c)?;
                Ok(distance(q, c, cfg))
            })
            .collect::<Result<Vec<_>>>()?;
        let rank = positive_rank(&distances, pool.positive_index());
        rr += 1.0 / rank as f64;
        for (count, &k) in hit_counts.iter_mut().zip(hits) {
            if rank <= k {
                *count += 1;
            }
        }
    }
    let n = pools.len();
    Ok(RankResult {
        mrr: rr / n as f64,
        hits_at: hits
            .iter()
            .zip(hit_counts)
            .map(|(&k, c)| (k, c as f64 / n as f64))
            .collect(),
        n,
    })
}

fn unit(v: &[f64], id: &str) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Argument(format!(
            "embedding {id:?} is unnormalizable"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `|v_A - v_B|_2 - |v_C - v_D|_2` on unit-normalized means.
pub fn analogy_x(
    a: &CombinedEmbedding,
    b: &CombinedEmbedding,
    c: &CombinedEmbedding,
    d: &CombinedEmbedding,
) -> Result<f64> {
    for other in [b, c, d] {
        check_dim(a, other)?;
    }
    let [va, vb, vc, vd] = [a, b, c, d].map(|e| unit(e.mu(), e.sentence_id()));
    Ok(l2(&va?, &vb?) - l2(&vc?, &vd?))
}

/// Mean `|x|` over the quadruples.
pub fn analogy_score(quads: &[AnalogyQuad], embeddings: &EmbeddingIndex) -> Result<f64> {
    if quads.is_empty() {
        return Err(Error::Argument("no analogy quadruples".into()));
    }
    let mut total = 0.0;
    for q in quads {
        let [a, b, c, d] = [&q.a, &q.b, &q.c, &q.d].map(|s| lookup(embeddings, s));
        total += analogy_x(a?, b?, c?, d?)?.abs();
    }
    Ok(total / quads.len() as f64)
}

/// Mean similarity of hypotheses to references.
pub fn system_score(
    segments: &[(String, String)],
    embeddings: &EmbeddingIndex,
    cfg: &DistanceConfig,
) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Argument("empty segment list".into()));
    }
    let mut total = 0.0;
    for (hyp, reference) in segments {
        let h = lookup(embeddings, hyp)?;
        let r = lookup(embeddings, reference)?;
        check_dim(h, r)?;
        total += similarity_score(h, r, cfg);
    }
    Ok(total / segments.len() as f64)
}

/// Multinomial logistic regression over z-scored frozen features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    /// `classes x dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub classes: usize,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Probe {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn logits_of(&self, z: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                self.bias[c]
                    + self.weights[c * self.dim..(c + 1) * self.dim]
                        .iter()
                        .zip(z)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits_of(&self.standardize(features));
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate().skip(1) {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    v.iter_mut().for_each(|x| *x /= z);
}

/// Full-batch gradient descent on mean cross-entropy.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    lr: f64,
    epochs: usize,
    seed: u64,
) -> Result<Probe> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Argument(format!(
            "probe needs matching non-empty features and labels ({} vs {})",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Argument("inconsistent feature dimensions".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Argument(format!(
            "class {c} has no training examples"
        )));
    }

    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for f in features {
        scale
            .iter_mut()
            .zip(f.iter().zip(&mean))
            .for_each(|(s, (x, m))| *s += (x - m).powi(2));
    }
    for s in scale.iter_mut() {
        let sd = (*s / n).sqrt();
        *s = if sd > 0.0 { sd } else { 1.0 };
    }

    let mut rng = seed::named_rng(seed, "probe");
    let mut probe = Probe {
        weights: (0..classes * dim)
            .map(|_| rng.random_range(-0.01..0.01))
            .collect(),
        bias: vec![0.0; classes],
        feature_mean: mean,
        feature_scale: scale,
        classes,
        dim,
        lr,
        epochs,
        seed,
    };
    let z: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();

    let mut grad_w = vec![0.0; classes * dim];
    let mut grad_b = vec![0.0; classes];
    for _ in 0..epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in z.iter().zip(labels) {
            let mut p = probe.logits_of(x);
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for c in 0..classes {
                grad_b[c] += p[c];
                for (g, xi) in grad_w[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *g += p[c] * xi;
                }
            }
        }
        for (w, g) in probe.weights.iter_mut().zip(&grad_w) {
            *w -= lr * g / n;
        }
        for (b, g) in probe.bias.iter_mut().zip(&grad_b) {
            *b -= lr * g / n;
        }
    }
    if probe
        .weights
        .iter()
        .chain(&probe.bias)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("probe training diverged".into()));
    }
    Ok(probe)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn probe_accuracy(probe: &Probe, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(
        features.len(),
        labels.len(),
        "features and labels differ in length"
    );
    if features.is_empty() {
        return 0.0;
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &l)| probe.predict(f) == l)
        .count();
    correct as f64 / features.len() as f64
}

/// Which part of a combined embedding feeds the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The mean alone (a point embedding).
    Mu,
    /// `[mu; sigma_diag]`.
    MuSigma,
}

impl FeatureMode {
    pub fn features(self, e: &CombinedEmbedding) -> Vec<f64> {
        match self {
            FeatureMode::Mu => e.mu().to_vec(),
            FeatureMode::MuSigma => feature_vector(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub mode: FeatureMode,
    pub accuracy: f64,
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
}

pub const PROBE_LR: f64 = 0.5;
pub const PROBE_EPOCHS: usize = 200;

/// Trains on `train` and scores on `test`. Classes are the sorted distinct
/// training labels; a test label outside them counts as an error.
pub fn probe_task(
    train: &[LabeledSentence],
    test: &[LabeledSentence],
    embeddings: &EmbeddingIndex,
    mode: FeatureMode,
    seed: u64,
) -> Result<ProbeOutcome> {
    if test.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    let classes: Vec<String> = train
        .iter()
        .map(|l| l.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let encode = |rows: &[LabeledSentence]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        rows.iter()
            .map(|r| {
                let f = mode.features(lookup(embeddings, &r.sentence)?);
                let y = classes
                    .iter()
                    .position(|c| *c == r.label)
                    .unwrap_or(usize::MAX);
                Ok((f, y))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    };
    let (xtr, ytr) = encode(train)?;
    let (xte, yte) = encode(test)?;
    let probe = train_probe(&xtr, &ytr, classes.len(), PROBE_LR, PROBE_EPOCHS, seed)?;
    Ok(ProbeOutcome {
        mode,
        accuracy: probe_accuracy(&probe, &xte, &yte),
        classes,
        n_train: train.len(),
        n_test: test.len(),
    })
}
