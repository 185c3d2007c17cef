//! Numeric checks: diagonal Gaussian KL, the Sen2Pro-vs-point KL inequality,
//! unified vs individual estimation, and the SCE/banding trade-off.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::Vocab;
use crate::distance::{combine, from_single, DistanceConfig};
use crate::encoder::{EncoderConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::estimator::{
    banded_variance, estimate, gaussian_samples, mean_of, sce_of, spectral_norm,
};
use crate::eval::{eval_scored_pairs, index_by_sentence};
use crate::model::{
    measurement, CombinedEmbedding, Experiment, SampleMode, SampleSet, ScoredPair, TheoryReport,
};
use crate::pipeline::{embed_corpus_with, merged_sentences, PipelineConfig, ToyBackend};
use crate::seed::{self, mix};

/// Floor applied to estimated variances before any KL computation.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// A Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    mu: Vec<f64>,
    cov_diag: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mu: Vec<f64>, cov_diag: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != cov_diag.len() {
            return Err(Error::Argument(format!(
                "mean has length {} but covariance diagonal has length {}",
                mu.len(),
                cov_diag.len()
            )));
        }
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("mean has non-finite entries".into()));
        }
        if let Some(v) = cov_diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Argument(format!(
                "variances must be positive and finite, got {v}"
            )));
        }
        Ok(GaussianSpec { mu, cov_diag })
    }

    /// Isotropic covariance `epsilon * I`.
    pub fn isotropic(mu: Vec<f64>, epsilon: f64) -> Result<Self> {
        let k = mu.len();
        GaussianSpec::new(mu, vec![epsilon; k])
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn cov_diag(&self) -> &[f64] {
        &self.cov_diag
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `det(cov)^(1/k)`, computed in log space.
    pub fn geometric_mean_variance(&self) -> f64 {
        (self.cov_diag.iter().map(|v| v.ln()).sum::<f64>() / self.dim() as f64).exp()
    }
}

/// KL(p || q) for diagonal Gaussians. Log-determinants are sums of logs.
pub fn gaussian_kl(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let mut total = 0.0;
    for i in 0..p.dim() {
        let (vp, vq) = (p.cov_diag[i], q.cov_diag[i]);
        let dm = q.mu[i] - p.mu[i];
        total += vq.ln() - vp.ln() + vp / vq - 1.0 + dm * dm / vq;
    }
    Ok((0.5 * total).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `0.5 * det(Sigma_hat)^(1/k) / e`, inside the inequality's hypothesis.
    #[default]
    AutoValid,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Config {
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub epsilon_rule: EpsilonRule,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Theorem2Config {
    pub fn auto(k: usize, trials: usize, seed: u64) -> Self {
        Theorem2Config {
            k,
            trials,
            seed,
            epsilon_rule: EpsilonRule::AutoValid,
            epsilon: None,
        }
    }

    pub fn explicit(k: usize, trials: usize, seed: u64, epsilon: f64) -> Self {
        Theorem2Config {
            k,
            trials,
            seed,
            epsilon_rule: EpsilonRule::Explicit,
            epsilon: Some(epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Validation("trials must be at least 1".into()));
        }
        match (self.epsilon_rule, self.epsilon) {
            (EpsilonRule::Explicit, Some(e)) if e.is_finite() && e > 0.0 => Ok(()),
            (EpsilonRule::Explicit, _) => {
                Err(Error::Validation("explicit rule needs epsilon > 0".into()))
            }
            (EpsilonRule::AutoValid, _) => Ok(()),
        }
    }
}

/// One comparison of the probabilistic estimate against a smoothed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Outcome {
    pub kl_sen2pro: f64,
    pub kl_sen2vec: f64,
    pub epsilon: f64,
    /// `epsilon < det(Sigma_hat)^(1/k) / e`.
    pub condition: bool,
}

impl Theorem2Outcome {
    pub fn holds(&self) -> bool {
        self.kl_sen2pro < self.kl_sen2vec
    }
}

/// Compares KL(truth || estimate) with KL(truth || N(v, epsilon I)).
pub fn theorem2_compare(
    truth: &GaussianSpec,
    estimate: &GaussianSpec,
    v: &[f64],
    epsilon: f64,
) -> Result<Theorem2Outcome> {
    let point = GaussianSpec::isotropic(v.to_vec(), epsilon)?;
    Ok(Theorem2Outcome {
        kl_sen2pro: gaussian_kl(truth, estimate)?,
        kl_sen2vec: gaussian_kl(truth, &point)?,
        epsilon,
        condition: epsilon < estimate.geometric_mean_variance() / std::f64::consts::E,
    })
}

const THEOREM2_SAMPLES: usize = 15;

/// One randomized trial: truth, 15 draws, floored estimate, point = first draw.
pub fn theorem2_trial(cfg: &Theorem2Config, trial: usize) -> Result<Theorem2Outcome> {
    let mut rng = seed::rng(mix(cfg.seed, cfg.k as u64, trial as u64));
    let mu: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(0.5..=2.0)).collect();
    let samples = gaussian_samples(&mut rng, &mu, &var, THEOREM2_SAMPLES);
    let mu_hat = mean_of(&samples)?;
    let var_hat: Vec<f64> = banded_variance(&samples)?
        .into_iter()
        .map(|v| v.max(VARIANCE_FLOOR))
        .collect();
    let truth = GaussianSpec::new(mu, var)?;
    let est = GaussianSpec::new(mu_hat, var_hat)?;
    let epsilon = match cfg.epsilon_rule {
        EpsilonRule::AutoValid => 0.5 * est.geometric_mean_variance() / std::f64::consts::E,
        EpsilonRule::Explicit => cfg.epsilon.expect("validated"),
    };
    theorem2_compare(&truth, &est, &samples[0], epsilon)
}

/// Monte Carlo check of KL(truth || Sen2Pro) < KL(truth || Sen2Vec).
///
/// Reports the overall pass fraction and the pass fraction restricted to
/// trials whose realized estimate satisfies the epsilon condition.
pub fn theorem2_check(cfg: &Theorem2Config) -> Result<TheoryReport> {
    cfg.validate()?;
    let outcomes: Vec<Theorem2Outcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| theorem2_trial(cfg, t))
        .collect::<Result<_>>()?;
    let passed = outcomes.iter().filter(|o| o.holds()).count();
    let eligible: Vec<&Theorem2Outcome> = outcomes.iter().filter(|o| o.condition).collect();
    let eligible_passed = eligible.iter().filter(|o| o.holds()).count();
    let n = cfg.trials as f64;
    let mut measurements = vec![
        measurement("pass_fraction", passed as f64 / n),
        measurement("condition_trials", eligible.len() as f64),
        measurement("condition_passed", eligible_passed as f64),
    ];
    if !eligible.is_empty() {
        measurements.push(measurement(
            "pass_fraction_given_condition",
            eligible_passed as f64 / eligible.len() as f64,
        ));
    }
    measurements.push(measurement(
        "mean_kl_sen2pro",
        outcomes.iter().map(|o| o.kl_sen2pro).sum::<f64>() / n,
    ));
    measurements.push(measurement(
        "mean_kl_sen2vec",
        outcomes.iter().map(|o| o.kl_sen2vec).sum::<f64>() / n,
    ));
    let mut parameters = BTreeMap::new();
    parameters.insert("k".into(), json!(cfg.k));
    parameters.insert("trials".into(), json!(cfg.trials));
    parameters.insert("seed".into(), json!(cfg.seed));
    parameters.insert("samples_per_trial".into(), json!(THEOREM2_SAMPLES));
    parameters.insert("epsilon_rule".into(), json!(cfg.epsilon_rule));
    if let Some(e) = cfg.epsilon {
        parameters.insert("epsilon".into(), json!(e));
    }
    TheoryReport::new(Experiment::Theorem2, parameters, measurements)
}

/// Estimate over the pooled samples of both sets, labeled as model mode.
pub fn unified_estimate(model_set: &SampleSet, data_set: &SampleSet) -> Result<CombinedEmbedding> {
    if model_set.dim() != data_set.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            model_set.dim(),
            data_set.dim()
        )));
    }
    let pooled: Vec<Vec<f64>> = model_set
        .samples()
        .iter()
        .chain(data_set.samples())
        .cloned()
        .collect();
    let set = SampleSet::new(model_set.sentence_id(), SampleMode::Model, pooled)?;
    Ok(from_single(&estimate(&set)?))
}

/// Average of the separately estimated model and data distributions.
pub fn individual_estimate(
    model_set: &SampleSet,
    data_set: &SampleSet,
) -> Result<CombinedEmbedding> {
    combine(&estimate(model_set)?, &estimate(data_set)?)
}

/// Spearman correlation of individual vs unified estimation on `pairs`.
pub fn unified_vs_individual(
    corpus: &[String],
    encoder: &EncoderConfig,
    n: usize,
    seed: u64,
    pairs: &[ScoredPair],
    distance: &DistanceConfig,
) -> Result<TheoryReport> {
    if corpus.is_empty() {
        return Err(Error::Argument("corpus is empty".into()));
    }
    let sentences = merged_sentences(corpus, pairs);
    let backend = ToyBackend::new(
        ToyEncoder::new(encoder.clone())?,
        Vocab::from_corpus(&sentences)?,
    );
    let cfg = PipelineConfig {
        n_model: n,
        n_data: n,
        master_seed: seed,
        encoder: encoder.clone(),
        distance: *distance,
        ..PipelineConfig::default()
    };
    let emb = embed_corpus_with(&backend, &sentences, &cfg)?;
    let build = |f: fn(&SampleSet, &SampleSet) -> Result<CombinedEmbedding>| -> Result<Vec<CombinedEmbedding>> {
        emb.model_sets
            .iter()
            .zip(&emb.data_sets)
            .zip(&sentences)
            .map(|((m, d), s)| Ok(f(m, d)?.with_sentence(Some(s.clone()))))
            .collect()
    };
    let individual = eval_scored_pairs(
        pairs,
        &index_by_sentence(build(individual_estimate)?)?,
        distance,
    )?;
    let unified = eval_scored_pairs(
        pairs,
        &index_by_sentence(build(unified_estimate)?)?,
        distance,
    )?;
    let mut parameters = BTreeMap::new();
    parameters.insert("n".into(), json!(n));
    parameters.insert("seed".into(), json!(seed));
    parameters.insert("pairs".into(), json!(pairs.len()));
    parameters.insert("metric".into(), json!("spearman"));
    TheoryReport::new(
        Experiment::UnifiedVsIndividual,
        parameters,
        vec![
            measurement("individual", individual.spearman),
            measurement("unified", unified.spearman),
        ],
    )
}

/// Per-trial result of [`sce_vs_banding_tradeoff`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffTrial {
    pub sce_error: f64,
    pub banded_error: f64,
    pub sce_seconds: f64,
    pub banded_seconds: f64,
}

fn tradeoff_trial(k: usize, n: usize, seed: u64, trial: usize) -> Result<TradeoffTrial> {
    let mut rng = seed::rng(mix(seed, k as u64, trial as u64));
    let truth: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..=2.0)).collect();
    let samples = gaussian_samples(&mut rng, &vec![0.0; k], &truth, n);

    let start = Instant::now();
    let sce = sce_of(&samples)?;
    let sce_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let banded = banded_variance(&samples)?;
    let banded_seconds = start.elapsed().as_secs_f64();

    let mut diff = sce.as_slice().to_vec();
    for (i, t) in truth.iter().enumerate() {
        diff[i * k + i] -= t;
    }
    Ok(TradeoffTrial {
        sce_error: spectral_norm(&diff, k),
        banded_error: banded
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        sce_seconds,
        banded_seconds,
    })
}

/// Error and wall time of the full SCE against the banded estimate, per `k`.
///
/// Trials run one at a time so timings do not compete for cores.
pub fn sce_vs_banding_tradeoff(
    k_grid: &[usize],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<TheoryReport> {
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::Argument(
            "k_grid must be non-empty with positive entries".into(),
        ));
    }
    if k_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Argument("k_grid must be sorted ascending".into()));
    }
    if n == 0 || trials == 0 {
        return Err(Error::Argument("n and trials must be at least 1".into()));
    }
    let mut measurements = Vec::new();
    for &k in k_grid {
        let runs: Vec<TradeoffTrial> = (0..trials)
            .map(|t| tradeoff_trial(k, n, seed, t))
            .collect::<Result<_>>()?;
        let mean = |f: fn(&TradeoffTrial) -> f64| runs.iter().map(f).sum::<f64>() / trials as f64;
        let error_ok = runs
            .iter()
            .filter(|r| r.banded_error <= r.sce_error)
            .count();
        let time_ok = runs
            .iter()
            .filter(|r| r.banded_seconds < r.sce_seconds)
            .count();
        measurements.push(measurement(
            format!("k={k}/sce_error"),
            mean(|r| r.sce_error),
        ));
        measurements.push(measurement(
            format!("k={k}/banded_error"),
            mean(|r| r.banded_error),
        ));
        measurements.push(measurement(
            format!("k={k}/sce_ms"),
            mean(|r| r.sce_seconds) * 1e3,
        ));
        measurements.push(measurement(
            format!("k={k}/banded_ms"),
            mean(|r| r.banded_seconds) * 1e3,
        ));
        measurements.push(measurement(
            format!("k={k}/error_ok_trials"),
            error_ok as f64,
        ));
        measurements.push(measurement(format!("k={k}/time_ok_trials"), time_ok as f64));
        // Stored floats: k*k for the full matrix, k for the diagonal.
        measurements.push(measurement(
            format!("k={k}/memory_ratio"),
            (k * k) as f64 / k as f64,
        ));
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("k_grid".into(), json!(k_grid));
    parameters.insert("n".into(), json!(n));
    parameters.insert("trials".into(), json!(trials));
    parameters.insert("seed".into(), json!(seed));
    TheoryReport::new(Experiment::EstimatorTradeoff, parameters, measurements)
}
