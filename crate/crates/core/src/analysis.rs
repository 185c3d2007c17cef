//! Feature importance by uncertainty quintile, fluctuation rate and
//! improvement score.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::distance::{from_single, point, DistanceConfig};
use crate::encoder::{EncoderConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::estimator::estimate;
use crate::eval::{eval_scored_pairs, EmbeddingIndex};
use crate::model::{ProbEmbedding, ScoredPair, UncertaintyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupId {
    I,
    II,
    III,
    IV,
    V,
}

impl GroupId {
    pub const ALL: [GroupId; 5] = [
        GroupId::I,
        GroupId::II,
        GroupId::III,
        GroupId::IV,
        GroupId::V,
    ];
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub group_id: GroupId,
    pub feature_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisMetric {
    Importance,
    #[serde(rename = "fluctuation_Q")]
    FluctuationQ,
    #[serde(rename = "improvement_I")]
    ImprovementI,
    /// Evaluation metric of one point in a sampling-number sweep.
    SweepSpearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub metric: AnalysisMetric,
    pub value: f64,
    pub context: BTreeMap<String, serde_json::Value>,
}

impl AnalysisRecord {
    pub fn new(
        metric: AnalysisMetric,
        value: f64,
        context: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{metric:?} value is not finite")));
        }
        Ok(AnalysisRecord {
            metric,
            value,
            context,
        })
    }
}

fn uniform_dim(pes: &[ProbEmbedding]) -> Result<usize> {
    let first = pes
        .first()
        .ok_or_else(|| Error::Argument("empty corpus".into()))?;
    let k = first.dim();
    if let Some(bad) = pes.iter().find(|p| p.dim() != k) {
        return Err(Error::Argument(format!(
            "embedding {:?} has dim {} but corpus dim is {k}",
            bad.sentence_id(),
            bad.dim()
        )));
    }
    Ok(k)
}

/// Splits features into quintiles by corpus-mean variance, highest first.
///
/// Ties keep feature-index order. Groups I..IV get `k / 5` features each and
/// group V also takes the `k % 5` remainder.
pub fn group_features(pes: &[ProbEmbedding]) -> Result<Vec<FeatureGroup>> {
    let k = uniform_dim(pes)?;
    if k < 5 {
        return Err(Error::Argument(format!(
            "need at least 5 features to form quintiles, got {k}"
        )));
    }
    let mut mean_sigma = vec![0.0; k];
    for p in pes {
        mean_sigma
            .iter_mut()
            .zip(p.sigma_diag())
            .for_each(|(m, s)| *m += s);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean_sigma[b].total_cmp(&mean_sigma[a]).then(a.cmp(&b)));
    let size = k / 5;
    Ok(GroupId::ALL
        .iter()
        .enumerate()
        .map(|(g, &group_id)| {
            let end = if g == 4 { k } else { (g + 1) * size };
            FeatureGroup {
                group_id,
                feature_indices: order[g * size..end].to_vec(),
            }
        })
        .collect())
}

/// `|rho(T) - rho(T / t)|`, removal zeroing the group in mu and sigma_diag.
pub fn feature_importance(
    group: &FeatureGroup,
    pairs: &[ScoredPair],
    embeddings: &EmbeddingIndex,
    cfg: &DistanceConfig,
) -> Result<f64> {
    let full = eval_scored_pairs(pairs, embeddings, cfg)?.spearman;
    if group.feature_indices.is_empty() {
        return Ok(0.0);
    }
    let removed: EmbeddingIndex = embeddings
        .iter()
        .map(|(s, e)| {
            if let Some(&bad) = group.feature_indices.iter().find(|&&i| i >= e.dim()) {
                return Err(Error::Argument(format!(
                    "feature {bad} out of range for dim {}",
                    e.dim()
                )));
            }
            Ok((s.clone(), e.with_zeroed(&group.feature_indices)))
        })
        .collect::<Result<_>>()?;
    let ablated = eval_scored_pairs(pairs, &removed, cfg)?.spearman;
    Ok((full - ablated).abs())
}

/// Corpus mean of all model-uncertainty variances.
pub fn fluctuation_rate(pes: &[ProbEmbedding]) -> Result<f64> {
    let k = uniform_dim(pes)?;
    if let Some(p) = pes.iter().find(|p| p.mode() != UncertaintyMode::Model) {
        return Err(Error::Argument(format!(
            "fluctuation rate is defined over model uncertainty; {:?} is {:?}",
            p.sentence_id(),
            p.mode()
        )));
    }
    let total: f64 = pes.iter().flat_map(|p| p.sigma_diag()).sum();
    Ok(total / (k * pes.len()) as f64)
}

pub fn improvement_score(perf_sen2pro: f64, perf_sen2vec: f64) -> f64 {
    perf_sen2pro - perf_sen2vec
}

/// Q and I for one encoder variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiPoint {
    pub config: String,
    pub q: f64,
    pub i: f64,
    pub spearman_sen2pro: f64,
    pub spearman_sen2vec: f64,
}

/// For each encoder variant, measures the fluctuation rate Q over the
/// dataset's sentences and the improvement I of the model-uncertainty
/// representation over a single deterministic encode.
pub fn q_vs_i_points(
    configs: &[(String, EncoderConfig)],
    pairs: &[ScoredPair],
    n_samples: usize,
    seed: u64,
    cfg: &DistanceConfig,
) -> Result<Vec<QiPoint>> {
    if configs.len() < 2 {
        return Err(Error::Argument(
            "the sweep needs at least two configurations".into(),
        ));
    }
    let sentences = crate::model::EvalDataset::ScoredPairs(pairs.to_vec()).sentences();
    configs
        .iter()
        .map(|(name, enc_cfg)| {
            let encoder = ToyEncoder::new(enc_cfg.clone())?;
            let rows = sentences
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let id = i.to_string();
                    let pe = estimate(&encoder.encode_mc(&id, s, n_samples, seed)?)?;
                    let vec = point(&id, encoder.encode(s, None)?)?;
                    Ok((s.clone(), pe, vec))
                })
                .collect::<Result<Vec<_>>>()?;
            let pes: Vec<ProbEmbedding> = rows.iter().map(|r| r.1.clone()).collect();
            let q = fluctuation_rate(&pes)?;
            let pro: EmbeddingIndex = rows
                .iter()
                .map(|(s, pe, _)| (s.clone(), from_single(pe)))
                .collect();
            let vec: EmbeddingIndex = rows.into_iter().map(|(s, _, v)| (s, v)).collect();
            let rho_pro = eval_scored_pairs(pairs, &pro, cfg)?.spearman;
            let rho_vec = eval_scored_pairs(pairs, &vec, cfg)?.spearman;
            Ok(QiPoint {
                config: name.clone(),
                q,
                i: improvement_score(rho_pro, rho_vec),
                spearman_sen2pro: rho_pro,
                spearman_sen2vec: rho_vec,
            })
        })
        .collect()
}

/// [`q_vs_i_points`] flattened into paired Q / I records.
pub fn q_vs_i_sweep(
    configs: &[(String, EncoderConfig)],
    pairs: &[ScoredPair],
    n_samples: usize,
    seed: u64,
    cfg: &DistanceConfig,
) -> Result<Vec<AnalysisRecord>> {
    let mut out = Vec::new();
    for p in q_vs_i_points(configs, pairs, n_samples, seed, cfg)? {
        let ctx = || {
            BTreeMap::from([
                ("config".to_string(), json!(p.config)),
                ("seed".to_string(), json!(seed)),
                ("n".to_string(), json!(n_samples)),
            ])
        };
        out.push(AnalysisRecord::new(
            AnalysisMetric::FluctuationQ,
            p.q,
            ctx(),
        )?);
        out.push(AnalysisRecord::new(
            AnalysisMetric::ImprovementI,
            p.i,
            ctx(),
        )?);
    }
    Ok(out)
}

/// `config,Q,I` rows for plotting.
pub fn qi_csv(points: &[QiPoint]) -> String {
    let mut out = String::from("config,Q,I\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.config, p.q, p.i));
    }
    out
}
