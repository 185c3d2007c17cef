//! Combining model and data estimates, and the uncertainty-aware distance.
//!
//! With `L_mu = l1(mu_a - mu_b)` and `L_sigma = l1(sigma_a - sigma_b)` the
//! distance is `(1 - alpha) * L_mu + alpha * L_sigma`. In per-pair mode
//! `alpha = L_mu / L_sigma` (0 when `L_sigma = 0`), which makes the distance
//! collapse to `(2 - L_mu / L_sigma) * L_mu`. It is not a metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CombinedEmbedding, ProbEmbedding, UncertaintyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    PerPair,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DistanceConfig {
    pub alpha_mode: AlphaMode,
    pub fixed_alpha: f64,
}

impl DistanceConfig {
    pub fn per_pair() -> Self {
        DistanceConfig::default()
    }

    pub fn fixed(alpha: f64) -> Self {
        DistanceConfig {
            alpha_mode: AlphaMode::Fixed,
            fixed_alpha: alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fixed_alpha.is_finite() || self.fixed_alpha < 0.0 {
            return Err(Error::Validation(format!(
                "fixed_alpha must be finite and non-negative, got {}",
                self.fixed_alpha
            )));
        }
        Ok(())
    }
}

/// Averages a model-uncertainty and a data-uncertainty estimate.
pub fn combine(model_pe: &ProbEmbedding, data_pe: &ProbEmbedding) -> Result<CombinedEmbedding> {
    if model_pe.mode() != UncertaintyMode::Model || data_pe.mode() != UncertaintyMode::Data {
        return Err(Error::Argument(format!(
            "combine expects (model, data) estimates, got ({:?}, {:?})",
            model_pe.mode(),
            data_pe.mode()
        )));
    }
    if model_pe.sentence_id() != data_pe.sentence_id() {
        return Err(Error::Argument(format!(
            "cannot combine estimates of {:?} and {:?}",
            model_pe.sentence_id(),
            data_pe.sentence_id()
        )));
    }
    if model_pe.dim() != data_pe.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            model_pe.dim(),
            data_pe.dim()
        )));
    }
    let avg = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    CombinedEmbedding::new(
        model_pe.sentence_id(),
        avg(model_pe.mu(), data_pe.mu()),
        avg(model_pe.sigma_diag(), data_pe.sigma_diag()),
    )
}

/// Wraps a single estimate as a combined embedding (single-mode ablations).
pub fn from_single(pe: &ProbEmbedding) -> CombinedEmbedding {
    CombinedEmbedding::new(pe.sentence_id(), pe.mu().to_vec(), pe.sigma_diag().to_vec())
        .expect("a valid estimate is a valid combined embedding")
}

/// A point embedding with zero variance.
pub fn point(sentence_id: &str, v: Vec<f64>) -> Result<CombinedEmbedding> {
    let k = v.len();
    CombinedEmbedding::new(sentence_id, v, vec![0.0; k])
}

/// `[mu; sigma_diag]`, length 2k.
pub fn feature_vector(ce: &CombinedEmbedding) -> Vec<f64> {
    ce.mu().iter().chain(ce.sigma_diag()).copied().collect()
}

pub fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_dims(a: &CombinedEmbedding, b: &CombinedEmbedding) {
    assert_eq!(
        a.dim(),
        b.dim(),
        "embeddings {:?} and {:?} differ in dimension",
        a.sentence_id(),
        b.sentence_id()
    );
}

/// Balance factor between the mean and covariance terms.
pub fn alpha(a: &CombinedEmbedding, b: &CombinedEmbedding, cfg: &DistanceConfig) -> f64 {
    check_dims(a, b);
    match cfg.alpha_mode {
        AlphaMode::Fixed => cfg.fixed_alpha,
        AlphaMode::PerPair => {
            let l_sigma = l1_diff(a.sigma_diag(), b.sigma_diag());
            if l_sigma == 0.0 {
                0.0
            } else {
                l1_diff(a.mu(), b.mu()) / l_sigma
            }
        }
    }
}

/// `(1 - alpha) * l1(mu_a - mu_b) + alpha * l1(sigma_a - sigma_b)`.
///
/// In per-pair mode the value can be negative when `L_mu > 2 * L_sigma`;
/// only fixed `alpha` in `[0, 1]` guarantees a non-negative result.
///
/// # Panics
///
/// If the embeddings differ in dimension.
pub fn distance(a: &CombinedEmbedding, b: &CombinedEmbedding, cfg: &DistanceConfig) -> f64 {
    let al = alpha(a, b, cfg);
    let l_mu = l1_diff(a.mu(), b.mu());
    let l_sigma = l1_diff(a.sigma_diag(), b.sigma_diag());
    (1.0 - al) * l_mu + al * l_sigma
}

/// Negated distance: larger means more similar, 0 for identical inputs.
pub fn similarity_score(a: &CombinedEmbedding, b: &CombinedEmbedding, cfg: &DistanceConfig) -> f64 {
    -distance(a, b, cfg)
}
