//! Mean and covariance estimation from a sample set.
//!
//! The full sample covariance uses population normalization (divide by N).
//! The banding estimator keeps only its diagonal; [`banded_variance`]
//! computes that diagonal directly in O(Nk) and is bit-identical to
//! `band(estimate_cov_sce(..))`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{
    measurement, Experiment, ProbEmbedding, SampleMode, SampleSet, TheoryReport, UncertaintyMode,
};
use crate::seed::{self, mix};

/// Symmetric `dim x dim` covariance, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FullCovariance {
    dim: usize,
    data: Vec<f64>,
}

impl FullCovariance {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Validation(format!(
                "covariance of dim {dim} needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            if data[i * dim + i] < 0.0 {
                return Err(Error::Validation(format!("negative diagonal entry at {i}")));
            }
            for j in 0..i {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                    return Err(Error::Validation(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(FullCovariance { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("cannot estimate from an empty sample set".into()))?;
    let k = first.len();
    if samples.iter().any(|s| s.len() != k) {
        return Err(Error::Argument("samples have different lengths".into()));
    }
    Ok(k)
}

/// Coordinate-wise arithmetic mean.
pub fn mean_of(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = check_samples(samples)?;
    let mut mu = vec![0.0; k];
    for s in samples {
        for (m, x) in mu.iter_mut().zip(s) {
            *m += x;
        }
    }
    let n = samples.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    Ok(mu)
}

/// Full sample covariance, `1/N * sum (x - mu)(x - mu)^T`.
pub fn sce_of(samples: &[Vec<f64>]) -> Result<FullCovariance> {
    let mu = mean_of(samples)?;
    let k = mu.len();
    let mut acc = vec![0.0; k * k];
    let mut centered = vec![0.0; k];
    for s in samples {
        for i in 0..k {
            centered[i] = s[i] - mu[i];
        }
        for i in 0..k {
            let ci = centered[i];
            let row = &mut acc[i * k..i * k + i + 1];
            for (a, cj) in row.iter_mut().zip(&centered[..=i]) {
                *a += ci * cj;
            }
        }
    }
    let n = samples.len() as f64;
    for i in 0..k {
        for j in 0..=i {
            let v = acc[i * k + j] / n;
            acc[i * k + j] = v;
            acc[j * k + i] = v;
        }
    }
    Ok(FullCovariance { dim: k, data: acc })
}

/// Per-coordinate population variance: the banded estimate in O(Nk).
pub fn banded_variance(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mu = mean_of(samples)?;
    let mut acc = vec![0.0; mu.len()];
    for s in samples {
        for i in 0..mu.len() {
            let c = s[i] - mu[i];
            acc[i] += c * c;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn estimate_mean(set: &SampleSet) -> Result<Vec<f64>> {
    mean_of(set.samples())
}

pub fn estimate_cov_sce(set: &SampleSet) -> Result<FullCovariance> {
    sce_of(set.samples())
}

/// Off-diagonal removal: the diagonal of `cov`, in order.
pub fn band(cov: &FullCovariance) -> Vec<f64> {
    (0..cov.dim).map(|i| cov.get(i, i)).collect()
}

/// Mean plus banded covariance for a model or data sample set.
pub fn estimate(set: &SampleSet) -> Result<ProbEmbedding> {
    let mode = match set.mode() {
        SampleMode::Model => UncertaintyMode::Model,
        SampleMode::Data => UncertaintyMode::Data,
        SampleMode::Plain => {
            return Err(Error::Argument(format!(
                "sample set {:?} is plain; a distribution needs model or data samples",
                set.sentence_id()
            )))
        }
    };
    let mu = estimate_mean(set)?;
    let sigma = banded_variance(set.samples())?;
    ProbEmbedding::new(set.sentence_id(), mode, mu, sigma, set.len())
}

/// Spectral norm of a square row-major matrix by power iteration on `A^T A`.
///
/// Iteration starts at the basis vector of the heaviest column, so the
/// estimate never drops below the largest column norm (Rayleigh quotients of
/// a PSD power sequence are non-decreasing).
pub fn spectral_norm(a: &[f64], dim: usize) -> f64 {
    spectral_norm_with(a, dim, 1e-10, 10_000)
}

pub fn spectral_norm_with(a: &[f64], dim: usize, tol: f64, max_iter: usize) -> f64 {
    assert_eq!(a.len(), dim * dim, "matrix is not dim x dim");
    if dim == 0 {
        return 0.0;
    }
    let col_norm2 = |j: usize| (0..dim).map(|i| a[i * dim + j].powi(2)).sum::<f64>();
    let start = (0..dim)
        .map(|j| (j, col_norm2(j)))
        .fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best })
        .0;
    let mut v = vec![0.0; dim];
    v[start] = 1.0;
    let mut lambda = col_norm2(start);
    if lambda == 0.0 {
        return 0.0;
    }
    let mut av = vec![0.0; dim];
    let mut atav = vec![0.0; dim];
    for _ in 0..max_iter {
        for i in 0..dim {
            av[i] = (0..dim).map(|j| a[i * dim + j] * v[j]).sum();
        }
        for j in 0..dim {
            atav[j] = (0..dim).map(|i| a[i * dim + j] * av[i]).sum();
        }
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for (vi, x) in v.iter_mut().zip(&atav) {
            *vi = x / norm;
        }
        // Rayleigh quotient of A^T A at the new iterate.
        for i in 0..dim {
            av[i] = (0..dim).map(|j| a[i * dim + j] * v[j]).sum();
        }
        let next = av.iter().map(|x| x * x).sum::<f64>();
        let converged = (next - lambda).abs() <= tol * next.max(f64::MIN_POSITIVE);
        lambda = lambda.max(next);
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

/// `n` draws from N(mean, diag(variances)).
pub fn gaussian_samples<R: Rng>(
    rng: &mut R,
    mean: &[f64],
    variances: &[f64],
    n: usize,
) -> Vec<Vec<f64>> {
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    (0..n)
        .map(|_| {
            mean.iter()
                .zip(&sd)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Error curve of the banded estimator against a unit-variance truth.
pub fn theorem1_experiment(
    k: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<TheoryReport> {
    theorem1_experiment_with(&vec![1.0; k], n_grid, trials, seed)
}

/// Error curve of the banded estimator against a known diagonal truth.
///
/// For each `n`, draws `n` samples from N(0, diag(truth)) per trial, measures
/// `||Diag(SCE) - diag(truth)||_2` (the largest absolute diagonal deviation)
/// and averages over trials. Also fits the slope of log(error) against
/// log(log(k) / n) when every error is positive.
pub fn theorem1_experiment_with(
    truth: &[f64],
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<TheoryReport> {
    let k = truth.len();
    if k == 0 {
        return Err(Error::Argument("dimension must be positive".into()));
    }
    if truth.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument(
            "true variances must be finite and non-negative".into(),
        ));
    }
    if n_grid.is_empty() || n_grid.iter().any(|&n| n < 2) {
        return Err(Error::Argument(
            "every n in the grid must be at least 2".into(),
        ));
    }
    if n_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Argument("n_grid must be sorted ascending".into()));
    }
    if trials == 0 {
        return Err(Error::Argument("trials must be at least 1".into()));
    }
    let zeros = vec![0.0; k];
    let mut measurements = Vec::new();
    let mut curve = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let errors: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(mix(seed, n as u64, t as u64));
                let samples = gaussian_samples(&mut rng, &zeros, truth, n);
                let diag = band(&sce_of(&samples)?);
                Ok(diag
                    .iter()
                    .zip(truth)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<_>>()?;
        let mean = errors.iter().sum::<f64>() / trials as f64;
        let sd = if trials > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
        } else {
            0.0
        };
        measurements.push(measurement(format!("n={n}/mean_error"), mean));
        measurements.push(measurement(
            format!("n={n}/std_error"),
            sd / (trials as f64).sqrt(),
        ));
        curve.push((n, mean));
    }
    if k >= 2 && curve.len() >= 2 && curve.iter().all(|&(_, e)| e > 0.0) {
        let x: Vec<f64> = curve
            .iter()
            .map(|&(n, _)| ((k as f64).ln() / n as f64).ln())
            .collect();
        let y: Vec<f64> = curve.iter().map(|&(_, e)| e.ln()).collect();
        measurements.push(measurement("slope", ols_slope(&x, &y)));
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("k".into(), json!(k));
    parameters.insert("n_grid".into(), json!(n_grid));
    parameters.insert("trials".into(), json!(trials));
    parameters.insert("seed".into(), json!(seed));
    TheoryReport::new(Experiment::Theorem1, parameters, measurements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(mode: SampleMode, samples: Vec<Vec<f64>>) -> SampleSet {
        SampleSet::new("t", mode, samples).unwrap()
    }

    #[test]
    fn mean_examples() {
        let s = set(SampleMode::Model, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(estimate_mean(&s).unwrap(), vec![2.0, 3.0]);
        let s = set(SampleMode::Model, vec![vec![0.5, -7.0]]);
        assert_eq!(estimate_mean(&s).unwrap(), vec![0.5, -7.0]);
        assert!(mean_of(&[]).is_err());
    }

    #[test]
    fn mean_of_standard_normal_draws() {
        let mut rng = seed::rng(99);
        let samples = gaussian_samples(&mut rng, &[0.0; 6], &[1.0; 6], 10_000);
        for m in mean_of(&samples).unwrap() {
            assert!(m.abs() < 0.05, "{m}");
        }
    }

    #[test]
    fn sce_examples() {
        let s = set(SampleMode::Model, vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let c = estimate_cov_sce(&s).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let same = set(SampleMode::Data, vec![vec![3.0, 1.0]; 5]);
        assert!(estimate_cov_sce(&same)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn band_examples() {
        let c = FullCovariance::new(2, vec![1.0, 5.0, 5.0, 4.0]).unwrap();
        assert_eq!(band(&c), vec![1.0, 4.0]);
        let z = FullCovariance::new(3, vec![0.0; 9]).unwrap();
        assert_eq!(band(&z), vec![0.0; 3]);
        assert!(FullCovariance::new(2, vec![1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn estimate_composition() {
        let s = set(SampleMode::Model, vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let pe = estimate(&s).unwrap();
        assert_eq!(pe.mu(), &[1.0, 0.0]);
        assert_eq!(pe.sigma_diag(), &[1.0, 0.0]);
        assert_eq!(pe.n_samples(), 2);
        let same = set(SampleMode::Data, vec![vec![3.0, 1.0, 2.0]; 7]);
        assert_eq!(estimate(&same).unwrap().sigma_diag(), &[0.0; 3]);
        let plain = set(SampleMode::Plain, vec![vec![1.0]]);
        assert!(matches!(estimate(&plain), Err(Error::Argument(_))));
    }

    #[test]
    fn spectral_norm_known_matrices() {
        assert!((spectral_norm(&[3.0, 0.0, 0.0, -4.0], 2) - 4.0).abs() < 1e-9);
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        assert!((spectral_norm(&[2.0, 1.0, 1.0, 2.0], 2) - 3.0).abs() < 1e-6);
        assert_eq!(spectral_norm(&[0.0; 4], 2), 0.0);
        // Non-symmetric: singular values of [[1,2],[0,0]] are sqrt(5), 0.
        assert!((spectral_norm(&[1.0, 2.0, 0.0, 0.0], 2) - 5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn theorem1_large_n_is_accurate() {
        let r = theorem1_experiment(8, &[1_000_000], 1, 3).unwrap();
        assert!(r.get("n=1000000/mean_error").unwrap() < 0.02);
    }

    #[test]
    fn theorem1_error_shrinks_on_every_seed() {
        for seed in 0..10 {
            let r = theorem1_experiment(8, &[100, 6400], 5, seed).unwrap();
            assert!(r.get("n=6400/mean_error").unwrap() < r.get("n=100/mean_error").unwrap());
        }
    }

    #[test]
    fn theorem1_point_mass_has_zero_error() {
        let r = theorem1_experiment_with(&[0.0; 4], &[2, 10, 100], 3, 1).unwrap();
        for n in [2, 10, 100] {
            assert_eq!(r.get(&format!("n={n}/mean_error")), Some(0.0));
        }
        assert!(r.get("slope").is_none());
    }

    #[test]
    fn theorem1_argument_checks() {
        assert!(theorem1_experiment(4, &[100, 10], 2, 0).is_err());
        assert!(theorem1_experiment(4, &[1, 10], 2, 0).is_err());
        assert!(theorem1_experiment(4, &[10], 0, 0).is_err());
    }

    fn sample_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..40, 1usize..12).prop_flat_map(|(n, k)| {
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, k), n)
        })
    }

    proptest! {
        #[test]
        fn banded_matches_band_of_sce(samples in sample_matrix()) {
            let a = banded_variance(&samples).unwrap();
            let b = band(&sce_of(&samples).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sce_is_psd(samples in sample_matrix()) {
            let c = sce_of(&samples).unwrap();
            let k = c.dim();
            let trace: f64 = band(&c).iter().sum();
            // Smallest eigenvalue via spectral shift: lambda_min = t - ||tI - C||.
            let t = trace.max(1e-300);
            let shifted: Vec<f64> = (0..k * k)
                .map(|idx| if idx / k == idx % k { t } else { 0.0 } - c.as_slice()[idx])
                .collect();
            let lambda_min = t - spectral_norm(&shifted, k);
            prop_assert!(lambda_min >= -1e-8 * t.max(1.0), "lambda_min {}", lambda_min);
        }

        #[test]
        fn estimates_ignore_sample_order(samples in sample_matrix(), rot in 0usize..40) {
            let mut rotated = samples.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let m1 = mean_of(&samples).unwrap();
            let m2 = mean_of(&rotated).unwrap();
            for (a, b) in m1.iter().zip(&m2) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            let v1 = banded_variance(&samples).unwrap();
            let v2 = banded_variance(&rotated).unwrap();
            for (a, b) in v1.iter().zip(&v2) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
