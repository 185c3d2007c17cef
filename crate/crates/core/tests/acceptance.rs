//! Acceptance criteria for the primary component.
//!
//! Every criterion runs in sequence (so wall-clock limits and timing
//! comparisons are not distorted by sibling tests) and prints one line:
//!
//! ```text
//! PASS estimator_oracle (0.21 s): ...
//! ```
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! on success; a failing run prints them regardless.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;

use sen2pro::analysis::fluctuation_rate;
use sen2pro::distance::l1_diff;
use sen2pro::estimator::{band, estimate_cov_sce, theorem1_experiment};
use sen2pro::eval::{analogy_x, eval_scored_pairs, index_by_sentence, probe_task, FeatureMode};
use sen2pro::pipeline::{embed_corpus_with, embed_plain_with};
use sen2pro::synthetic::{few_shot_task, synthetic_sts};
use sen2pro::theory::{sce_vs_banding_tradeoff, theorem2_check, Theorem2Config};
use sen2pro::{
    distance, estimate, CombinedEmbedding, DistanceConfig, EncoderConfig, PipelineConfig,
    SampleMode, SampleSet, ToyEncoder,
};

// Estimator oracle.
const ORACLE_SETS: usize = 100;
const ORACLE_MAX_N: usize = 200;
const ORACLE_MAX_K: usize = 64;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_LIMIT: Duration = Duration::from_secs(10);

// Banded-estimator error curve.
const T1_K: usize = 32;
const T1_N_GRID: [usize; 5] = [25, 100, 400, 1600, 6400];
const T1_TRIALS: usize = 20;
const T1_LIMIT: Duration = Duration::from_secs(60);

// KL comparison of the estimated Gaussian against a point embedding.
const T2_K: usize = 8;
const T2_TRIALS: usize = 1000;
const T2_REQUIRED_FRACTION: f64 = 1.0;
const T2_LIMIT: Duration = Duration::from_secs(30);

// Distance identities.
const DIST_CASES: u32 = 10_000;
const DIST_TOL: f64 = 1e-12;
const DIST_LIMIT: Duration = Duration::from_secs(5);

// Synthetic STS.
const STS_SENTENCES: usize = 50;
const STS_PAIRS: usize = 200;
const STS_DROPOUT: f64 = 0.1;
const STS_N: usize = 30;
const STS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const STS_REQUIRED_WINS: usize = 4;
const STS_LIMIT: Duration = Duration::from_secs(120);

// Few-shot probe.
const FEW_SHOT_TRAIN_PER_CLASS: usize = 10;
const FEW_SHOT_TEST_PER_CLASS: usize = 25;
const FEW_SHOT_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const FEW_SHOT_LIMIT: Duration = Duration::from_secs(120);

// Fluctuation rate against dropout.
const Q_DROPOUTS: [f64; 3] = [0.05, 0.1, 0.3];
const Q_CORPUS_SENTENCES: usize = 50;
const Q_CORPUS_SEED: u64 = 0;
const Q_SAMPLES: usize = 15;
const Q_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const Q_LIMIT: Duration = Duration::from_secs(60);

// Analogy.
const ANALOGY_CASES: u32 = 1000;
const ANALOGY_TOL: f64 = 1e-12;
const ANALOGY_LIMIT: Duration = Duration::from_secs(1);

// Estimator trade-off.
const TRADEOFF_K: usize = 128;
const TRADEOFF_N: usize = 1000;
const TRADEOFF_TRIALS: usize = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit: Duration, mut outcome: Outcome) -> Outcome {
    if elapsed >= limit {
        outcome.passed = false;
        outcome.detail.push_str(&format!(
            "; runtime {:.2} s exceeds {:?}",
            elapsed.as_secs_f64(),
            limit
        ));
    }
    outcome
}

fn ordered_runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        PropConfig {
            cases,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn estimator_oracle() -> Outcome {
    let mut rng = sen2pro::seed::rng(2024);
    let mut worst_cov: f64 = 0.0;
    let mut worst_band: f64 = 0.0;
    for s in 0..ORACLE_SETS {
        let n = rng.random_range(1..=ORACLE_MAX_N);
        let k = rng.random_range(1..=ORACLE_MAX_K);
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let set = SampleSet::new(format!("set{s}"), SampleMode::Model, samples.clone()).unwrap();
        let sce = estimate_cov_sce(&set).unwrap();

        let mut mean = vec![0.0; k];
        for x in &samples {
            for i in 0..k {
                mean[i] += x[i];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for x in &samples {
                    acc += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
                worst_cov = worst_cov.max((sce.get(i, j) - acc / n as f64).abs());
            }
        }
        let banded = band(&sce);
        let sigma = estimate(&set).unwrap().sigma_diag().to_vec();
        for i in 0..k {
            let var = samples
                .iter()
                .map(|x| (x[i] - mean[i]).powi(2))
                .sum::<f64>()
                / n as f64;
            worst_band = worst_band
                .max((banded[i] - var).abs())
                .max((sigma[i] - var).abs());
        }
    }
    Outcome::new(
        worst_cov <= ORACLE_TOL && worst_band <= ORACLE_TOL,
        format!("{ORACLE_SETS} sets, max |SCE - oracle| = {worst_cov:.2e}, max |band - variance| = {worst_band:.2e}, tolerance {ORACLE_TOL:e}"),
    )
}

fn theorem1_trend() -> Outcome {
    let report = theorem1_experiment(T1_K, &T1_N_GRID, T1_TRIALS, 1).unwrap();
    let errors: Vec<f64> = T1_N_GRID
        .iter()
        .map(|n| report.get(&format!("n={n}/mean_error")).unwrap())
        .collect();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let slope = report.get("slope").unwrap_or(f64::NAN);
    Outcome::new(
        decreasing && slope > 0.0,
        format!("k={T1_K}, mean errors {errors:.4?}, strictly decreasing: {decreasing}, slope {slope:.3} (> 0 required)"),
    )
}

fn theorem2() -> Outcome {
    let report = theorem2_check(&Theorem2Config::auto(T2_K, T2_TRIALS, 1)).unwrap();
    let eligible = report.get("condition_trials").unwrap();
    let fraction = report
        .get("pass_fraction_given_condition")
        .unwrap_or(f64::NAN);
    Outcome::new(
        eligible >= T2_TRIALS as f64 && fraction >= T2_REQUIRED_FRACTION,
        format!("k={T2_K}, {eligible} condition-satisfying trials of {T2_TRIALS}, KL(truth||estimate) < KL(truth||point) in {:.1}% (100% required)", fraction * 100.0),
    )
}

fn embedding_pair() -> impl Strategy<Value = (CombinedEmbedding, CombinedEmbedding)> {
    (1usize..=64).prop_flat_map(|k| {
        let v = move |lo: f64, hi: f64| prop::collection::vec(lo..hi, k);
        (v(-1.0, 1.0), v(0.0, 1.0), v(-1.0, 1.0), v(0.0, 1.0)).prop_map(|(ma, sa, mb, sb)| {
            (
                CombinedEmbedding::new("a", ma, sa).unwrap(),
                CombinedEmbedding::new("b", mb, sb).unwrap(),
            )
        })
    })
}

fn distance_identities() -> Outcome {
    let per_pair = DistanceConfig::per_pair();
    let zero = DistanceConfig::fixed(0.0);
    let worst = std::cell::Cell::new(0.0f64);
    let result = ordered_runner(DIST_CASES).run(&embedding_pair(), |(a, b)| {
        prop_assert_eq!(distance(&a, &a, &per_pair), 0.0);
        prop_assert_eq!(distance(&b, &b, &per_pair), 0.0);
        prop_assert_eq!(distance(&a, &b, &per_pair), distance(&b, &a, &per_pair));
        prop_assert_eq!(distance(&a, &b, &zero), distance(&b, &a, &zero));
        let l_mu = l1_diff(a.mu(), b.mu());
        let l_sigma = l1_diff(a.sigma_diag(), b.sigma_diag());
        let closed = if l_sigma == 0.0 {
            l_mu
        } else {
            (2.0 - l_mu / l_sigma) * l_mu
        };
        let err = (distance(&a, &b, &per_pair) - closed).abs();
        worst.set(worst.get().max(err));
        prop_assert!(err <= DIST_TOL, "closed form off by {err:e}");
        prop_assert_eq!(distance(&a, &b, &zero), l_mu);
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(
            true,
            format!("{DIST_CASES} pairs: d(a,a)=0, exact symmetry, fixed alpha 0 is mean l1, max closed-form error {:.2e} (tolerance {DIST_TOL:e})", worst.get()),
        ),
        Err(e) => Outcome::new(false, format!("{e}")),
    }
}

fn synthetic_sts_improvement() -> Outcome {
    let mut rows = Vec::new();
    let mut wins = 0;
    for seed in STS_SEEDS {
        let task = synthetic_sts(STS_SENTENCES, STS_PAIRS, seed).unwrap();
        let cfg = PipelineConfig {
            n_model: STS_N,
            n_data: STS_N,
            master_seed: seed,
            encoder: EncoderConfig {
                dropout_p: STS_DROPOUT,
                ..EncoderConfig::default()
            },
            distance: DistanceConfig::per_pair(),
            ..PipelineConfig::default()
        };
        let backend = cfg.build_backend(&task.corpus).unwrap();
        let pro = index_by_sentence(
            embed_corpus_with(&backend, &task.corpus, &cfg)
                .unwrap()
                .combined,
        )
        .unwrap();
        let vec = index_by_sentence(embed_plain_with(&backend, &task.corpus).unwrap()).unwrap();
        let rho_pro = eval_scored_pairs(&task.pairs, &pro, &cfg.distance)
            .unwrap()
            .spearman;
        let rho_vec = eval_scored_pairs(&task.pairs, &vec, &cfg.distance)
            .unwrap()
            .spearman;
        if rho_pro >= rho_vec {
            wins += 1;
        }
        rows.push(format!("seed {seed}: {rho_pro:.3} vs {rho_vec:.3}"));
    }
    Outcome::new(
        wins >= STS_REQUIRED_WINS,
        format!(
            "Spearman probabilistic (per-pair alpha, n={STS_N}) vs point: {}; wins {wins}/{} ({STS_REQUIRED_WINS} required)",
            rows.join(", "),
            STS_SEEDS.len()
        ),
    )
}

fn few_shot_probe() -> Outcome {
    let (mut mu_total, mut mu_sigma_total) = (0.0, 0.0);
    for seed in FEW_SHOT_SEEDS {
        let task = few_shot_task(FEW_SHOT_TRAIN_PER_CLASS, FEW_SHOT_TEST_PER_CLASS, seed).unwrap();
        let sentences = task.sentences();
        let cfg = PipelineConfig {
            master_seed: seed,
            ..PipelineConfig::default()
        };
        let backend = cfg.build_backend(&sentences).unwrap();
        let index = index_by_sentence(
            embed_corpus_with(&backend, &sentences, &cfg)
                .unwrap()
                .combined,
        )
        .unwrap();
        mu_total += probe_task(&task.train, &task.test, &index, FeatureMode::Mu, seed)
            .unwrap()
            .accuracy;
        mu_sigma_total += probe_task(&task.train, &task.test, &index, FeatureMode::MuSigma, seed)
            .unwrap()
            .accuracy;
    }
    let seeds = FEW_SHOT_SEEDS.len() as f64;
    let (mu, mu_sigma) = (mu_total / seeds, mu_sigma_total / seeds);
    Outcome::new(
        mu_sigma >= mu,
        format!("mean accuracy over {seeds} seeds: mu_sigma {mu_sigma:.3}, mu {mu:.3} (mu_sigma >= mu required)"),
    )
}

fn q_monotonicity() -> Outcome {
    let corpus = synthetic_sts(Q_CORPUS_SENTENCES, 0, Q_CORPUS_SEED)
        .unwrap()
        .corpus;
    let mut failures = Vec::new();
    let mut example = Vec::new();
    for seed in Q_SEEDS {
        let qs: Vec<f64> = Q_DROPOUTS
            .iter()
            .map(|&p| {
                let encoder = ToyEncoder::new(EncoderConfig {
                    dropout_p: p,
                    ..EncoderConfig::default()
                })
                .unwrap();
                let pes: Vec<_> = corpus
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        estimate(
                            &encoder
                                .encode_mc(&i.to_string(), s, Q_SAMPLES, seed)
                                .unwrap(),
                        )
                        .unwrap()
                    })
                    .collect();
                fluctuation_rate(&pes).unwrap()
            })
            .collect();
        if !qs.windows(2).all(|w| w[1] > w[0]) {
            failures.push(format!("seed {seed}: {qs:.4?}"));
        }
        if example.is_empty() {
            example = qs;
        }
    }
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("Q strictly increasing over dropout {Q_DROPOUTS:?} on all {} seeds (seed 1: {example:.4?})", Q_SEEDS.len())
        } else {
            format!("not increasing: {}", failures.join(", "))
        },
    )
}

fn analogy() -> Outcome {
    let strategy = (1usize..=32).prop_flat_map(|k| {
        let v = move || prop::collection::vec(prop_oneof![-10.0..-0.1, 0.1..10.0], k);
        (v(), v(), v(), v(), prop::array::uniform4(0.01f64..100.0))
    });
    let result = ordered_runner(ANALOGY_CASES).run(&strategy, |(a, b, c, d, scales)| {
        let mk = |v: &Vec<f64>, s: f64| {
            CombinedEmbedding::new("x", v.iter().map(|x| x * s).collect(), vec![0.0; v.len()])
                .unwrap()
        };
        let (ea, eb, ec, ed) = (mk(&a, 1.0), mk(&b, 1.0), mk(&c, 1.0), mk(&d, 1.0));
        prop_assert_eq!(analogy_x(&ea, &ea, &ec, &ec).unwrap(), 0.0);
        let x = analogy_x(&ea, &eb, &ec, &ed).unwrap();
        let scaled = analogy_x(
            &mk(&a, scales[0]),
            &mk(&b, scales[1]),
            &mk(&c, scales[2]),
            &mk(&d, scales[3]),
        )
        .unwrap();
        prop_assert!(
            (x - scaled).abs() <= ANALOGY_TOL,
            "scaling moved x by {:e}",
            (x - scaled).abs()
        );
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(
            true,
            format!("{ANALOGY_CASES} cases: x = 0 exactly for A=B, C=D; invariant to positive rescaling within {ANALOGY_TOL:e}"),
        ),
        Err(e) => Outcome::new(false, format!("{e}")),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sen2pro"))
            .args(["--jobs", jobs, "embed", "--config"])
            .arg(data.join("toy.json"))
            .arg("--corpus")
            .arg(data.join("corpus.txt"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out).unwrap()
    };
    let first = run("first.jsonl", "1");
    let second = run("second.jsonl", "1");
    let parallel = run("parallel.jsonl", "8");
    let repeat = first == second;
    let jobs = first == parallel;
    Outcome::new(
        repeat && jobs && !first.is_empty(),
        format!(
            "{} bytes; repeat run identical: {repeat}; --jobs 8 identical to serial: {jobs}",
            first.len()
        ),
    )
}

fn tradeoff() -> Outcome {
    let report = sce_vs_banding_tradeoff(&[TRADEOFF_K], TRADEOFF_N, TRADEOFF_TRIALS, 1).unwrap();
    let get = |m: &str| report.get(&format!("k={TRADEOFF_K}/{m}")).unwrap();
    let (error_ok, time_ok) = (get("error_ok_trials"), get("time_ok_trials"));
    let all = TRADEOFF_TRIALS as f64;
    Outcome::new(
        error_ok == all && time_ok == all,
        format!(
            "k={TRADEOFF_K}, N={TRADEOFF_N}: banded error <= SCE error in {error_ok}/{all}, banded faster in {time_ok}/{all}; mean errors {:.4} vs {:.4}, mean ms {:.3} vs {:.3}",
            get("banded_error"),
            get("sce_error"),
            get("banded_ms"),
            get("sce_ms")
        ),
    )
}

/// Name, check and optional wall-clock limit.
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("estimator_oracle", estimator_oracle, Some(ORACLE_LIMIT)),
        ("theorem1_trend", theorem1_trend, Some(T1_LIMIT)),
        ("theorem2_kl", theorem2, Some(T2_LIMIT)),
        ("distance_identities", distance_identities, Some(DIST_LIMIT)),
        (
            "synthetic_sts_improvement",
            synthetic_sts_improvement,
            Some(STS_LIMIT),
        ),
        ("few_shot_probe", few_shot_probe, Some(FEW_SHOT_LIMIT)),
        ("q_dropout_monotonicity", q_monotonicity, Some(Q_LIMIT)),
        ("analogy", analogy, Some(ANALOGY_LIMIT)),
        ("determinism", determinism, None),
        ("estimator_tradeoff", tradeoff, None),
    ];
    let mut failed = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match limit {
            Some(limit) => within(elapsed, limit, outcome),
            None => outcome,
        };
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {name} ({:.2} s): {}",
            elapsed.as_secs_f64(),
            outcome.detail
        );
        if !outcome.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
