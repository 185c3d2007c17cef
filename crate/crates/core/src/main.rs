use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use sen2pro::analysis::{
    feature_importance, fluctuation_rate, group_features, q_vs_i_points, AnalysisMetric,
    AnalysisRecord,
};
use sen2pro::distance::{alpha, distance, similarity_score, DistanceConfig};
use sen2pro::encoder::EncoderConfig;
use sen2pro::error::{Error, Result};
use sen2pro::estimator::{estimate, theorem1_experiment};
use sen2pro::eval::{
    analogy_score, eval_rank, eval_scored_pairs, index_by_sentence, probe_task, EmbeddingIndex,
    FeatureMode, DEFAULT_HITS,
};
use sen2pro::model::{
    load_combined_embeddings, load_eval_dataset, load_sample_sets, write_jsonl, DatasetKind,
    EvalDataset, ScoredPair,
};
use sen2pro::pipeline::{
    embed_corpus_detailed, merged_sentences, sampling_sweep, BackendKind, PipelineConfig,
};
use sen2pro::theory::{
    sce_vs_banding_tradeoff, theorem2_check, unified_vs_individual, Theorem2Config,
};

/// Probabilistic sentence embeddings: sampling, estimation, distance and evaluation.
///
/// Results are printed to stdout as JSON; logs go to stderr (set RUST_LOG).
#[derive(Debug, Parser)]
#[command(name = "sen2pro", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample, estimate and combine embeddings for a corpus (one sentence per line).
    Embed(EmbedArgs),
    /// Estimate mean and banded variance for each sample set.
    Estimate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance between sentence pairs (tab-separated, first two columns).
    Distance {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        alpha: AlphaArgs,
    },
    /// Spearman and Pearson correlation on a scored-pairs dataset.
    EvalSts {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        alpha: AlphaArgs,
    },
    /// MRR and Hits@k on rank pools (JSON lines).
    EvalRank {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HITS)]
        hits: Vec<usize>,
        #[command(flatten)]
        alpha: AlphaArgs,
    },
    /// Mean absolute analogy score over quadruples.
    EvalAnalogy {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Linear probe on frozen features.
    Probe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = ProbeMode::MuSigma)]
        mode: ProbeMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Uncertainty analyses.
    Analyze(AnalyzeArgs),
    /// Numeric checks of the estimator and the KL inequality.
    Theory(TheoryArgs),
    /// Evaluation metric as a function of the sampling number.
    Sweep {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
    },
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_path(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Toy => BackendKind::Toy,
                BackendArg::Remote => BackendKind::Remote,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the model and data sample sets.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Also write the model and data estimates.
    #[arg(long)]
    estimates_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Toy,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AlphaModeArg {
    PerPair,
    Fixed,
}

#[derive(Debug, Args)]
struct AlphaArgs {
    #[arg(long, value_enum, default_value_t = AlphaModeArg::PerPair)]
    alpha_mode: AlphaModeArg,
    /// Used with `--alpha-mode fixed`.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

impl AlphaArgs {
    fn config(&self) -> Result<DistanceConfig> {
        let cfg = match self.alpha_mode {
            AlphaModeArg::PerPair => DistanceConfig::per_pair(),
            AlphaModeArg::Fixed => DistanceConfig::fixed(self.alpha),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ProbeMode {
    Mu,
    MuSigma,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnalyzeWhat {
    Importance,
    Q,
    QiSweep,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long, value_enum)]
    what: AnalyzeWhat,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Sentences for `q` (one per line).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Scored pairs for `importance` and `qi-sweep`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dropout levels compared by `qi-sweep`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.3])]
    dropout: Vec<f64>,
    /// Also write `config,Q,I` rows here (`qi-sweep`).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TheoryWhat {
    Theorem1,
    Theorem2,
    Tradeoff,
    Unified,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    what: TheoryWhat,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample sizes for `theorem1`.
    #[arg(long, value_delimiter = ',', default_values_t = [25, 100, 400, 1600, 6400])]
    n_grid: Vec<usize>,
    /// Dimensions for `tradeoff`.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 32, 128])]
    k_grid: Vec<usize>,
    /// Samples per trial (`tradeoff`) or per mode (`unified`).
    #[arg(long)]
    n: Option<usize>,
    /// Explicit smoothing constant for `theorem2`.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Pipeline configuration for `unified`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if !line.trim().is_empty() {
            out.push(line.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{}: corpus is empty",
            path.display()
        )));
    }
    Ok(out)
}

fn read_dataset(path: &Path, kind: DatasetKind) -> Result<EvalDataset> {
    with_path(path, load_eval_dataset(open(path)?, kind))
}

fn read_pairs(path: &Path) -> Result<Vec<ScoredPair>> {
    Ok(read_dataset(path, DatasetKind::ScoredPairs)?
        .as_scored_pairs()?
        .to_vec())
}

fn read_index(path: &Path) -> Result<EmbeddingIndex> {
    index_by_sentence(with_path(path, load_combined_embeddings(open(path)?))?)
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Argument(format!("{what} needs --{flag}")))
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Stream(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn embed(args: &EmbedArgs) -> Result<()> {
    let cfg = args.pipeline.load()?;
    let corpus = read_corpus(&args.corpus)?;
    let emb = embed_corpus_detailed(&corpus, &cfg)?;
    with_path(&args.out, write_jsonl(&emb.combined, create(&args.out)?))?;
    if let Some(path) = &args.samples_out {
        with_path(
            path,
            write_jsonl(emb.model_sets.iter().chain(&emb.data_sets), create(path)?),
        )?;
    }
    if let Some(path) = &args.estimates_out {
        with_path(
            path,
            write_jsonl(
                emb.model_estimates.iter().chain(&emb.data_estimates),
                create(path)?,
            ),
        )?;
    }
    emit(&json!({
        "sentences": corpus.len(),
        "dim": emb.combined[0].dim(),
        "n_model": cfg.n_model,
        "n_data": cfg.n_data,
        "master_seed": cfg.master_seed,
        "out": args.out,
    }))
}

fn estimate_cmd(samples: &Path, out: &Path) -> Result<()> {
    let sets = with_path(samples, load_sample_sets(open(samples)?))?;
    let pes = sets.iter().map(estimate).collect::<Result<Vec<_>>>()?;
    with_path(out, write_jsonl(&pes, create(out)?))?;
    emit(&json!({ "estimates": pes.len(), "out": out }))
}

#[derive(Serialize)]
struct PairDistance<'a> {
    sent_a: &'a str,
    sent_b: &'a str,
    alpha: f64,
    distance: f64,
    similarity: f64,
}

fn distance_cmd(embeddings: &Path, pairs: &Path, cfg: &DistanceConfig) -> Result<()> {
    let index = read_index(embeddings)?;
    let mut rows = Vec::new();
    for line in open(pairs)?.lines() {
        let line = line.map_err(|e| Error::io(pairs, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim_end_matches('\r').split('\t');
        match (fields.next(), fields.next()) {
            (Some(a), Some(b)) => rows.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::Validation(format!(
                    "{}: expected two tab-separated sentences",
                    pairs.display()
                )))
            }
        }
    }
    let out = rows
        .iter()
        .map(|(a, b)| {
            let ea = index
                .get(a)
                .ok_or_else(|| Error::MissingEmbedding(a.clone()))?;
            let eb = index
                .get(b)
                .ok_or_else(|| Error::MissingEmbedding(b.clone()))?;
            Ok(PairDistance {
                sent_a: a,
                sent_b: b,
                alpha: alpha(ea, eb, cfg),
                distance: distance(ea, eb, cfg),
                similarity: similarity_score(ea, eb, cfg),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&out)
}

fn probe_cmd(train: &Path, test: &Path, features: &Path, mode: ProbeMode, seed: u64) -> Result<()> {
    let train = read_dataset(train, DatasetKind::LabeledSentences)?;
    let test = read_dataset(test, DatasetKind::LabeledSentences)?;
    let index = read_index(features)?;
    let mode = match mode {
        ProbeMode::Mu => FeatureMode::Mu,
        ProbeMode::MuSigma => FeatureMode::MuSigma,
    };
    emit(&probe_task(
        train.as_labeled()?,
        test.as_labeled()?,
        &index,
        mode,
        seed,
    )?)
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let cfg = args.pipeline.load()?;
    match args.what {
        AnalyzeWhat::Importance => {
            let pairs = read_pairs(require(&args.dataset, "dataset", "importance")?)?;
            let sentences = merged_sentences(&[], &pairs);
            let emb = embed_corpus_detailed(&sentences, &cfg)?;
            let groups = group_features(&emb.model_estimates)?;
            let index = index_by_sentence(emb.combined)?;
            let records = groups
                .iter()
                .map(|g| {
                    let score = feature_importance(g, &pairs, &index, &cfg.distance)?;
                    AnalysisRecord::new(
                        AnalysisMetric::Importance,
                        score,
                        BTreeMap::from([
                            ("group".to_string(), json!(g.group_id)),
                            ("features".to_string(), json!(g.feature_indices.len())),
                        ]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            emit(&records)
        }
        AnalyzeWhat::Q => {
            let corpus = read_corpus(require(&args.corpus, "corpus", "q")?)?;
            let emb = embed_corpus_detailed(&corpus, &cfg)?;
            let q = fluctuation_rate(&emb.model_estimates)?;
            emit(&AnalysisRecord::new(
                AnalysisMetric::FluctuationQ,
                q,
                BTreeMap::from([
                    ("sentences".to_string(), json!(corpus.len())),
                    ("n_model".to_string(), json!(cfg.n_model)),
                    ("dropout_p".to_string(), json!(cfg.encoder.dropout_p)),
                ]),
            )?)
        }
        AnalyzeWhat::QiSweep => {
            let pairs = read_pairs(require(&args.dataset, "dataset", "qi-sweep")?)?;
            let configs: Vec<(String, EncoderConfig)> = args
                .dropout
                .iter()
                .map(|&p| {
                    (
                        format!("dropout={p}"),
                        EncoderConfig {
                            dropout_p: p,
                            ..cfg.encoder.clone()
                        },
                    )
                })
                .collect();
            let points = q_vs_i_points(
                &configs,
                &pairs,
                cfg.n_model,
                cfg.master_seed,
                &cfg.distance,
            )?;
            if let Some(path) = &args.csv {
                let mut w = create(path)?;
                w.write_all(sen2pro::analysis::qi_csv(&points).as_bytes())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(path, e))?;
            }
            emit(&points)
        }
    }
}

fn theory(args: &TheoryArgs) -> Result<()> {
    let report = match args.what {
        TheoryWhat::Theorem1 => theorem1_experiment(
            args.k.unwrap_or(32),
            &args.n_grid,
            args.trials.unwrap_or(20),
            args.seed,
        )?,
        TheoryWhat::Theorem2 => {
            let (k, trials) = (args.k.unwrap_or(8), args.trials.unwrap_or(1000));
            let cfg = match args.epsilon {
                Some(e) => Theorem2Config::explicit(k, trials, args.seed, e),
                None => Theorem2Config::auto(k, trials, args.seed),
            };
            theorem2_check(&cfg)?
        }
        TheoryWhat::Tradeoff => sce_vs_banding_tradeoff(
            &args.k_grid,
            args.n.unwrap_or(1000),
            args.trials.unwrap_or(20),
            args.seed,
        )?,
        TheoryWhat::Unified => {
            let cfg = match &args.config {
                Some(path) => PipelineConfig::from_path(path)?,
                None => PipelineConfig::default(),
            };
            let pairs = read_pairs(require(&args.dataset, "dataset", "unified")?)?;
            let corpus = match &args.corpus {
                Some(path) => read_corpus(path)?,
                None => merged_sentences(&[], &pairs),
            };
            unified_vs_individual(
                &corpus,
                &cfg.encoder,
                args.n.unwrap_or(cfg.n_model),
                args.seed,
                &pairs,
                &cfg.distance,
            )?
        }
    };
    emit(&report)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Argument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Argument(format!("cannot size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Embed(args) => embed(args),
        Command::Estimate { samples, out } => estimate_cmd(samples, out),
        Command::Distance {
            embeddings,
            pairs,
            alpha,
        } => distance_cmd(embeddings, pairs, &alpha.config()?),
        Command::EvalSts {
            embeddings,
            dataset,
            alpha,
        } => {
            let cfg = alpha.config()?;
            let pairs = read_pairs(dataset)?;
            emit(&eval_scored_pairs(&pairs, &read_index(embeddings)?, &cfg)?)
        }
        Command::EvalRank {
            embeddings,
            dataset,
            hits,
            alpha,
        } => {
            let cfg = alpha.config()?;
            let pools = read_dataset(dataset, DatasetKind::RankPools)?;
            emit(&eval_rank(
                pools.as_rank_pools()?,
                &read_index(embeddings)?,
                &cfg,
                hits,
            )?)
        }
        Command::EvalAnalogy {
            embeddings,
            dataset,
        } => {
            let quads = read_dataset(dataset, DatasetKind::AnalogyQuads)?;
            let quads = quads.as_analogy_quads()?;
            let score = analogy_score(quads, &read_index(embeddings)?)?;
            emit(&json!({ "score": score, "n": quads.len() }))
        }
        Command::Probe {
            train,
            test,
            features,
            mode,
            seed,
        } => probe_cmd(train, test, features, *mode, *seed),
        Command::Analyze(args) => analyze(args),
        Command::Theory(args) => theory(args),
        Command::Sweep {
            pipeline,
            corpus,
            dataset,
            n_grid,
        } => {
            let cfg = pipeline.load()?;
            let pairs = read_pairs(dataset)?;
            let corpus = match corpus {
                Some(path) => read_corpus(path)?,
                None => Vec::new(),
            };
            emit(&sampling_sweep(&corpus, &pairs, n_grid, &cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
