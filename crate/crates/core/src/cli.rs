//! The `vmr` command line: synthetic data generation, training, evaluation,
//! single queries, and the gradient-check suite.
//!
//! Configuration precedence is defaults, then the `--config` file, then
//! command-line flags (`--set key=value` covers every key). Every run's
//! effective configuration is echoed into its output artifacts so results
//! are reproducible from the artifacts alone.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::{self, PairSet, SyntheticSpec, TrainPositives};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::losses::{LossConfig, MetricSite, MetricVariant};
use crate::model::{EmbeddingKind, ModelDims};
use crate::retrieval::{self, DEFAULT_KS};
use crate::training::{self, Ablation, Checkpoint, TrainConfig};
use crate::verify::{gradcheck_losses, GRADCHECK_EPS, GRADCHECK_TOLERANCE};

/// Flat bag of every configurable value, with defaults for all of them.
///
/// Native feature dims double as the synthetic generator's output dims and
/// as a cross-check against a dataset header when set explicitly. Code dims
/// left unset are resolved against the data: `min(256, smallest native dim
/// on that path)` for the codes, `min(256, content + emotion code)` for the
/// fused width.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub metric: MetricVariant,
    pub metric_site: MetricSite,
    pub ablation: Ablation,
    pub positives: TrainPositives,
    pub content_code_dim: Option<usize>,
    pub emotion_code_dim: Option<usize>,
    pub content_hidden_dim: Option<usize>,
    pub emotion_hidden_dim: Option<usize>,
    pub fused_dim: Option<usize>,
    pub pairs: usize,
    pub latent_content_dim: usize,
    pub latent_emotion_dim: usize,
    pub video_content_dim: usize,
    pub music_content_dim: usize,
    pub video_emotion_dim: usize,
    pub music_emotion_dim: usize,
    pub noise_sigma: f64,
    pub num_emotion_classes: usize,
    pub class_weights: Vec<f64>,
    pub polarity_of_class: Vec<u8>,
    pub musics_per_group: usize,
    pub threads: usize,
    /// Keys set explicitly by file or flag (used for cross-checks).
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            margin: 1.0,
            lambda1: 0.8,
            lambda2: 1.0,
            mu1: 0.8,
            mu2: 1.0,
            k1: 0.5,
            k2: 0.5,
            k3: 1.0,
            metric: MetricVariant::Contrastive,
            metric_site: MetricSite::Content,
            ablation: Ablation::Interactive,
            positives: TrainPositives::First,
            content_code_dim: None,
            emotion_code_dim: None,
            content_hidden_dim: None,
            emotion_hidden_dim: None,
            fused_dim: None,
            pairs: 100,
            latent_content_dim: 16,
            latent_emotion_dim: 8,
            video_content_dim: 64,
            music_content_dim: 56,
            video_emotion_dim: 32,
            music_emotion_dim: 24,
            noise_sigma: 0.1,
            num_emotion_classes: 4,
            class_weights: Vec::new(),
            polarity_of_class: Vec::new(),
            musics_per_group: 1,
            threads: 1,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("config key {key} has a bad entry: '{part}'")))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key=value` assignment, rejecting unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_count =
            |k: &str, v: &str| Error::Config(format!("config key {k} is not a count: '{v}'"));
        let bad_num =
            |k: &str, v: &str| Error::Config(format!("config key {k} is not a number: '{v}'"));
        match key {
            "epochs" => self.epochs = value.parse().map_err(|_| bad_count(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad_count(key, value))?,
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|_| bad_num(key, value))?
            }
            "beta1" => self.beta1 = value.parse().map_err(|_| bad_num(key, value))?,
            "beta2" => self.beta2 = value.parse().map_err(|_| bad_num(key, value))?,
            "adam_epsilon" => self.adam_epsilon = value.parse().map_err(|_| bad_num(key, value))?,
            "seed" => {
                self.seed = value.parse().map_err(|_| {
                    Error::Config(format!("config key seed is not an integer: '{value}'"))
                })?
            }
            "margin" => self.margin = value.parse().map_err(|_| bad_num(key, value))?,
            "lambda1" => self.lambda1 = value.parse().map_err(|_| bad_num(key, value))?,
            "lambda2" => self.lambda2 = value.parse().map_err(|_| bad_num(key, value))?,
            "mu1" => self.mu1 = value.parse().map_err(|_| bad_num(key, value))?,
            "mu2" => self.mu2 = value.parse().map_err(|_| bad_num(key, value))?,
            "k1" => self.k1 = value.parse().map_err(|_| bad_num(key, value))?,
            "k2" => self.k2 = value.parse().map_err(|_| bad_num(key, value))?,
            "k3" => self.k3 = value.parse().map_err(|_| bad_num(key, value))?,
            "metric" => self.metric = MetricVariant::parse(value)?,
            "metric_site" => self.metric_site = MetricSite::parse(value)?,
            "ablation" => self.ablation = Ablation::parse(value)?,
            "positives" => self.positives = TrainPositives::parse(value)?,
            "content_code_dim" => {
                self.content_code_dim = Some(value.parse().map_err(|_| bad_count(key, value))?)
            }
            "emotion_code_dim" => {
                self.emotion_code_dim = Some(value.parse().map_err(|_| bad_count(key, value))?)
            }
            "content_hidden_dim" => {
                self.content_hidden_dim = Some(value.parse().map_err(|_| bad_count(key, value))?)
            }
            "emotion_hidden_dim" => {
                self.emotion_hidden_dim = Some(value.parse().map_err(|_| bad_count(key, value))?)
            }
            "fused_dim" => self.fused_dim = Some(value.parse().map_err(|_| bad_count(key, value))?),
            "pairs" => self.pairs = value.parse().map_err(|_| bad_count(key, value))?,
            "latent_content_dim" => {
                self.latent_content_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "latent_emotion_dim" => {
                self.latent_emotion_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "video_content_dim" => {
                self.video_content_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "music_content_dim" => {
                self.music_content_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "video_emotion_dim" => {
                self.video_emotion_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "music_emotion_dim" => {
                self.music_emotion_dim = value.parse().map_err(|_| bad_count(key, value))?
            }
            "noise_sigma" => self.noise_sigma = value.parse().map_err(|_| bad_num(key, value))?,
            "num_emotion_classes" => {
                self.num_emotion_classes = value.parse().map_err(|_| bad_count(key, value))?
            }
            "class_weights" => self.class_weights = parse_list(key, value)?,
            "polarity_of_class" => self.polarity_of_class = parse_list(key, value)?,
            "musics_per_group" => {
                self.musics_per_group = value.parse().map_err(|_| bad_count(key, value))?
            }
            "threads" => self.threads = value.parse().map_err(|_| bad_count(key, value))?,
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Builds the synthetic generator spec.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let spec = SyntheticSpec {
            num_pairs: self.pairs,
            latent_content_dim: self.latent_content_dim,
            latent_emotion_dim: self.latent_emotion_dim,
            video_content_dim: self.video_content_dim,
            music_content_dim: self.music_content_dim,
            video_emotion_dim: self.video_emotion_dim,
            music_emotion_dim: self.music_emotion_dim,
            noise_sigma: self.noise_sigma,
            num_classes: self.num_emotion_classes,
            class_weights: if self.class_weights.is_empty() {
                vec![1.0; self.num_emotion_classes]
            } else {
                self.class_weights.clone()
            },
            polarity_of_class: if self.polarity_of_class.is_empty() {
                (0..self.num_emotion_classes)
                    .map(|c| (c % 3) as u8)
                    .collect()
            } else {
                self.polarity_of_class.clone()
            },
            musics_per_group: self.musics_per_group,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Resolves the training config against a dataset header. Explicitly
    /// set native dims are cross-checked against the header; unset code
    /// dims default to widths that satisfy the dimension-reduction
    /// invariant on any data.
    pub fn train_config(&self, data_dims: &data::TableDims) -> Result<TrainConfig> {
        for (key, configured, actual) in [
            (
                "video_content_dim",
                self.video_content_dim,
                data_dims.video_content,
            ),
            (
                "music_content_dim",
                self.music_content_dim,
                data_dims.music_content,
            ),
            (
                "video_emotion_dim",
                self.video_emotion_dim,
                data_dims.video_emotion,
            ),
            (
                "music_emotion_dim",
                self.music_emotion_dim,
                data_dims.music_emotion,
            ),
            (
                "num_emotion_classes",
                self.num_emotion_classes,
                data_dims.classes,
            ),
        ] {
            if self.is_explicit(key) && configured != actual {
                return Err(Error::Config(format!(
                    "config {key}={configured} does not match the dataset header value {actual}"
                )));
            }
        }
        let content_code = self
            .content_code_dim
            .unwrap_or_else(|| 256.min(data_dims.video_content.min(data_dims.music_content)));
        let emotion_code = self
            .emotion_code_dim
            .unwrap_or_else(|| 256.min(data_dims.video_emotion.min(data_dims.music_emotion)));
        // Hidden trunks default to at least 32 units: very narrow relu
        // layers can die wholesale and collapse a code to exactly zero.
        let content_hidden = self.content_hidden_dim.unwrap_or(content_code.max(32));
        let emotion_hidden = self.emotion_hidden_dim.unwrap_or(emotion_code.max(32));
        let fused = self
            .fused_dim
            .unwrap_or(256.min(content_code + emotion_code));
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            seed: self.seed,
            loss: LossConfig {
                margin: self.margin,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                mu1: self.mu1,
                mu2: self.mu2,
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
                metric_variant: self.metric,
                fusion_mode: self.ablation.fusion_mode(),
                metric_site: self.metric_site,
            },
            dims: ModelDims {
                video_content_dim: data_dims.video_content,
                music_content_dim: data_dims.music_content,
                video_emotion_dim: data_dims.video_emotion,
                music_emotion_dim: data_dims.music_emotion,
                content_code_dim: content_code,
                emotion_code_dim: emotion_code,
                content_hidden_dim: content_hidden,
                emotion_hidden_dim: emotion_hidden,
                fused_dim: fused,
                num_emotion_classes: data_dims.classes,
            },
            ablation: self.ablation,
            positives: self.positives,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a config file (flat `key=value` lines, `#` comments) and applies
/// command-line overrides on top, in that precedence order.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    idx + 1
                ))
            })?;
            rc.apply(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(msg) => {
                    Error::Config(format!("{}:{}: {msg}", path.display(), idx + 1))
                }
                other => other,
            })?;
        }
    }
    for (k, v) in overrides {
        rc.apply(k, v)?;
    }
    Ok(rc)
}

#[derive(Parser)]
#[command(
    name = "vmr",
    version,
    about = "Dual-path video-to-music retrieval: train and evaluate joint \
             embedding models over precomputed feature tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-feature corpus with ground truth.
    Synth(SynthArgs),
    /// Train a model on the 70% pair-group split of a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint with Recall@{1,5,10,15,20,25}.
    Eval(EvalArgs),
    /// Rank music for a single video query.
    Query(QueryArgs),
    /// Check every loss's analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Config file with flat key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set margin=0.7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for all randomness in this run.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonConfig {
    fn overrides(&self, mut extra: Vec<(String, String)>) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(("seed".to_string(), seed.to_string()));
        }
        out.append(&mut extra);
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the corpus.
    #[arg(long)]
    out: PathBuf,
    /// Number of pair groups to generate.
    #[arg(long)]
    pairs: Option<usize>,
    /// Feature noise level.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Matched musics per video.
    #[arg(long)]
    musics_per_group: Option<usize>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (manifest.txt, features/, pairs.txt).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Loss log output path (default: checkpoint path with .losslog).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive margin in cosine-distance space.
    #[arg(long)]
    margin: Option<f64>,
    /// Training configuration: content|emotion|splicing|interactive.
    #[arg(long)]
    ablation: Option<String>,
    /// Metric loss: contrastive|batch|ppml.
    #[arg(long)]
    metric: Option<String>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; the test split is re-derived from the
    /// checkpoint's seed.
    #[arg(long)]
    data: PathBuf,
    /// Report output path (the report always also prints to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Embedding space: content|emotion|splicing|interactive
    /// (default: the space the checkpoint's ablation trained).
    #[arg(long)]
    kind: Option<String>,
    /// Music corpus to rank against: test split only, or all musics.
    #[arg(long, default_value = "test")]
    corpus: String,
    /// Worker threads for query ranking.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Video item id to query with.
    #[arg(long)]
    video_id: String,
    /// How many music items to return.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Embedding space (default: the checkpoint's ablation space).
    #[arg(long)]
    kind: Option<String>,
    /// Corpus to rank: all|test|train.
    #[arg(long, default_value = "all")]
    corpus: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds to sweep.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = GRADCHECK_EPS)]
    eps: f64,
}

/// Parses argv and runs the requested subcommand.
/// Returns the process exit code: 0 success, 1 validation error,
/// 2 runtime/numeric error.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Query(args) => run_query(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

fn opt_kv<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut extra = Vec::new();
    opt_kv(&mut extra, "pairs", &args.pairs);
    opt_kv(&mut extra, "noise_sigma", &args.noise_sigma);
    opt_kv(&mut extra, "musics_per_group", &args.musics_per_group);
    let rc = parse_config(
        args.common.config.as_deref(),
        &args.common.overrides(extra)?,
    )?;
    let spec = rc.synthetic_spec()?;
    data::generate_synthetic(&spec, &args.out)?;

    // Echo the effective generator config next to the corpus.
    let mut echo = String::new();
    let _ = writeln!(echo, "pairs={}", spec.num_pairs);
    let _ = writeln!(echo, "latent_content_dim={}", spec.latent_content_dim);
    let _ = writeln!(echo, "latent_emotion_dim={}", spec.latent_emotion_dim);
    let _ = writeln!(echo, "video_content_dim={}", spec.video_content_dim);
    let _ = writeln!(echo, "music_content_dim={}", spec.music_content_dim);
    let _ = writeln!(echo, "video_emotion_dim={}", spec.video_emotion_dim);
    let _ = writeln!(echo, "music_emotion_dim={}", spec.music_emotion_dim);
    let _ = writeln!(echo, "noise_sigma={}", spec.noise_sigma);
    let _ = writeln!(echo, "num_emotion_classes={}", spec.num_classes);
    let _ = writeln!(
        echo,
        "class_weights={}",
        spec.class_weights
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        echo,
        "polarity_of_class={}",
        spec.polarity_of_class
            .iter()
            .map(u8::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(echo, "musics_per_group={}", spec.musics_per_group);
    let _ = writeln!(echo, "seed={}", spec.seed);
    write_atomic(&args.out.join("config.txt"), echo.as_bytes())?;

    println!(
        "wrote {} pair groups ({} musics per group) to {}",
        spec.num_pairs,
        spec.musics_per_group,
        args.out.display()
    );
    Ok(())
}

fn load_and_split(dir: &Path, seed: u64) -> Result<(PairSet, PairSet)> {
    let all = data::load_dir(dir)?;
    let (train, test) = all.split_dataset(seed)?;
    retrieval::assert_disjoint_groups(&train, &test)?;
    Ok((train, test))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut extra = Vec::new();
    opt_kv(&mut extra, "epochs", &args.epochs);
    opt_kv(&mut extra, "batch_size", &args.batch_size);
    opt_kv(&mut extra, "learning_rate", &args.lr);
    opt_kv(&mut extra, "margin", &args.margin);
    opt_kv(&mut extra, "ablation", &args.ablation);
    opt_kv(&mut extra, "metric", &args.metric);
    let rc = parse_config(
        args.common.config.as_deref(),
        &args.common.overrides(extra)?,
    )?;

    let all = data::load_dir(&args.data)?;
    let cfg = rc.train_config(all.dims())?;
    let (train_split, test_split) = all.split_dataset(cfg.seed)?;
    retrieval::assert_disjoint_groups(&train_split, &test_split)?;

    let outcome = training::train(&cfg, &train_split)?;
    outcome.checkpoint.save(&args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("losslog"));
    let log_text = format!(
        "# config={} seed={}\n{}",
        outcome.checkpoint.config_digest(),
        cfg.seed,
        training::render_loss_log(&outcome.log)
    );
    write_atomic(&log_path, log_text.as_bytes())?;

    let last = outcome.log.last().expect("at least one step");
    println!(
        "trained {} epochs ({} steps) on {} pairs [ablation={}, metric={}]",
        cfg.epochs,
        outcome.log.len(),
        train_split.pairs().len(),
        cfg.ablation.as_str(),
        cfg.loss.metric_variant.as_str()
    );
    println!("final L_total={:.6}", last.total);
    println!("checkpoint: {}", args.out.display());
    println!("loss log:   {}", log_path.display());
    Ok(())
}

fn kind_for(cfg: &TrainConfig) -> EmbeddingKind {
    match cfg.ablation {
        Ablation::ContentOnly => EmbeddingKind::Content,
        Ablation::EmotionOnly => EmbeddingKind::Emotion,
        Ablation::Splicing => EmbeddingKind::Splicing,
        Ablation::Interactive => EmbeddingKind::Interactive,
    }
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = ckpt.train_config()?;
    let model = ckpt.build_model()?;
    let (train_split, test_split) = load_and_split(&args.data, cfg.seed)?;

    let kind = match &args.kind {
        Some(s) => EmbeddingKind::parse(s)?,
        None => kind_for(&cfg),
    };
    let eval_set = match args.corpus.as_str() {
        "test" => test_split,
        "all" => {
            // Queries stay on the unseen test videos; the music corpus
            // grows to every music item in the table.
            let mut records = test_split.videos().to_vec();
            records.extend(train_split.musics().iter().cloned());
            records.extend(test_split.musics().iter().cloned());
            PairSet::from_parts(*test_split.dims(), records, Vec::new())?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown corpus '{other}' (expected test|all)"
            )));
        }
    };

    let report = retrieval::evaluate(
        &model,
        &eval_set,
        kind,
        &DEFAULT_KS,
        args.threads,
        ckpt.config_digest(),
        cfg.seed,
    )?;
    let text = report.render();
    print!("{text}");
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn run_query(args: QueryArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = ckpt.train_config()?;
    let model = ckpt.build_model()?;
    let all = data::load_dir(&args.data)?;

    let corpus: Vec<data::ItemRecord> = match args.corpus.as_str() {
        "all" => all.musics().to_vec(),
        "test" | "train" => {
            let (train_split, test_split) = all.split_dataset(cfg.seed)?;
            if args.corpus == "train" {
                train_split.musics().to_vec()
            } else {
                test_split.musics().to_vec()
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown corpus '{other}' (expected all|test|train)"
            )));
        }
    };

    let kind = match &args.kind {
        Some(s) => EmbeddingKind::parse(s)?,
        None => kind_for(&cfg),
    };
    let video = all
        .video(&args.video_id)
        .ok_or_else(|| Error::Data(format!("no video with id {}", args.video_id)))?;

    let index = retrieval::embed_corpus(&model, &corpus, kind)?;
    if args.k > index.len() {
        eprintln!(
            "note: K={} exceeds the corpus size; returning all {} items",
            args.k,
            index.len()
        );
    }
    let emb = model.embedding(
        kind,
        &video.content_feature,
        &video.emotion_feature,
        crate::model::Modality::Video,
    )?;
    let ranked = retrieval::rank_for_query(&index, &emb, args.k)?;
    for (rank, (id, sim)) in ranked.iter().enumerate() {
        println!("{},{id},{sim:.6}", rank + 1);
    }
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let results = gradcheck_losses(args.seed, args.seeds, args.eps)?;
    let mut worst = 0.0f64;
    for r in &results {
        println!("loss={} max_rel_err={:.3e}", r.loss, r.max_relative_error);
        worst = worst.max(r.max_relative_error);
    }
    println!(
        "overall max_rel_err={:.3e} over {} seeds (tolerance {:.1e})",
        worst, args.seeds, GRADCHECK_TOLERANCE
    );
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:.1e}"
        )));
    }
    Ok(())
}
