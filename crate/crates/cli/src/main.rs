use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use agh_cli::commands::{self, AggregateOptions, EncodeOptions, EvalOptions, Method, TrainOptions};
use agh_cli::config::{resolve, resolve_seed, ConfigFile};
use agh_cli::synth::SyntheticSpec;

/// Options with built-in defaults resolve as flag, then config-file key
/// (same name as the flag, underscores for dashes), then default; the seed
/// also consults AGH_SEED between config and default.
#[derive(Parser)]
#[command(
    name = "agh",
    version,
    about = "Aggregate local image features and learn binary hash codes"
)]
struct Cli {
    /// Worker threads (1 = deterministic single-threaded mode).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Pool local features into one vector per image.
    Aggregate(AggregateArgs),
    /// Train hashing models at one or more code lengths.
    Train(TrainArgs),
    /// Encode a dataset with a trained model.
    Encode(EncodeArgs),
    /// Rank database codes by Hamming distance and report mAP.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Database image count.
    #[arg(long)]
    images: Option<usize>,
    /// Local feature dimension D.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of cluster centers.
    #[arg(long)]
    clusters: Option<usize>,
    /// Fewest local features per image.
    #[arg(long)]
    locals_min: Option<usize>,
    /// Most local features per image.
    #[arg(long)]
    locals_max: Option<usize>,
    /// Noise standard deviation around each center.
    #[arg(long)]
    noise: Option<f64>,
    /// Query image count.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Pooling regularizer μ.
    #[arg(long)]
    mu: Option<f64>,
    /// L2-normalize each aggregated vector.
    #[arg(long)]
    l2_normalize: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// gmp+itq, gmp+rba, or sah.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated code lengths, e.g. 16,32,64.
    #[arg(long, value_delimiter = ',')]
    code_lengths: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregation regularizer μ.
    #[arg(long)]
    mu: Option<f64>,
    /// Quantization penalty λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight decay β.
    #[arg(long)]
    beta: Option<f64>,
    /// Aggregation weight γ (sah only).
    #[arg(long)]
    gamma: Option<f64>,
    /// Main-loop iterations (T1 for the autoencoder methods, outer T for sah).
    #[arg(long)]
    iterations: Option<usize>,
    /// Inner autoencoder iterations per outer step (sah only).
    #[arg(long)]
    inner_iterations: Option<usize>,
    /// Coordinate-descent sweeps per code update.
    #[arg(long)]
    sweeps: Option<usize>,
    /// Initialization (quantizer) iterations.
    #[arg(long)]
    init_iterations: Option<usize>,
    /// Reuse the previous outer iteration's codes instead of re-initializing
    /// (sah only).
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Treat `features` as local features grouped by this manifest;
    /// omit when `features` already holds one vector per image.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    database_codes: PathBuf,
    #[arg(long)]
    query_codes: PathBuf,
    /// Precomputed ground truth (ivecs).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Database vectors (fvecs) for computing ground truth.
    #[arg(long)]
    database_features: Option<PathBuf>,
    /// Query vectors (fvecs) for computing ground truth.
    #[arg(long)]
    query_features: Option<PathBuf>,
    /// Ground-truth neighbors per query.
    #[arg(long)]
    k: Option<usize>,
    /// Keep only the first K ranked results per query.
    #[arg(long)]
    truncate: Option<usize>,
    /// Query i is database item i; drop self-matches.
    #[arg(long)]
    remove_self: bool,
    /// Value of the report's `method` column.
    #[arg(long, default_value = "unknown")]
    method_label: String,
    /// mAP report CSV (appended across runs).
    #[arg(long)]
    report: PathBuf,
    /// Optional per-query AP CSV.
    #[arg(long)]
    per_query: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn resolve_switch(flag: bool, config: &ConfigFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    Ok(config.parse(key)?.unwrap_or(false))
}

fn run_gen_synth(args: GenSynthArgs) -> Result<()> {
    let cfg = ConfigFile::load_optional(args.config.as_deref())?;
    let spec = SyntheticSpec {
        image_count: resolve(args.images, &cfg, "images", 100)?,
        feature_dim: resolve(args.dim, &cfg, "dim", 16)?,
        clusters: resolve(args.clusters, &cfg, "clusters", 10)?,
        locals_min: resolve(args.locals_min, &cfg, "locals_min", 5)?,
        locals_max: resolve(args.locals_max, &cfg, "locals_max", 15)?,
        noise: resolve(args.noise, &cfg, "noise", 0.1)?,
        query_count: resolve(args.queries, &cfg, "queries", 10)?,
        seed: resolve_seed(args.seed, &cfg)?,
    };
    let files = commands::cmd_gen_synth(&spec, &args.out_dir)?;
    println!(
        "generated {} images and {} queries (D={}, {} clusters, seed {})",
        spec.image_count, spec.query_count, spec.feature_dim, spec.clusters, spec.seed
    );
    for path in [
        &files.features,
        &files.manifest,
        &files.query_features,
        &files.query_manifest,
        &files.labels,
    ] {
        println!("  {}", path.display());
    }
    Ok(())
}

fn run_aggregate(args: AggregateArgs) -> Result<()> {
    let cfg = ConfigFile::load_optional(args.config.as_deref())?;
    let opts = AggregateOptions {
        manifest: args.manifest,
        features: args.features,
        mu: resolve(args.mu, &cfg, "mu", 100.0)?,
        l2_normalize: resolve_switch(args.l2_normalize, &cfg, "l2_normalize")?,
        output: args.output,
    };
    let aggregated = commands::cmd_aggregate(&opts)?;
    println!(
        "aggregated {} images (D={}) -> {}",
        aggregated.ncols(),
        aggregated.nrows(),
        opts.output.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = ConfigFile::load_optional(args.config.as_deref())?;
    let method: Method = match (&args.method, cfg.get("method")) {
        (Some(raw), _) => raw.parse()?,
        (None, Some(raw)) => raw.parse()?,
        (None, None) => bail!("--method is required (flag or config)"),
    };
    let code_lengths = if !args.code_lengths.is_empty() {
        args.code_lengths.clone()
    } else {
        match cfg.get("code_lengths") {
            Some(raw) => raw
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .with_context(|| format!("config code_lengths entry {t:?}"))
                })
                .collect::<Result<_>>()?,
            None => bail!("--code-lengths is required (flag or config)"),
        }
    };
    let defaults = TrainOptions::new(method);
    let opts = TrainOptions {
        manifest: args.manifest,
        features: args.features,
        method,
        code_lengths,
        out_dir: args.out_dir,
        seed: resolve_seed(args.seed, &cfg)?,
        mu: resolve(args.mu, &cfg, "mu", defaults.mu)?,
        lambda: resolve(args.lambda, &cfg, "lambda", defaults.lambda)?,
        beta: resolve(args.beta, &cfg, "beta", defaults.beta)?,
        gamma: resolve(args.gamma, &cfg, "gamma", defaults.gamma)?,
        iterations: resolve(args.iterations, &cfg, "iterations", defaults.iterations)?,
        inner_iterations: resolve(
            args.inner_iterations,
            &cfg,
            "inner_iterations",
            defaults.inner_iterations,
        )?,
        sweeps: resolve(args.sweeps, &cfg, "sweeps", defaults.sweeps)?,
        init_iterations: resolve(
            args.init_iterations,
            &cfg,
            "init_iterations",
            defaults.init_iterations,
        )?,
        warm_start: resolve_switch(args.warm_start, &cfg, "warm_start")?,
    };
    for trained in commands::cmd_train(&opts)? {
        println!(
            "{} L={}: wrote {} (final objective {:.6})",
            method,
            trained.code_length,
            trained.model_path.display(),
            trained.final_objective
        );
    }
    Ok(())
}

fn run_encode(args: EncodeArgs) -> Result<()> {
    let opts = EncodeOptions {
        model: args.model,
        features: args.features,
        manifest: args.manifest,
        output: args.output,
    };
    let codes = commands::cmd_encode(&opts)?;
    println!(
        "encoded {} images (L={}) -> {}",
        codes.count(),
        codes.code_length(),
        opts.output.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let cfg = ConfigFile::load_optional(args.config.as_deref())?;
    let opts = EvalOptions {
        database_codes: args.database_codes,
        query_codes: args.query_codes,
        ground_truth: args.ground_truth,
        database_features: args.database_features,
        query_features: args.query_features,
        k: match args.k {
            Some(k) => Some(k),
            None => cfg.parse("k")?,
        },
        truncate: match args.truncate {
            Some(k) => Some(k),
            None => cfg.parse("truncate")?,
        },
        remove_self: resolve_switch(args.remove_self, &cfg, "remove_self")?,
        method_label: args.method_label,
        report: args.report,
        per_query: args.per_query,
    };
    let summary = commands::cmd_eval(&opts)?;
    println!(
        "method={} L={} queries={} mAP={:.6}",
        opts.method_label, summary.code_length, summary.query_count, summary.map
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenSynth(args) => run_gen_synth(args),
        Command::Aggregate(args) => run_aggregate(args),
        Command::Train(args) => run_train(args),
        Command::Encode(args) => run_encode(args),
        Command::Eval(args) => run_eval(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
