//! Subcommand implementations.
//!
//! Every command takes fully-resolved options (flag/config/default merging
//! happens in the binary) and works purely through the filesystem, so tests
//! can call these functions directly and compare against library results.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};

use agh_core::codes::BinaryCodes;
use agh_core::eval::{self, GroundTruth, RankingOptions};
use agh_core::gmp::{self, GmpParams};
use agh_core::io;
use agh_core::itq;
use agh_core::rba::{self, HashModel, RbaHyperparams};
use agh_core::sah::{self, SahHyperparams};

use crate::config::ConfigFile;
use crate::synth::{self, GeneratedFiles, SyntheticSpec};

/// Hashing pipeline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Aggregate with GMP, then quantize with ITQ.
    GmpItq,
    /// Aggregate with GMP, then fit the relaxed binary autoencoder.
    GmpRba,
    /// Joint aggregation and hashing.
    Sah,
}

impl Method {
    /// Canonical name, used in CSV reports and meta files.
    pub fn name(self) -> &'static str {
        match self {
            Method::GmpItq => "gmp+itq",
            Method::GmpRba => "gmp+rba",
            Method::Sah => "sah",
        }
    }

    /// Filesystem-safe variant of the name.
    pub fn slug(self) -> &'static str {
        match self {
            Method::GmpItq => "gmp-itq",
            Method::GmpRba => "gmp-rba",
            Method::Sah => "sah",
        }
    }

    /// Default weight-decay β for the method's autoencoder fit.
    pub fn default_beta(self) -> f64 {
        match self {
            Method::GmpItq | Method::GmpRba => rba::DEFAULT_BETA,
            Method::Sah => sah::DEFAULT_BETA,
        }
    }

    /// Default main-loop iteration count.
    pub fn default_iterations(self) -> usize {
        match self {
            Method::GmpItq => itq::DEFAULT_ITERATIONS,
            Method::GmpRba => rba::DEFAULT_ITERATIONS,
            Method::Sah => sah::DEFAULT_ITERATIONS,
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmp+itq" | "gmp-itq" => Ok(Method::GmpItq),
            "gmp+rba" | "gmp-rba" => Ok(Method::GmpRba),
            "sah" => Ok(Method::Sah),
            other => bail!("unknown method {other:?}; expected gmp+itq, gmp+rba, or sah"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sidecar describing how a model's inputs are prepared. Encoding needs the
/// method (aggregate vs. joint aggregation) and the regularizers used in
/// training, so they travel with the model file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    pub method: Method,
    pub mu: f64,
    /// Aggregation weight; present only for SAH models.
    pub gamma: Option<f64>,
}

impl ModelMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("method={}\nmu={}\n", self.method, self.mu);
        if let Some(gamma) = self.gamma {
            text.push_str(&format!("gamma={gamma}\n"));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = ConfigFile::load(path)?;
        let method: Method = cfg
            .get("method")
            .with_context(|| format!("{}: missing method", path.display()))?
            .parse()?;
        let mu: f64 = cfg
            .parse("mu")?
            .with_context(|| format!("{}: missing mu", path.display()))?;
        let gamma: Option<f64> = cfg.parse("gamma")?;
        if method == Method::Sah && gamma.is_none() {
            bail!("{}: sah model requires gamma", path.display());
        }
        Ok(Self { method, mu, gamma })
    }
}

/// Sidecar path for a model file: same name with the extension `meta`.
pub fn meta_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("meta")
}

pub fn cmd_gen_synth(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedFiles> {
    let dataset = synth::generate(spec)?;
    synth::write_dataset(&dataset, spec.feature_dim, out_dir)
}

#[derive(Debug, Clone)]
pub struct AggregateOptions {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub mu: f64,
    pub l2_normalize: bool,
    pub output: PathBuf,
}

/// Aggregate every image and write the pooled vectors as fvecs.
pub fn cmd_aggregate(opts: &AggregateOptions) -> Result<DMatrix<f64>> {
    let dataset = io::load_local_features(&opts.manifest, &opts.features)
        .context("loading local features")?;
    let mut aggregated = gmp::aggregate_all(&dataset, GmpParams::new(opts.mu)?)?;
    if opts.l2_normalize {
        for (j, mut col) in aggregated.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                bail!("image {j} aggregated to the zero vector; cannot normalize");
            }
            col /= norm;
        }
    }
    io::write_fvecs(&aggregated, &opts.output)
        .with_context(|| format!("writing {}", opts.output.display()))?;
    Ok(aggregated)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub method: Method,
    pub code_lengths: Vec<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub mu: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub sweeps: usize,
    pub init_iterations: usize,
    pub warm_start: bool,
}

impl TrainOptions {
    /// Defaults for `method`; paths must still be filled in by the caller.
    pub fn new(method: Method) -> Self {
        Self {
            manifest: PathBuf::new(),
            features: PathBuf::new(),
            method,
            code_lengths: Vec::new(),
            out_dir: PathBuf::new(),
            seed: 0,
            mu: GmpParams::default().mu,
            lambda: rba::DEFAULT_LAMBDA,
            beta: method.default_beta(),
            gamma: sah::DEFAULT_GAMMA,
            iterations: method.default_iterations(),
            inner_iterations: sah::DEFAULT_INNER_ITERATIONS,
            sweeps: 1,
            init_iterations: itq::DEFAULT_ITERATIONS,
            warm_start: false,
        }
    }
}

/// One trained model's artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub code_length: usize,
    pub model_path: PathBuf,
    pub meta_path: PathBuf,
    pub trace_path: PathBuf,
    pub final_objective: f64,
}

fn write_trace(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,objective\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ITQ as an affine encoder plus a least-squares decoder, so every method
// ships the same model format. sign(R·P·(x − mean)) = sign(W1·x + c1) with
// W1 = R·P and c1 = −W1·mean; the decoder is fit to the training codes.
fn itq_hash_model(
    aggregated: &DMatrix<f64>,
    model: &itq::ItqModel,
    codes: &BinaryCodes,
    beta: f64,
) -> Result<HashModel> {
    let encoder_weights = &model.rotation * &model.projection;
    let encoder_bias = -(&encoder_weights * &model.mean);
    let dim = aggregated.nrows();
    let decoder_weights =
        rba::update_decoder_weights(aggregated, codes, &DVector::zeros(dim), beta)?;
    let decoder_bias = (aggregated - &decoder_weights * codes.as_matrix()).column_mean();
    let model = HashModel {
        encoder_weights,
        encoder_bias,
        decoder_weights,
        decoder_bias,
    };
    model.validate()?;
    Ok(model)
}

/// Train the selected method at every requested code length. Each code
/// length yields a model file, a meta sidecar, and a trace CSV.
pub fn cmd_train(opts: &TrainOptions) -> Result<Vec<TrainedModel>> {
    if opts.code_lengths.is_empty() {
        bail!("code_lengths: at least one code length is required");
    }
    let dataset =
        io::load_local_features(&opts.manifest, &opts.features).context("loading training data")?;
    let dim = dataset[0].nrows();
    for &l in &opts.code_lengths {
        if l == 0 || l > dim {
            bail!("code_lengths: L={l} outside 1..={dim} (feature dimension)");
        }
    }
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating output directory {}", opts.out_dir.display()))?;

    // GMP front end is shared across code lengths for the two-stage methods.
    let aggregated = match opts.method {
        Method::GmpItq | Method::GmpRba => {
            Some(gmp::aggregate_all(&dataset, GmpParams::new(opts.mu)?)?)
        }
        Method::Sah => None,
    };

    let mut outputs = Vec::with_capacity(opts.code_lengths.len());
    for &l in &opts.code_lengths {
        let stem = format!("{}_L{l}", opts.method.slug());
        let model_path = opts.out_dir.join(format!("{stem}.model"));
        let meta_path = opts.out_dir.join(format!("{stem}.meta"));
        let trace_path = opts.out_dir.join(format!("{stem}_trace.csv"));
        let mut gamma = None;

        let (model, trace) = match opts.method {
            Method::GmpItq => {
                let aggregated = aggregated.as_ref().unwrap();
                let (itq_model, trace) = itq::train(aggregated, l, opts.iterations, opts.seed)
                    .with_context(|| format!("code length {l}"))?;
                let codes = itq::encode(aggregated, &itq_model)?;
                let model = itq_hash_model(aggregated, &itq_model, &codes, opts.beta)?;
                (model, trace)
            }
            Method::GmpRba => {
                let hp = RbaHyperparams {
                    code_length: l,
                    lambda: opts.lambda,
                    beta: opts.beta,
                    iterations: opts.iterations,
                    sweeps: opts.sweeps,
                    init_iterations: opts.init_iterations,
                };
                let out = rba::train(aggregated.as_ref().unwrap(), &hp, opts.seed)
                    .with_context(|| format!("code length {l}"))?;
                (out.model, out.objective_trace)
            }
            Method::Sah => {
                let hp = SahHyperparams {
                    code_length: l,
                    lambda: opts.lambda,
                    beta: opts.beta,
                    gamma: opts.gamma,
                    mu: opts.mu,
                    iterations: opts.iterations,
                    inner_iterations: opts.inner_iterations,
                    sweeps: opts.sweeps,
                    init_iterations: opts.init_iterations,
                    warm_start: opts.warm_start,
                };
                gamma = Some(opts.gamma);
                let out = sah::train(&dataset, &hp, opts.seed)
                    .with_context(|| format!("code length {l}"))?;
                let trace = out.records.iter().map(|r| r.joint_objective).collect();
                (out.model, trace)
            }
        };

        model.save(&model_path)?;
        ModelMeta {
            method: opts.method,
            mu: opts.mu,
            gamma,
        }
        .save(&meta_path)?;
        write_trace(&trace_path, &trace)?;
        outputs.push(TrainedModel {
            code_length: l,
            model_path,
            meta_path,
            trace_path,
            final_objective: *trace.last().unwrap_or(&f64::NAN),
        });
    }
    Ok(outputs)
}

#[derive(Debug, Clone)]
pub struct EncodeOptions {
    pub model: PathBuf,
    pub features: PathBuf,
    /// When set, `features` is a backing file of local features grouped by
    /// this manifest; otherwise `features` holds one already-aggregated
    /// vector per image.
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
}

/// Encode a dataset with a trained model, reproducing the method's own
/// input pipeline (GMP or the joint aggregation step) when given raw local
/// features.
pub fn cmd_encode(opts: &EncodeOptions) -> Result<BinaryCodes> {
    let model = HashModel::load(&opts.model)?;
    let meta = ModelMeta::load(&meta_path(&opts.model))?;
    let codes = match (&opts.manifest, meta.method) {
        (Some(manifest), Method::Sah) => {
            let dataset = io::load_local_features(manifest, &opts.features)?;
            let gamma = meta.gamma.expect("validated by ModelMeta::load");
            let (_, codes) = sah::encode_dataset(&dataset, &model, gamma, meta.mu)?;
            codes
        }
        (Some(manifest), Method::GmpItq | Method::GmpRba) => {
            let dataset = io::load_local_features(manifest, &opts.features)?;
            let aggregated = gmp::aggregate_all(&dataset, GmpParams::new(meta.mu)?)?;
            rba::encode(&aggregated, &model)?
        }
        (None, Method::Sah) => {
            bail!(
                "sah models encode from local features; pass a manifest alongside the backing file"
            )
        }
        (None, Method::GmpItq | Method::GmpRba) => {
            let vectors = io::read_fvecs(&opts.features)?;
            rba::encode(&vectors, &model)?
        }
    };
    io::write_code_file(&codes, &opts.output)
        .with_context(|| format!("writing {}", opts.output.display()))?;
    Ok(codes)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub database_codes: PathBuf,
    pub query_codes: PathBuf,
    /// Precomputed ground truth (ivecs). When absent, `database_features`,
    /// `query_features`, and `k` must all be set so it can be computed.
    pub ground_truth: Option<PathBuf>,
    pub database_features: Option<PathBuf>,
    pub query_features: Option<PathBuf>,
    pub k: Option<usize>,
    /// Keep only the first K ranked results per query.
    pub truncate: Option<usize>,
    /// Query i is database item i; drop it from i's ranking and ground truth.
    pub remove_self: bool,
    /// Label for the `method` column of the report.
    pub method_label: String,
    pub report: PathBuf,
    /// Optional per-query AP CSV for plotting.
    pub per_query: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub map: f64,
    pub query_count: usize,
    pub code_length: usize,
}

fn load_ground_truth(opts: &EvalOptions, database_size: usize) -> Result<GroundTruth> {
    if let Some(path) = &opts.ground_truth {
        let matrix = io::read_ivecs(path)?;
        return Ok(GroundTruth::from_index_matrix(&matrix, database_size)?);
    }
    let (Some(db_path), Some(query_path), Some(k)) =
        (&opts.database_features, &opts.query_features, opts.k)
    else {
        bail!("no ground truth given; pass an ivecs file or database/query features plus k");
    };
    let database = io::read_fvecs(db_path)?;
    let queries = io::read_fvecs(query_path)?;
    Ok(eval::build_ground_truth(
        &database,
        &queries,
        k,
        opts.remove_self,
    )?)
}

/// Rank the database for every query by Hamming distance and report mAP.
/// The report row is appended so successive runs build one comparison CSV.
pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalSummary> {
    let database = io::read_code_file(&opts.database_codes)?;
    let queries = io::read_code_file(&opts.query_codes)?;
    if queries.count() == 0 {
        bail!("query code file {} is empty", opts.query_codes.display());
    }
    let truth = load_ground_truth(opts, database.count())?;
    if truth.query_count() != queries.count() {
        bail!(
            "ground truth covers {} queries but {} query codes were given",
            truth.query_count(),
            queries.count()
        );
    }
    let options = RankingOptions {
        truncate: opts.truncate,
        skip_identity: opts.remove_self,
    };
    let ranked = eval::hamming_rank(&database, &queries, &options)?;
    let precisions = eval::average_precisions(&ranked, &truth)?;
    let map = precisions.iter().sum::<f64>() / precisions.len() as f64;

    let mut row = String::new();
    if !opts.report.exists() {
        row.push_str("method,code_length,map\n");
    }
    row.push_str(&format!(
        "{},{},{map}\n",
        opts.method_label,
        database.code_length()
    ));
    append(&opts.report, &row)?;

    if let Some(path) = &opts.per_query {
        let mut text = String::from("query,ap\n");
        for (q, ap) in precisions.iter().enumerate() {
            text.push_str(&format!("{q},{ap}\n"));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EvalSummary {
        map,
        query_count: queries.count(),
        code_length: database.code_length(),
    })
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    file.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
