use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use reprint_core::embedding::{read_any_binary, sniff_magic, SOFT_MAGIC};
use reprint_core::geometry::{write_geometry_csv, write_means_csv};
use reprint_core::harness::{
    export_2d, run_benchmark, synth_dataset, write_points_csv, BenchOptions, Method, MethodSpec,
    SynthSpec,
};
use reprint_core::{
    evaluate, read_embeddings, run_baseline, train, write_embeddings, write_soft,
    BaselineConfig, BaselineMethod, Error, Format, LabelStrategy, LabeledEmbeddingSet, MlpConfig,
    Optimizer, RankPolicy, ReprintConfig, Result, SoftLabeledSet,
};

#[derive(Parser)]
#[command(name = "reprint", version, about = "Hidden-space augmentation for imbalanced classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Sample a synthetic anisotropic Gaussian mixture.
    Synth(SynthArgs),
    /// Dump per-class principal component statistics as CSV.
    PcaInfo(PcaInfoArgs),
    /// Augment a labeled embedding file and write soft-labeled examples.
    Augment(AugmentArgs),
    /// Train the MLP classifier and report test accuracy.
    TrainEval(TrainEvalArgs),
    /// Run the imbalance benchmark over methods, n_small values and seeds.
    Bench(BenchArgs),
    /// Project embedding sets onto their top two principal components.
    #[command(name = "export-2d")]
    Export2d(ExportArgs),
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Config(format!("cannot parse `{p}` in list `{s}`")))
        })
        .collect()
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Leading covariance eigenvalues, comma separated.
    #[arg(long, default_value = "16,12,9,6,4")]
    spectrum: String,
    /// Eigenvalue of the remaining coordinates.
    #[arg(long, default_value_t = 0.5)]
    tail: f64,
    #[arg(long, default_value_t = 3.0)]
    mean_scale: f64,
    #[arg(long, default_value_t = 500)]
    train_per_class: usize,
    #[arg(long, default_value_t = 200)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "binary")]
    format: String,
    /// Training pool output.
    #[arg(long)]
    out: PathBuf,
    /// Test split output.
    #[arg(long)]
    test_out: PathBuf,
}

fn synth(args: SynthArgs) -> Result<()> {
    let top: Vec<f64> = parse_list(&args.spectrum)?;
    let spec = SynthSpec {
        mean_scale: args.mean_scale,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        seed: args.seed,
        ..SynthSpec::planted(args.classes, args.dim, &top, args.tail)
    };
    let (pool, test) = synth_dataset(&spec)?;
    let format: Format = args.format.parse()?;
    write_embeddings(&pool, &args.out, format)?;
    write_embeddings(&test, &args.test_out, format)?;
    eprintln!("wrote {} pool and {} test records", pool.len(), test.len());
    Ok(())
}

/// Rank selection flags shared by several subcommands.
#[derive(Args, Clone, Default)]
struct RankArgs {
    /// Fixed number of source-class components.
    #[arg(long)]
    pcs_source: Option<usize>,
    /// Fixed number of target-class components.
    #[arg(long)]
    pcs_target: Option<usize>,
    /// Explained-variance threshold in (0, 1], used for whichever side has no fixed count.
    #[arg(long)]
    evr: Option<f64>,
}

impl RankArgs {
    fn policies(&self) -> (RankPolicy, RankPolicy) {
        let pick = |fixed: Option<usize>| match (fixed, self.evr) {
            (Some(h), _) => RankPolicy::Fixed(h),
            (None, Some(t)) => RankPolicy::ExplainedVariance(t),
            (None, None) => RankPolicy::Fixed(5),
        };
        (pick(self.pcs_source), pick(self.pcs_target))
    }
}

#[derive(Args)]
struct PcaInfoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "binary")]
    format: String,
    /// Fixed number of components.
    #[arg(long)]
    pcs: Option<usize>,
    #[arg(long)]
    evr: Option<f64>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of class means.
    #[arg(long)]
    means_out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn pca_info(args: PcaInfoArgs) -> Result<()> {
    let set = read_embeddings(&args.input, args.format.parse()?)?;
    let policy = match (args.pcs, args.evr) {
        (Some(h), _) => RankPolicy::Fixed(h),
        (None, Some(t)) => RankPolicy::ExplainedVariance(t),
        (None, None) => RankPolicy::Fixed(set.dim()),
    };
    policy.validate()?;
    let mut out = output(args.out.as_deref())?;
    write_geometry_csv(&set, policy, &mut out)?;
    out.flush()?;
    if let Some(p) = &args.means_out {
        let mut m = BufWriter::new(File::create(p)?);
        write_means_csv(&set, &mut m)?;
        m.flush()?;
    }
    Ok(())
}

/// Method-specific knobs shared by `augment` and `bench`.
#[derive(Args, Clone, Default)]
struct MethodArgs {
    #[command(flatten)]
    rank: RankArgs,
    #[arg(long)]
    label_strategy: Option<String>,
    /// Positivity threshold for label refinement.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    smote_k: Option<usize>,
    #[arg(long)]
    mixup_alpha: Option<f64>,
    #[arg(long)]
    we_lambda: Option<f64>,
}

impl MethodArgs {
    fn method_spec(&self, name: &str, seed: u64) -> Result<MethodSpec> {
        let method = match name {
            "none" => Method::None,
            "reprint" => {
                let (source_policy, target_policy) = self.rank.policies();
                let cfg = ReprintConfig {
                    source_policy,
                    target_policy,
                    label_strategy: match &self.label_strategy {
                        Some(s) => s.parse()?,
                        None => LabelStrategy::default(),
                    },
                    positivity_epsilon: self.epsilon.unwrap_or(0.0),
                    seed,
                };
                cfg.validate()?;
                Method::Reprint(cfg)
            }
            other => {
                let mut cfg = BaselineConfig::new(other.parse::<BaselineMethod>()?);
                cfg.seed = seed;
                if let Some(v) = self.noise_sigma {
                    cfg.noise_sigma = v;
                }
                if let Some(v) = self.smote_k {
                    cfg.smote_k = v;
                }
                if let Some(v) = self.mixup_alpha {
                    cfg.mixup_alpha = v;
                }
                if let Some(v) = self.we_lambda {
                    cfg.we_lambda = v;
                }
                cfg.validate()?;
                Method::Baseline(cfg)
            }
        };
        Ok(MethodSpec::new(name, method))
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// reprint, upsample, noise, smote, mixup, we, ld or ge3.
    #[arg(long)]
    method: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "binary")]
    format: String,
    /// Soft-labeled (EMBS) output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prepend the original examples (one-hot) to the output.
    #[arg(long)]
    include_original: bool,
    #[command(flatten)]
    knobs: MethodArgs,
}

fn augment(args: AugmentArgs) -> Result<()> {
    let set = read_embeddings(&args.input, args.format.parse()?)?;
    let spec = args.knobs.method_spec(&args.method, args.seed)?;
    let augmented = match &spec.method {
        Method::None => SoftLabeledSet::empty(set.dim(), set.vocab().clone()),
        Method::Reprint(cfg) => reprint_core::augment_dataset(&set, cfg)?,
        Method::Baseline(cfg) => {
            let aug = run_baseline(&set, cfg)?;
            for w in &aug.warnings {
                eprintln!("warning: {w}");
            }
            aug.set
        }
    };
    let out = if args.include_original {
        let mut all = set.to_soft();
        all.extend(&augmented)?;
        all
    } else {
        augmented
    };
    write_soft(&out, &args.out)?;
    eprintln!("wrote {} records", out.len());
    Ok(())
}

#[derive(Args, Clone, Default)]
struct MlpArgs {
    /// Hidden layer widths, comma separated; empty for softmax regression.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl MlpArgs {
    fn config(&self, seed: u64) -> Result<MlpConfig> {
        let mut cfg = MlpConfig {
            seed,
            ..Default::default()
        };
        if let Some(h) = &self.hidden {
            cfg.hidden_sizes = parse_list(h)?;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = &self.optimizer {
            cfg.optimizer = v.parse::<Optimizer>()?;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainEvalArgs {
    /// EMB1 or EMBS training file (JSONL with --format jsonl).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "binary")]
    format: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    mlp: MlpArgs,
}

fn read_soft_any(path: &Path, format: Format) -> Result<SoftLabeledSet> {
    match format {
        Format::Binary => read_any_binary(path),
        Format::Jsonl => Ok(read_embeddings(path, format)?.to_soft()),
    }
}

fn read_labeled(path: &Path, format: Format) -> Result<LabeledEmbeddingSet> {
    if format == Format::Binary && sniff_magic(path)? == SOFT_MAGIC {
        return Ok(read_any_binary(path)?.to_hard());
    }
    read_embeddings(path, format)
}

fn train_eval(args: TrainEvalArgs) -> Result<()> {
    let format: Format = args.format.parse()?;
    let train_set = read_soft_any(&args.train, format)?;
    let test = read_embeddings(&args.test, format)?;
    let model = train(&train_set, &args.mlp.config(args.seed)?)?;
    let accuracy = evaluate(&model, &test)?;
    if let Some(p) = &args.model_out {
        model.save(p)?;
    }
    println!("{}", serde_json::json!({ "accuracy": accuracy, "test_size": test.len() }));
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    /// TOML file of `flag-name = value` pairs; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    n_small: Option<String>,
    #[arg(long)]
    n_large: Option<usize>,
    /// Explicit comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Number of consecutive seeds starting at --base-seed, used when --seeds is absent.
    #[arg(long)]
    seed_count: Option<u64>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Pin the minority classes (comma-separated ids) for every seed.
    #[arg(long)]
    minority: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Per-seed CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary_out: Option<PathBuf>,
    #[command(flatten)]
    knobs: MethodArgs,
    #[command(flatten)]
    mlp: MlpArgs,
}

/// Flat key/value configuration; keys are long flag names.
struct ConfigFile(BTreeMap<String, String>);

const CONFIG_KEYS: &[&str] = &[
    "pool", "test", "format", "dataset", "methods", "n-small", "n-large", "seeds", "seed-count",
    "base-seed", "minority", "workers", "out", "summary-out", "pcs-source", "pcs-target", "evr",
    "label-strategy", "epsilon", "noise-sigma", "smote-k", "mixup-alpha", "we-lambda", "hidden",
    "epochs", "batch-size", "lr", "optimizer", "weight-decay",
];

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self(BTreeMap::new()));
        };
        let text = std::fs::read_to_string(path)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (key, value) in table {
            let key = key.replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            map.insert(key, text);
        }
        Ok(Self(map))
    }

    fn fill<T: FromStr>(&self, cli: &mut Option<T>, key: &str) -> Result<()> {
        if cli.is_none() {
            if let Some(v) = self.0.get(key) {
                *cli = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("config `{key}`: bad value `{v}`")))?,
                );
            }
        }
        Ok(())
    }
}

fn bench(mut a: BenchArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    cfg.fill(&mut a.pool, "pool")?;
    cfg.fill(&mut a.test, "test")?;
    cfg.fill(&mut a.format, "format")?;
    cfg.fill(&mut a.dataset, "dataset")?;
    cfg.fill(&mut a.methods, "methods")?;
    cfg.fill(&mut a.n_small, "n-small")?;
    cfg.fill(&mut a.n_large, "n-large")?;
    cfg.fill(&mut a.seeds, "seeds")?;
    cfg.fill(&mut a.seed_count, "seed-count")?;
    cfg.fill(&mut a.base_seed, "base-seed")?;
    cfg.fill(&mut a.minority, "minority")?;
    cfg.fill(&mut a.workers, "workers")?;
    cfg.fill(&mut a.out, "out")?;
    cfg.fill(&mut a.summary_out, "summary-out")?;
    cfg.fill(&mut a.knobs.rank.pcs_source, "pcs-source")?;
    cfg.fill(&mut a.knobs.rank.pcs_target, "pcs-target")?;
    cfg.fill(&mut a.knobs.rank.evr, "evr")?;
    cfg.fill(&mut a.knobs.label_strategy, "label-strategy")?;
    cfg.fill(&mut a.knobs.epsilon, "epsilon")?;
    cfg.fill(&mut a.knobs.noise_sigma, "noise-sigma")?;
    cfg.fill(&mut a.knobs.smote_k, "smote-k")?;
    cfg.fill(&mut a.knobs.mixup_alpha, "mixup-alpha")?;
    cfg.fill(&mut a.knobs.we_lambda, "we-lambda")?;
    cfg.fill(&mut a.mlp.hidden, "hidden")?;
    cfg.fill(&mut a.mlp.epochs, "epochs")?;
    cfg.fill(&mut a.mlp.batch_size, "batch-size")?;
    cfg.fill(&mut a.mlp.lr, "lr")?;
    cfg.fill(&mut a.mlp.optimizer, "optimizer")?;
    cfg.fill(&mut a.mlp.weight_decay, "weight-decay")?;

    let missing = |what: &str| Error::Config(format!("--{what} is required"));
    let format: Format = a.format.as_deref().unwrap_or("binary").parse()?;
    let pool = read_labeled(&a.pool.ok_or_else(|| missing("pool"))?, format)?;
    let test = read_labeled(&a.test.ok_or_else(|| missing("test"))?, format)?;
    let methods = a
        .methods
        .as_deref()
        .unwrap_or("none,reprint,upsample,ge3");
    let methods = methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| a.knobs.method_spec(m, 0))
        .collect::<Result<Vec<_>>>()?;
    let n_small: Vec<usize> = parse_list(a.n_small.as_deref().unwrap_or("32,64,128"))?;
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => parse_list(s)?,
        None => {
            let base = a.base_seed.unwrap_or(0);
            (base..base + a.seed_count.unwrap_or(5)).collect()
        }
    };
    let n_large = a.n_large.ok_or_else(|| missing("n-large"))?;
    let mut options = BenchOptions::new(a.dataset.unwrap_or_else(|| "dataset".into()), n_large);
    options.workers = a.workers;
    options.minority = a.minority.as_deref().map(parse_list).transpose()?;
    let mlp = a.mlp.config(0)?;

    let report = run_benchmark(&pool, &test, &methods, &n_small, &seeds, &mlp, &options)?;
    let mut out = output(a.out.as_deref())?;
    report.write_rows_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &a.summary_out {
        let mut s = BufWriter::new(File::create(p)?);
        report.write_summary_csv(&mut s)?;
        s.flush()?;
    }
    eprint!("{}", report.render_table());
    Ok(())
}

#[derive(Args)]
struct ExportArgs {
    /// `name=path` pairs; a bare path is named by its file stem.
    #[arg(long = "in", required = true)]
    inputs: Vec<String>,
    #[arg(long, default_value = "binary")]
    format: String,
    /// Name points `set:class` instead of `set`.
    #[arg(long)]
    split_classes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn export(args: ExportArgs) -> Result<()> {
    let format: Format = args.format.parse()?;
    let mut sets: Vec<(String, Vec<Vec<f32>>)> = Vec::new();
    for spec in &args.inputs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_owned(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        let set = read_labeled(&path, format)?;
        for (label, v) in set.iter() {
            let group = if args.split_classes {
                format!("{name}:{}", set.vocab().name(label))
            } else {
                name.clone()
            };
            match sets.iter_mut().find(|(n, _)| *n == group) {
                Some((_, vs)) => vs.push(v.to_vec()),
                None => sets.push((group, vec![v.to_vec()])),
            }
        }
    }
    let points = export_2d(&sets)?;
    let mut out = output(args.out.as_deref())?;
    write_points_csv(&points, &mut out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::PcaInfo(a) => pca_info(a),
        Command::Augment(a) => augment(a),
        Command::TrainEval(a) => train_eval(a),
        Command::Bench(a) => bench(a),
        Command::Export2d(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}

