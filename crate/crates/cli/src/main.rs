//! `oinfo`: train MNIST MLPs, profile their layers by O-information, retrain
//! selected subnetworks, and check the estimator against Gaussian oracles.
//!
//! Exit codes: 0 success, 1 oracle checks failed, 2 usage error, 3 data
//! error, 4 numerical error.

mod config;
mod manifest;
mod svg;

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use oinfo_core::data::{
    load_mnist_dir, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use oinfo_core::experiments::{
    aggregate, layerwise_profile, lth_retrain_experiment, read_profile_csv, read_retrain_csv,
    write_aggregate_csv, write_profile_csv, write_retrain_csv, GroupKey, ProfileOptions,
    RetrainOptions, SelectionMethod, SelectionOptions,
};
use oinfo_core::gcmi::MixtureOptions;
use oinfo_core::mlp::{evaluate, extract_preactivations, init_network, train};
use oinfo_core::oracle::{run_suite, OracleOptions};
use oinfo_core::store::{load_checkpoint, save_activations, save_checkpoint};
use oinfo_core::{
    Dataset, EntropyOptions, FreezeMode, LayerId, NetworkConfig, Objective, SearchOptions,
    TrainConfig,
};

use manifest::{digests, manifest_path, RunManifest};

/// Exit code for a completed oracle run with failing checks.
const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "oinfo", version, about, args_override_self = true)]
struct Cli {
    /// Worker threads (1 = fully serial and bit-reproducible).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// File of `key = value` lines (long flag names); command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network and write an LTHC checkpoint.
    Train(TrainArgs),
    /// Per-layer synergy/redundancy profiles of trained checkpoints.
    Analyze(AnalyzeArgs),
    /// Retrain subnetworks chosen by each selection method.
    Retrain(RetrainArgs),
    /// Run the synthetic Gaussian oracle checks.
    Oracle(OracleArgs),
    /// Re-aggregate profile or retrain CSVs.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Directory holding the four uncompressed MNIST IDX files.
    #[arg(long, env = "OINFO_DATA_DIR", default_value = "data/mnist")]
    data: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EstimatorArgs {
    /// Largest k searched exhaustively; larger k are grown greedily.
    #[arg(long, default_value_t = 6)]
    exhaustive_ceiling: usize,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set, default_value_t = false)]
    no_bias_correction: bool,
    /// Diagonal jitter added before each Cholesky factorization.
    #[arg(long)]
    jitter: Option<f64>,
    /// Select/analyze from train-set activations instead of test-set ones.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set, default_value_t = false)]
    use_train_set: bool,
}

impl EstimatorArgs {
    fn entropy(&self) -> Result<EntropyOptions> {
        if let Some(j) = self.jitter {
            if !(j >= 0.0 && j.is_finite()) {
                bail!(oinfo_core::Error::InvalidConfig(format!("jitter {j} must be finite and >= 0")));
            }
        }
        Ok(EntropyOptions {
            bias_correct: !self.no_bias_correction,
            jitter: self.jitter,
        })
    }

    fn search(&self) -> SearchOptions {
        SearchOptions {
            exhaustive_ceiling: self.exhaustive_ceiling,
            layer: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated checkpoint paths.
    #[arg(long, required = true, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    /// synergy, redundancy or both.
    #[arg(long, default_value = "both")]
    objective: String,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value = "profile.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Directory for per-layer ACTV activation dumps.
    #[arg(long)]
    activations_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct RetrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, required = true, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1,
          default_value = "synergy,mi-mixture,mi-anova,random")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1,
          default_value = "2,4,6,8,10,12,14,16,18,20")]
    k_values: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// zero (ablate unselected neurons) or hold (freeze them at trained values).
    #[arg(long, default_value = "zero")]
    freeze_mode: String,
    #[arg(long, default_value_t = 0)]
    selection_seed: u64,
    #[arg(long, default_value_t = oinfo_core::gcmi::DEFAULT_MIXTURE_DRAWS)]
    mixture_draws: usize,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value = "retrain.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OracleArgs {
    /// Samples per synthetic dataset.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Seeds averaged per check.
    #[arg(long, default_value_t = 30)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1, conflicts_with = "retrain")]
    profile: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    retrain: Vec<PathBuf>,
    /// Group columns; defaults to layer,k,objective or method,k.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    group_by: Vec<String>,
    #[arg(long, default_value = "aggregate.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    oinfo_core::Error::InvalidConfig(msg.into()).into()
}

fn mnist_files(dir: &Path) -> Vec<PathBuf> {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn load_data(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok(load_mnist_dir(dir)?)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

struct Outcome {
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    metrics: serde_json::Map<String, serde_json::Value>,
    manifest_for: PathBuf,
    exit: u8,
}

impl Outcome {
    fn new(manifest_for: &Path) -> Self {
        Outcome {
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: vec![manifest_for.to_path_buf()],
            metrics: Default::default(),
            manifest_for: manifest_for.to_path_buf(),
            exit: 0,
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let (train_set, test_set) = load_data(&a.data.data)?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    cfg.validate()?;
    let ck = init_network(&NetworkConfig::mnist(), a.seed);
    let ck = train(&ck, &train_set, &test_set, &cfg)?;
    let acc = evaluate(&ck, &test_set)?;
    eprintln!("seed {}: test accuracy {acc:.4} after {} epochs", a.seed, a.epochs);
    save_checkpoint(&ck, &a.out)?;
    let mut out = Outcome::new(&a.out);
    out.seeds.push(a.seed);
    out.inputs = mnist_files(&a.data.data);
    out.metrics.insert("test_accuracy".into(), acc.into());
    if let Some(last) = ck.history.last() {
        out.metrics.insert("train_accuracy".into(), last.train_accuracy.into());
    }
    Ok(out)
}

fn parse_objectives(s: &str) -> Result<Vec<Objective>> {
    match s {
        "both" => Ok(Objective::BOTH.to_vec()),
        other => Ok(vec![other.parse()?]),
    }
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let opts = ProfileOptions {
        k_max: a.k_max,
        objectives: parse_objectives(&a.objective)?,
        search: a.estimator.search(),
        entropy: a.estimator.entropy()?,
    };
    let (train_set, test_set) = load_data(&a.data.data)?;
    let dataset = if a.estimator.use_train_set { &train_set } else { &test_set };
    if let Some(dir) = &a.activations_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let per_ck = a
        .checkpoint
        .par_iter()
        .map(|path| -> Result<_> {
            let ck = load_checkpoint(path)?;
            let mut dumps = Vec::new();
            if let Some(dir) = &a.activations_out {
                for layer in LayerId::ALL {
                    let act = extract_preactivations(&ck, dataset, layer)?;
                    let p = dir.join(format!("seed{}_{layer}.actv", ck.seed));
                    save_activations(&act, &p)?;
                    dumps.push(p);
                }
            }
            Ok((ck.seed, layerwise_profile(&ck, dataset, &opts)?, dumps))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outcome::new(&a.out);
    let mut rows = Vec::new();
    for (seed, r, dumps) in per_ck {
        out.seeds.push(seed);
        rows.extend(r);
        out.outputs.extend(dumps);
    }
    write_profile_csv(create(&a.out)?, &rows)?;
    if let Some(svg_path) = &a.svg {
        let agg = aggregate(&rows, &[GroupKey::Layer, GroupKey::K, GroupKey::Objective])?;
        write_file(svg_path, svg::profile_chart(&agg))?;
        out.outputs.push(svg_path.clone());
    }
    out.inputs = a.checkpoint.clone();
    out.inputs.extend(mnist_files(&a.data.data));
    out.metrics.insert("rows".into(), rows.len().into());
    Ok(out)
}

fn cmd_retrain(a: &RetrainArgs) -> Result<Outcome> {
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<SelectionMethod>())
        .collect::<oinfo_core::Result<Vec<_>>>()?;
    let freeze_mode: FreezeMode = a.freeze_mode.parse()?;
    let opts = RetrainOptions {
        methods,
        k_values: a.k_values.clone(),
        train: TrainConfig {
            learning_rate: a.learning_rate,
            batch_size: a.batch_size,
            epochs: a.epochs,
            seed: 0,
        },
        freeze_mode,
        selection_seed: a.selection_seed,
        use_train_set: a.estimator.use_train_set,
        selection: SelectionOptions {
            search: a.estimator.search(),
            entropy: a.estimator.entropy()?,
            mixture: MixtureOptions {
                draws: a.mixture_draws,
                seed: a.selection_seed,
            },
        },
    };
    opts.train.validate()?;
    let (train_set, test_set) = load_data(&a.data.data)?;
    let per_ck = a
        .checkpoint
        .par_iter()
        .map(|path| -> Result<_> {
            let ck = load_checkpoint(path)?;
            Ok((ck.seed, lth_retrain_experiment(&ck, &train_set, &test_set, &opts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outcome::new(&a.out);
    let mut rows = Vec::new();
    for (seed, r) in per_ck {
        out.seeds.push(seed);
        rows.extend(r);
    }
    write_retrain_csv(create(&a.out)?, &rows)?;
    if let Some(svg_path) = &a.svg {
        let agg = aggregate(&rows, &[GroupKey::Method, GroupKey::K])?;
        write_file(svg_path, svg::retrain_chart(&agg))?;
        out.outputs.push(svg_path.clone());
    }
    out.inputs = a.checkpoint.clone();
    out.inputs.extend(mnist_files(&a.data.data));
    out.metrics.insert("rows".into(), rows.len().into());
    Ok(out)
}

fn cmd_oracle(a: &OracleArgs) -> Result<Outcome> {
    let opts = OracleOptions {
        n: a.n,
        seeds: a.seeds,
        seed: a.seed,
        ..OracleOptions::default()
    };
    let checks = run_suite(&opts)?;
    let mut report = String::new();
    for c in &checks {
        report.push_str(&c.to_string());
        report.push('\n');
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    report.push_str(&format!("{} of {} checks passed\n", checks.len() - failed, checks.len()));
    print!("{report}");
    let target = a.out.clone().unwrap_or_else(|| PathBuf::from("oracle-report.txt"));
    let mut out = Outcome::new(&target);
    if let Some(p) = &a.out {
        write_file(p, &report)?;
    } else {
        out.outputs.clear();
    }
    out.seeds = (0..a.seeds as u64).map(|s| a.seed.wrapping_add(s)).collect();
    out.metrics.insert("failed".into(), failed.into());
    if failed > 0 {
        out.exit = EXIT_CHECKS_FAILED;
    }
    Ok(out)
}

fn cmd_report(a: &ReportArgs) -> Result<Outcome> {
    let keys = |default: &[GroupKey]| -> Result<Vec<GroupKey>> {
        if a.group_by.is_empty() {
            Ok(default.to_vec())
        } else {
            Ok(a.group_by
                .iter()
                .map(|k| k.parse())
                .collect::<oinfo_core::Result<_>>()?)
        }
    };
    let mut out = Outcome::new(&a.out);
    if !a.profile.is_empty() {
        let mut rows = Vec::new();
        for p in &a.profile {
            rows.extend(read_profile_csv(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?);
        }
        let keys = keys(&[GroupKey::Layer, GroupKey::K, GroupKey::Objective])?;
        let agg = aggregate(&rows, &keys)?;
        write_aggregate_csv(create(&a.out)?, &keys, &agg)?;
        if let Some(s) = &a.svg {
            write_file(s, svg::profile_chart(&agg))?;
            out.outputs.push(s.clone());
        }
        out.inputs = a.profile.clone();
    } else if !a.retrain.is_empty() {
        let mut rows = Vec::new();
        for p in &a.retrain {
            rows.extend(read_retrain_csv(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?);
        }
        let keys = keys(&[GroupKey::Method, GroupKey::K])?;
        let agg = aggregate(&rows, &keys)?;
        write_aggregate_csv(create(&a.out)?, &keys, &agg)?;
        if let Some(s) = &a.svg {
            write_file(s, svg::retrain_chart(&agg))?;
            out.outputs.push(s.clone());
        }
        out.inputs = a.retrain.clone();
    } else {
        return Err(usage("report needs --profile or --retrain"));
    }
    Ok(out)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Analyze(_) => "analyze",
        Command::Retrain(_) => "retrain",
        Command::Oracle(_) => "oracle",
        Command::Report(_) => "report",
        Command::Replay(_) => "replay",
    }
}

/// The argument list recorded for replay: the expanded command line with the
/// resolved data directory pinned, so environment defaults are not needed.
fn resolved_args(args: &[OsString], command: &Command) -> Vec<String> {
    let mut v: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let data = match command {
        Command::Train(a) => Some(&a.data.data),
        Command::Analyze(a) => Some(&a.data.data),
        Command::Retrain(a) => Some(&a.data.data),
        _ => None,
    };
    if let Some(d) = data {
        v.push(format!("--data={}", d.display()));
    }
    v
}

fn flags_json(command: &Command) -> Result<serde_json::Value> {
    Ok(match command {
        Command::Train(a) => serde_json::to_value(a)?,
        Command::Analyze(a) => serde_json::to_value(a)?,
        Command::Retrain(a) => serde_json::to_value(a)?,
        Command::Oracle(a) => serde_json::to_value(a)?,
        Command::Report(a) => serde_json::to_value(a)?,
        Command::Replay(a) => serde_json::to_value(a)?,
    })
}

fn run(raw: Vec<OsString>, allow_replay: bool) -> Result<u8> {
    let args = config::expand_config(raw)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print()?;
            return Ok(code);
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        // already initialized when replaying from within this process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let started = Instant::now();
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Retrain(a) => cmd_retrain(a)?,
        Command::Oracle(a) => cmd_oracle(a)?,
        Command::Report(a) => cmd_report(a)?,
        Command::Replay(a) => {
            if !allow_replay {
                return Err(usage("a manifest cannot replay another replay"));
            }
            let m = RunManifest::read(&a.manifest)?;
            return run(m.args.into_iter().map(OsString::from).collect(), false);
        }
    };
    let manifest = RunManifest {
        command: command_name(&cli.command).into(),
        args: resolved_args(&args, &cli.command),
        flags: flags_json(&cli.command)?,
        seeds: outcome.seeds,
        inputs: digests(&outcome.inputs)?,
        outputs: digests(&outcome.outputs)?,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        metrics: outcome.metrics,
    };
    manifest.write(&manifest_path(&outcome.manifest_for))?;
    Ok(outcome.exit)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<oinfo_core::Error>() {
            return if e.is_data_error() {
                EXIT_DATA
            } else if e.is_numerical_error() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect(), true) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
