//! Command-line front end: train, predict, sample, synth, benchmark and verify.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numerical
//! failure. Every file a command writes is a pure function of its flags and
//! inputs; wall-clock timings go only to the optional `--timings` file.

pub mod bench;
pub mod error;
pub mod io;
pub mod plan;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gpar_core::data::{
    file_sha256, first_violation, load_csv_leading_inputs, save_csv, Benchmark, MultiOutputDataset,
    OutputOrdering,
};
use gpar_core::gpar::{self, GparModel, McOptions, TrainOptions};
use gpar_core::kernels::KernelSpec;
use gpar_core::synth::{self, SynthConfig, Task};
use serde::Serialize;

use crate::error::CliError;
use crate::plan::{KernelPlan, Preset};

#[derive(Debug, Parser)]
#[command(
    name = "gpar",
    version,
    about = "Gaussian process autoregressive regression"
)]
pub struct Cli {
    /// Worker threads for layers, restarts, samples and trials [default: all cores].
    #[arg(long, global = true, env = "GPAR_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV dataset and save it.
    Train(TrainArgs),
    /// Predictive means and variances at test points.
    Predict(PredictArgs),
    /// Ancestral samples of all outputs at test points.
    Sample(SampleArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compare independent GPs with a GPAR variant on a real-data task.
    Benchmark(BenchArgs),
    /// Run the randomised oracle verification suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with a header row; empty cells are unobserved.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of leading columns that are inputs; the rest are outputs.
    #[arg(long, default_value_t = 1)]
    pub n_inputs: usize,
    /// Kernel file: `{"preset": ...}` or `{"layers": [...]}`.
    #[arg(long)]
    pub kernels: PathBuf,
    /// Output names in model order, comma separated [default: file order].
    #[arg(long, value_delimiter = ',')]
    pub ordering: Option<Vec<String>>,
    /// Where to write the model file.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Drop observed cells whose earlier outputs are missing instead of failing.
    #[arg(long)]
    pub repair: bool,
    /// Feed upstream posterior means instead of observations (trained sequentially).
    #[arg(long)]
    pub denoising: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Write wall-clock timings here.
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of test points: every model input, plus any known output values.
    #[arg(long)]
    pub points: PathBuf,
    /// Long-format CSV of predictions.
    #[arg(long)]
    pub out: PathBuf,
    /// Propagate this many Monte Carlo samples instead of plug-in means.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample each layer jointly over all test points.
    #[arg(long)]
    pub joint: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    /// Long-format CSV of samples.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw whole functions over the test points instead of independent points.
    #[arg(long)]
    pub joint: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// functional, noise-scheme-1, noise-scheme-2 or noise-scheme-3.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// JSON generator config; flags given alongside override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Multiplies every noise draw.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Evenly spaced inputs without stratified jitter.
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise-free ground truth at the same inputs.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_benchmark)]
    pub task: Benchmark,
    /// Directory holding eeg.csv, jura.csv or exchange.csv.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// JSON metrics report.
    #[arg(long)]
    pub out: PathBuf,
    /// Kernel construction [default: gpar-nl for eeg and jura, gpar-l-nl for exchange].
    #[arg(long, value_enum)]
    pub variant: Option<Preset>,
    #[arg(long)]
    pub denoising: bool,
    /// Fit on log outputs; predictions are mapped back before scoring.
    #[arg(long)]
    pub log_transform: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Monte Carlo samples for the GPAR predictive density.
    #[arg(long, default_value_t = 200)]
    pub mc_samples: usize,
    /// Refuse to run unless the data file has this SHA-256.
    #[arg(long)]
    pub expect_sha256: Option<String>,
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Randomised density-level independence trials.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Retraining trials for the deletion invariance.
    #[arg(long, default_value_t = 10)]
    pub construction_trials: usize,
    /// Random operators per fixed-point suite.
    #[arg(long, default_value_t = 100)]
    pub operators: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    s.parse()
}

#[derive(Debug, Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

const TOOL: Tool = Tool {
    name: "gpar",
    version: env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Serialize)]
struct FileInfo {
    path: String,
    sha256: String,
}

impl FileInfo {
    fn of(path: &Path) -> Result<Self, CliError> {
        Ok(FileInfo {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        })
    }
}

#[derive(Debug, Serialize)]
struct LayerReport {
    position: usize,
    output: String,
    rows: usize,
    log_marginal_likelihood: f64,
    noise_variance: f64,
    mean_offset: f64,
    jitter: f64,
    best_restart: usize,
    kernel: KernelSpec,
}

#[derive(Debug, Serialize)]
struct TrainReport {
    tool: Tool,
    command: &'static str,
    seed: u64,
    data: FileInfo,
    data_fingerprint: String,
    kernels: FileInfo,
    ordering: Vec<String>,
    denoising: bool,
    dropped_cells: usize,
    restarts: usize,
    max_iter: usize,
    total_log_evidence: f64,
    layers: Vec<LayerReport>,
}

#[derive(Debug, Serialize)]
struct PredictReport {
    tool: Tool,
    command: &'static str,
    seed: Option<u64>,
    model: FileInfo,
    model_data_fingerprint: String,
    points: FileInfo,
    mode: gpar::PredictMode,
    samples: Option<usize>,
    joint: bool,
    output: String,
}

#[derive(Debug, Serialize)]
struct BenchReport<'a> {
    tool: Tool,
    command: &'static str,
    seed: u64,
    data: FileInfo,
    data_fingerprint: String,
    #[serde(flatten)]
    outcome: &'a bench::BenchOutcome,
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    tool: Tool,
    command: &'static str,
    seed: u64,
    checks: &'a [verify::CheckResult],
    passed: bool,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code() as u8;
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut impl Write) -> Result<(), CliError> {
    let pool = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::Train(a) => cmd_train(&a, &mut buf),
        Command::Predict(a) => cmd_predict(&a, &mut buf),
        Command::Sample(a) => cmd_sample(&a, &mut buf),
        Command::Synth(a) => cmd_synth(&a, &mut buf),
        Command::Benchmark(a) => cmd_benchmark(&a, &mut buf),
        Command::Verify(a) => cmd_verify(&a, &mut buf),
    });
    let _ = out.write_all(&buf);
    result
}

fn say(out: &mut impl Write, line: std::fmt::Arguments) {
    let _ = writeln!(out, "{line}");
}

fn check_outputs<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<(), CliError> {
    paths.into_iter().try_for_each(|p| io::check_output(p))
}

fn ordering_of(
    ds: &MultiOutputDataset,
    names: Option<&[String]>,
) -> Result<OutputOrdering, CliError> {
    match names {
        Some(n) => {
            Ok(OutputOrdering::from_names(ds, n).map_err(|e| CliError::Config(e.to_string()))?)
        }
        None => Ok(OutputOrdering::identity(ds.n_outputs())),
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    io::check_input(&a.data)?;
    if !a.kernels.is_file() {
        return Err(CliError::Config(format!(
            "kernel file {}: no such file",
            a.kernels.display()
        )));
    }
    check_outputs([&a.model].into_iter().chain(&a.report).chain(&a.timings))?;
    let plan = KernelPlan::from_path(&a.kernels)?;
    let ds = load_csv_leading_inputs(&a.data, a.n_inputs)?;
    let ord = ordering_of(&ds, a.ordering.as_deref())?;
    if !a.repair {
        if let Some(v) = first_violation(&ds, &ord)? {
            let names = ds.output_names();
            return Err(CliError::Data(format!(
                "{}: data row {} observes {} but {} (earlier in the ordering) is missing; \
                 the data must be closed downwards, or pass --repair to drop such cells",
                a.data.display(),
                v.row + 1,
                names[v.output],
                names[v.missing_predecessor]
            )));
        }
    }
    let specs = plan.specs(&ds, &ord);
    let opts = TrainOptions {
        restarts: a.restarts,
        max_iter: a.max_iter,
        seed: a.seed,
        repair: a.repair,
        ..Default::default()
    };
    let t = Instant::now();
    let model = if a.denoising {
        gpar::train_denoising(&ds, &ord, &specs, &opts)?
    } else {
        gpar::train(&ds, &ord, &specs, &opts)?
    };
    let seconds = t.elapsed().as_secs_f64();
    gpar::save(&model, &a.model)?;
    let total = model.log_evidence();
    if let Some(path) = &a.report {
        let layers = model
            .layers
            .iter()
            .map(|l| LayerReport {
                position: l.position,
                output: model.output_names[l.output].clone(),
                rows: l.rows.len(),
                log_marginal_likelihood: l.log_marginal_likelihood(),
                noise_variance: l.noise_variance(),
                mean_offset: l.mean_offset(),
                jitter: l.fitted().jitter(),
                best_restart: l.best_restart,
                kernel: l.spec(),
            })
            .collect();
        let report = TrainReport {
            tool: TOOL,
            command: "train",
            seed: a.seed,
            data: FileInfo::of(&a.data)?,
            data_fingerprint: ds.fingerprint(),
            kernels: FileInfo::of(&a.kernels)?,
            ordering: ord
                .as_slice()
                .iter()
                .map(|&o| ds.output_names()[o].clone())
                .collect(),
            denoising: a.denoising,
            dropped_cells: model.dropped_cells,
            restarts: a.restarts,
            max_iter: a.max_iter,
            total_log_evidence: total,
            layers,
        };
        io::write_json(path, &report)?;
    }
    if let Some(path) = &a.timings {
        io::write_json(path, &serde_json::json!({ "train_seconds": seconds }))?;
    }
    say(
        out,
        format_args!(
            "trained {} layers on {} rows; total log evidence {total}",
            model.layers.len(),
            ds.len()
        ),
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<GparModel, CliError> {
    io::check_input(path)?;
    Ok(gpar::load(path)?)
}

fn predict_report(
    path: &Path,
    model_path: &Path,
    model: &GparModel,
    points: &Path,
    mc: Option<usize>,
    seed: u64,
    joint: bool,
    output: &Path,
) -> Result<(), CliError> {
    let report = PredictReport {
        tool: TOOL,
        command: "predict",
        seed: mc.map(|_| seed),
        model: FileInfo::of(model_path)?,
        model_data_fingerprint: model.data_fingerprint.clone(),
        points: FileInfo::of(points)?,
        mode: if mc.is_some() {
            gpar::PredictMode::MonteCarlo
        } else {
            gpar::PredictMode::PlugIn
        },
        samples: mc,
        joint,
        output: output.display().to_string(),
    };
    io::write_json(path, &report)
}

pub fn cmd_predict(a: &PredictArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.mc == Some(0) {
        return Err(CliError::Config("--mc needs at least 1 sample".into()));
    }
    io::check_input(&a.points)?;
    check_outputs([&a.out].into_iter().chain(&a.report))?;
    let model = load_model(&a.model)?;
    let pts = io::read_test_points(&a.points, &model)?;
    let pred = match a.mc {
        None => gpar::predict_plugin(&model, &pts.inputs, pts.known.as_ref())?,
        Some(s) => gpar::predict_mc(
            &model,
            &pts.inputs,
            pts.known.as_ref(),
            &McOptions {
                samples: s,
                seed: a.seed,
                joint: a.joint,
            },
        )?,
    };
    io::write_predictions(&a.out, &model, &pts.inputs, &pred)?;
    if let Some(r) = &a.report {
        predict_report(
            r, &a.model, &model, &a.points, a.mc, a.seed, a.joint, &a.out,
        )?;
    }
    say(
        out,
        format_args!(
            "predicted {} outputs at {} points",
            model.n_outputs(),
            pts.inputs.len()
        ),
    );
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.samples == 0 {
        return Err(CliError::Config("--samples must be at least 1".into()));
    }
    io::check_input(&a.points)?;
    check_outputs([&a.out].into_iter().chain(&a.report))?;
    let model = load_model(&a.model)?;
    let pts = io::read_test_points(&a.points, &model)?;
    let opts = McOptions {
        samples: a.samples,
        seed: a.seed,
        joint: a.joint,
    };
    let pred = gpar::predict_mc(&model, &pts.inputs, pts.known.as_ref(), &opts)?;
    io::write_samples(&a.out, &model, &pts.inputs, &pred)?;
    if let Some(r) = &a.report {
        let report = PredictReport {
            tool: TOOL,
            command: "sample",
            seed: Some(a.seed),
            model: FileInfo::of(&a.model)?,
            model_data_fingerprint: model.data_fingerprint.clone(),
            points: FileInfo::of(&a.points)?,
            mode: gpar::PredictMode::MonteCarlo,
            samples: Some(a.samples),
            joint: a.joint,
            output: a.out.display().to_string(),
        };
        io::write_json(r, &report)?;
    }
    say(
        out,
        format_args!("drew {} samples at {} points", a.samples, pts.inputs.len()),
    );
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut impl Write) -> Result<(), CliError> {
    check_outputs([&a.out].into_iter().chain(&a.truth))?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, SynthConfig>(de)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => match a.task {
            Some(task) => SynthConfig {
                task,
                ..Default::default()
            },
            None => return Err(CliError::Config("synth needs --task or --config".into())),
        },
    };
    if let Some(t) = a.task {
        cfg.task = t;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.lo {
        cfg.lo = v;
    }
    if let Some(v) = a.hi {
        cfg.hi = v;
    }
    if let Some(v) = a.noise_scale {
        cfg.noise_scale = v;
    }
    if a.no_jitter {
        cfg.jitter = false;
    }
    let d = synth::generate(&cfg)?;
    save_csv(&a.out, &d.data)?;
    if let Some(p) = &a.truth {
        save_csv(p, &d.truth)?;
    }
    say(
        out,
        format_args!(
            "wrote {} rows of {} to {}",
            d.data.len(),
            cfg.task.name(),
            a.out.display()
        ),
    );
    Ok(())
}

pub fn cmd_benchmark(a: &BenchArgs, out: &mut impl Write) -> Result<(), CliError> {
    check_outputs([&a.out].into_iter().chain(&a.timings))?;
    let (ds, sha) = bench::load_task(a.task, &a.data_dir)?;
    if let Some(want) = &a.expect_sha256 {
        if !want.eq_ignore_ascii_case(&sha) {
            return Err(CliError::Data(format!(
                "{}: SHA-256 is {sha}, expected {want}",
                a.data_dir.join(a.task.file_name()).display()
            )));
        }
    }
    let mut opts = bench::BenchOptions::new(a.task);
    if let Some(v) = a.variant {
        opts.variant = v;
    }
    opts.denoising = a.denoising;
    opts.log_transform = a.log_transform;
    opts.seed = a.seed;
    opts.restarts = a.restarts;
    opts.max_iter = a.max_iter;
    opts.mc_samples = a.mc_samples;
    if opts.mc_samples == 0 {
        return Err(CliError::Config("--mc-samples must be at least 1".into()));
    }
    let (outcome, timings) = bench::run_on(&ds, &opts)?;
    let report = BenchReport {
        tool: TOOL,
        command: "benchmark",
        seed: a.seed,
        data: FileInfo {
            path: a.data_dir.join(a.task.file_name()).display().to_string(),
            sha256: sha,
        },
        data_fingerprint: ds.fingerprint(),
        outcome: &outcome,
    };
    io::write_json(&a.out, &report)?;
    if let Some(p) = &a.timings {
        io::write_json(p, &timings)?;
    }
    let _ = write!(
        out,
        "{}",
        bench::human_summary(&outcome, a.timings.as_ref().map(|_| &timings))
    );
    Ok(())
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut impl Write) -> Result<(), CliError> {
    if let Some(r) = &a.report {
        io::check_output(r)?;
    }
    let opts = verify::VerifyOptions {
        theorem1_trials: a.trials,
        construction_trials: a.construction_trials,
        operator_trials: a.operators,
        seed: a.seed,
    };
    let checks = verify::run_all(&opts)?;
    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        let cmp = if c.name == "negative-control" {
            ">"
        } else {
            "<="
        };
        say(
            out,
            format_args!(
                "{} {:<22} trials {:>4}  worst {:.3e} {cmp} {:.0e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.trials,
                c.worst,
                c.tolerance
            ),
        );
    }
    if let Some(r) = &a.report {
        io::write_json(
            r,
            &VerifyReport {
                tool: TOOL,
                command: "verify",
                seed: a.seed,
                checks: &checks,
                passed,
            },
        )?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Numerical("verification failed".into()))
    }
}
