//! Real-data benchmark protocol: an independent-GP baseline against a GPAR
//! variant on the task's fixed train/test masks.

use std::path::Path;
use std::time::Instant;

use gpar_core::data::{
    benchmark_split, file_sha256, load_csv, Benchmark, BenchmarkSplit, MultiOutputDataset,
    OutputOrdering,
};
use gpar_core::gpar::{
    predict_mc, predict_plugin, train, train_denoising, GparModel, Known, McOptions, TrainOptions,
};
use gpar_core::kernels::Inputs;
use gpar_core::synth::{mae, mll, smse};
use serde::Serialize;

use crate::error::CliError;
use crate::plan::{KernelPlan, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Smse,
    Mae,
}

/// Headline metric and soft threshold for the GPAR variant of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    pub metric: Metric,
    pub threshold: f64,
}

pub fn default_target(task: Benchmark) -> Target {
    match task {
        Benchmark::Eeg => Target {
            metric: Metric::Smse,
            threshold: 0.5,
        },
        Benchmark::Jura => Target {
            metric: Metric::Mae,
            threshold: 0.46,
        },
        Benchmark::Exchange => Target {
            metric: Metric::Smse,
            threshold: 0.15,
        },
    }
}

pub fn default_variant(task: Benchmark) -> Preset {
    match task {
        Benchmark::Eeg | Benchmark::Jura => Preset::GparNl,
        Benchmark::Exchange => Preset::GparLNl,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOptions {
    pub task: Benchmark,
    pub variant: Preset,
    pub denoising: bool,
    /// Fit on `ln y` and report metrics after mapping predictions back.
    pub log_transform: bool,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Monte Carlo samples for the GPAR predictive density.
    pub mc_samples: usize,
}

impl BenchOptions {
    pub fn new(task: Benchmark) -> Self {
        BenchOptions {
            task,
            variant: default_variant(task),
            denoising: false,
            log_transform: false,
            seed: 0,
            restarts: 5,
            max_iter: 200,
            mc_samples: 200,
        }
    }

    pub fn method_label(&self) -> String {
        let base = self.variant.label();
        if self.denoising {
            format!("D-{base}")
        } else {
            base.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputScore {
    pub output: String,
    pub test_points: usize,
    pub smse: f64,
    pub mae: f64,
    pub mll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: String,
    /// Averages over the target outputs.
    pub smse: f64,
    pub mae: f64,
    pub mll: f64,
    pub outputs: Vec<OutputScore>,
}

impl MethodScore {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Smse => self.smse,
            Metric::Mae => self.mae,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub task: Benchmark,
    pub options: BenchOptions,
    pub train_cells: usize,
    pub test_cells: usize,
    pub methods: Vec<MethodScore>,
    pub target: Target,
    pub meets_target: bool,
    pub beats_igp: bool,
}

/// Wall-clock seconds per stage, i.e. the parts that differ between runs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchTimings {
    /// Baseline training and prediction together.
    pub igp: f64,
    pub gpar_train: f64,
    pub gpar_predict: f64,
}

pub fn load_task(task: Benchmark, dir: &Path) -> Result<(MultiOutputDataset, String), CliError> {
    let path = dir.join(task.file_name());
    if !path.is_file() {
        let l = task.layout();
        return Err(CliError::Data(format!(
            "{} not found. Download the {} data from {} and save it as CSV with header {} ({} rows, no missing values).",
            path.display(),
            task.name(),
            task.source_url(),
            l.inputs.iter().chain(l.outputs).copied().collect::<Vec<_>>().join(","),
            l.rows,
        )));
    }
    let sha = file_sha256(&path)?;
    Ok((load_csv(&path, &task.schema())?, sha))
}

/// Per test row, every value the training split holds at that location.
fn known_at(split: &BenchmarkSplit) -> Result<Known, CliError> {
    let rows: Vec<Vec<Option<f64>>> = split
        .test_rows
        .iter()
        .map(|&r| split.train.row_values(r))
        .collect();
    Ok(Known::new(&rows, split.train.n_outputs())?)
}

struct Predicted {
    /// By output column: point prediction and Gaussian predictive moments per test row.
    mean: Vec<Vec<f64>>,
    density_mean: Vec<Vec<f64>>,
    density_var: Vec<Vec<f64>>,
}

fn score(
    label: &str,
    split: &BenchmarkSplit,
    truth: &MultiOutputDataset,
    p: &Predicted,
) -> Result<MethodScore, CliError> {
    let mut outputs = Vec::new();
    for o in 0..split.test.n_outputs() {
        let idx: Vec<usize> = (0..split.test.len())
            .filter(|&t| split.test.is_observed(t, o))
            .collect();
        if idx.is_empty() {
            continue;
        }
        let y: Vec<f64> = idx
            .iter()
            .map(|&t| truth.value(t, o).expect("target observed"))
            .collect();
        let pick = |v: &[f64]| idx.iter().map(|&t| v[t]).collect::<Vec<_>>();
        outputs.push(OutputScore {
            output: split.test.output_names()[o].clone(),
            test_points: idx.len(),
            smse: smse(&pick(&p.mean[o]), &y)?,
            mae: mae(&pick(&p.mean[o]), &y)?,
            mll: mll(&pick(&p.density_mean[o]), &pick(&p.density_var[o]), &y)?,
        });
    }
    let avg =
        |f: fn(&OutputScore) -> f64| outputs.iter().map(f).sum::<f64>() / outputs.len() as f64;
    Ok(MethodScore {
        method: label.into(),
        smse: avg(|s| s.smse),
        mae: avg(|s| s.mae),
        mll: avg(|s| s.mll),
        outputs,
    })
}

fn log_data(ds: &MultiOutputDataset) -> Result<MultiOutputDataset, CliError> {
    if (0..ds.n_outputs())
        .flat_map(|o| ds.column(o))
        .flatten()
        .any(|v| v <= 0.0)
    {
        return Err(CliError::Config(
            "log transform needs strictly positive outputs".into(),
        ));
    }
    Ok(ds.map_outputs(|_, v| v.ln())?)
}

/// Gaussian moments of `exp(z)` estimated from draws of `z`.
fn exp_moments(draws: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = draws.map(f64::exp).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.max(f64::MIN_POSITIVE))
}

fn train_opts(o: &BenchOptions) -> TrainOptions {
    TrainOptions {
        restarts: o.restarts,
        max_iter: o.max_iter,
        seed: o.seed,
        ..Default::default()
    }
}

/// One single-output GP per target column, each on every observed training value.
fn igp(
    split: &BenchmarkSplit,
    fit_on: &MultiOutputDataset,
    x: &Inputs<f64>,
    o: &BenchOptions,
) -> Result<Predicted, CliError> {
    let m = fit_on.n_outputs();
    let (mut mean, mut var) = (vec![Vec::new(); m], vec![Vec::new(); m]);
    for out in 0..m {
        if !(0..split.test.len()).any(|t| split.test.is_observed(t, out)) {
            continue;
        }
        let rows: Vec<usize> = (0..fit_on.len())
            .filter(|&r| fit_on.is_observed(r, out))
            .collect();
        let single = MultiOutputDataset::new(
            fit_on.input_names().to_vec(),
            vec![fit_on.output_names()[out].clone()],
            rows.iter().map(|&r| fit_on.input_row(r).to_vec()).collect(),
            rows.iter().map(|&r| vec![fit_on.value(r, out)]).collect(),
        )?;
        let ord = OutputOrdering::identity(1);
        let specs = KernelPlan::preset(Preset::Independent).specs(&single, &ord);
        let model = train(&single, &ord, &specs, &train_opts(o))?;
        let p = predict_plugin(&model, x, None)?;
        mean[out] = p.outputs[0].mean.clone();
        var[out] = p.outputs[0].noisy_variance.clone();
    }
    Ok(finish(mean, var, o.log_transform))
}

fn finish(mean: Vec<Vec<f64>>, var: Vec<Vec<f64>>, log: bool) -> Predicted {
    if !log {
        return Predicted {
            mean: mean.clone(),
            density_mean: mean,
            density_var: var,
        };
    }
    // point prediction: the median exp(μ); density: log-normal moments
    let point = mean
        .iter()
        .map(|c| c.iter().map(|m| m.exp()).collect())
        .collect();
    let dm = mean
        .iter()
        .zip(&var)
        .map(|(c, v)| c.iter().zip(v).map(|(m, s)| (m + 0.5 * s).exp()).collect())
        .collect();
    let dv = mean
        .iter()
        .zip(&var)
        .map(|(c, v)| {
            c.iter()
                .zip(v)
                .map(|(m, s)| ((s.exp() - 1.0) * (2.0 * m + s).exp()).max(f64::MIN_POSITIVE))
                .collect()
        })
        .collect();
    Predicted {
        mean: point,
        density_mean: dm,
        density_var: dv,
    }
}

fn gpar_predict(
    model: &GparModel,
    x: &Inputs<f64>,
    known: &Known,
    o: &BenchOptions,
) -> Result<Predicted, CliError> {
    let plug = predict_plugin(model, x, Some(known))?;
    let mc = predict_mc(
        model,
        x,
        Some(known),
        &McOptions {
            samples: o.mc_samples,
            seed: o.seed,
            joint: false,
        },
    )?;
    let m = model.n_outputs();
    let mean: Vec<Vec<f64>> = (0..m).map(|c| plug.outputs[c].mean.clone()).collect();
    if !o.log_transform {
        let dm = (0..m).map(|c| mc.outputs[c].mean.clone()).collect();
        let dv = (0..m)
            .map(|c| mc.outputs[c].noisy_variance.clone())
            .collect();
        return Ok(Predicted {
            mean,
            density_mean: dm,
            density_var: dv,
        });
    }
    let st = mc.samples.as_ref().expect("Monte Carlo keeps its samples");
    let (mut dm, mut dv) = (vec![vec![0.0; st.points]; m], vec![vec![0.0; st.points]; m]);
    for c in 0..m {
        for t in 0..st.points {
            (dm[c][t], dv[c][t]) = exp_moments((0..st.samples).map(|s| st.get(s, t, c)));
        }
    }
    Ok(Predicted {
        mean: mean
            .iter()
            .map(|c| c.iter().map(|v| v.exp()).collect())
            .collect(),
        density_mean: dm,
        density_var: dv,
    })
}

/// Runs both methods on an already loaded canonical dataset.
pub fn run_on(
    ds: &MultiOutputDataset,
    o: &BenchOptions,
) -> Result<(BenchOutcome, BenchTimings), CliError> {
    let split = benchmark_split(o.task, ds)?;
    let fit_on = if o.log_transform {
        log_data(&split.train)?
    } else {
        split.train.clone()
    };
    let known_split = BenchmarkSplit {
        train: fit_on.clone(),
        ..split.clone()
    };
    let known = known_at(&known_split)?;
    let x = split.test.inputs();
    let mut tm = BenchTimings::default();

    let t = Instant::now();
    let igp_pred = igp(&split, &fit_on, &x, o)?;
    tm.igp = t.elapsed().as_secs_f64();

    let specs = KernelPlan::preset(o.variant).specs(&fit_on, &split.ordering);
    let t = Instant::now();
    let model = if o.denoising {
        train_denoising(&fit_on, &split.ordering, &specs, &train_opts(o))?
    } else {
        train(&fit_on, &split.ordering, &specs, &train_opts(o))?
    };
    tm.gpar_train = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let gpar_pred = gpar_predict(&model, &x, &known, o)?;
    tm.gpar_predict = t.elapsed().as_secs_f64();

    let methods = vec![
        score("IGP", &split, &split.test, &igp_pred)?,
        score(&o.method_label(), &split, &split.test, &gpar_pred)?,
    ];
    let target = default_target(o.task);
    let (base, ours) = (
        methods[0].metric(target.metric),
        methods[1].metric(target.metric),
    );
    let outcome = BenchOutcome {
        task: o.task,
        options: o.clone(),
        train_cells: split.train.observed_count(),
        test_cells: split.test.observed_count(),
        meets_target: ours <= target.threshold,
        beats_igp: ours < base,
        methods,
        target,
    };
    Ok((outcome, tm))
}

pub fn human_summary(out: &BenchOutcome, timings: Option<&BenchTimings>) -> String {
    let mut s = format!(
        "{} ({} training cells, {} test cells)\n",
        out.task.name(),
        out.train_cells,
        out.test_cells
    );
    s += &format!(
        "{:<12} {:>10} {:>10} {:>10}",
        "method", "SMSE", "MLL", "MAE"
    );
    if timings.is_some() {
        s += &format!(" {:>10}", "TT (s)");
    }
    s.push('\n');
    for (i, m) in out.methods.iter().enumerate() {
        s += &format!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4}",
            m.method, m.smse, m.mll, m.mae
        );
        if let Some(t) = timings {
            s += &format!(" {:>10.2}", if i == 0 { t.igp } else { t.gpar_train });
        }
        s.push('\n');
    }
    let metric = match out.target.metric {
        Metric::Smse => "SMSE",
        Metric::Mae => "MAE",
    };
    s += &format!(
        "target: {} {metric} <= {} ({}); beats IGP: {}\n",
        out.methods[1].method,
        out.target.threshold,
        if out.meets_target { "met" } else { "missed" },
        if out.beats_igp { "yes" } else { "no" },
    );
    s
}
