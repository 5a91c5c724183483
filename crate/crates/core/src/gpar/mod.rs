//! Autoregressive multi-output GP regression.
//!
//! Output `ordering[p]` is modelled by layer `p`, a single-output GP over the
//! augmented input `(x, y_{ordering[0]}, …, y_{ordering[p-1]})`. Given data that
//! is closed downwards, the joint likelihood factorises over layers, so each
//! layer is trained on its own.

mod persist;
mod predict;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    first_violation, observed_prefix, restrict_to_closed_downwards, DataError, MultiOutputDataset,
    OutputOrdering, Violation,
};
use crate::gp::{fit, optimize, FittedGp, GpError, GpProblem, OptimizeOptions, RestartReport};
use crate::kernels::{Inputs, Kernel, KernelError, KernelSpec};

pub use persist::{from_json, load, save, to_json, FORMAT_NAME, FORMAT_VERSION};
pub use predict::{
    decompose_posterior, predict_mc, predict_plugin, Decomposition, Known, McOptions,
    OutputPrediction, PredictMode, PredictiveDistribution, SampleTensor,
};

#[derive(Debug, thiserror::Error)]
pub enum GparError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    NotClosedDownwards(Violation),
    #[error("{given} kernel specs for {expected} outputs")]
    SpecCount { expected: usize, given: usize },
    #[error("layer {position} (output {output}): {source}")]
    Kernel {
        position: usize,
        output: usize,
        source: KernelError,
    },
    #[error("layer {position} (output {output}): {source}")]
    Layer {
        position: usize,
        output: usize,
        source: GpError,
    },
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("layer {position}: kernel is not a sum, no additive components")]
    NoDecomposition { position: usize },
    #[error("layer {position}: component {component} out of range ({available} available)")]
    NoComponent {
        position: usize,
        component: usize,
        available: usize,
    },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("model file is corrupt: {0}")]
    Corrupt(String),
    #[error("model file version {found} is not supported (this build reads version {supported})")]
    Version { found: u64, supported: u64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Drop cells that break closed-downwards instead of failing.
    pub repair: bool,
    /// Subtract each layer's target mean before fitting.
    pub centre: bool,
    /// Starting noise variance as a fraction of the layer's target variance.
    pub initial_noise: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            restarts: 5,
            max_iter: 200,
            seed: 0,
            repair: false,
            centre: true,
            initial_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedLayer {
    pub position: usize,
    /// Dataset column this layer models.
    pub output: usize,
    pub denoising: bool,
    /// Dataset rows that formed the training set.
    pub rows: Vec<usize>,
    pub restarts: Vec<RestartReport>,
    pub best_restart: usize,
    fitted: FittedGp<f64>,
}

impl TrainedLayer {
    pub fn fitted(&self) -> &FittedGp<f64> {
        &self.fitted
    }

    pub fn kernel(&self) -> &Kernel<f64> {
        &self.fitted.problem().kernel
    }

    pub fn spec(&self) -> KernelSpec {
        self.kernel().to_spec()
    }

    pub fn noise_variance(&self) -> f64 {
        self.fitted.problem().noise_variance
    }

    pub fn mean_offset(&self) -> f64 {
        self.fitted.problem().mean_offset
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.fitted.log_marginal_likelihood()
    }

    pub fn augmented_dim(&self) -> usize {
        self.kernel().input_dim()
    }

    pub fn training_inputs(&self) -> &Inputs<f64> {
        &self.fitted.problem().inputs
    }

    pub fn training_targets(&self) -> &DVector<f64> {
        &self.fitted.problem().targets
    }
}

#[derive(Debug, Clone)]
pub struct GparModel {
    pub ordering: OutputOrdering,
    pub layers: Vec<TrainedLayer>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub denoising: bool,
    pub options: TrainOptions,
    pub data_fingerprint: String,
    /// Cells dropped by the closed-downwards repair.
    pub dropped_cells: usize,
}

impl GparModel {
    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.len()
    }

    /// Sum of the stored layer likelihoods.
    pub fn log_evidence(&self) -> f64 {
        self.layers
            .iter()
            .map(TrainedLayer::log_marginal_likelihood)
            .sum()
    }

    pub fn layer_for_output(&self, output: usize) -> &TrainedLayer {
        &self.layers[self
            .ordering
            .position_of(output)
            .expect("ordering covers every output")]
    }
}

/// Per-layer seed so that layers never share a restart stream.
fn layer_seed(seed: u64, position: usize) -> u64 {
    seed.wrapping_add((position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn prepare(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
    specs: &[KernelSpec],
    opts: &TrainOptions,
) -> Result<(MultiOutputDataset, usize), GparError> {
    if specs.len() != ds.n_outputs() {
        return Err(GparError::SpecCount {
            expected: ds.n_outputs(),
            given: specs.len(),
        });
    }
    if let Some(v) = first_violation(ds, ord)? {
        if !opts.repair {
            return Err(GparError::NotClosedDownwards(v));
        }
        let (fixed, dropped) = restrict_to_closed_downwards(ds, ord)?;
        log::warn!("dropped {dropped} cells to make the data closed downwards");
        return Ok((fixed, dropped));
    }
    Ok((ds.clone(), 0))
}

/// Rows whose observed prefix covers position `p`.
fn layer_rows(ds: &MultiOutputDataset, ord: &OutputOrdering, p: usize) -> Vec<usize> {
    (0..ds.len())
        .filter(|&r| observed_prefix(ds, ord, r) > p)
        .collect()
}

/// Augmented input rows for layer `p`; `upstream(r, q)` supplies the value fed
/// in for ordering position `q < p` at dataset row `r`.
fn augmented(
    ds: &MultiOutputDataset,
    rows: &[usize],
    p: usize,
    upstream: impl Fn(usize, usize) -> f64,
) -> Inputs<f64> {
    let dim = ds.input_dim() + p;
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        flat.extend_from_slice(ds.input_row(r));
        flat.extend((0..p).map(|q| upstream(r, q)));
    }
    Inputs::from_flat(dim, flat)
}

fn initial_problem(
    spec: &KernelSpec,
    inputs: Inputs<f64>,
    targets: DVector<f64>,
    p: usize,
    output: usize,
    opts: &TrainOptions,
) -> Result<GpProblem<f64>, GparError> {
    let kernel = Kernel::build(spec, inputs.dim()).map_err(|source| GparError::Kernel {
        position: p,
        output,
        source,
    })?;
    let n = targets.len();
    let var = if n >= 2 { targets.variance() } else { 1.0 };
    let noise = opts.initial_noise
        * if var > 0.0 && var.is_finite() {
            var
        } else {
            1.0
        };
    let layer_err = |source| GparError::Layer {
        position: p,
        output,
        source,
    };
    if opts.centre {
        GpProblem::centred(kernel, noise, inputs, targets).map_err(layer_err)
    } else {
        GpProblem::new(kernel, noise, inputs, targets).map_err(layer_err)
    }
}

fn train_layer(
    problem: GpProblem<f64>,
    rows: Vec<usize>,
    p: usize,
    output: usize,
    opts: &TrainOptions,
    denoising: bool,
) -> Result<TrainedLayer, GparError> {
    let layer_err = |source| GparError::Layer {
        position: p,
        output,
        source,
    };
    let oo = OptimizeOptions {
        restarts: opts.restarts,
        max_iter: opts.max_iter,
        seed: layer_seed(opts.seed, p),
    };
    let best = optimize(&problem, &oo).map_err(layer_err)?;
    let fitted = fit(best.problem).map_err(layer_err)?;
    Ok(TrainedLayer {
        position: p,
        output,
        denoising,
        rows,
        restarts: best.restarts,
        best_restart: best.best_restart,
        fitted,
    })
}

fn targets(ds: &MultiOutputDataset, rows: &[usize], output: usize) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter()
            .map(|&r| ds.value(r, output).expect("row selected by prefix")),
    )
}

/// Trains every layer independently on observed upstream values. `specs[p]`
/// is the kernel for ordering position `p`, over `D + p` input dimensions.
pub fn train(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
    specs: &[KernelSpec],
    opts: &TrainOptions,
) -> Result<GparModel, GparError> {
    let (ds_used, dropped) = prepare(ds, ord, specs, opts)?;
    let layers = (0..ord.len())
        .into_par_iter()
        .map(|p| {
            let output = ord.output(p);
            let rows = layer_rows(&ds_used, ord, p);
            let inputs = augmented(&ds_used, &rows, p, |r, q| {
                ds_used.value(r, ord.output(q)).expect("prefix observed")
            });
            let problem = initial_problem(
                &specs[p],
                inputs,
                targets(&ds_used, &rows, output),
                p,
                output,
                opts,
            )?;
            train_layer(problem, rows, p, output, opts, false)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(model(ds, ord, layers, false, opts, dropped))
}

/// Trains layers in order, feeding each the posterior latent means of the
/// already-trained (frozen) upstream layers instead of the noisy observations.
pub fn train_denoising(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
    specs: &[KernelSpec],
    opts: &TrainOptions,
) -> Result<GparModel, GparError> {
    let (ds_used, dropped) = prepare(ds, ord, specs, opts)?;
    let mut layers: Vec<TrainedLayer> = Vec::with_capacity(ord.len());
    // denoised[q][r]: layer q's latent mean at dataset row r (rows it covers)
    let mut denoised: Vec<Vec<f64>> = Vec::with_capacity(ord.len());
    for p in 0..ord.len() {
        let output = ord.output(p);
        let rows = layer_rows(&ds_used, ord, p);
        let inputs = augmented(&ds_used, &rows, p, |r, q| denoised[q][r]);
        let problem = initial_problem(
            &specs[p],
            inputs.clone(),
            targets(&ds_used, &rows, output),
            p,
            output,
            opts,
        )?;
        let layer = train_layer(problem, rows.clone(), p, output, opts, true)?;
        let post = layer
            .fitted
            .posterior(&inputs)
            .map_err(|source| GparError::Layer {
                position: p,
                output,
                source,
            })?;
        let mut col = vec![f64::NAN; ds_used.len()];
        for (i, &r) in rows.iter().enumerate() {
            col[r] = post.mean[i];
        }
        denoised.push(col);
        layers.push(layer);
    }
    Ok(model(ds, ord, layers, true, opts, dropped))
}

fn model(
    ds: &MultiOutputDataset,
    ord: &OutputOrdering,
    layers: Vec<TrainedLayer>,
    denoising: bool,
    opts: &TrainOptions,
    dropped: usize,
) -> GparModel {
    GparModel {
        ordering: ord.clone(),
        layers,
        input_names: ds.input_names().to_vec(),
        output_names: ds.output_names().to_vec(),
        denoising,
        options: opts.clone(),
        data_fingerprint: ds.fingerprint(),
        dropped_cells: dropped,
    }
}

/// Per-layer log marginal likelihoods of `ds` under the model's fixed
/// hyperparameters, each recomputed from scratch.
pub fn layer_log_evidences(
    model: &GparModel,
    ds: &MultiOutputDataset,
) -> Result<Vec<f64>, GparError> {
    if ds.input_names() != model.input_names.as_slice() || ds.n_outputs() != model.n_outputs() {
        return Err(GparError::Incompatible(format!(
            "dataset has inputs {:?} and {} outputs; model expects {:?} and {}",
            ds.input_names(),
            ds.n_outputs(),
            model.input_names,
            model.n_outputs()
        )));
    }
    let ord = &model.ordering;
    if let Some(v) = first_violation(ds, ord)? {
        return Err(GparError::NotClosedDownwards(v));
    }
    let mut out = Vec::with_capacity(ord.len());
    let mut denoised: Vec<Vec<f64>> = Vec::new();
    for (p, layer) in model.layers.iter().enumerate() {
        let rows = layer_rows(ds, ord, p);
        let inputs = if model.denoising {
            augmented(ds, &rows, p, |r, q| denoised[q][r])
        } else {
            augmented(ds, &rows, p, |r, q| {
                ds.value(r, ord.output(q)).expect("prefix observed")
            })
        };
        let src = layer.fitted.problem();
        let mut problem = GpProblem::new(
            src.kernel.clone(),
            src.noise_variance,
            inputs.clone(),
            targets(ds, &rows, layer.output),
        )
        .map_err(|source| GparError::Layer {
            position: p,
            output: layer.output,
            source,
        })?;
        problem.mean_offset = src.mean_offset;
        let f = fit(problem).map_err(|source| GparError::Layer {
            position: p,
            output: layer.output,
            source,
        })?;
        out.push(f.log_marginal_likelihood());
        if model.denoising {
            let post = f.posterior(&inputs).map_err(|source| GparError::Layer {
                position: p,
                output: layer.output,
                source,
            })?;
            let mut col = vec![f64::NAN; ds.len()];
            for (i, &r) in rows.iter().enumerate() {
                col[r] = post.mean[i];
            }
            denoised.push(col);
        }
    }
    Ok(out)
}

/// `log p(D)` as the sum of layer evidences.
pub fn total_log_evidence(model: &GparModel, ds: &MultiOutputDataset) -> Result<f64, GparError> {
    Ok(layer_log_evidences(model, ds)?.into_iter().sum())
}

/// Replaces one layer's hyperparameters (log coordinates, noise last) and refits it.
pub fn with_layer_log_params(
    model: &GparModel,
    position: usize,
    log_params: &[f64],
) -> Result<GparModel, GparError> {
    let mut out = model.clone();
    let layer = &mut out.layers[position];
    let mut problem = layer.fitted.problem().clone();
    let err = |source| GparError::Layer {
        position,
        output: layer.output,
        source,
    };
    problem.set_log_params(log_params).map_err(err)?;
    layer.fitted = fit(problem).map_err(err)?;
    Ok(out)
}
