use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GparError, GparModel, TrainedLayer};
use crate::kernels::Inputs;

/// Output values already known at the test points, by dataset column.
/// Known upstream values replace predictions when fed downstream (except in
/// denoising models, which always feed latent means).
#[derive(Debug, Clone, PartialEq)]
pub struct Known {
    m: usize,
    values: Vec<Option<f64>>,
}

impl Known {
    pub fn new(rows: &[Vec<Option<f64>>], m: usize) -> Result<Self, GparError> {
        let mut values = Vec::with_capacity(rows.len() * m);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(GparError::Incompatible(format!(
                    "known row {t} has {} entries, expected {m}",
                    r.len()
                )));
            }
            if r.iter().flatten().any(|v| !v.is_finite()) {
                return Err(GparError::Incompatible(format!(
                    "known row {t} has a non-finite value"
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Known { m, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.m.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize, output: usize) -> Option<f64> {
        self.values[t * self.m + output]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    PlugIn,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPrediction {
    pub output: usize,
    pub name: String,
    pub mean: Vec<f64>,
    pub latent_variance: Vec<f64>,
    pub noisy_variance: Vec<f64>,
}

/// `S × T × M` draws of the noisy outputs, `M` in dataset column order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    pub samples: usize,
    pub points: usize,
    pub outputs: usize,
    pub data: Vec<f64>,
}

impl SampleTensor {
    pub fn get(&self, s: usize, t: usize, m: usize) -> f64 {
        self.data[(s * self.points + t) * self.outputs + m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mode: PredictMode,
    /// Indexed by dataset column.
    pub outputs: Vec<OutputPrediction>,
    pub samples: Option<SampleTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    /// Draw each layer jointly over all test points (function samples) rather
    /// than independently per point. Marginal moments agree either way.
    pub joint: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            samples: 200,
            seed: 0,
            joint: false,
        }
    }
}

fn check_inputs(
    model: &GparModel,
    x: &Inputs<f64>,
    known: Option<&Known>,
) -> Result<(), GparError> {
    if !x.is_empty() && x.dim() != model.input_dim() {
        return Err(GparError::Incompatible(format!(
            "test inputs have dimension {}, model expects {}",
            x.dim(),
            model.input_dim()
        )));
    }
    if x.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(GparError::Incompatible("non-finite test input".into()));
    }
    if let Some(k) = known {
        if k.len() != x.len() || k.m != model.n_outputs() {
            return Err(GparError::Incompatible(format!(
                "known values are {}×{}, expected {}×{}",
                k.len(),
                k.m,
                x.len(),
                model.n_outputs()
            )));
        }
    }
    Ok(())
}

/// Augmented test inputs for layer `p` from the per-position feed values.
fn augment(x: &Inputs<f64>, feeds: &[Vec<f64>], p: usize, d: usize) -> Inputs<f64> {
    let dim = d + p;
    let mut flat = Vec::with_capacity(x.len() * dim);
    for t in 0..x.len() {
        flat.extend_from_slice(x.row(t));
        flat.extend((0..p).map(|q| feeds[q][t]));
    }
    Inputs::from_flat(dim, flat)
}

fn layer_err(layer: &TrainedLayer) -> impl Fn(crate::gp::GpError) -> GparError + '_ {
    move |source| GparError::Layer {
        position: layer.position,
        output: layer.output,
        source,
    }
}

fn feed_value(
    model: &GparModel,
    known: Option<&Known>,
    output: usize,
    t: usize,
    predicted: f64,
) -> f64 {
    if model.denoising {
        return predicted;
    }
    known.and_then(|k| k.get(t, output)).unwrap_or(predicted)
}

/// Runs the plug-in chain over the first `upto` layers, returning each layer's
/// marginal posterior and the values fed downstream.
fn plugin_chain(
    model: &GparModel,
    x: &Inputs<f64>,
    known: Option<&Known>,
    upto: usize,
) -> Result<(Vec<crate::gp::Posterior<f64>>, Vec<Vec<f64>>), GparError> {
    let d = model.input_dim();
    let mut feeds: Vec<Vec<f64>> = Vec::with_capacity(upto);
    let mut posts = Vec::with_capacity(upto);
    for layer in &model.layers[..upto] {
        let p = layer.position;
        let post = layer
            .fitted
            .posterior(&augment(x, &feeds, p, d))
            .map_err(layer_err(layer))?;
        feeds.push(
            (0..x.len())
                .map(|t| feed_value(model, known, layer.output, t, post.mean[t]))
                .collect(),
        );
        posts.push(post);
    }
    Ok((posts, feeds))
}

/// Sequential prediction feeding each layer's posterior mean (or the known
/// value) downstream. Variances are each layer's conditional variances given
/// the fed values; upstream uncertainty is not propagated.
pub fn predict_plugin(
    model: &GparModel,
    x: &Inputs<f64>,
    known: Option<&Known>,
) -> Result<PredictiveDistribution, GparError> {
    check_inputs(model, x, known)?;
    let (posts, _) = plugin_chain(model, x, known, model.layers.len())?;
    let mut outputs: Vec<Option<OutputPrediction>> = vec![None; model.n_outputs()];
    for (layer, post) in model.layers.iter().zip(posts) {
        outputs[layer.output] = Some(OutputPrediction {
            output: layer.output,
            name: model.output_names[layer.output].clone(),
            mean: post.mean.as_slice().to_vec(),
            latent_variance: post.latent_variance.as_slice().to_vec(),
            noisy_variance: post.noisy_variance.as_slice().to_vec(),
        });
    }
    Ok(PredictiveDistribution {
        mode: PredictMode::PlugIn,
        outputs: outputs
            .into_iter()
            .map(|o| o.expect("every output has a layer"))
            .collect(),
        samples: None,
    })
}

/// Lower factor of a covariance matrix that may be slightly indefinite.
fn sampling_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let scale = (cov.trace() / n.max(1) as f64).max(f64::MIN_POSITIVE);
    for rel in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut a = cov.clone();
        for i in 0..n {
            a[(i, i)] += rel * scale;
        }
        if let Some(c) = a.cholesky() {
            return c.l();
        }
    }
    let eig = SymmetricEigen::new(cov.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Draw-ready conditional distribution of one layer at the test points.
enum LayerDraw {
    Joint {
        mean: DVector<f64>,
        factor: DMatrix<f64>,
        latent_var: DVector<f64>,
    },
    Marginal {
        mean: DVector<f64>,
        latent_var: DVector<f64>,
    },
}

impl LayerDraw {
    fn new(layer: &TrainedLayer, inputs: &Inputs<f64>, joint: bool) -> Result<Self, GparError> {
        if joint {
            let (mean, cov) = layer
                .fitted
                .posterior_joint(inputs)
                .map_err(layer_err(layer))?;
            let latent_var = cov.diagonal().map(|v| v.max(0.0));
            Ok(LayerDraw::Joint {
                factor: sampling_factor(&cov),
                mean,
                latent_var,
            })
        } else {
            let post = layer.fitted.posterior(inputs).map_err(layer_err(layer))?;
            Ok(LayerDraw::Marginal {
                mean: post.mean,
                latent_var: post.latent_variance,
            })
        }
    }

    fn mean(&self) -> &DVector<f64> {
        match self {
            LayerDraw::Joint { mean, .. } | LayerDraw::Marginal { mean, .. } => mean,
        }
    }

    fn latent_var(&self) -> &DVector<f64> {
        match self {
            LayerDraw::Joint { latent_var, .. } | LayerDraw::Marginal { latent_var, .. } => {
                latent_var
            }
        }
    }

    /// Noisy draw `f + ε` at every test point.
    fn draw(&self, noise_sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let t = self.mean().len();
        let z: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let f: Vec<f64> = match self {
            LayerDraw::Joint { mean, factor, .. } => (0..t)
                .map(|i| mean[i] + (0..=i).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
                .collect(),
            LayerDraw::Marginal { mean, latent_var } => (0..t)
                .map(|i| mean[i] + latent_var[i].sqrt() * z[i])
                .collect(),
        };
        f.into_iter()
            .map(|fi| fi + noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

struct Draw {
    /// T × M noisy values.
    y: Vec<f64>,
    cond_mean: Vec<f64>,
    cond_var: Vec<f64>,
}

/// Ancestral Monte Carlo prediction: each sample draws layer `p`'s noisy
/// outputs and feeds them to later layers. Sample `s` uses its own ChaCha8
/// stream, so results do not depend on thread count.
pub fn predict_mc(
    model: &GparModel,
    x: &Inputs<f64>,
    known: Option<&Known>,
    opts: &McOptions,
) -> Result<PredictiveDistribution, GparError> {
    check_inputs(model, x, known)?;
    if opts.samples == 0 {
        return Err(GparError::NoSamples);
    }
    let (t_n, m, d) = (x.len(), model.n_outputs(), model.input_dim());
    // layers whose inputs do not vary between samples
    let all_known = |p: usize| {
        known.is_some_and(|k| {
            (0..p).all(|q| (0..t_n).all(|t| k.get(t, model.ordering.output(q)).is_some()))
        })
    };
    let fixed: Vec<bool> = (0..m)
        .map(|p| p == 0 || model.denoising || all_known(p))
        .collect();
    let plugin_feeds = if model.denoising {
        Some(plugin_chain(model, x, known, m)?.1)
    } else {
        None
    };
    let mut cache: Vec<Option<LayerDraw>> = Vec::with_capacity(m);
    for (p, layer) in model.layers.iter().enumerate() {
        cache.push(if fixed[p] {
            let feeds: Vec<Vec<f64>> = match &plugin_feeds {
                Some(f) => f[..p].to_vec(),
                None => (0..p)
                    .map(|q| {
                        (0..t_n)
                            .map(|t| {
                                known
                                    .and_then(|k| k.get(t, model.ordering.output(q)))
                                    .unwrap_or(f64::NAN)
                            })
                            .collect()
                    })
                    .collect(),
            };
            Some(LayerDraw::new(
                layer,
                &augment(x, &feeds, p, d),
                opts.joint,
            )?)
        } else {
            None
        });
    }

    let draws: Vec<Draw> = (0..opts.samples)
        .into_par_iter()
        .map(|s| -> Result<Draw, GparError> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let mut out = Draw {
                y: vec![0.0; t_n * m],
                cond_mean: vec![0.0; t_n * m],
                cond_var: vec![0.0; t_n * m],
            };
            let mut feeds: Vec<Vec<f64>> = Vec::with_capacity(m);
            for (p, layer) in model.layers.iter().enumerate() {
                let owned;
                let dist = match &cache[p] {
                    Some(c) => c,
                    None => {
                        owned = LayerDraw::new(layer, &augment(x, &feeds, p, d), opts.joint)?;
                        &owned
                    }
                };
                let y = dist.draw(layer.noise_variance().sqrt(), &mut rng);
                let o = layer.output;
                for t in 0..t_n {
                    out.y[t * m + o] = y[t];
                    out.cond_mean[t * m + o] = dist.mean()[t];
                    out.cond_var[t * m + o] = dist.latent_var()[t];
                }
                let fed = match &plugin_feeds {
                    Some(f) => f[p].clone(),
                    None => (0..t_n)
                        .map(|t| feed_value(model, known, o, t, y[t]))
                        .collect(),
                };
                feeds.push(fed);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let s_n = opts.samples as f64;
    let outputs = (0..m)
        .map(|o| {
            let mut mean = vec![0.0; t_n];
            let mut noisy = vec![0.0; t_n];
            let mut latent = vec![0.0; t_n];
            for t in 0..t_n {
                let i = t * m + o;
                let mu = draws.iter().map(|dr| dr.y[i]).sum::<f64>() / s_n;
                let cm = draws.iter().map(|dr| dr.cond_mean[i]).sum::<f64>() / s_n;
                let denom = if opts.samples > 1 { s_n - 1.0 } else { 1.0 };
                noisy[t] = draws.iter().map(|dr| (dr.y[i] - mu).powi(2)).sum::<f64>() / denom;
                latent[t] = draws
                    .iter()
                    .map(|dr| (dr.cond_mean[i] - cm).powi(2))
                    .sum::<f64>()
                    / denom
                    + draws.iter().map(|dr| dr.cond_var[i]).sum::<f64>() / s_n;
                mean[t] = mu;
            }
            OutputPrediction {
                output: o,
                name: model.output_names[o].clone(),
                mean,
                latent_variance: latent,
                noisy_variance: noisy,
            }
        })
        .collect();
    let data = draws.into_iter().flat_map(|dr| dr.y).collect();
    Ok(PredictiveDistribution {
        mode: PredictMode::MonteCarlo,
        outputs,
        samples: Some(SampleTensor {
            samples: opts.samples,
            points: t_n,
            outputs: m,
            data,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Per top-level summand: posterior mean (offset excluded) and latent variance.
    pub components: Vec<(Vec<f64>, Vec<f64>)>,
    /// The layer's centring constant; components plus offset give the full mean.
    pub offset: f64,
    /// Augmented inputs the components were evaluated at.
    pub inputs: Inputs<f64>,
}

/// Additive decomposition of layer `position`'s posterior at `x`, with
/// upstream inputs from the plug-in chain (or `known`). `component` selects
/// one summand; `None` returns all of them.
pub fn decompose_posterior(
    model: &GparModel,
    position: usize,
    component: Option<usize>,
    x: &Inputs<f64>,
    known: Option<&Known>,
) -> Result<Decomposition, GparError> {
    check_inputs(model, x, known)?;
    let layer = model.layers.get(position).ok_or_else(|| {
        GparError::Incompatible(format!(
            "no layer {position} in a {}-layer model",
            model.layers.len()
        ))
    })?;
    let parts = layer
        .kernel()
        .summands()
        .ok_or(GparError::NoDecomposition { position })?;
    let selected: Vec<usize> = match component {
        Some(c) if c >= parts.len() => {
            return Err(GparError::NoComponent {
                position,
                component: c,
                available: parts.len(),
            })
        }
        Some(c) => vec![c],
        None => (0..parts.len()).collect(),
    };
    let (_, feeds) = plugin_chain(model, x, known, position)?;
    let inputs = augment(x, &feeds, position, model.input_dim());
    let components = selected
        .into_iter()
        .map(|c| {
            let (m, v) = layer
                .fitted
                .component_posterior(&parts[c], &inputs)
                .map_err(layer_err(layer))?;
            Ok((m.as_slice().to_vec(), v.as_slice().to_vec()))
        })
        .collect::<Result<Vec<_>, GparError>>()?;
    Ok(Decomposition {
        components,
        offset: layer.mean_offset(),
        inputs,
    })
}
