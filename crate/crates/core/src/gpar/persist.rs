//! Versioned JSON model files.
//!
//! Layout: `{"format": "gpar-model", "version": 1, ordering, names, options,
//! data_fingerprint, layers: [{kernel, noise_variance, mean_offset, inputs,
//! targets, rows, …}]}`. Each layer stores its augmented training set, so
//! loading refits the exact same factorisation and predictions match bit for bit.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{GparError, GparModel, TrainOptions, TrainedLayer};
use crate::data::OutputOrdering;
use crate::gp::{fit, GpProblem, RestartReport};
use crate::kernels::{Inputs, Kernel, KernelSpec};

pub const FORMAT_NAME: &str = "gpar-model";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    position: usize,
    output: usize,
    denoising: bool,
    kernel: KernelSpec,
    noise_variance: f64,
    mean_offset: f64,
    input_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    rows: Vec<usize>,
    log_marginal_likelihood: f64,
    best_restart: usize,
    restarts: Vec<RestartReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u64,
    ordering: OutputOrdering,
    input_names: Vec<String>,
    output_names: Vec<String>,
    denoising: bool,
    options: TrainOptions,
    data_fingerprint: String,
    dropped_cells: usize,
    layers: Vec<LayerFile>,
}

pub fn to_json(model: &GparModel) -> String {
    let file = ModelFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        ordering: model.ordering.clone(),
        input_names: model.input_names.clone(),
        output_names: model.output_names.clone(),
        denoising: model.denoising,
        options: model.options.clone(),
        data_fingerprint: model.data_fingerprint.clone(),
        dropped_cells: model.dropped_cells,
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                position: l.position,
                output: l.output,
                denoising: l.denoising,
                kernel: l.spec(),
                noise_variance: l.noise_variance(),
                mean_offset: l.mean_offset(),
                input_dim: l.augmented_dim(),
                inputs: l.training_inputs().as_flat().to_vec(),
                targets: l.training_targets().as_slice().to_vec(),
                rows: l.rows.clone(),
                log_marginal_likelihood: l.log_marginal_likelihood(),
                best_restart: l.best_restart,
                restarts: l.restarts.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serialises")
}

pub fn from_json(text: &str) -> Result<GparModel, GparError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GparError::Corrupt(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT_NAME) => {}
        other => {
            return Err(GparError::Corrupt(format!(
                "format tag is {other:?}, expected {FORMAT_NAME:?}"
            )))
        }
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| GparError::Corrupt("missing version".into()))?;
    if version != FORMAT_VERSION {
        return Err(GparError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_path_to_error::deserialize(value)
        .map_err(|e| GparError::Corrupt(format!("{}: {}", e.path(), e.inner())))?;
    let m = file.output_names.len();
    if file.ordering.len() != m || file.layers.len() != m {
        return Err(GparError::Corrupt(format!(
            "{} outputs but {} layers",
            m,
            file.layers.len()
        )));
    }
    let d = file.input_names.len();
    let mut layers = Vec::with_capacity(m);
    for (p, l) in file.layers.into_iter().enumerate() {
        if l.position != p || l.output != file.ordering.output(p) || l.input_dim != d + p {
            return Err(GparError::Corrupt(format!(
                "layer {p} header disagrees with the ordering"
            )));
        }
        if l.inputs.len() != l.targets.len() * l.input_dim || l.rows.len() != l.targets.len() {
            return Err(GparError::Corrupt(format!(
                "layer {p} training data has inconsistent lengths"
            )));
        }
        let corrupt = |e: &dyn std::fmt::Display| GparError::Corrupt(format!("layer {p}: {e}"));
        let kernel = Kernel::build(&l.kernel, l.input_dim).map_err(|e| corrupt(&e))?;
        let mut problem = GpProblem::new(
            kernel,
            l.noise_variance,
            Inputs::from_flat(l.input_dim, l.inputs),
            DVector::from_vec(l.targets),
        )
        .map_err(|e| corrupt(&e))?;
        problem.mean_offset = l.mean_offset;
        let fitted = fit(problem).map_err(|source| GparError::Layer {
            position: p,
            output: l.output,
            source,
        })?;
        layers.push(TrainedLayer {
            position: p,
            output: l.output,
            denoising: l.denoising,
            rows: l.rows,
            restarts: l.restarts,
            best_restart: l.best_restart,
            fitted,
        });
    }
    Ok(GparModel {
        ordering: file.ordering,
        layers,
        input_names: file.input_names,
        output_names: file.output_names,
        denoising: file.denoising,
        options: file.options,
        data_fingerprint: file.data_fingerprint,
        dropped_cells: file.dropped_cells,
    })
}

pub fn save(model: &GparModel, path: &Path) -> Result<(), GparError> {
    std::fs::write(path, to_json(model)).map_err(|source| GparError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<GparModel, GparError> {
    let text = std::fs::read_to_string(path).map_err(|source| GparError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}
