use std::io::Write;
use std::path::Path;

use gpar_core::gpar::{GparModel, Known, PredictiveDistribution};
use gpar_core::kernels::Inputs;
use serde::Serialize;

use crate::error::{io_error, CliError};

/// Test points for prediction. Columns named after model inputs are required;
/// columns named after model outputs are optional known values, empty when
/// unknown.
#[derive(Debug, Clone)]
pub struct TestPoints {
    pub inputs: Inputs<f64>,
    pub known: Option<Known>,
}

pub fn read_test_points(path: &Path, model: &GparModel) -> Result<TestPoints, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| io_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let input_cols: Vec<usize> = model
        .input_names
        .iter()
        .map(|n| {
            find(n).ok_or_else(|| {
                CliError::Data(format!("{}: missing input column {n:?}", path.display()))
            })
        })
        .collect::<Result<_, _>>()?;
    let mut output_cols: Vec<Option<usize>> = vec![None; model.n_outputs()];
    for (c, h) in header.iter().enumerate() {
        if input_cols.contains(&c) {
            continue;
        }
        match model.output_names.iter().position(|n| n == h) {
            Some(o) if output_cols[o].is_none() => output_cols[o] = Some(c),
            Some(_) => {
                return Err(CliError::Data(format!(
                    "{}: duplicate column {h:?}",
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Data(format!(
                    "{}: column {h:?} is neither a model input nor output",
                    path.display()
                )))
            }
        }
    }
    let mut flat = Vec::new();
    let mut known_rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_error(path, e))?;
        let row = i + 1;
        let cell = |c: usize| -> Result<Option<f64>, CliError> {
            let s = rec.get(c).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(CliError::Data(format!(
                    "{}: row {row}, column {:?}: bad value {s:?}",
                    path.display(),
                    header[c]
                ))),
            }
        };
        for &c in &input_cols {
            flat.push(cell(c)?.ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {row}: input {:?} is empty",
                    path.display(),
                    header[c]
                ))
            })?);
        }
        known_rows.push(
            output_cols
                .iter()
                .map(|c| c.map_or(Ok(None), cell))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    if known_rows.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no test points",
            path.display()
        )));
    }
    let any_known = output_cols.iter().any(Option::is_some);
    let known = if any_known {
        Some(Known::new(&known_rows, model.n_outputs())?)
    } else {
        None
    };
    Ok(TestPoints {
        inputs: Inputs::from_flat(model.input_dim(), flat),
        known,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_error(path, e))
}

/// One row per (point, output): `point, <inputs>, output, mean, latent_variance, noisy_variance`.
pub fn write_predictions(
    path: &Path,
    model: &GparModel,
    x: &Inputs<f64>,
    pred: &PredictiveDistribution,
) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["point".to_string()];
    header.extend(model.input_names.iter().cloned());
    header.extend(["output", "mean", "latent_variance", "noisy_variance"].map(String::from));
    w.write_record(&header).map_err(|e| io_error(path, e))?;
    for t in 0..x.len() {
        for &o in model.ordering.as_slice() {
            let out = &pred.outputs[o];
            let mut rec = vec![t.to_string()];
            rec.extend(x.row(t).iter().map(f64::to_string));
            rec.push(out.name.clone());
            rec.extend(
                [out.mean[t], out.latent_variance[t], out.noisy_variance[t]].map(|v| v.to_string()),
            );
            w.write_record(&rec).map_err(|e| io_error(path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// One row per (sample, point, output): `sample, point, <inputs>, output, value`.
pub fn write_samples(
    path: &Path,
    model: &GparModel,
    x: &Inputs<f64>,
    pred: &PredictiveDistribution,
) -> Result<(), CliError> {
    let st = pred
        .samples
        .as_ref()
        .expect("Monte Carlo prediction keeps its samples");
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample".to_string(), "point".to_string()];
    header.extend(model.input_names.iter().cloned());
    header.extend(["output", "value"].map(String::from));
    w.write_record(&header).map_err(|e| io_error(path, e))?;
    for s in 0..st.samples {
        for t in 0..st.points {
            for &o in model.ordering.as_slice() {
                let mut rec = vec![s.to_string(), t.to_string()];
                rec.extend(x.row(t).iter().map(f64::to_string));
                rec.push(model.output_names[o].clone());
                rec.push(st.get(s, t, o).to_string());
                w.write_record(&rec).map_err(|e| io_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialise");
    text.push('\n');
    let mut f = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

/// Fails early if `path` cannot be created: its parent must be an existing directory.
pub fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "output directory {} does not exist",
            parent.display()
        )))
    }
}

pub fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}
