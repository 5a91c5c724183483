//! Brute-force reference computations.
//!
//! Everything here works from dense kernel matrices and LU solves, never from
//! the Cholesky factors cached by the GP code, so agreement between the two is
//! meaningful. Costs are cubic per call with no attempt at reuse.

mod operator;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{observed_prefix, MultiOutputDataset};
use crate::gpar::{GparError, GparModel, TrainedLayer};
use crate::kernels::Inputs;

pub use operator::{
    nilpotency_residual, t_apply, t_power, trapezoid_weights, verify_fixed_point,
    verify_linear_series, FixedPointReport, GridFunction, OperatorA, Term, TermKind,
};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] GparError),
}

fn check_indices(n: usize, sets: &[&[usize]]) -> Result<(), OracleError> {
    let mut seen = vec![false; n];
    for set in sets {
        for &i in *set {
            if i >= n {
                return Err(OracleError::Shape(format!(
                    "index {i} out of range for dimension {n}"
                )));
            }
            if seen[i] {
                return Err(OracleError::Shape(format!(
                    "index {i} repeated or in more than one set"
                )));
            }
            seen[i] = true;
        }
    }
    Ok(())
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subv(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Conditional of the `query` coordinates of `N(mean, cov)` given the
/// `observed` coordinates equal `values`:
/// `μ_q + Σ_qo Σ_oo⁻¹ (v − μ_o)`, `Σ_qq − Σ_qo Σ_oo⁻¹ Σ_oq`.
pub fn dense_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[usize],
    values: &[f64],
    query: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>), OracleError> {
    let n = mean.len();
    if cov.shape() != (n, n) || values.len() != observed.len() {
        return Err(OracleError::Shape(
            "mean, covariance and values disagree".into(),
        ));
    }
    check_indices(n, &[observed, query])?;
    let mq = subv(mean, query);
    let sqq = sub(cov, query, query);
    if observed.is_empty() {
        return Ok((mq, sqq));
    }
    let soo = sub(cov, observed, observed);
    let sqo = sub(cov, query, observed);
    let r = DVector::from_fn(observed.len(), |i, _| values[i] - mean[observed[i]]);
    let lu = soo.lu();
    let w = lu
        .solve(&r)
        .ok_or(OracleError::Singular("observed block"))?;
    let b = lu
        .solve(&sqo.transpose())
        .ok_or(OracleError::Singular("observed block"))?;
    Ok((mq + &sqo * w, sqq - sqo * b))
}

/// Same conditional through the precision matrix of the `query ∪ observed`
/// block: `Λ = Σ⁻¹`, mean `μ_q − Λ_qq⁻¹ Λ_qo (v − μ_o)`, covariance `Λ_qq⁻¹`.
pub fn dense_condition_precision(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[usize],
    values: &[f64],
    query: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>), OracleError> {
    let n = mean.len();
    if cov.shape() != (n, n) || values.len() != observed.len() {
        return Err(OracleError::Shape(
            "mean, covariance and values disagree".into(),
        ));
    }
    check_indices(n, &[observed, query])?;
    if query.is_empty() {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let all: Vec<usize> = query.iter().chain(observed).copied().collect();
    let lambda = sub(cov, &all, &all)
        .try_inverse()
        .ok_or(OracleError::Singular("joint block"))?;
    let q = query.len();
    let lqq = lambda.view((0, 0), (q, q)).into_owned();
    let lqo = lambda.view((0, q), (q, observed.len())).into_owned();
    let cov_q = lqq
        .try_inverse()
        .ok_or(OracleError::Singular("precision block"))?;
    let r = DVector::from_fn(observed.len(), |i, _| values[i] - mean[observed[i]]);
    let mean_q = subv(mean, query) - &cov_q * (lqo * r);
    Ok((mean_q, cov_q))
}

/// `log N(r; 0, Σ)` by LU, with the log-determinant summed from `U`'s diagonal.
pub fn gaussian_logpdf(r: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64, OracleError> {
    let n = r.len();
    if n == 0 {
        return Ok(0.0);
    }
    let lu = cov.clone().lu();
    let sol = lu.solve(r).ok_or(OracleError::Singular("covariance"))?;
    let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
    Ok(-0.5 * r.dot(&sol) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Training rows of one layer under `ds` with realised upstream values.
fn layer_rows(model: &GparModel, ds: &MultiOutputDataset, p: usize) -> (Inputs<f64>, DVector<f64>) {
    let ord = &model.ordering;
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&r| observed_prefix(ds, ord, r) > p)
        .collect();
    let dim = ds.input_dim() + p;
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for &r in &rows {
        flat.extend_from_slice(ds.input_row(r));
        flat.extend((0..p).map(|q| ds.value(r, ord.output(q)).unwrap()));
    }
    let y = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&r| ds.value(r, ord.output(p)).unwrap()),
    );
    (Inputs::from_flat(dim, flat), y)
}

/// Noisy-target covariance of a layer, using the jitter recorded at fit time.
fn layer_cov(layer: &TrainedLayer, a: &Inputs<f64>) -> Result<DMatrix<f64>, OracleError> {
    let mut k = layer
        .kernel()
        .gram(a, a)
        .map_err(|e| OracleError::Shape(e.to_string()))?;
    let extra = layer.noise_variance() + layer.fitted().jitter();
    for i in 0..a.len() {
        k[(i, i)] += extra;
    }
    Ok(k)
}

fn check_model(model: &GparModel, ds: &MultiOutputDataset) -> Result<(), OracleError> {
    if model.denoising {
        return Err(OracleError::Precondition(
            "denoising models have no realised-input factorisation".into(),
        ));
    }
    if ds.input_names() != model.input_names.as_slice() || ds.n_outputs() != model.n_outputs() {
        return Err(OracleError::Precondition(
            "dataset does not match the model".into(),
        ));
    }
    Ok(())
}

/// `Σ_p log p(y_{ord[p]} | y_{ord[<p]}, x)` with each layer's Gaussian written
/// out densely. Accepts any closed-downwards pattern; cells beyond a row's
/// observed prefix are ignored.
pub fn factorized_joint_logdensity(
    model: &GparModel,
    ds: &MultiOutputDataset,
) -> Result<f64, OracleError> {
    check_model(model, ds)?;
    let mut total = 0.0;
    for (p, layer) in model.layers.iter().enumerate() {
        let (inputs, y) = layer_rows(model, ds, p);
        let r = y.add_scalar(-layer.mean_offset());
        total += gaussian_logpdf(&r, &layer_cov(layer, &inputs)?)?;
    }
    Ok(total)
}

/// Predictive of one layer at augmented test inputs by dense conditioning of
/// the joint prior over training and test targets: (mean, latent var, noisy var).
pub fn layer_predictive_dense(
    layer: &TrainedLayer,
    test: &Inputs<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), OracleError> {
    let train = layer.training_inputs();
    let (n, t) = (train.len(), test.len());
    let mut all = Inputs::new(layer.augmented_dim());
    for row in train.rows().chain(test.rows()) {
        all.push(row)
            .map_err(|e| OracleError::Shape(e.to_string()))?;
    }
    let mut cov = layer
        .kernel()
        .gram(&all, &all)
        .map_err(|e| OracleError::Shape(e.to_string()))?;
    for i in 0..n {
        cov[(i, i)] += layer.noise_variance() + layer.fitted().jitter();
    }
    let mean = DVector::from_element(n + t, layer.mean_offset());
    let obs: Vec<usize> = (0..n).collect();
    let query: Vec<usize> = (n..n + t).collect();
    let (m, c) = dense_condition(
        &mean,
        &cov,
        &obs,
        layer.training_targets().as_slice(),
        &query,
    )?;
    let latent = c.diagonal().map(|v| v.max(0.0));
    let noisy = latent.add_scalar(layer.noise_variance());
    Ok((m, latent, noisy))
}

/// Nodes and weights with `Σ w f(z) ≈ E[f(z)]`, `z ~ N(0, 1)` (Golub–Welsch).
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    // Jacobi matrix of the probabilists' Hermite recurrence
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a.abs_diff(b) == 1 {
            (a.max(b) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
}

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Mean and variance of `y₂(x*)` for a two-output model, integrating the
/// unknown `y₁(x*) = v` against its noisy predictive with Gauss–Hermite:
/// mean `Σ w m₂(v)`, variance `Σ w (s₂²(v) + m₂(v)²) − mean²`. With `known_y1`
/// the integral collapses to a point mass.
pub fn quadrature_predictive(
    model: &GparModel,
    x: &[f64],
    nodes: usize,
    known_y1: Option<f64>,
) -> Result<(f64, f64), OracleError> {
    if model.n_outputs() != 2 {
        return Err(OracleError::Precondition(format!(
            "two outputs required, model has {}",
            model.n_outputs()
        )));
    }
    if x.len() != model.input_dim() {
        return Err(OracleError::Shape(format!(
            "x has {} coordinates, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let (l1, l2) = (&model.layers[0], &model.layers[1]);
    let at = |v: f64| Inputs::from_flat(x.len() + 1, x.iter().copied().chain([v]).collect());
    let (m1, _, v1) = layer_predictive_dense(l1, &Inputs::from_flat(x.len(), x.to_vec()))?;
    if model.denoising {
        let (m2, _, v2) = layer_predictive_dense(l2, &at(m1[0]))?;
        return Ok((m2[0], v2[0]));
    }
    if let Some(v) = known_y1 {
        let (m2, _, v2) = layer_predictive_dense(l2, &at(v))?;
        return Ok((m2[0], v2[0]));
    }
    let (z, w) = gauss_hermite_normal(nodes);
    let (mut first, mut second) = (0.0, 0.0);
    let sd = v1[0].sqrt();
    for (zk, wk) in z.iter().zip(&w) {
        let (m2, _, v2) = layer_predictive_dense(l2, &at(m1[0] + sd * zk))?;
        first += wk * m2[0];
        second += wk * (v2[0] + m2[0] * m2[0]);
    }
    Ok((first, (second - first * first).max(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub mean_with: f64,
    pub var_with: f64,
    pub mean_without: f64,
    pub var_without: f64,
    /// `max(|Δ mean|, |Δ variance|)`.
    pub discrepancy: f64,
}

/// Posterior of `y_i(x*)` computed from the normalised factorised joint
/// density over a grid of values, once with the observation `toggle = (row,
/// output j)` present in `ds` and once with it removed. `upstream` gives the
/// values of the outputs ordered before `i` at `x*`.
pub fn verify_theorem1(
    model: &GparModel,
    ds: &MultiOutputDataset,
    toggle: (usize, usize),
    target: usize,
    x: &[f64],
    upstream: &[f64],
    grid: usize,
) -> Result<Theorem1Report, OracleError> {
    check_model(model, ds)?;
    let ord = &model.ordering;
    let (row, j) = toggle;
    if row >= ds.len() || j >= ds.n_outputs() || target >= ds.n_outputs() {
        return Err(OracleError::Shape("toggle or target out of range".into()));
    }
    let (pi, pj) = (
        ord.position_of(target).unwrap(),
        ord.position_of(j).unwrap(),
    );
    if pi >= pj {
        return Err(OracleError::Precondition(format!(
            "target must precede the toggled output (positions {pi} and {pj})"
        )));
    }
    if upstream.len() != pi || x.len() != ds.input_dim() {
        return Err(OracleError::Shape(format!(
            "need {} upstream values and {} input coordinates",
            pi,
            ds.input_dim()
        )));
    }
    if !ds.is_observed(row, j) {
        return Err(OracleError::Precondition(format!(
            "toggled cell (row {row}, output {j}) is not observed"
        )));
    }
    let with = ds.clone();
    let mut without = ds.clone();
    without.unobserve(row, j);
    for (name, d) in [
        ("with the toggled observation", &with),
        ("without it", &without),
    ] {
        if let Some(v) = crate::data::first_violation(d, ord)
            .map_err(|e| OracleError::Precondition(e.to_string()))?
        {
            return Err(OracleError::Precondition(format!(
                "data {name} is not closed downwards: {v}"
            )));
        }
    }
    // grid centred on the layer predictive, ±10 sd
    let aug = Inputs::from_flat(x.len() + pi, x.iter().chain(upstream).copied().collect());
    let (m, _, v) = layer_predictive_dense(&model.layers[pi], &aug)?;
    let (lo, hi) = (m[0] - 10.0 * v[0].sqrt(), m[0] + 10.0 * v[0].sqrt());
    let vs: Vec<f64> = (0..grid)
        .map(|k| lo + (hi - lo) * k as f64 / (grid - 1) as f64)
        .collect();
    let moments = |d: &MultiOutputDataset| -> Result<(f64, f64), OracleError> {
        let mut ext_rows: Vec<Vec<Option<f64>>> = (0..d.len()).map(|r| d.row_values(r)).collect();
        let mut inputs: Vec<Vec<f64>> = (0..d.len()).map(|r| d.input_row(r).to_vec()).collect();
        let mut extra = vec![None; d.n_outputs()];
        for (q, u) in upstream.iter().enumerate() {
            extra[ord.output(q)] = Some(*u);
        }
        ext_rows.push(extra);
        inputs.push(x.to_vec());
        let mut ext = MultiOutputDataset::new(
            d.input_names().to_vec(),
            d.output_names().to_vec(),
            inputs,
            ext_rows,
        )
        .map_err(|e| OracleError::Shape(e.to_string()))?;
        let last = ext.len() - 1;
        let logs = vs
            .iter()
            .map(|&val| {
                ext.set_value(last, target, Some(val))
                    .map_err(|e| OracleError::Shape(e.to_string()))?;
                factorized_joint_logdensity(model, &ext)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // trapezoid weights; equal spacing cancels in the normalisation
        let w: Vec<f64> = logs
            .iter()
            .enumerate()
            .map(|(k, l)| (l - top).exp() * if k == 0 || k == grid - 1 { 0.5 } else { 1.0 })
            .collect();
        let z: f64 = w.iter().sum();
        let mean = w.iter().zip(&vs).map(|(wk, v)| wk * v).sum::<f64>() / z;
        let var = w
            .iter()
            .zip(&vs)
            .map(|(wk, v)| wk * (v - mean).powi(2))
            .sum::<f64>()
            / z;
        Ok((mean, var))
    };
    let (mw, vw) = moments(&with)?;
    let (mo, vo) = moments(&without)?;
    Ok(Theorem1Report {
        mean_with: mw,
        var_with: vw,
        mean_without: mo,
        var_without: vo,
        discrepancy: (mw - mo).abs().max((vw - vo).abs()),
    })
}
