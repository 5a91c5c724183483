//! Exact single-output Gaussian process regression.
//!
//! [`fit`] factorises `K + σ²I + jitter·I` once; likelihood, gradients and
//! posteriors are read off the cached factor. Hyperparameters are learned by
//! [`optimize`] in log coordinates, the noise variance being the last coordinate.

mod optimize;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::kernels::{Inputs, Kernel, KernelError};
use crate::scalar::{ln_2pi, Real};

pub use optimize::{optimize, OptimizeOptions, Optimized, RestartReport};

pub const NOISE_PARAM: &str = "noise_variance";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("noise variance must be positive, got {0}")]
    BadNoise(f64),
    #[error("Cholesky factorisation failed; last jitter tried {jitter:e}")]
    Conditioning { jitter: f64 },
    #[error("all {} optimisation restarts failed", .restarts.len())]
    Optimisation { restarts: Vec<RestartReport> },
}

/// A single-output regression problem: kernel, Gaussian noise and training data.
#[derive(Debug, Clone)]
pub struct GpProblem<T: Real> {
    pub kernel: Kernel<T>,
    pub noise_variance: T,
    pub inputs: Inputs<T>,
    pub targets: DVector<T>,
    /// Subtracted from the targets before fitting and added back to predicted means.
    pub mean_offset: T,
}

impl<T: Real> GpProblem<T> {
    pub fn new(
        kernel: Kernel<T>,
        noise_variance: T,
        inputs: Inputs<T>,
        targets: DVector<T>,
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        if !inputs.is_empty() && inputs.dim() != kernel.input_dim() {
            return Err(KernelError::DimensionMismatch {
                expected: kernel.input_dim(),
                given: inputs.dim(),
            }
            .into());
        }
        if !(noise_variance > T::zero()) || !noise_variance.is_finite() {
            return Err(GpError::BadNoise(noise_variance.to_f64_lossy()));
        }
        if inputs.as_flat().iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite {
                what: "training inputs",
            });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite {
                what: "training targets",
            });
        }
        Ok(GpProblem {
            kernel,
            noise_variance,
            inputs,
            targets,
            mean_offset: T::zero(),
        })
    }

    /// As [`GpProblem::new`], with targets centred by their mean.
    pub fn centred(
        kernel: Kernel<T>,
        noise_variance: T,
        inputs: Inputs<T>,
        targets: DVector<T>,
    ) -> Result<Self, GpError> {
        let mut p = Self::new(kernel, noise_variance, inputs, targets)?;
        if !p.targets.is_empty() {
            p.mean_offset = p.targets.mean();
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.kernel.n_params() + 1
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .kernel
            .params_info()
            .iter()
            .map(|i| i.name.clone())
            .collect();
        names.push(NOISE_PARAM.to_string());
        names
    }

    /// Kernel log-parameters followed by `ln σ²`.
    pub fn log_params(&self) -> Vec<T> {
        let mut p = self.kernel.log_params();
        p.push(self.noise_variance.ln());
        p
    }

    pub fn set_log_params(&mut self, log_params: &[T]) -> Result<(), GpError> {
        let n = self.kernel.n_params();
        if log_params.len() != n + 1 {
            return Err(KernelError::ParamCount {
                expected: n + 1,
                given: log_params.len(),
            }
            .into());
        }
        self.kernel.set_log_params(&log_params[..n])?;
        self.noise_variance = log_params[n].exp();
        Ok(())
    }

    fn centred_targets(&self) -> DVector<T> {
        self.targets.map(|y| y - self.mean_offset)
    }
}

/// Posterior marginals at a batch of test points.
#[derive(Debug, Clone)]
pub struct Posterior<T: Real> {
    pub mean: DVector<T>,
    pub latent_variance: DVector<T>,
    /// Latent variance plus the noise variance.
    pub noisy_variance: DVector<T>,
    /// Number of latent variances clamped up to zero.
    pub clamped: usize,
    /// Most negative pre-clamp latent variance relative to the prior variance (0 if none).
    pub worst_negative_ratio: T,
}

#[derive(Debug, Clone)]
pub struct FittedGp<T: Real> {
    problem: GpProblem<T>,
    chol: Option<Cholesky<T, Dyn>>,
    alpha: DVector<T>,
    jitter: T,
    jitter_attempts: Vec<T>,
}

/// Jitter levels tried in order, relative to the mean prior variance.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// `(L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹` from the lower factor; the upper triangle of `l` is
/// never read. Column-wise forward substitution against the identity skips
/// the rows above the diagonal, where `L⁻¹` is zero.
fn inverse_from_factor<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let ls = l.as_slice();
    let mut x = DMatrix::<T>::zeros(n, n);
    let xs = x.as_mut_slice();
    for j in 0..n {
        let col = &mut xs[j * n..(j + 1) * n];
        col[j] = T::one();
        for k in j..n {
            let lk = &ls[k * n..(k + 1) * n];
            let v = col[k] / lk[k];
            col[k] = v;
            for (c, &li) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                *c -= li * v;
            }
        }
    }
    x.transpose() * x
}

/// Factorises the training covariance, escalating jitter along [`JITTER_LADDER`].
pub fn fit<T: Real>(problem: GpProblem<T>) -> Result<FittedGp<T>, GpError> {
    let n = problem.len();
    if n == 0 {
        return Ok(FittedGp {
            problem,
            chol: None,
            alpha: DVector::zeros(0),
            jitter: T::zero(),
            jitter_attempts: vec![],
        });
    }
    // the factorisation reads only the lower triangle
    let k = problem.kernel.gram_lower(&problem.inputs)?;
    let mean_diag = k.diagonal().mean();
    let scale = if mean_diag.is_finite() && mean_diag > T::zero() {
        mean_diag
    } else {
        T::one()
    };
    let y = problem.centred_targets();
    let mut attempts = Vec::new();
    // the first attempt consumes the Gram matrix; retries are rare and rebuild it
    let mut gram = Some(k);
    for rel in JITTER_LADDER {
        let jitter = T::lit(rel) * scale;
        attempts.push(jitter);
        let mut a = match gram.take() {
            Some(k) => k,
            None => problem.kernel.gram_lower(&problem.inputs)?,
        };
        for i in 0..n {
            a[(i, i)] += problem.noise_variance + jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let alpha = chol.solve(&y);
            let finite_factor = chol.l_dirty().diagonal().iter().all(|d| d.is_finite());
            if finite_factor && alpha.iter().all(|v| v.is_finite()) {
                return Ok(FittedGp {
                    problem,
                    chol: Some(chol),
                    alpha,
                    jitter,
                    jitter_attempts: attempts,
                });
            }
        }
    }
    Err(GpError::Conditioning {
        jitter: attempts
            .last()
            .copied()
            .unwrap_or_else(T::zero)
            .to_f64_lossy(),
    })
}

impl<T: Real> FittedGp<T> {
    pub fn problem(&self) -> &GpProblem<T> {
        &self.problem
    }

    pub fn into_problem(self) -> GpProblem<T> {
        self.problem
    }

    pub fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn jitter_attempts(&self) -> &[T] {
        &self.jitter_attempts
    }

    /// Lower Cholesky factor of `K + (σ² + jitter) I`.
    pub fn cholesky_factor(&self) -> DMatrix<T> {
        self.chol
            .as_ref()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// `log N(y − offset; 0, K + σ²I)` using the jittered factor.
    pub fn log_marginal_likelihood(&self) -> T {
        let Some(chol) = &self.chol else {
            return T::zero();
        };
        let y = self.problem.centred_targets();
        let n = T::from_usize_lossy(y.len());
        let half_log_det = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(T::zero(), |acc, d| acc + d.ln());
        -T::lit(0.5) * y.dot(&self.alpha) - half_log_det - T::lit(0.5) * n * ln_2pi::<T>()
    }

    /// Gradient of the log marginal likelihood in log-parameter coordinates,
    /// ordered as [`GpProblem::log_params`].
    pub fn lml_gradient(&self) -> Vec<T> {
        let p = self.problem.n_params();
        let mut grad = vec![T::zero(); p];
        let Some(chol) = &self.chol else { return grad };
        let n = self.alpha.len();
        let k_inv = inverse_from_factor(chol.l_dirty());
        let kernel = &self.problem.kernel;
        let np = kernel.n_params();
        let mut dk = vec![T::zero(); np];
        let mut trace_w = T::zero();
        for j in 0..n {
            for i in j..n {
                let w = self.alpha[i] * self.alpha[j] - k_inv[(i, j)];
                let w = if i == j {
                    trace_w += w;
                    w
                } else {
                    w + w
                };
                kernel.eval_with_grad_raw(
                    self.problem.inputs.row(i),
                    self.problem.inputs.row(j),
                    &mut dk,
                );
                for (g, d) in grad.iter_mut().zip(&dk) {
                    *g += w * *d;
                }
            }
        }
        for g in grad.iter_mut().take(np) {
            *g *= T::lit(0.5);
        }
        grad[np] = T::lit(0.5) * self.problem.noise_variance * trace_w;
        grad
    }

    pub fn lml_gradient_named(&self) -> BTreeMap<String, T> {
        self.problem
            .param_names()
            .into_iter()
            .zip(self.lml_gradient())
            .collect()
    }

    fn check_test(&self, test: &Inputs<T>) -> Result<(), GpError> {
        if !test.is_empty() && test.dim() != self.problem.kernel.input_dim() {
            return Err(KernelError::DimensionMismatch {
                expected: self.problem.kernel.input_dim(),
                given: test.dim(),
            }
            .into());
        }
        Ok(())
    }

    /// Marginal posterior at each test point.
    pub fn posterior(&self, test: &Inputs<T>) -> Result<Posterior<T>, GpError> {
        self.check_test(test)?;
        let kernel = &self.problem.kernel;
        let prior = kernel.diag(test)?;
        let (mean, raw_var) = match &self.chol {
            None => (
                DVector::from_element(test.len(), self.problem.mean_offset),
                prior.clone(),
            ),
            Some(chol) => {
                let ks = kernel.gram(&self.problem.inputs, test)?;
                let mean = ks.tr_mul(&self.alpha).add_scalar(self.problem.mean_offset);
                let mut v = ks;
                chol.l_dirty().solve_lower_triangular_mut(&mut v);
                let reduce = DVector::from_fn(test.len(), |j, _| v.column(j).norm_squared());
                (mean, &prior - reduce)
            }
        };
        let mut clamped = 0;
        let mut worst = T::zero();
        let latent = DVector::from_fn(test.len(), |i, _| {
            let v = raw_var[i];
            if v < T::zero() {
                clamped += 1;
                if prior[i] > T::zero() {
                    worst = worst.min(v / prior[i]);
                }
                T::zero()
            } else {
                v
            }
        });
        if clamped > 0 {
            log::debug!("clamped {clamped} negative posterior variances (worst ratio {worst})");
        }
        let noisy = latent.add_scalar(self.problem.noise_variance);
        Ok(Posterior {
            mean,
            latent_variance: latent,
            noisy_variance: noisy,
            clamped,
            worst_negative_ratio: worst,
        })
    }

    /// Joint latent posterior mean and covariance over the test points.
    pub fn posterior_joint(&self, test: &Inputs<T>) -> Result<(DVector<T>, DMatrix<T>), GpError> {
        self.check_test(test)?;
        let kernel = &self.problem.kernel;
        let prior = kernel.gram_sym(test)?;
        match &self.chol {
            None => Ok((
                DVector::from_element(test.len(), self.problem.mean_offset),
                prior,
            )),
            Some(chol) => {
                let ks = kernel.gram(&self.problem.inputs, test)?;
                let mean = ks.tr_mul(&self.alpha).add_scalar(self.problem.mean_offset);
                let mut v = ks;
                chol.l_dirty().solve_lower_triangular_mut(&mut v);
                let cov = prior - v.tr_mul(&v);
                Ok((mean, cov))
            }
        }
    }

    /// Posterior of one additive component `component` of the kernel given the
    /// training data: mean (without the offset) and latent variance.
    pub fn component_posterior(
        &self,
        component: &Kernel<T>,
        test: &Inputs<T>,
    ) -> Result<(DVector<T>, DVector<T>), GpError> {
        self.check_test(test)?;
        let prior = component.diag(test)?;
        match &self.chol {
            None => Ok((DVector::zeros(test.len()), prior)),
            Some(chol) => {
                let ks = component.gram(&self.problem.inputs, test)?;
                let mean = ks.tr_mul(&self.alpha);
                let mut v = ks;
                chol.l_dirty().solve_lower_triangular_mut(&mut v);
                let var = DVector::from_fn(test.len(), |j, _| {
                    (prior[j] - v.column(j).norm_squared()).max(T::zero())
                });
                Ok((mean, var))
            }
        }
    }
}

#[cfg(test)]
mod tests;
