use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, GpError, GpProblem};
use crate::kernels::{ParamRole, VarianceKind};
use crate::optim::{maximize, BfgsOptions, Status};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Restart 0 starts from the problem's current hyperparameters; the rest are random.
    pub restarts: usize,
    /// Quasi-Newton iterations per restart.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: 5,
            max_iter: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub index: usize,
    pub initial_lml: Option<f64>,
    pub final_lml: Option<f64>,
    pub iterations: usize,
    pub status: Option<Status>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Optimized<T: Real> {
    pub problem: GpProblem<T>,
    pub lml: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

struct Scales {
    target_var: f64,
    ranges: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl Scales {
    fn of<T: Real>(p: &GpProblem<T>) -> Self {
        let n = p.len();
        let target_var = if n >= 2 {
            let m = p.targets.mean().to_f64_lossy();
            p.targets
                .iter()
                .map(|y| (y.to_f64_lossy() - m).powi(2))
                .sum::<f64>()
                / n as f64
        } else {
            1.0
        };
        let target_var = if target_var > 0.0 && target_var.is_finite() {
            target_var
        } else {
            1.0
        };
        let d = p.kernel.input_dim();
        let ranges = (0..d)
            .map(|k| {
                let r = p.inputs.column_range(k).to_f64_lossy();
                if r > 0.0 && r.is_finite() {
                    r
                } else {
                    1.0
                }
            })
            .collect();
        let mean_sq = (0..d)
            .map(|k| {
                if n == 0 {
                    return 1.0;
                }
                let s = p
                    .inputs
                    .rows()
                    .map(|r| r[k].to_f64_lossy().powi(2))
                    .sum::<f64>()
                    / n as f64;
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Scales {
            target_var,
            ranges,
            mean_sq,
        }
    }

    /// Log-uniform sampling interval for each parameter (noise last).
    fn intervals<T: Real>(&self, p: &GpProblem<T>) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = p
            .kernel
            .params_info()
            .iter()
            .map(|info| match &info.role {
                ParamRole::Variance(VarianceKind::Signal)
                | ParamRole::Variance(VarianceKind::Constant) => {
                    (0.1 * self.target_var, 2.0 * self.target_var)
                }
                ParamRole::Variance(VarianceKind::Linear { dims }) => {
                    let s: f64 = dims.iter().map(|&d| self.mean_sq[d]).sum();
                    (0.1 / s, 2.0 / s)
                }
                ParamRole::Lengthscale { dims } => {
                    let r = dims.iter().map(|&d| self.ranges[d]).sum::<f64>() / dims.len() as f64;
                    (0.05 * r, 2.0 * r)
                }
                ParamRole::Alpha => (0.5, 5.0),
            })
            .collect();
        out.push((1e-4 * self.target_var, 0.5 * self.target_var));
        out
    }

    fn bounds(&self, n_kernel: usize) -> Vec<(f64, f64)> {
        let mut b = vec![(-25.0, 25.0); n_kernel];
        b.push((
            (1e-6 * self.target_var).ln(),
            (10.0 * self.target_var).ln().max(-20.0),
        ));
        b
    }
}

fn evaluate<T: Real>(base: &GpProblem<T>, x: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut p = base.clone();
    let lp: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
    p.set_log_params(&lp).ok()?;
    let fitted = fit(p).ok()?;
    let v = fitted.log_marginal_likelihood().to_f64_lossy();
    let g = fitted
        .lml_gradient()
        .into_iter()
        .map(|g| g.to_f64_lossy())
        .collect();
    Some((v, g))
}

/// Maximises the log marginal likelihood over kernel and noise hyperparameters.
///
/// Restarts are independent and run in parallel; the winner is the highest final
/// likelihood, ties going to the lower restart index. Deterministic given `seed`.
pub fn optimize<T: Real>(
    problem: &GpProblem<T>,
    opts: &OptimizeOptions,
) -> Result<Optimized<T>, GpError> {
    let restarts = opts.restarts.max(1);
    let scales = Scales::of(problem);
    let intervals = scales.intervals(problem);
    let bounds = scales.bounds(problem.kernel.n_params());
    let start0: Vec<f64> = problem
        .log_params()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        ..Default::default()
    };

    let outcomes: Vec<(RestartReport, Option<Vec<f64>>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                start0.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(r as u64);
                intervals
                    .iter()
                    .map(|&(lo, hi)| {
                        let (a, b) = (lo.ln(), hi.ln());
                        a + (b - a) * rng.random::<f64>()
                    })
                    .collect()
            };
            match maximize(|x| evaluate(problem, x), &start, &bounds, &bfgs) {
                Ok(res) => (
                    RestartReport {
                        index: r,
                        initial_lml: Some(res.initial_value),
                        final_lml: Some(res.value),
                        iterations: res.iterations,
                        status: Some(res.status),
                        failure: None,
                    },
                    Some(res.x),
                ),
                Err(e) => (
                    RestartReport {
                        index: r,
                        initial_lml: None,
                        final_lml: None,
                        iterations: 0,
                        status: None,
                        failure: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, (rep, _)) in outcomes.iter().enumerate() {
        if let Some(v) = rep.final_lml {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    let reports: Vec<RestartReport> = outcomes.iter().map(|(r, _)| r.clone()).collect();
    let Some((bi, lml)) = best else {
        return Err(GpError::Optimisation { restarts: reports });
    };
    let x = outcomes[bi]
        .1
        .as_ref()
        .expect("successful restart has a point");
    let mut out = problem.clone();
    // budget 0 at restart 0 keeps the caller's parameters bit-for-bit
    if !(bi == 0 && opts.max_iter == 0) {
        let lp: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        out.set_log_params(&lp)?;
    }
    Ok(Optimized {
        problem: out,
        lml,
        best_restart: bi,
        restarts: reports,
    })
}
