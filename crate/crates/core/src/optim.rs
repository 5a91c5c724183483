//! Box-constrained quasi-Newton maximisation with a first-order fallback.

use thiserror::Error;

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Stop after two consecutive iterations improving by less than `rel_tol·(1+|f|)`.
    pub rel_tol: f64,
    /// Largest coordinate change allowed in one step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// Neither the quasi-Newton nor the gradient direction produced an ascent step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective failed at the starting point")]
    BadStart,
    #[error("bounds have length {bounds}, start has length {start}")]
    Shape { bounds: usize, start: usize },
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Max-norm of the (minimisation) gradient, ignoring components whose descent
/// direction leaves the box.
fn projected_grad_norm(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> f64 {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Objective<F> {
    /// Negated objective; `None` for failures and non-finite values.
    fn neg(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (v, g) = (self.f)(x)?;
        if !v.is_finite() || g.iter().any(|gi| !gi.is_finite()) {
            return None;
        }
        Some((-v, g.into_iter().map(|gi| -gi).collect()))
    }
}

/// Armijo backtracking along `dir` from `x`. Returns the accepted point.
fn line_search<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    obj: &mut Objective<F>,
    x: &[f64],
    phi: f64,
    g: &[f64],
    dir: &[f64],
    bounds: &[(f64, f64)],
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    const C1: f64 = 1e-4;
    let mut t = 1.0;
    for _ in 0..40 {
        let mut trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
        project(&mut trial, bounds);
        let decrease: f64 = g
            .iter()
            .zip(trial.iter().zip(x))
            .map(|(gi, (a, b))| gi * (a - b))
            .sum();
        if decrease >= 0.0 {
            // projection removed every descent component
            t *= 0.5;
            continue;
        }
        if let Some((p, gp)) = obj.neg(&trial) {
            if p <= phi + C1 * decrease {
                return Some((trial, p, gp));
            }
        }
        t *= 0.5;
    }
    None
}

fn cap(dir: &mut [f64], max_step: f64) {
    let m = dir.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if m > max_step {
        let s = max_step / m;
        dir.iter_mut().for_each(|d| *d *= s);
    }
}

/// Maximises `f` (value and gradient) from `x0` within `bounds`.
///
/// `f` returns `None` where the objective cannot be evaluated; such points are
/// treated as infinitely bad by the line search.
pub fn maximize<F>(
    f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &BfgsOptions,
) -> Result<OptimResult, OptimError>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    if bounds.len() != x0.len() {
        return Err(OptimError::Shape {
            bounds: bounds.len(),
            start: x0.len(),
        });
    }
    let n = x0.len();
    let mut obj = Objective { f, evaluations: 0 };
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut phi, mut g) = obj.neg(&x).ok_or(OptimError::BadStart)?;
    let initial_value = -phi;
    let mut h = identity(n);
    let mut status = Status::MaxIterations;
    let mut small_steps = 0;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        if projected_grad_norm(&x, &g, bounds) <= opts.grad_tol {
            status = Status::Converged;
            break;
        }
        iterations += 1;
        let mut dir = mat_vec_neg(&h, &g);
        if dot(&dir, &g) >= 0.0 {
            h = identity(n);
            dir = g.iter().map(|gi| -gi).collect();
        }
        cap(&mut dir, opts.max_step);
        let step = match line_search(&mut obj, &x, phi, &g, &dir, bounds) {
            Some(s) => Some(s),
            None => {
                // first-order fallback with a fresh curvature estimate
                h = identity(n);
                let mut sd: Vec<f64> = g.iter().map(|gi| -gi).collect();
                cap(&mut sd, opts.max_step);
                line_search(&mut obj, &x, phi, &g, &sd, bounds)
            }
        };
        let Some((x_new, phi_new, g_new)) = step else {
            status = Status::Stalled;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if iterations == 1 {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut()
                    .for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let improvement = phi - phi_new;
        x = x_new;
        g = g_new;
        phi = phi_new;
        if improvement <= opts.rel_tol * (1.0 + phi.abs()) {
            small_steps += 1;
            if small_steps >= 2 {
                status = Status::Converged;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    if opts.max_iter == 0 {
        status = Status::MaxIterations;
    }
    Ok(OptimResult {
        x,
        value: -phi,
        initial_value,
        iterations,
        evaluations: obj.evaluations,
        status,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec_neg(h: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    h.iter().map(|row| -dot(row, g)).collect()
}

/// Inverse-Hessian update `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
