//! Randomised verification runs over the oracle checks. Each trial draws from
//! its own ChaCha8 stream of the given seed, so results do not depend on the
//! thread count.

use gpar_core::data::{MultiOutputDataset, OutputOrdering};
use gpar_core::gpar::{predict_plugin, train, TrainOptions};
use gpar_core::kernels::{gpar_nl, Inputs, KernelSpec, LayerShape};
use gpar_core::oracle::{
    verify_fixed_point, verify_linear_series, verify_theorem1, GridFunction, OperatorA, Term,
    TermKind,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;

pub const THEOREM1_TOL: f64 = 1e-10;
pub const OPERATOR_TOL: f64 = 1e-10;
pub const NEGATIVE_CONTROL_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    /// Largest residual, or smallest for the negative control.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Random M-output chain with a random closed-downwards observation pattern
/// under a random ordering. Every row observes at least its first output.
fn random_chain(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (MultiOutputDataset, OutputOrdering) {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let freq: Vec<f64> = (0..m).map(|_| rng.random_range(2.0..8.0)).collect();
    let mix: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs: Vec<f64> = (0..n)
        .map(|i| (i as f64 + rng.random_range(0.1..0.9)) / n as f64)
        .collect();
    let rows: Vec<Vec<Option<f64>>> = xs
        .iter()
        .enumerate()
        .map(|(r, &x)| {
            // the first two rows are complete so every position has data
            let prefix = if r < 2 { m } else { rng.random_range(1..=m) };
            let mut by_pos = Vec::with_capacity(m);
            for p in 0..m {
                let prev: f64 = by_pos.last().copied().unwrap_or(0.0);
                by_pos.push(
                    (freq[p] * x).sin() + mix[p] * prev * prev + 0.1 * rng.random_range(-1.0..1.0),
                );
            }
            let mut row = vec![None; m];
            for p in 0..prefix {
                row[perm[p]] = Some(by_pos[p]);
            }
            row
        })
        .collect();
    let names = (0..m).map(|o| format!("y{}", o + 1)).collect();
    let ds = MultiOutputDataset::new(
        vec!["x".into()],
        names,
        xs.iter().map(|&x| vec![x]).collect(),
        rows,
    )
    .expect("finite values");
    (ds, OutputOrdering::new(perm).expect("permutation"))
}

fn chain_specs(rng: &mut ChaCha8Rng, m: usize) -> Vec<KernelSpec> {
    (0..m)
        .map(|p| {
            let (v, l) = (rng.random_range(0.5..2.0), rng.random_range(0.1..0.5));
            gpar_nl(
                LayerShape::new(1, p),
                |_| KernelSpec::eq(v, l),
                |d| KernelSpec::eq_ard(0.5 * v, &vec![1.0; d]),
            )
        })
        .collect()
}

fn fixed_hypers() -> TrainOptions {
    TrainOptions {
        restarts: 1,
        max_iter: 0,
        ..Default::default()
    }
}

/// Density-level check: the posterior of an upstream output at a test point
/// is unchanged by toggling one downstream observation.
pub fn theorem1_trials(trials: usize, seed: u64) -> Result<CheckResult, CliError> {
    let worst = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<f64, CliError> {
            let mut rng = trial_rng(seed, k);
            let m = rng.random_range(2..=3);
            let n = rng.random_range(6..=12);
            let (ds, ord) = random_chain(&mut rng, m, n);
            let model = train(&ds, &ord, &chain_specs(&mut rng, m), &fixed_hypers())?;
            // toggle the last observed output of a row whose prefix is at least two long
            let candidates: Vec<(usize, usize)> = (0..n)
                .filter_map(|r| {
                    let len = (0..m)
                        .take_while(|&p| ds.is_observed(r, ord.output(p)))
                        .count();
                    (len >= 2).then_some((r, len - 1))
                })
                .collect();
            let (row, pj) = candidates[rng.random_range(0..candidates.len())];
            let pi = rng.random_range(0..pj);
            let x = [rng.random_range(0.0..1.0)];
            let upstream: Vec<f64> = (0..pi).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rep = verify_theorem1(
                &model,
                &ds,
                (row, ord.output(pj)),
                ord.output(pi),
                &x,
                &upstream,
                301,
            )?;
            Ok(rep.discrepancy)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: "theorem1-density".into(),
        trials,
        worst,
        tolerance: THEOREM1_TOL,
        passed: worst <= THEOREM1_TOL,
    })
}

/// Construction-level check: deleting every observation of the outputs after
/// position `i` and retraining reproduces positions `0..=i` bit for bit.
pub fn theorem1_construction_trials(trials: usize, seed: u64) -> Result<CheckResult, CliError> {
    let worst = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<f64, CliError> {
            let mut rng = trial_rng(seed, k);
            let m = 3;
            let n = rng.random_range(8..=14);
            let (ds, ord) = random_chain(&mut rng, m, n);
            let specs = chain_specs(&mut rng, m);
            let opts = TrainOptions {
                restarts: 2,
                max_iter: 25,
                seed: k as u64,
                ..Default::default()
            };
            let full = train(&ds, &ord, &specs, &opts)?;
            let x = Inputs::from_flat(1, (0..5).map(|_| rng.random_range(0.0..1.0)).collect());
            let a = predict_plugin(&full, &x, None)?;
            let mut worst = 0.0f64;
            for i in 0..m - 1 {
                let mut cut = ds.clone();
                for r in 0..cut.len() {
                    for p in i + 1..m {
                        cut.unobserve(r, ord.output(p));
                    }
                }
                let b = predict_plugin(&train(&cut, &ord, &specs, &opts)?, &x, None)?;
                for p in 0..=i {
                    let (u, v) = (&a.outputs[ord.output(p)], &b.outputs[ord.output(p)]);
                    if u != v {
                        let d = u
                            .mean
                            .iter()
                            .zip(&v.mean)
                            .map(|(s, t)| (s - t).abs())
                            .fold(0.0, f64::max);
                        // a bit-level difference with equal values still fails
                        worst = worst.max(if d > 0.0 { d } else { f64::MIN_POSITIVE });
                    }
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: "theorem1-construction".into(),
        trials,
        worst,
        tolerance: 0.0,
        passed: worst == 0.0,
    })
}

fn random_grid(rng: &mut ChaCha8Rng, g: usize) -> Vec<f64> {
    (0..g)
        .map(|i| (i as f64 + rng.random_range(0.05..0.95)) / g as f64)
        .collect()
}

fn random_u(rng: &mut ChaCha8Rng, grid: &[f64], m: usize) -> GridFunction {
    let values = DMatrix::from_fn(grid.len(), m, |_, _| rng.random_range(-1.0..1.0));
    GridFunction::new(grid.to_vec(), values).expect("ordered grid")
}

fn operator_check(
    name: &str,
    trials: usize,
    seed: u64,
    run: impl Fn(&mut ChaCha8Rng) -> Result<f64, CliError> + Sync,
) -> Result<CheckResult, CliError> {
    let worst = (0..trials)
        .into_par_iter()
        .map(|k| run(&mut trial_rng(seed, k)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: name.into(),
        trials,
        worst,
        tolerance: OPERATOR_TOL,
        passed: worst <= OPERATOR_TOL,
    })
}

/// `T^{M-1} u` solves `g = u + A∘g` for random nonlinear triangular operators.
pub fn fixed_point_trials(trials: usize, seed: u64) -> Result<CheckResult, CliError> {
    operator_check("fixed-point", trials, seed, |rng| {
        let (m, g) = (rng.random_range(1..=5), rng.random_range(1..=16));
        let grid = random_grid(rng, g);
        let a = OperatorA::random_nonlinear(m, g, rng);
        let u = random_u(rng, &grid, m);
        Ok(verify_fixed_point(&a, &u)?.residual)
    })
}

/// `T^{M-1} u = Σ_i A^i ∘ u` for random linear triangular operators.
pub fn linear_series_trials(trials: usize, seed: u64) -> Result<CheckResult, CliError> {
    operator_check("linear-series", trials, seed, |rng| {
        let (m, g) = (rng.random_range(1..=5), rng.random_range(2..=16));
        let grid = random_grid(rng, g);
        let a = OperatorA::random_linear(m, &grid, rng);
        let u = random_u(rng, &grid, m);
        Ok(verify_linear_series(&a, &u)?)
    })
}

/// Random operators with one term reading a later output: the iterate is no
/// longer a fixed point, so every residual must stay clearly above zero.
pub fn negative_control_trials(trials: usize, seed: u64) -> Result<CheckResult, CliError> {
    let smallest = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<f64, CliError> {
            let mut rng = trial_rng(seed, k);
            let (m, g) = (rng.random_range(2..=5), rng.random_range(4..=16));
            let grid = random_grid(&mut rng, g);
            let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut terms = Vec::new();
            for target in 1..m {
                let (a, b) = (
                    sign(&mut rng) * rng.random_range(0.5..1.5),
                    sign(&mut rng) * rng.random_range(1.0..2.0),
                );
                terms.push(Term {
                    target,
                    source: target - 1,
                    kind: TermKind::Tanh {
                        a,
                        b,
                        c: rng.random_range(-0.5..0.5),
                    },
                });
            }
            let (a, b) = (
                sign(&mut rng) * rng.random_range(0.5..1.5),
                sign(&mut rng) * rng.random_range(1.0..2.0),
            );
            terms.push(Term {
                target: 0,
                source: m - 1,
                kind: TermKind::Tanh {
                    a,
                    b,
                    c: rng.random_range(-0.5..0.5),
                },
            });
            let op = OperatorA::new_unchecked(m, g, terms)?;
            let u = random_u(&mut rng, &grid, m);
            let rep = verify_fixed_point(&op, &u)?;
            Ok(if rep.flagged && !rep.lower_triangular {
                rep.residual
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(CheckResult {
        name: "negative-control".into(),
        trials,
        worst: smallest,
        tolerance: NEGATIVE_CONTROL_MIN,
        passed: smallest > NEGATIVE_CONTROL_MIN,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub theorem1_trials: usize,
    pub construction_trials: usize,
    pub operator_trials: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            theorem1_trials: 50,
            construction_trials: 10,
            operator_trials: 100,
            seed: 0,
        }
    }
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<CheckResult>, CliError> {
    Ok(vec![
        theorem1_trials(opts.theorem1_trials, opts.seed)?,
        theorem1_construction_trials(opts.construction_trials, opts.seed)?,
        fixed_point_trials(opts.operator_trials, opts.seed)?,
        linear_series_trials(opts.operator_trials, opts.seed)?,
        negative_control_trials(opts.operator_trials, opts.seed)?,
    ])
}
