use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::kernels::{Inputs, Kernel, KernelSpec};

fn problem(spec: &KernelSpec, noise: f64, x: Vec<f64>, dim: usize, y: Vec<f64>) -> GpProblem<f64> {
    let k = Kernel::build(spec, dim).unwrap();
    GpProblem::new(k, noise, Inputs::from_flat(dim, x), DVector::from_vec(y)).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, spec: &KernelSpec, dim: usize) -> GpProblem<f64> {
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    problem(spec, rng.random_range(0.05..0.5), x, dim, y)
}

/// Dense covariance of the noisy targets, including the jitter the fit used.
fn dense_cov(f: &FittedGp<f64>) -> DMatrix<f64> {
    let p = f.problem();
    let mut k = p.kernel.gram(&p.inputs, &p.inputs).unwrap();
    for i in 0..p.len() {
        k[(i, i)] += p.noise_variance + f.jitter();
    }
    k
}

fn mvn_logpdf(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let lu = cov.clone().lu();
    let sol = lu.solve(y).unwrap();
    let n = y.len() as f64;
    -0.5 * y.dot(&sol) - 0.5 * lu.determinant().ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn empty_problem_is_the_prior() {
    let p = problem(&KernelSpec::eq(2.0, 1.0), 0.1, vec![], 1, vec![]);
    let f = fit(p).unwrap();
    let test = Inputs::from_flat(1, vec![0.0, 3.0]);
    let post = f.posterior(&test).unwrap();
    assert_eq!(post.mean.as_slice(), &[0.0, 0.0]);
    assert_eq!(post.latent_variance.as_slice(), &[2.0, 2.0]);
    assert_eq!(f.log_marginal_likelihood(), 0.0);
}

#[test]
fn alpha_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_problem(&mut rng, 5, &KernelSpec::rq(1.0, 0.8, 1.2), 2);
    let f = fit(p.clone()).unwrap();
    let mut k = p.kernel.gram(&p.inputs, &p.inputs).unwrap();
    for i in 0..5 {
        k[(i, i)] += p.noise_variance;
    }
    let dense = k.lu().solve(&p.targets).unwrap();
    assert!((f.alpha() - dense).abs().max() <= 1e-8);
    // reconstruction residual invariant
    let resid = (dense_cov(&f) * f.alpha() - &p.targets).abs().max();
    assert!(resid <= 1e-6 * p.targets.abs().max());
}

#[test]
fn duplicate_inputs_factorise_with_recorded_jitter() {
    let p = problem(
        &KernelSpec::eq(1.0, 1.0),
        1e-6,
        vec![0.5, 0.5, 0.5, 1.0],
        1,
        vec![1.0, 1.1, 0.9, 0.0],
    );
    let f = fit(p.clone()).unwrap();
    assert!(f.jitter() > 0.0);
    assert_eq!(f.jitter_attempts().last().copied(), Some(f.jitter()));
    // identical inputs, identical jitter
    assert_eq!(fit(p).unwrap().jitter(), f.jitter());
}

#[test]
fn conditioning_failure_reports_last_jitter() {
    // rank one plus negligible noise still factorises once jitter is added
    let p = problem(
        &KernelSpec::eq(1.0, 1.0),
        1e-300,
        vec![0.0; 4],
        1,
        vec![1.0, 2.0, 3.0, 4.0],
    );
    assert!(fit(p).is_ok());
    // overflowing variances never yield a usable factor
    let k = Kernel::build(&KernelSpec::eq(1e308, 1.0), 1).unwrap();
    let p = GpProblem::new(
        k,
        1e308,
        Inputs::from_flat(1, vec![0.0, 1.0]),
        DVector::from_vec(vec![1.0, 2.0]),
    )
    .unwrap();
    match fit(p) {
        Err(GpError::Conditioning { jitter }) => assert!(jitter > 0.0),
        other => panic!("expected conditioning error, got {other:?}"),
    }
}

#[test]
fn lml_of_single_zero_target() {
    let p = problem(&KernelSpec::constant(1.0), 1e-12, vec![0.3], 1, vec![0.0]);
    let f = fit(p).unwrap();
    assert_relative_eq!(
        f.log_marginal_likelihood(),
        -0.5 * (2.0 * std::f64::consts::PI).ln(),
        epsilon = 1e-9
    );
    assert_relative_eq!(f.log_marginal_likelihood(), -0.91894, epsilon = 1e-5);
}

#[test]
fn lml_matches_dense_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let p = random_problem(&mut rng, 3, &KernelSpec::eq(1.3, 0.6), 1);
        let f = fit(p.clone()).unwrap();
        assert_relative_eq!(
            f.log_marginal_likelihood(),
            mvn_logpdf(&p.targets, &dense_cov(&f)),
            epsilon = 1e-8
        );
    }
}

#[test]
fn zero_targets_leave_only_the_determinant() {
    let mut p = random_problem(
        &mut ChaCha8Rng::seed_from_u64(3),
        6,
        &KernelSpec::eq(1.0, 0.5),
        1,
    );
    p.targets.fill(0.0);
    let f = fit(p).unwrap();
    let l = f.cholesky_factor();
    let expected =
        -l.diagonal().iter().map(|d| d.ln()).sum::<f64>() - 3.0 * (2.0 * std::f64::consts::PI).ln();
    assert_relative_eq!(f.log_marginal_likelihood(), expected, epsilon = 1e-12);
}

fn fd_gradient(p: &GpProblem<f64>, h: f64) -> Vec<f64> {
    let base = p.log_params();
    (0..base.len())
        .map(|i| {
            let eval = |delta: f64| {
                let mut q = p.clone();
                let mut lp = base.clone();
                lp[i] += delta;
                q.set_log_params(&lp).unwrap();
                fit(q).unwrap().log_marginal_likelihood()
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn lml_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let specs = [
        KernelSpec::eq(1.0, 0.7),
        KernelSpec::rq_ard(0.8, &[0.6, 1.4], 1.5),
        KernelSpec::sum(vec![
            KernelSpec::select(vec![0], KernelSpec::eq(1.0, 0.5)),
            KernelSpec::product(vec![
                KernelSpec::select(vec![1], KernelSpec::linear(0.4)),
                KernelSpec::rq(1.0, 1.0, 0.8),
            ]),
        ]),
    ];
    for t in 0..15 {
        let spec = &specs[t % specs.len()];
        let n = rng.random_range(2..=12);
        let p = random_problem(&mut rng, n, spec, 2);
        let g = fit(p.clone()).unwrap().lml_gradient();
        let fd = fd_gradient(&p, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            assert!(rel <= 1e-4, "analytic {a} vs fd {b}");
        }
    }
}

#[test]
fn noise_gradient_for_pure_noise_model() {
    // linear kernel at the origin: K = 0
    let y = vec![0.5, -1.2, 0.3, 2.0];
    let sigma2 = 0.7;
    let f = fit(problem(
        &KernelSpec::linear(1.0),
        sigma2,
        vec![0.0; 4],
        1,
        y.clone(),
    ))
    .unwrap();
    let s = sigma2 + f.jitter();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let closed = 0.5 * yy / s - 2.0;
    let g = f.lml_gradient();
    assert_relative_eq!(g[1] * s / sigma2, closed, epsilon = 1e-8);
    assert_relative_eq!(g[1], closed, epsilon = 1e-8);
}

#[test]
fn near_interpolation_at_training_point() {
    let p = problem(
        &KernelSpec::eq(1.0, 0.5),
        1e-10,
        vec![0.0, 0.4, 1.0],
        1,
        vec![0.3, -0.8, 1.2],
    );
    let f = fit(p).unwrap();
    let post = f.posterior(&Inputs::from_flat(1, vec![0.4])).unwrap();
    assert!((post.mean[0] + 0.8).abs() <= 1e-4);
    assert!(post.latent_variance[0] <= 1e-4);
}

#[test]
fn posterior_matches_dense_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let p = random_problem(&mut rng, 4, &KernelSpec::rq(1.1, 0.7, 2.0), 1);
        let f = fit(p.clone()).unwrap();
        let test = Inputs::from_flat(1, (0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
        let post = f.posterior(&test).unwrap();
        let kxx = dense_cov(&f);
        let kxs = p.kernel.gram(&p.inputs, &test).unwrap();
        let kss = p.kernel.gram(&test, &test).unwrap();
        let lu = kxx.lu();
        let mean = kxs.transpose() * lu.solve(&p.targets).unwrap();
        let cov = &kss - kxs.transpose() * lu.solve(&kxs).unwrap();
        assert!((post.mean - mean).abs().max() <= 1e-6);
        assert!((post.latent_variance - cov.diagonal()).abs().max() <= 1e-6);
        let (jm, jc) = f.posterior_joint(&test).unwrap();
        assert!((jc - cov).abs().max() <= 1e-6);
        assert!((jm - f.posterior(&test).unwrap().mean).abs().max() <= 1e-12);
    }
}

#[test]
fn centring_shifts_means_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_problem(&mut rng, 8, &KernelSpec::eq(1.0, 0.5), 1);
    let shifted = GpProblem::centred(
        p.kernel.clone(),
        p.noise_variance,
        p.inputs.clone(),
        p.targets.add_scalar(10.0),
    )
    .unwrap();
    assert_relative_eq!(
        shifted.mean_offset,
        p.targets.mean() + 10.0,
        epsilon = 1e-12
    );
    let test = Inputs::from_flat(1, vec![0.1, 0.9]);
    let a = fit(shifted).unwrap().posterior(&test).unwrap();
    let uncentred = GpProblem::centred(
        p.kernel.clone(),
        p.noise_variance,
        p.inputs.clone(),
        p.targets.clone(),
    )
    .unwrap();
    let b = fit(uncentred).unwrap().posterior(&test).unwrap();
    assert!((a.mean.add_scalar(-10.0) - b.mean).abs().max() < 1e-10);
    assert!((a.latent_variance - b.latent_variance).abs().max() < 1e-12);
}

#[test]
fn noisy_variance_adds_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_problem(&mut rng, 6, &KernelSpec::eq(1.0, 0.5), 1);
    let s = p.noise_variance;
    let post = fit(p)
        .unwrap()
        .posterior(&Inputs::from_flat(1, vec![0.0, 5.0]))
        .unwrap();
    assert_eq!(post.noisy_variance, post.latent_variance.add_scalar(s));
    assert_eq!(post.clamped, 0);
}

#[test]
fn component_posteriors_sum_to_full_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = KernelSpec::sum(vec![
        KernelSpec::eq(1.0, 0.3),
        KernelSpec::rq(0.5, 1.5, 1.0),
    ]);
    let p = random_problem(&mut rng, 10, &spec, 1);
    let f = fit(p.clone()).unwrap();
    let test = Inputs::from_flat(1, (0..50).map(|i| -2.0 + 0.08 * i as f64).collect());
    let parts = p.kernel.summands().unwrap();
    let total = parts
        .iter()
        .map(|c| f.component_posterior(c, &test).unwrap().0)
        .fold(DVector::zeros(50), |a, m| a + m);
    assert!((total - f.posterior(&test).unwrap().mean).abs().max() <= 1e-8);
}

#[test]
fn optimize_with_zero_budget_keeps_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_problem(&mut rng, 10, &KernelSpec::eq(1.0, 0.5), 1);
    let out = optimize(
        &p,
        &OptimizeOptions {
            restarts: 1,
            max_iter: 0,
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(out.problem.log_params(), p.log_params());
}

fn eq_sample(seed: u64, n: usize, lengthscale: f64, noise: f64) -> GpProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|i| 5.0 * i as f64 / (n - 1) as f64).collect();
    let truth = Kernel::<f64>::build(&KernelSpec::eq(1.0, lengthscale), 1).unwrap();
    let inputs = Inputs::from_flat(1, x);
    let mut k = truth.gram_sym(&inputs).unwrap();
    for i in 0..n {
        k[(i, i)] += noise + 1e-10;
    }
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = l * z;
    let start = Kernel::build(&KernelSpec::eq(1.0, 1.0), 1).unwrap();
    GpProblem::new(start, 0.1, inputs, y).unwrap()
}

#[test]
fn recovers_known_lengthscale() {
    let truth = 0.4f64;
    let p = eq_sample(10, 60, truth, 0.01);
    let out = optimize(
        &p,
        &OptimizeOptions {
            restarts: 5,
            max_iter: 200,
            seed: 3,
        },
    )
    .unwrap();
    let learned = out.problem.kernel.params()[1];
    assert!(
        (learned.ln() - truth.ln()).abs() <= 0.5,
        "learned lengthscale {learned}"
    );
}

#[test]
fn optimisation_never_decreases_likelihood() {
    for seed in 0..10 {
        let p = eq_sample(100 + seed, 25, 0.7, 0.05);
        let before = fit(p.clone()).unwrap().log_marginal_likelihood();
        let out = optimize(
            &p,
            &OptimizeOptions {
                restarts: 3,
                max_iter: 100,
                seed,
            },
        )
        .unwrap();
        let after = fit(out.problem.clone()).unwrap().log_marginal_likelihood();
        assert!(after >= before, "seed {seed}: {after} < {before}");
        for r in &out.restarts {
            assert!(r.final_lml.unwrap() >= r.initial_lml.unwrap());
        }
    }
}

#[test]
fn optimisation_is_deterministic() {
    let p = eq_sample(7, 30, 0.5, 0.05);
    let opts = OptimizeOptions {
        restarts: 4,
        max_iter: 50,
        seed: 42,
    };
    let a = optimize(&p, &opts).unwrap();
    let b = optimize(&p, &opts).unwrap();
    assert_eq!(a.problem.log_params(), b.problem.log_params());
    assert_eq!(a.restarts, b.restarts);
}

#[test]
fn stationary_point_has_small_gradient() {
    let p = eq_sample(12, 40, 0.6, 0.05);
    let out = optimize(
        &p,
        &OptimizeOptions {
            restarts: 2,
            max_iter: 400,
            seed: 0,
        },
    )
    .unwrap();
    let g = fit(out.problem).unwrap().lml_gradient();
    assert!(g.iter().all(|v| v.abs() <= 1e-4), "{g:?}");
}

#[test]
fn single_precision_fit() {
    let k = Kernel::<f32>::build(&KernelSpec::eq(1.0, 0.5), 1).unwrap();
    let p = GpProblem::new(
        k,
        0.01f32,
        Inputs::from_flat(1, vec![0.0, 0.5, 1.0]),
        DVector::from_vec(vec![0.0f32, 1.0, 0.0]),
    )
    .unwrap();
    let f = fit(p).unwrap();
    let post = f.posterior(&Inputs::from_flat(1, vec![0.5])).unwrap();
    assert!((post.mean[0] - 1.0).abs() < 0.05);
    let g = f.lml_gradient();
    assert_eq!(g.len(), 3);
}

#[test]
fn factor_inverse_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [1, 2, 7, 30] {
        let p = random_problem(&mut rng, n, &KernelSpec::rq(1.0, 0.8, 1.5), 2);
        let f = fit(p).unwrap();
        let want = dense_cov(&f).try_inverse().unwrap();
        let got = inverse_from_factor(&f.cholesky_factor());
        assert!((got - &want).abs().max() <= 1e-9 * want.abs().max());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variances_are_ordered_and_nonnegative(n in 0usize..15, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, &KernelSpec::rq_ard(1.0, &[0.5, 1.2], 1.0), 2);
        let noise = p.noise_variance;
        let f = fit(p).unwrap();
        let test = Inputs::from_flat(2, (0..10).map(|_| rng.random_range(-3.0..3.0)).collect());
        let post = f.posterior(&test).unwrap();
        let prior = f.problem().kernel.diag(&test).unwrap();
        for j in 0..5 {
            prop_assert!(post.latent_variance[j] >= 0.0);
            prop_assert!(post.latent_variance[j] <= prior[j] + 1e-12);
            prop_assert!((post.noisy_variance[j] - post.latent_variance[j] - noise).abs() <= 1e-12);
        }
        prop_assert!(f.log_marginal_likelihood().is_finite());
    }

    #[test]
    fn fitting_is_a_pure_function(n in 1usize..12, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, &KernelSpec::eq(1.0, 0.6), 2);
        let (a, b) = (fit(p.clone()).unwrap(), fit(p).unwrap());
        prop_assert_eq!(a.jitter_attempts(), b.jitter_attempts());
        prop_assert_eq!(a.log_marginal_likelihood(), b.log_marginal_likelihood());
        prop_assert_eq!(a.lml_gradient(), b.lml_gradient());
    }
}
