use approx::assert_relative_eq;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn k64(spec: &KernelSpec, dim: usize) -> Kernel<f64> {
    Kernel::build(spec, dim).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Inputs<f64> {
    let data = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    Inputs::from_flat(dim, data)
}

/// Kernels spanning every node kind over a 3-dimensional input.
fn zoo() -> Vec<KernelSpec> {
    vec![
        KernelSpec::eq(1.3, 0.7),
        KernelSpec::rq(0.8, 1.1, 0.6),
        KernelSpec::eq_ard(1.0, &[0.5, 1.5, 2.0]),
        KernelSpec::rq_ard(1.2, &[0.4, 0.9, 1.7], 2.5),
        KernelSpec::sum(vec![
            KernelSpec::scaled(0.5, KernelSpec::eq(1.0, 0.8)),
            KernelSpec::product(vec![KernelSpec::rq(1.0, 0.6, 1.5), KernelSpec::linear(0.3)]),
        ]),
        KernelSpec::product(vec![
            KernelSpec::select(vec![0], KernelSpec::eq(2.0, 0.5)),
            KernelSpec::select(vec![1, 2], KernelSpec::rq_ard(1.0, &[0.7, 1.3], 0.9)),
            KernelSpec::constant(0.7),
        ]),
        gpar_l_nl(
            LayerShape::new(1, 2),
            |_| KernelSpec::rq(1.0, 0.5, 1.0),
            |_| KernelSpec::eq(0.4, 0.9),
            |d| KernelSpec::eq_ard(0.6, &vec![1.2; d]),
        ),
    ]
}

#[test]
fn eq_leaf_value() {
    let k = k64(&KernelSpec::eq(1.0, 1.0), 1);
    assert_relative_eq!(
        k.eval(&[0.0], &[1.0]).unwrap(),
        (-0.5f64).exp(),
        max_relative = 1e-15
    );
    assert_relative_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.60653, epsilon = 1e-5);
}

#[test]
fn rq_leaf_value() {
    let k = k64(&KernelSpec::rq(1.0, 1.0, 1.0), 1);
    assert_relative_eq!(
        k.eval(&[0.0], &[1.0]).unwrap(),
        1.0 / 1.5,
        max_relative = 1e-15
    );
}

#[test]
fn gpar_l_with_constant_coefficient() {
    // k_2(x,x') + 1 * y_1 y_1'
    let spec = gpar_l(
        LayerShape::new(1, 1),
        |_| KernelSpec::eq(1.0, 1.0),
        |_| KernelSpec::constant(1.0),
    );
    let k = k64(&spec, 2);
    let base = (-0.5f64 * 0.25).exp();
    assert_relative_eq!(
        k.eval(&[0.0, 2.0], &[0.5, 3.0]).unwrap(),
        base + 6.0,
        max_relative = 1e-14
    );
}

#[test]
fn gpar_nl_is_additive_in_x_and_y() {
    let spec = gpar_nl(
        LayerShape::new(2, 2),
        |d| KernelSpec::eq_ard(1.0, &vec![0.5; d]),
        |_| KernelSpec::rq(0.7, 1.3, 2.0),
    );
    let k = k64(&spec, 4);
    let kx = k64(&KernelSpec::eq_ard(1.0, &[0.5, 0.5]), 2);
    let ky = k64(&KernelSpec::rq(0.7, 1.3, 2.0), 2);
    let a = [0.1, -0.4, 1.0, 2.0];
    let b = [0.3, 0.2, -0.5, 1.5];
    let expected = kx.eval(&a[..2], &b[..2]).unwrap() + ky.eval(&a[2..], &b[2..]).unwrap();
    assert_relative_eq!(k.eval(&a, &b).unwrap(), expected, max_relative = 1e-14);
}

#[test]
fn gpar_nl_structure_swaps() {
    // exchanging the x blocks leaves the y term untouched and vice versa
    let spec = gpar_nl(
        LayerShape::new(1, 1),
        |_| KernelSpec::eq(1.0, 0.5),
        |_| KernelSpec::eq(2.0, 1.5),
    );
    let k = k64(&spec, 2);
    let kx = k64(&KernelSpec::eq(1.0, 0.5), 1);
    let (a, b) = ([0.2, 1.0], [0.9, -0.3]);
    let swapped_x = ([0.9, 1.0], [0.2, -0.3]);
    let d1 = k.eval(&a, &b).unwrap() - kx.eval(&a[..1], &b[..1]).unwrap();
    let d2 = k.eval(&swapped_x.0, &swapped_x.1).unwrap()
        - kx.eval(&swapped_x.0[..1], &swapped_x.1[..1]).unwrap();
    assert_relative_eq!(d1, d2, epsilon = 1e-14);
}

#[test]
fn gpar_l_collapses_when_previous_outputs_are_zero() {
    let spec = gpar_l(
        LayerShape::new(1, 3),
        |_| KernelSpec::rq(1.1, 0.4, 0.8),
        |_| KernelSpec::eq(0.9, 0.3),
    );
    let k = k64(&spec, 4);
    let base = k64(&KernelSpec::rq(1.1, 0.4, 0.8), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (x, xp) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        assert_eq!(
            k.eval(&[x, 0.0, 0.0, 0.0], &[xp, 0.0, 0.0, 0.0]).unwrap(),
            base.eval(&[x], &[xp]).unwrap()
        );
    }
}

#[test]
fn nested_composite_matches_hand_composition() {
    let spec = KernelSpec::sum(vec![
        KernelSpec::scaled(0.3, KernelSpec::eq(1.2, 0.8)),
        KernelSpec::product(vec![KernelSpec::rq(0.9, 1.4, 0.7), KernelSpec::linear(0.5)]),
    ]);
    let k = k64(&spec, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let eq = 1.2 * (-0.5 * r2 / 0.64).exp();
        let rq = 0.9 * (1.0 + r2 / (2.0 * 0.7 * 1.96)).powf(-0.7);
        let lin = 0.5 * (a[0] * b[0] + a[1] * b[1]);
        assert_relative_eq!(
            k.eval(&a, &b).unwrap(),
            0.3 * eq + rq * lin,
            max_relative = 1e-13
        );
    }
}

#[test]
fn zero_variance_rejected_with_path() {
    let spec = KernelSpec::sum(vec![KernelSpec::eq(1.0, 1.0), KernelSpec::eq(0.0, 1.0)]);
    match Kernel::<f64>::build(&spec, 1) {
        Err(KernelError::Invalid { path, .. }) => assert_eq!(path, "children[1].params.variance"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_dims_and_structure_rejected() {
    let bad_dims = KernelSpec::select(vec![3], KernelSpec::eq(1.0, 1.0));
    assert!(
        matches!(Kernel::<f64>::build(&bad_dims, 2), Err(KernelError::Invalid { path, .. }) if path == "dims")
    );
    let empty_sum = KernelSpec::sum(vec![]);
    assert!(Kernel::<f64>::build(&empty_sum, 1).is_err());
    let mut leaf_with_child = KernelSpec::eq(1.0, 1.0);
    leaf_with_child.children.push(KernelSpec::constant(1.0));
    assert!(Kernel::<f64>::build(&leaf_with_child, 1).is_err());
    let mut missing = KernelSpec::rq(1.0, 1.0, 1.0);
    missing.params.remove("alpha");
    assert!(Kernel::<f64>::build(&missing, 1).is_err());
    // ARD needs exactly one lengthscale per visible dimension
    assert!(Kernel::<f64>::build(&KernelSpec::eq_ard(1.0, &[1.0, 2.0]), 3).is_err());
    assert!(Kernel::<f64>::build(&KernelSpec::eq_ard(1.0, &[1.0, 2.0, 3.0]), 2).is_err());
}

#[test]
fn unknown_kind_reports_path() {
    let text = r#"{"kind":"sum","children":[{"kind":"eq","params":{"variance":1,"lengthscale":1}},{"kind":"matern"}]}"#;
    match KernelSpec::from_json(text) {
        Err(KernelError::Parse { path, .. }) => assert_eq!(path, "children[1].kind"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let k = k64(&KernelSpec::eq(1.0, 1.0), 2);
    assert_eq!(
        k.eval(&[0.0], &[0.0, 1.0]),
        Err(KernelError::DimensionMismatch {
            expected: 2,
            given: 1
        })
    );
}

#[test]
fn json_round_trip_and_spec_round_trip() {
    for spec in zoo() {
        let back = KernelSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(k64(&spec, 3).to_spec(), spec);
    }
}

#[test]
fn single_point_gram_is_prior_variance() {
    let k = k64(&KernelSpec::rq(2.5, 1.0, 1.0), 1);
    let a = Inputs::from_flat(1, vec![0.7]);
    let g = k.gram(&a, &a).unwrap();
    assert_eq!(g.shape(), (1, 1));
    assert_eq!(g[(0, 0)], 2.5);
}

#[test]
fn gram_symmetric_and_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in zoo() {
        let k = k64(&spec, 3);
        let a = random_points(&mut rng, 20, 3);
        let g = k.gram(&a, &a).unwrap();
        let asym = (&g - g.transpose()).abs().max();
        assert!(asym <= 1e-12, "asymmetry {asym}");
        let eig = SymmetricEigen::new(g.clone()).eigenvalues.min();
        assert!(eig >= -1e-10, "min eigenvalue {eig} for {spec:?}");
        assert_eq!(g, k.gram_sym(&a).unwrap());
    }
}

#[test]
fn eq_variance_gradient_equals_value() {
    let k = k64(&KernelSpec::eq(1.7, 0.6), 2);
    let (a, b) = ([0.1, 0.5], [-0.3, 0.9]);
    let g = k.grad_hyper_named(&a, &b).unwrap();
    assert_eq!(g["params.variance"], k.eval(&a, &b).unwrap());
}

#[test]
fn sum_gradient_concatenates_children() {
    let c1 = KernelSpec::eq(1.1, 0.7);
    let c2 = KernelSpec::rq(0.6, 1.2, 2.0);
    let k = k64(&KernelSpec::sum(vec![c1.clone(), c2.clone()]), 1);
    let (a, b) = ([0.2], [0.9]);
    let mut expected = k64(&c1, 1).grad_hyper(&a, &b).unwrap();
    expected.extend(k64(&c2, 1).grad_hyper(&a, &b).unwrap());
    assert_eq!(k.grad_hyper(&a, &b).unwrap(), expected);
}

fn fd_check(k: &Kernel<f64>, a: &[f64], b: &[f64]) {
    let g = k.grad_hyper(a, b).unwrap();
    let base = k.log_params();
    let h = 1e-5;
    for p in 0..k.n_params() {
        let mut up = base.clone();
        up[p] += h;
        let mut dn = base.clone();
        dn[p] -= h;
        let fd = (k.with_log_params(&up).unwrap().eval(a, b).unwrap()
            - k.with_log_params(&dn).unwrap().eval(a, b).unwrap())
            / (2.0 * h);
        let scale = fd.abs().max(g[p].abs()).max(1e-8);
        assert!(
            (fd - g[p]).abs() / scale <= 1e-5,
            "param {} analytic {} fd {}",
            k.params_info()[p].name,
            g[p],
            fd
        );
    }
}

#[test]
fn gradients_match_finite_differences_on_100_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let kernels = zoo();
    for trial in 0..100 {
        let spec = &kernels[trial % kernels.len()];
        let mut k = k64(spec, 3);
        let lp: Vec<f64> = k
            .log_params()
            .iter()
            .map(|v| v + rng.random_range(-0.5..0.5))
            .collect();
        k.set_log_params(&lp).unwrap();
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        fd_check(&k, &a, &b);
    }
}

#[test]
fn summands_reassemble_the_sum() {
    let spec = &zoo()[6];
    let k = k64(spec, 3);
    let parts = k.summands().unwrap();
    assert_eq!(parts.len(), 4);
    let (a, b) = ([0.3, 1.0, -1.0], [0.1, 0.5, 0.2]);
    let total: f64 = parts.iter().map(|p| p.eval(&a, &b).unwrap()).sum();
    assert_relative_eq!(total, k.eval(&a, &b).unwrap(), max_relative = 1e-14);
    assert!(k64(&KernelSpec::eq(1.0, 1.0), 3).summands().is_none());
}

#[test]
fn single_precision_agrees_with_double() {
    let spec = &zoo()[4];
    let k64v = k64(spec, 3)
        .eval(&[0.1, 0.2, 0.3], &[0.3, -0.2, 0.5])
        .unwrap();
    let k32 = Kernel::<f32>::build(spec, 3).unwrap();
    let v32 = k32.eval(&[0.1, 0.2, 0.3], &[0.3, -0.2, 0.5]).unwrap();
    assert!((v32 as f64 - k64v).abs() < 1e-5);
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, dim)
}

proptest! {
    #[test]
    fn symmetric_for_every_kernel(which in 0usize..7, a in point(3), b in point(3)) {
        let k = k64(&zoo()[which], 3);
        let ab = k.eval(&a, &b).unwrap();
        let ba = k.eval(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        prop_assert!(k.eval(&a, &a).unwrap() >= 0.0 || zoo()[which].kind == NodeKind::Sum);
    }

    #[test]
    fn psd_relative_to_trace(which in 0usize..7, n in 2usize..30, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k64(&zoo()[which], 3);
        let a = random_points(&mut rng, n, 3);
        let g: DMatrix<f64> = k.gram_sym(&a).unwrap();
        let tr = g.trace();
        let min = SymmetricEigen::new(g).eigenvalues.min();
        prop_assert!(min >= -1e-8 * tr.abs().max(1e-300));
    }
}
