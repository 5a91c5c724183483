//! Kernel designs for a GPAR layer.
//!
//! Layer `position` (zero-based) sees an augmented input of dimension
//! `x_dim + position`: the `x` block followed by the preceding outputs in model order.

use super::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub x_dim: usize,
    pub position: usize,
}

impl LayerShape {
    pub fn new(x_dim: usize, position: usize) -> Self {
        LayerShape { x_dim, position }
    }

    pub fn input_dim(&self) -> usize {
        self.x_dim + self.position
    }

    pub fn x_dims(&self) -> Vec<usize> {
        (0..self.x_dim).collect()
    }

    pub fn y_dims(&self) -> Vec<usize> {
        (self.x_dim..self.input_dim()).collect()
    }
}

/// Kernel over `x` only, ignoring every preceding output.
pub fn independent(shape: LayerShape, kx: impl Fn(usize) -> KernelSpec) -> KernelSpec {
    KernelSpec::select(shape.x_dims(), kx(shape.x_dim))
}

/// `k_x(x, x') + k_y(y, y')`; the first layer reduces to `k_x`.
pub fn gpar_nl(
    shape: LayerShape,
    kx: impl Fn(usize) -> KernelSpec,
    ky: impl Fn(usize) -> KernelSpec,
) -> KernelSpec {
    let x_part = KernelSpec::select(shape.x_dims(), kx(shape.x_dim));
    if shape.position == 0 {
        return x_part;
    }
    KernelSpec::sum(vec![
        x_part,
        KernelSpec::select(shape.y_dims(), ky(shape.position)),
    ])
}

fn linear_terms(shape: LayerShape, coef: &impl Fn(usize) -> KernelSpec) -> Vec<KernelSpec> {
    (0..shape.position)
        .map(|j| {
            KernelSpec::product(vec![
                KernelSpec::select(shape.x_dims(), coef(shape.x_dim)),
                KernelSpec::select(vec![shape.x_dim + j], KernelSpec::linear(1.0)),
            ])
        })
        .collect()
}

/// `k(x, x') + Σ_j k_j(x, x') y_j y_j'`.
pub fn gpar_l(
    shape: LayerShape,
    base: impl Fn(usize) -> KernelSpec,
    coef: impl Fn(usize) -> KernelSpec,
) -> KernelSpec {
    let x_part = KernelSpec::select(shape.x_dims(), base(shape.x_dim));
    if shape.position == 0 {
        return x_part;
    }
    let mut terms = vec![x_part];
    terms.extend(linear_terms(shape, &coef));
    KernelSpec::sum(terms)
}

/// The linear construction plus an additive nonlinear `k_y(y, y')` term.
pub fn gpar_l_nl(
    shape: LayerShape,
    base: impl Fn(usize) -> KernelSpec,
    coef: impl Fn(usize) -> KernelSpec,
    ky: impl Fn(usize) -> KernelSpec,
) -> KernelSpec {
    let x_part = KernelSpec::select(shape.x_dims(), base(shape.x_dim));
    if shape.position == 0 {
        return x_part;
    }
    let mut terms = vec![x_part];
    terms.extend(linear_terms(shape, &coef));
    terms.push(KernelSpec::select(shape.y_dims(), ky(shape.position)));
    KernelSpec::sum(terms)
}

/// RQ over `x` for the first layer, `k_1(x, x') + k_2((x, y), (x', y'))` with both
/// RQ afterwards.
pub fn rq_plus_rq(shape: LayerShape) -> KernelSpec {
    let x_part = KernelSpec::select(shape.x_dims(), KernelSpec::rq(1.0, 0.2, 1.0));
    if shape.position == 0 {
        return x_part;
    }
    let all = KernelSpec::rq_ard(1.0, &vec![1.0; shape.input_dim()], 1.0);
    KernelSpec::sum(vec![x_part, all])
}
