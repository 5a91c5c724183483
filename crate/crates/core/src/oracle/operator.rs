//! The operator `T f = u + A∘f` on functions sampled on a finite grid.
//!
//! When component `i` of `A` reads only components `< i`, `T^(M-1) u` is the
//! unique fixed point of `T`, and for linear `A` it equals `Σ_{k<M} A^k u`.

use nalgebra::DMatrix;
use rand::Rng;

use super::OracleError;

/// `G × M` samples of a function `X → R^M` on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: DMatrix<f64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self, OracleError> {
        if grid.is_empty() {
            return Err(OracleError::Shape(
                "grid must have at least one point".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(OracleError::Shape(
                "grid must be strictly increasing".into(),
            ));
        }
        if values.nrows() != grid.len() || values.ncols() == 0 {
            return Err(OracleError::Shape(format!(
                "values are {}×{}, grid has {} points",
                values.nrows(),
                values.ncols(),
                grid.len()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_outputs(&self) -> usize {
        self.values.ncols()
    }

    fn with_values(&self, values: DMatrix<f64>) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        (&self.values - &other.values).abs().max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// `a · tanh(b f_j(x_g) + c x_g)`.
    Tanh { a: f64, b: f64, c: f64 },
    /// `a · sin(Σ_h W[g, h] f_j(x_h))`.
    SinMix { a: f64, weights: DMatrix<f64> },
    /// `Σ_h C[g, h] f_j(x_h)`; quadrature weights are folded into `C`.
    Linear { matrix: DMatrix<f64> },
}

/// Contribution of component `source` of the argument to component `target` of the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub target: usize,
    pub source: usize,
    pub kind: TermKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorA {
    m: usize,
    g: usize,
    terms: Vec<Term>,
}

impl OperatorA {
    /// Requires `source < target` for every term, so component 0 is identically zero.
    pub fn new(m: usize, g: usize, terms: Vec<Term>) -> Result<Self, OracleError> {
        let op = Self::new_unchecked(m, g, terms)?;
        if !op.is_lower_triangular() {
            return Err(OracleError::Precondition(
                "a term reads a component at or after its target".into(),
            ));
        }
        Ok(op)
    }

    /// Shape checks only; for constructing counterexamples.
    pub fn new_unchecked(m: usize, g: usize, terms: Vec<Term>) -> Result<Self, OracleError> {
        for t in &terms {
            if t.target >= m || t.source >= m {
                return Err(OracleError::Shape(format!(
                    "term {}←{} outside {m} components",
                    t.target, t.source
                )));
            }
            let mat = match &t.kind {
                TermKind::Tanh { .. } => None,
                TermKind::SinMix { weights, .. } => Some(weights),
                TermKind::Linear { matrix } => Some(matrix),
            };
            if mat.is_some_and(|w| w.shape() != (g, g)) {
                return Err(OracleError::Shape(format!("term matrices must be {g}×{g}")));
            }
        }
        Ok(OperatorA { m, g, terms })
    }

    pub fn zero(m: usize, g: usize) -> Self {
        OperatorA {
            m,
            g,
            terms: Vec::new(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_lower_triangular(&self) -> bool {
        self.terms.iter().all(|t| t.source < t.target)
    }

    pub fn is_linear(&self) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(t.kind, TermKind::Linear { .. }))
    }

    fn check(&self, f: &GridFunction) -> Result<(), OracleError> {
        if f.values.shape() != (self.g, self.m) {
            return Err(OracleError::Shape(format!(
                "function is {}×{}, operator expects {}×{}",
                f.values.nrows(),
                f.values.ncols(),
                self.g,
                self.m
            )));
        }
        Ok(())
    }

    /// `A∘f` on the grid.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction, OracleError> {
        self.check(f)?;
        let mut out = DMatrix::zeros(self.g, self.m);
        for t in &self.terms {
            let src = f.values.column(t.source);
            match &t.kind {
                TermKind::Tanh { a, b, c } => {
                    for gi in 0..self.g {
                        out[(gi, t.target)] += a * (b * src[gi] + c * f.grid[gi]).tanh();
                    }
                }
                TermKind::SinMix { a, weights } => {
                    let mix = weights * src;
                    for gi in 0..self.g {
                        out[(gi, t.target)] += a * mix[gi].sin();
                    }
                }
                TermKind::Linear { matrix } => {
                    let lin = matrix * src;
                    for gi in 0..self.g {
                        out[(gi, t.target)] += lin[gi];
                    }
                }
            }
        }
        Ok(f.with_values(out))
    }

    /// Random strictly-lower-triangular operator mixing pointwise `tanh` and
    /// grid-mixing `sin` terms, coefficients of order one.
    pub fn random_nonlinear(m: usize, g: usize, rng: &mut impl Rng) -> Self {
        let mut terms = Vec::new();
        for target in 1..m {
            for source in 0..target {
                terms.push(Term {
                    target,
                    source,
                    kind: TermKind::Tanh {
                        a: rng.random_range(-1.5..1.5),
                        b: rng.random_range(-2.0..2.0),
                        c: rng.random_range(-1.0..1.0),
                    },
                });
                if rng.random_bool(0.7) {
                    let weights =
                        DMatrix::from_fn(g, g, |_, _| rng.random_range(-1.0..1.0) / g as f64);
                    terms.push(Term {
                        target,
                        source,
                        kind: TermKind::SinMix {
                            a: rng.random_range(-1.0..1.0),
                            weights,
                        },
                    });
                }
            }
        }
        OperatorA { m, g, terms }
    }

    /// Random strictly-lower-triangular integral operator
    /// `(A f)_i(x) = Σ_{j<i} ∫ a_ij exp(−(x−x')²/ℓ_ij) f_j(x') dx'`, discretised
    /// with trapezoidal weights on `grid`.
    pub fn random_linear(m: usize, grid: &[f64], rng: &mut impl Rng) -> Self {
        let g = grid.len();
        let wts = trapezoid_weights(grid);
        let mut terms = Vec::new();
        for target in 1..m {
            for source in 0..target {
                let a: f64 = rng.random_range(-2.0..2.0);
                let ell: f64 = rng.random_range(0.05..1.0);
                let matrix = DMatrix::from_fn(g, g, |i, h| {
                    a * (-(grid[i] - grid[h]).powi(2) / ell).exp() * wts[h]
                });
                terms.push(Term {
                    target,
                    source,
                    kind: TermKind::Linear { matrix },
                });
            }
        }
        OperatorA { m, g, terms }
    }
}

pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let g = grid.len();
    if g == 1 {
        return vec![1.0];
    }
    (0..g)
        .map(|i| {
            let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let right = if i + 1 < g {
                grid[i + 1] - grid[i]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

/// `T f = u + A∘f`.
pub fn t_apply(
    a: &OperatorA,
    u: &GridFunction,
    f: &GridFunction,
) -> Result<GridFunction, OracleError> {
    a.check(u)?;
    if u.grid != f.grid {
        return Err(OracleError::Shape("u and f live on different grids".into()));
    }
    let af = a.apply(f)?;
    Ok(u.with_values(&u.values + af.values))
}

/// `T^n u` (so `n = 0` returns `u`).
pub fn t_power(a: &OperatorA, u: &GridFunction, n: usize) -> Result<GridFunction, OracleError> {
    let mut f = u.clone();
    for _ in 0..n {
        f = t_apply(a, u, &f)?;
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// `‖g − (u + A∘g)‖∞` at `g = T^(M-1) u`.
    pub residual: f64,
    pub lower_triangular: bool,
    /// Set when the operator is not triangular or the residual exceeds 1e-10.
    pub flagged: bool,
}

pub fn verify_fixed_point(
    a: &OperatorA,
    u: &GridFunction,
) -> Result<FixedPointReport, OracleError> {
    let g = t_power(a, u, a.m.saturating_sub(1))?;
    let residual = g.sup_distance(&t_apply(a, u, &g)?);
    let lower_triangular = a.is_lower_triangular();
    Ok(FixedPointReport {
        residual,
        lower_triangular,
        flagged: !lower_triangular || !(residual <= 1e-10),
    })
}

/// `‖T^(M-1) u − Σ_{k=0}^{M-1} A^k u‖∞` for linear `A`.
pub fn verify_linear_series(a: &OperatorA, u: &GridFunction) -> Result<f64, OracleError> {
    if !a.is_linear() {
        return Err(OracleError::Precondition("operator is not linear".into()));
    }
    let lhs = t_power(a, u, a.m.saturating_sub(1))?;
    let mut term = u.clone();
    let mut series = u.values.clone();
    for _ in 1..a.m {
        term = a.apply(&term)?;
        series += &term.values;
    }
    Ok((&lhs.values - series).abs().max())
}

/// `‖A^M u‖∞`; zero for strictly-lower-triangular linear `A`.
pub fn nilpotency_residual(a: &OperatorA, u: &GridFunction) -> Result<f64, OracleError> {
    let mut f = u.clone();
    for _ in 0..a.m {
        f = a.apply(&f)?;
    }
    Ok(f.values.abs().max())
}
