//! Covariance functions over augmented inputs `(x, y_1..y_{i-1})`.
//!
//! A [`KernelSpec`] is the serialisable description; [`Kernel`] is the evaluable
//! form. Hyperparameters are held in natural units and exposed to optimisers in
//! log coordinates: [`Kernel::log_params`], [`Kernel::set_log_params`] and every
//! gradient are with respect to `ln θ`.

mod presets;
mod spec;

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Real;

pub use presets::{gpar_l, gpar_l_nl, gpar_nl, independent, rq_plus_rq, LayerShape};
pub use spec::{KernelSpec, NodeKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel spec parse error at `{path}`: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid kernel spec at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("input dimension mismatch: kernel expects {expected}, got {given}")]
    DimensionMismatch { expected: usize, given: usize },
    #[error("parameter vector has length {given}, kernel has {expected} parameters")]
    ParamCount { expected: usize, given: usize },
}

/// One point `(x, y_prev)` stored contiguously, `x` first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedInput<T> {
    values: Vec<T>,
    x_dim: usize,
}

impl<T: Real> AugmentedInput<T> {
    pub fn new(x: &[T], y_prev: &[T]) -> Self {
        let mut values = Vec::with_capacity(x.len() + y_prev.len());
        values.extend_from_slice(x);
        values.extend_from_slice(y_prev);
        AugmentedInput {
            values,
            x_dim: x.len(),
        }
    }

    pub fn x(&self) -> &[T] {
        &self.values[..self.x_dim]
    }

    pub fn y_prev(&self) -> &[T] {
        &self.values[self.x_dim..]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Row-major batch of input points of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Inputs<T> {
    pub fn new(dim: usize) -> Self {
        Inputs {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Self {
        assert!(
            dim == 0 && data.is_empty() || dim > 0 && data.len().is_multiple_of(dim),
            "ragged input data"
        );
        Inputs { dim, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(dim: usize, rows: &[R]) -> Result<Self, KernelError> {
        let mut out = Inputs::new(dim);
        for r in rows {
            out.push(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[T]) -> Result<(), KernelError> {
        if row.len() != self.dim {
            return Err(KernelError::DimensionMismatch {
                expected: self.dim,
                given: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Range (max − min) of column `d`; zero for an empty batch.
    pub fn column_range(&self, d: usize) -> T {
        let mut it = self.rows().map(|r| r[d]);
        let Some(first) = it.next() else {
            return T::zero();
        };
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceKind {
    /// Amplitude of a stationary leaf or of a `scaled` node.
    Signal,
    /// Amplitude of a `linear` leaf over the given absolute dimensions.
    Linear {
        dims: Vec<usize>,
    },
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamRole {
    Variance(VarianceKind),
    /// Lengthscale acting on the given absolute input dimensions.
    Lengthscale {
        dims: Vec<usize>,
    },
    Alpha,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub role: ParamRole,
}

#[derive(Debug, Clone)]
enum Lengthscales {
    Shared(usize),
    /// First index of `dims.len()` consecutive parameters.
    Ard(usize),
}

impl Lengthscales {
    #[inline]
    fn index(&self, k: usize) -> usize {
        match *self {
            Lengthscales::Shared(i) => i,
            Lengthscales::Ard(start) => start + k,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Eq {
        var: usize,
        ls: Lengthscales,
        dims: Vec<usize>,
    },
    Rq {
        var: usize,
        ls: Lengthscales,
        alpha: usize,
        dims: Vec<usize>,
    },
    Linear {
        var: usize,
        dims: Vec<usize>,
    },
    Constant {
        var: usize,
    },
    Sum(Vec<Node>),
    Product(Vec<Node>),
    Scaled {
        var: usize,
        child: Box<Node>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    span: Range<usize>,
    op: Op,
}

/// Evaluable covariance function. Immutable apart from explicit parameter updates.
#[derive(Debug, Clone)]
pub struct Kernel<T> {
    spec: KernelSpec,
    input_dim: usize,
    root: Node,
    theta: Vec<T>,
    info: Vec<ParamInfo>,
}

struct Builder<T> {
    theta: Vec<T>,
    info: Vec<ParamInfo>,
}

fn join(path: &str, tail: &str) -> String {
    if path.is_empty() {
        tail.to_string()
    } else {
        format!("{path}.{tail}")
    }
}

impl<T: Real> Builder<T> {
    fn param(
        &mut self,
        spec: &KernelSpec,
        path: &str,
        name: &str,
        role: ParamRole,
    ) -> Result<usize, KernelError> {
        let full = join(path, &format!("params.{name}"));
        let value = *spec.params.get(name).ok_or_else(|| KernelError::Invalid {
            path: full.clone(),
            reason: "missing parameter".into(),
        })?;
        if !(value.is_finite() && value > 0.0) {
            return Err(KernelError::Invalid {
                path: full,
                reason: format!("must be strictly positive and finite, got {value}"),
            });
        }
        self.theta.push(T::lit(value));
        self.info.push(ParamInfo { name: full, role });
        Ok(self.theta.len() - 1)
    }

    fn lengthscales(
        &mut self,
        spec: &KernelSpec,
        path: &str,
        dims: &[usize],
    ) -> Result<Lengthscales, KernelError> {
        if spec.params.contains_key("lengthscale") {
            let i = self.param(
                spec,
                path,
                "lengthscale",
                ParamRole::Lengthscale {
                    dims: dims.to_vec(),
                },
            )?;
            Ok(Lengthscales::Shared(i))
        } else {
            let start = self.theta.len();
            for (k, &d) in dims.iter().enumerate() {
                self.param(
                    spec,
                    path,
                    &format!("lengthscale_{k}"),
                    ParamRole::Lengthscale { dims: vec![d] },
                )?;
            }
            Ok(Lengthscales::Ard(start))
        }
    }

    fn check_keys(
        spec: &KernelSpec,
        path: &str,
        allowed: &dyn Fn(&str) -> bool,
    ) -> Result<(), KernelError> {
        for key in spec.params.keys() {
            if !allowed(key) {
                return Err(KernelError::Invalid {
                    path: join(path, &format!("params.{key}")),
                    reason: format!("unexpected parameter for `{:?}` node", spec.kind),
                });
            }
        }
        Ok(())
    }

    /// `view` maps positions of the visible input to absolute dimensions.
    fn node(&mut self, spec: &KernelSpec, path: &str, view: &[usize]) -> Result<Node, KernelError> {
        let start = self.theta.len();
        let invalid = |reason: String| KernelError::Invalid {
            path: if path.is_empty() {
                "<root>".into()
            } else {
                path.to_string()
            },
            reason,
        };
        if spec.kind.is_leaf() && !spec.children.is_empty() {
            return Err(invalid(format!(
                "leaf `{:?}` cannot have children",
                spec.kind
            )));
        }
        if spec.kind != NodeKind::Select && spec.dims.is_some() {
            return Err(invalid("`dims` is only valid on `select` nodes".into()));
        }
        let ard_ok = |key: &str, n: usize| {
            key.strip_prefix("lengthscale_")
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|k| k < n)
        };
        let op = match spec.kind {
            NodeKind::Eq | NodeKind::Rq => {
                let rq = spec.kind == NodeKind::Rq;
                let n = view.len();
                let shared = spec.params.contains_key("lengthscale");
                Self::check_keys(spec, path, &|k| {
                    k == "variance"
                        || (rq && k == "alpha")
                        || (shared && k == "lengthscale")
                        || (!shared && ard_ok(k, n))
                })?;
                if n == 0 {
                    return Err(invalid("stationary kernel over zero dimensions".into()));
                }
                let var = self.param(
                    spec,
                    path,
                    "variance",
                    ParamRole::Variance(VarianceKind::Signal),
                )?;
                let ls = self.lengthscales(spec, path, view)?;
                if rq {
                    let alpha = self.param(spec, path, "alpha", ParamRole::Alpha)?;
                    Op::Rq {
                        var,
                        ls,
                        alpha,
                        dims: view.to_vec(),
                    }
                } else {
                    Op::Eq {
                        var,
                        ls,
                        dims: view.to_vec(),
                    }
                }
            }
            NodeKind::Linear => {
                Self::check_keys(spec, path, &|k| k == "variance")?;
                let var = self.param(
                    spec,
                    path,
                    "variance",
                    ParamRole::Variance(VarianceKind::Linear {
                        dims: view.to_vec(),
                    }),
                )?;
                Op::Linear {
                    var,
                    dims: view.to_vec(),
                }
            }
            NodeKind::Constant => {
                Self::check_keys(spec, path, &|k| k == "variance")?;
                let var = self.param(
                    spec,
                    path,
                    "variance",
                    ParamRole::Variance(VarianceKind::Constant),
                )?;
                Op::Constant { var }
            }
            NodeKind::Sum | NodeKind::Product => {
                Self::check_keys(spec, path, &|_| false)?;
                if spec.children.is_empty() {
                    return Err(invalid("needs at least one child".into()));
                }
                let children = spec
                    .children
                    .iter()
                    .enumerate()
                    .map(|(c, child)| {
                        self.node(child, &join(path, &format!("children[{c}]")), view)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if spec.kind == NodeKind::Sum {
                    Op::Sum(children)
                } else {
                    Op::Product(children)
                }
            }
            NodeKind::Scaled => {
                Self::check_keys(spec, path, &|k| k == "variance")?;
                if spec.children.len() != 1 {
                    return Err(invalid("`scaled` takes exactly one child".into()));
                }
                let var = self.param(
                    spec,
                    path,
                    "variance",
                    ParamRole::Variance(VarianceKind::Signal),
                )?;
                let child = self.node(&spec.children[0], &join(path, "children[0]"), view)?;
                Op::Scaled {
                    var,
                    child: Box::new(child),
                }
            }
            NodeKind::Select => {
                Self::check_keys(spec, path, &|_| false)?;
                if spec.children.len() != 1 {
                    return Err(invalid("`select` takes exactly one child".into()));
                }
                let dims = spec
                    .dims
                    .as_ref()
                    .ok_or_else(|| invalid("`select` requires `dims`".into()))?;
                if dims.is_empty() {
                    return Err(invalid("`dims` must be non-empty".into()));
                }
                let mut sub = Vec::with_capacity(dims.len());
                for &d in dims {
                    let abs = *view.get(d).ok_or_else(|| KernelError::Invalid {
                        path: join(path, "dims"),
                        reason: format!(
                            "index {d} out of range for a {}-dimensional view",
                            view.len()
                        ),
                    })?;
                    sub.push(abs);
                }
                // Select is resolved into absolute leaf dimensions and leaves no node behind.
                return self.node(&spec.children[0], &join(path, "children[0]"), &sub);
            }
        };
        Ok(Node {
            span: start..self.theta.len(),
            op,
        })
    }
}

#[inline]
fn scaled_sq_dist<T: Real>(theta: &[T], ls: &Lengthscales, dims: &[usize], a: &[T], b: &[T]) -> T {
    let mut r2 = T::zero();
    for (k, &d) in dims.iter().enumerate() {
        let l = theta[ls.index(k)];
        let diff = (a[d] - b[d]) / l;
        r2 += diff * diff;
    }
    r2.max(T::zero())
}

impl<T: Real> Kernel<T> {
    /// Validates `spec` against an input of dimension `input_dim` and builds the kernel.
    pub fn build(spec: &KernelSpec, input_dim: usize) -> Result<Self, KernelError> {
        let view: Vec<usize> = (0..input_dim).collect();
        let mut b = Builder::<T> {
            theta: Vec::new(),
            info: Vec::new(),
        };
        let root = b.node(spec, "", &view)?;
        Ok(Kernel {
            spec: spec.clone(),
            input_dim,
            root,
            theta: b.theta,
            info: b.info,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params_info(&self) -> &[ParamInfo] {
        &self.info
    }

    /// Parameter values in natural units, in the order of [`Kernel::params_info`].
    pub fn params(&self) -> &[T] {
        &self.theta
    }

    pub fn log_params(&self) -> Vec<T> {
        self.theta.iter().map(|t| t.ln()).collect()
    }

    pub fn set_log_params(&mut self, log_theta: &[T]) -> Result<(), KernelError> {
        if log_theta.len() != self.theta.len() {
            return Err(KernelError::ParamCount {
                expected: self.theta.len(),
                given: log_theta.len(),
            });
        }
        for (t, l) in self.theta.iter_mut().zip(log_theta) {
            *t = l.exp();
        }
        Ok(())
    }

    pub fn with_log_params(&self, log_theta: &[T]) -> Result<Self, KernelError> {
        let mut k = self.clone();
        k.set_log_params(log_theta)?;
        Ok(k)
    }

    /// Sets parameters in natural units.
    pub fn set_params(&mut self, theta: &[T]) -> Result<(), KernelError> {
        if theta.len() != self.theta.len() {
            return Err(KernelError::ParamCount {
                expected: self.theta.len(),
                given: theta.len(),
            });
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// The spec with current parameter values written back.
    pub fn to_spec(&self) -> KernelSpec {
        let mut spec = self.spec.clone();
        for (info, value) in self.info.iter().zip(&self.theta) {
            let slot = locate_param(&mut spec, &info.name)
                .expect("parameter path produced by the builder");
            *slot = value.to_f64_lossy();
        }
        spec
    }

    fn check(&self, a: &[T], b: &[T]) -> Result<(), KernelError> {
        for x in [a, b] {
            if x.len() != self.input_dim {
                return Err(KernelError::DimensionMismatch {
                    expected: self.input_dim,
                    given: x.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> Result<T, KernelError> {
        self.check(a, b)?;
        Ok(self.eval_node(&self.root, a, b))
    }

    pub fn eval_points(
        &self,
        a: &AugmentedInput<T>,
        b: &AugmentedInput<T>,
    ) -> Result<T, KernelError> {
        self.eval(a.as_slice(), b.as_slice())
    }

    /// Evaluation without the dimension check; callers guarantee slice lengths.
    #[inline]
    pub(crate) fn eval_raw(&self, a: &[T], b: &[T]) -> T {
        self.eval_node(&self.root, a, b)
    }

    fn eval_node(&self, node: &Node, a: &[T], b: &[T]) -> T {
        let th = &self.theta;
        match &node.op {
            Op::Eq { var, ls, dims } => {
                let r2 = scaled_sq_dist(th, ls, dims, a, b);
                th[*var] * (-T::lit(0.5) * r2).exp()
            }
            Op::Rq {
                var,
                ls,
                alpha,
                dims,
            } => {
                let r2 = scaled_sq_dist(th, ls, dims, a, b);
                let al = th[*alpha];
                th[*var] * (T::one() + r2 / (T::lit(2.0) * al)).powf(-al)
            }
            Op::Linear { var, dims } => {
                let dot = dims.iter().fold(T::zero(), |acc, &d| acc + a[d] * b[d]);
                th[*var] * dot
            }
            Op::Constant { var } => th[*var],
            Op::Sum(children) => children
                .iter()
                .fold(T::zero(), |acc, c| acc + self.eval_node(c, a, b)),
            Op::Product(children) => children
                .iter()
                .fold(T::one(), |acc, c| acc * self.eval_node(c, a, b)),
            Op::Scaled { var, child } => th[*var] * self.eval_node(child, a, b),
        }
    }

    /// Returns `k(a, b)` and writes `∂k/∂ln θ` into `grad` (length [`Kernel::n_params`]).
    pub fn eval_with_grad(&self, a: &[T], b: &[T], grad: &mut [T]) -> Result<T, KernelError> {
        self.check(a, b)?;
        if grad.len() != self.n_params() {
            return Err(KernelError::ParamCount {
                expected: self.n_params(),
                given: grad.len(),
            });
        }
        Ok(self.grad_node(&self.root, a, b, grad))
    }

    #[inline]
    pub(crate) fn eval_with_grad_raw(&self, a: &[T], b: &[T], grad: &mut [T]) -> T {
        self.grad_node(&self.root, a, b, grad)
    }

    /// Gradient of `k(a, b)` with respect to each log-hyperparameter.
    pub fn grad_hyper(&self, a: &[T], b: &[T]) -> Result<Vec<T>, KernelError> {
        let mut g = vec![T::zero(); self.n_params()];
        self.eval_with_grad(a, b, &mut g)?;
        Ok(g)
    }

    pub fn grad_hyper_named(&self, a: &[T], b: &[T]) -> Result<BTreeMap<String, T>, KernelError> {
        let g = self.grad_hyper(a, b)?;
        Ok(self.info.iter().map(|i| i.name.clone()).zip(g).collect())
    }

    fn grad_node(&self, node: &Node, a: &[T], b: &[T], g: &mut [T]) -> T {
        let th = &self.theta;
        match &node.op {
            Op::Eq { var, ls, dims } => {
                let r2 = scaled_sq_dist(th, ls, dims, a, b);
                let k = th[*var] * (-T::lit(0.5) * r2).exp();
                g[*var] = k;
                match ls {
                    Lengthscales::Shared(i) => g[*i] = k * r2,
                    Lengthscales::Ard(_) => {
                        for (j, &d) in dims.iter().enumerate() {
                            let diff = (a[d] - b[d]) / th[ls.index(j)];
                            g[ls.index(j)] = k * diff * diff;
                        }
                    }
                }
                k
            }
            Op::Rq {
                var,
                ls,
                alpha,
                dims,
            } => {
                let r2 = scaled_sq_dist(th, ls, dims, a, b);
                let al = th[*alpha];
                let base = T::one() + r2 / (T::lit(2.0) * al);
                let k = th[*var] * base.powf(-al);
                // dk/dln(l_d) = k / base * (diff_d / l_d)^2
                let dk_dsq = k / base;
                g[*var] = k;
                match ls {
                    Lengthscales::Shared(i) => g[*i] = dk_dsq * r2,
                    Lengthscales::Ard(_) => {
                        for (j, &d) in dims.iter().enumerate() {
                            let diff = (a[d] - b[d]) / th[ls.index(j)];
                            g[ls.index(j)] = dk_dsq * diff * diff;
                        }
                    }
                }
                g[*alpha] = k * (r2 / (T::lit(2.0) * base) - al * base.ln());
                k
            }
            Op::Linear { var, dims } => {
                let dot = dims.iter().fold(T::zero(), |acc, &d| acc + a[d] * b[d]);
                let k = th[*var] * dot;
                g[*var] = k;
                k
            }
            Op::Constant { var } => {
                g[*var] = th[*var];
                th[*var]
            }
            Op::Sum(children) => children
                .iter()
                .fold(T::zero(), |acc, c| acc + self.grad_node(c, a, b, g)),
            Op::Product(children) => {
                let vals: Vec<T> = children
                    .iter()
                    .map(|c| self.grad_node(c, a, b, g))
                    .collect();
                let n = vals.len();
                // prefix/suffix products keep zero factors exact
                let mut prefix = vec![T::one(); n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] * vals[i];
                }
                let mut suffix = T::one();
                for i in (0..n).rev() {
                    let others = prefix[i] * suffix;
                    for p in children[i].span.clone() {
                        g[p] *= others;
                    }
                    suffix *= vals[i];
                }
                prefix[n]
            }
            Op::Scaled { var, child } => {
                let v = self.grad_node(child, a, b, g);
                let s = th[*var];
                for p in child.span.clone() {
                    g[p] *= s;
                }
                g[*var] = s * v;
                s * v
            }
        }
    }

    fn check_batch(&self, x: &Inputs<T>) -> Result<(), KernelError> {
        if x.dim() != self.input_dim && !x.is_empty() {
            return Err(KernelError::DimensionMismatch {
                expected: self.input_dim,
                given: x.dim(),
            });
        }
        Ok(())
    }

    /// Cross-covariance matrix `K[m][n] = k(a_m, b_n)`.
    pub fn gram(&self, a: &Inputs<T>, b: &Inputs<T>) -> Result<DMatrix<T>, KernelError> {
        self.check_batch(a)?;
        self.check_batch(b)?;
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_raw(a.row(i), b.row(j))
        }))
    }

    /// Symmetric Gram matrix, evaluating each unordered pair once.
    pub fn gram_sym(&self, a: &Inputs<T>) -> Result<DMatrix<T>, KernelError> {
        self.check_batch(a)?;
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval_raw(a.row(i), a.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Gram matrix with only the lower triangle filled (upper left zero), as
    /// consumed by a Cholesky factorisation. Writes run down contiguous columns.
    pub(crate) fn gram_lower(&self, a: &Inputs<T>) -> Result<DMatrix<T>, KernelError> {
        self.check_batch(a)?;
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            let (rj, col) = (a.row(j), k.column_mut(j));
            for (i, v) in col.into_iter().enumerate().skip(j) {
                *v = self.eval_raw(a.row(i), rj);
            }
        }
        Ok(k)
    }

    pub fn diag(&self, a: &Inputs<T>) -> Result<DVector<T>, KernelError> {
        self.check_batch(a)?;
        Ok(DVector::from_fn(a.len(), |i, _| {
            self.eval_raw(a.row(i), a.row(i))
        }))
    }

    /// Top-level additive components as standalone kernels, if the root is a sum.
    pub fn summands(&self) -> Option<Vec<Kernel<T>>> {
        if self.spec.kind != NodeKind::Sum {
            return None;
        }
        let spec = self.to_spec();
        Some(
            spec.children
                .iter()
                .map(|c| Kernel::build(c, self.input_dim).expect("child of a valid sum is valid"))
                .collect(),
        )
    }
}

fn locate_param<'a>(spec: &'a mut KernelSpec, path: &str) -> Option<&'a mut f64> {
    let mut node = spec;
    let mut rest = path;
    loop {
        if let Some(name) = rest.strip_prefix("params.") {
            return node.params.get_mut(name);
        }
        let tail = rest.strip_prefix("children[")?;
        let close = tail.find(']')?;
        let idx: usize = tail[..close].parse().ok()?;
        node = node.children.get_mut(idx)?;
        rest = tail[close + 1..].strip_prefix('.')?;
    }
}

#[cfg(test)]
mod tests;
