//! Declarative kernel expression trees and their JSON schema.
//!
//! A kernel file is a single JSON object:
//!
//! ```json
//! {
//!   "kind": "sum",
//!   "children": [
//!     { "kind": "select", "dims": [0],
//!       "children": [{ "kind": "rq", "params": { "variance": 1.0, "lengthscale": 0.3, "alpha": 1.0 } }] },
//!     { "kind": "select", "dims": [1, 2],
//!       "children": [{ "kind": "eq", "params": { "variance": 1.0, "lengthscale_0": 1.0, "lengthscale_1": 2.0 } }] }
//!   ]
//! }
//! ```
//!
//! Field names:
//! - `kind`: one of `eq`, `rq`, `linear`, `constant`, `sum`, `product`, `scaled`, `select`.
//! - `params`: name → strictly positive real. `variance` on every leaf and on `scaled`;
//!   `lengthscale` (shared) or `lengthscale_0 .. lengthscale_{d-1}` (one per visible
//!   dimension) on `eq`/`rq`; `alpha` on `rq`.
//! - `children`: sub-expressions for `sum`/`product` (one or more) and exactly one for
//!   `scaled`/`select`.
//! - `dims`: indices into the enclosing input view, `select` only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Eq,
    Rq,
    Linear,
    Constant,
    Sum,
    Product,
    Scaled,
    Select,
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        matches!(
            self,
            NodeKind::Eq | NodeKind::Rq | NodeKind::Linear | NodeKind::Constant
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

impl KernelSpec {
    fn leaf(kind: NodeKind, params: impl IntoIterator<Item = (&'static str, f64)>) -> Self {
        KernelSpec {
            kind,
            params: params
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            children: Vec::new(),
            dims: None,
        }
    }

    pub fn eq(variance: f64, lengthscale: f64) -> Self {
        Self::leaf(
            NodeKind::Eq,
            [("variance", variance), ("lengthscale", lengthscale)],
        )
    }

    /// EQ with one lengthscale per visible dimension.
    pub fn eq_ard(variance: f64, lengthscales: &[f64]) -> Self {
        let mut spec = Self::leaf(NodeKind::Eq, [("variance", variance)]);
        spec.params.extend(ard_params(lengthscales));
        spec
    }

    pub fn rq(variance: f64, lengthscale: f64, alpha: f64) -> Self {
        Self::leaf(
            NodeKind::Rq,
            [
                ("variance", variance),
                ("lengthscale", lengthscale),
                ("alpha", alpha),
            ],
        )
    }

    pub fn rq_ard(variance: f64, lengthscales: &[f64], alpha: f64) -> Self {
        let mut spec = Self::leaf(NodeKind::Rq, [("variance", variance), ("alpha", alpha)]);
        spec.params.extend(ard_params(lengthscales));
        spec
    }

    pub fn linear(variance: f64) -> Self {
        Self::leaf(NodeKind::Linear, [("variance", variance)])
    }

    pub fn constant(variance: f64) -> Self {
        Self::leaf(NodeKind::Constant, [("variance", variance)])
    }

    pub fn sum(children: Vec<KernelSpec>) -> Self {
        KernelSpec {
            kind: NodeKind::Sum,
            params: BTreeMap::new(),
            children,
            dims: None,
        }
    }

    pub fn product(children: Vec<KernelSpec>) -> Self {
        KernelSpec {
            kind: NodeKind::Product,
            params: BTreeMap::new(),
            children,
            dims: None,
        }
    }

    pub fn scaled(variance: f64, child: KernelSpec) -> Self {
        KernelSpec {
            kind: NodeKind::Scaled,
            params: [("variance".to_string(), variance)].into_iter().collect(),
            children: vec![child],
            dims: None,
        }
    }

    pub fn select(dims: Vec<usize>, child: KernelSpec) -> Self {
        KernelSpec {
            kind: NodeKind::Select,
            params: BTreeMap::new(),
            children: vec![child],
            dims: Some(dims),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel spec serialises")
    }

    /// Parses the JSON schema above; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, KernelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| KernelError::Parse {
            path: e.path().to_string(),
            reason: e.inner().to_string(),
        })
    }
}

fn ard_params(lengthscales: &[f64]) -> impl Iterator<Item = (String, f64)> + '_ {
    lengthscales
        .iter()
        .enumerate()
        .map(|(d, &l)| (format!("lengthscale_{d}"), l))
}
