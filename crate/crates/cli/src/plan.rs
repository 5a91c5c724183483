//! Kernel files: either a named preset with data-scaled starting values, or one
//! explicit kernel per ordering position.
//!
//! ```json
//! { "preset": "gpar-nl" }
//! { "preset": "gpar-l-nl", "x": { "kind": "rq", "params": { "variance": 1.0, "lengthscale": 0.3, "alpha": 1.0 } } }
//! { "layers": [ { "kind": "eq", ... }, { "kind": "sum", ... } ] }
//! ```
//!
//! `x` replaces the kernel over the `D` inputs, `y` the nonlinear kernel over the
//! upstream outputs and `coef` the input-varying coefficient of each linear term.
//! A `y` override is reused at every layer, so it needs a shared lengthscale.

use std::path::Path;
use std::str::FromStr;

use gpar_core::data::{MultiOutputDataset, OutputOrdering};
use gpar_core::kernels::{gpar_l, gpar_l_nl, gpar_nl, independent, KernelSpec, LayerShape};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Kernel over the inputs only: one independent GP per output.
    Independent,
    /// Upstream outputs enter linearly with input-varying coefficients.
    GparL,
    /// Additive nonlinear kernel over the upstream outputs.
    GparNl,
    /// Both of the above.
    GparLNl,
    /// Inputs kernel plus a joint kernel over inputs and upstream outputs.
    RqPlusRq,
}

impl Preset {
    pub fn label(self) -> &'static str {
        match self {
            Preset::Independent => "IGP",
            Preset::GparL => "GPAR-L",
            Preset::GparNl => "GPAR-NL",
            Preset::GparLNl => "GPAR-L-NL",
            Preset::RqPlusRq => "GPAR-RQ",
        }
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Preset as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    preset: Option<Preset>,
    layers: Option<Vec<KernelSpec>>,
    x: Option<KernelSpec>,
    y: Option<KernelSpec>,
    coef: Option<KernelSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelPlan {
    Preset {
        preset: Preset,
        x: Option<KernelSpec>,
        y: Option<KernelSpec>,
        coef: Option<KernelSpec>,
    },
    Layers(Vec<KernelSpec>),
}

impl KernelPlan {
    pub fn preset(preset: Preset) -> Self {
        KernelPlan::Preset {
            preset,
            x: None,
            y: None,
            coef: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let raw: RawPlan = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match (raw.preset, raw.layers) {
            (Some(preset), None) => Ok(KernelPlan::Preset {
                preset,
                x: raw.x,
                y: raw.y,
                coef: raw.coef,
            }),
            (None, Some(layers)) => {
                if raw.x.is_some() || raw.y.is_some() || raw.coef.is_some() {
                    return Err("`x`, `y` and `coef` only apply to presets".into());
                }
                Ok(KernelPlan::Layers(layers))
            }
            _ => Err("kernel file needs exactly one of `preset` or `layers`".into()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("kernel file {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| CliError::Config(format!("kernel file {}: {e}", path.display())))
    }

    /// One kernel per ordering position. Preset starting values scale with the
    /// data: lengthscales with input and output ranges, variances with the
    /// target's variance.
    pub fn specs(&self, ds: &MultiOutputDataset, ord: &OutputOrdering) -> Vec<KernelSpec> {
        let KernelPlan::Preset { preset, x, y, coef } = self else {
            let KernelPlan::Layers(layers) = self else {
                unreachable!()
            };
            return layers.clone();
        };
        let d = ds.input_dim();
        let xs = ds.inputs();
        let x_ranges: Vec<f64> = (0..d)
            .map(|k| positive_or_one(xs.column_range(k)))
            .collect();
        let stats: Vec<Stats> = (0..ds.n_outputs()).map(|o| Stats::of(ds, o)).collect();
        (0..ord.len())
            .map(|p| {
                let shape = LayerShape::new(d, p);
                let target = &stats[ord.output(p)];
                let up: Vec<&Stats> = (0..p).map(|q| &stats[ord.output(q)]).collect();
                let kx = |_: usize| {
                    x.clone().unwrap_or_else(|| {
                        let ls: Vec<f64> = x_ranges.iter().map(|r| 0.2 * r).collect();
                        KernelSpec::rq_ard(target.var, &ls, 1.0)
                    })
                };
                let ky = |_: usize| {
                    y.clone().unwrap_or_else(|| {
                        let ls: Vec<f64> = up.iter().map(|s| s.range).collect();
                        KernelSpec::eq_ard(0.5 * target.var, &ls)
                    })
                };
                // one coefficient kernel per upstream output; linear variance is 1
                let scale = target.var
                    / up.iter()
                        .map(|s| s.mean_sq)
                        .sum::<f64>()
                        .max(f64::MIN_POSITIVE);
                let kc = |_: usize| {
                    coef.clone().unwrap_or_else(|| {
                        let ls: Vec<f64> = x_ranges.iter().map(|r| 0.5 * r).collect();
                        KernelSpec::eq_ard(positive_or_one(scale), &ls)
                    })
                };
                match preset {
                    Preset::Independent => independent(shape, kx),
                    Preset::GparL => gpar_l(shape, kx, kc),
                    Preset::GparNl => gpar_nl(shape, kx, ky),
                    Preset::GparLNl => gpar_l_nl(shape, kx, kc, ky),
                    Preset::RqPlusRq => {
                        let x_part = KernelSpec::select(shape.x_dims(), kx(d));
                        if p == 0 {
                            return x_part;
                        }
                        let joint = y.clone().unwrap_or_else(|| {
                            let ls: Vec<f64> = x_ranges
                                .iter()
                                .copied()
                                .chain(up.iter().map(|s| s.range))
                                .collect();
                            KernelSpec::rq_ard(0.5 * target.var, &ls, 1.0)
                        });
                        KernelSpec::sum(vec![x_part, joint])
                    }
                }
            })
            .collect()
    }
}

struct Stats {
    var: f64,
    range: f64,
    mean_sq: f64,
}

impl Stats {
    fn of(ds: &MultiOutputDataset, o: usize) -> Self {
        let v: Vec<f64> = ds.column(o).into_iter().flatten().collect();
        if v.is_empty() {
            return Stats {
                var: 1.0,
                range: 1.0,
                mean_sq: 1.0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
                (a.min(y), b.max(y))
            });
        Stats {
            var: positive_or_one(var),
            range: positive_or_one(hi - lo),
            mean_sq: positive_or_one(v.iter().map(|y| y * y).sum::<f64>() / n),
        }
    }
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}
