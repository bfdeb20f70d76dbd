//! Per-layer weight-variance plans and weight sampling.
//!
//! Layer `l` owns `W^l` with shape `m1^(l) x m2^(l)`: it consumes `h^l` and
//! produces the pre-activation feeding `h^(l+1)`. The classic schemes depend
//! only on those widths. The graph-aware schemes also read the renormalized
//! adjacency and, for the forward variant, the per-node feature means.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Below this, a squared-norm denominator is treated as zero and the layer
/// falls back to the matching Kaiming variance.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lecun,
    Xavier,
    KaiFor,
    KaiBack,
    VirgoFor,
    VirgoBack,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Lecun,
        Method::Xavier,
        Method::KaiFor,
        Method::KaiBack,
        Method::VirgoFor,
        Method::VirgoBack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lecun => "lecun",
            Method::Xavier => "xavier",
            Method::KaiFor => "kai_for",
            Method::KaiBack => "kai_back",
            Method::VirgoFor => "virgo_for",
            Method::VirgoBack => "virgo_back",
        }
    }

    pub fn is_classic(self) -> bool {
        !matches!(self, Method::VirgoFor | Method::VirgoBack)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown initializer '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gaussian,
    Uniform,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Uniform => "uniform",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "uniform" => Ok(Family::Uniform),
            other => Err(Error::invalid(format!("unknown distribution family '{other}'"))),
        }
    }
}

/// Chained layer widths: `widths[l]` is `m1^(l)`, `widths[l + 1]` is
/// `m2^(l)`, and the last width is the class count `C`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerDims {
    widths: Vec<usize>,
}

impl LayerDims {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least one layer (two widths)"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(LayerDims { widths })
    }

    /// `layers` GCN layers: `input -> hidden x (layers - 1) -> classes`.
    pub fn uniform(input: usize, hidden: usize, classes: usize, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::invalid("layer count must be at least 1"));
        }
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, layers - 1));
        widths.push(classes);
        LayerDims::new(widths)
    }

    /// Number of weight matrices `L`.
    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn fan_in(&self, l: usize) -> usize {
        self.widths[l]
    }

    pub fn fan_out(&self, l: usize) -> usize {
        self.widths[l + 1]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn shape(&self, l: usize) -> (usize, usize) {
        (self.fan_in(l), self.fan_out(l))
    }
}

impl TryFrom<Vec<usize>> for LayerDims {
    type Error = Error;

    fn try_from(widths: Vec<usize>) -> Result<Self> {
        LayerDims::new(widths)
    }
}

impl From<LayerDims> for Vec<usize> {
    fn from(d: LayerDims) -> Self {
        d.widths
    }
}

/// Target variance of every weight matrix plus the sampling family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    method: Method,
    family: Family,
    variances: Vec<f64>,
    dims: LayerDims,
}

impl InitPlan {
    pub fn new(method: Method, family: Family, variances: Vec<f64>, dims: LayerDims) -> Result<Self> {
        if variances.len() != dims.layers() {
            return Err(Error::dim(format!(
                "{} variances for {} layers",
                variances.len(),
                dims.layers()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("weight variance {v} is not finite and positive")));
        }
        Ok(InitPlan {
            method,
            family,
            variances,
            dims,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dims(&self) -> &LayerDims {
        &self.dims
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    /// One-line JSON record for experiment logs.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: InitPlan = serde_json::from_str(s)?;
        InitPlan::new(raw.method, raw.family, raw.variances, raw.dims)
    }
}

/// Width-only variance of the four classic schemes.
pub fn classic_variance(method: Method, m1: usize, m2: usize) -> Result<f64> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::invalid("fan-in and fan-out must be positive"));
    }
    let (m1, m2) = (m1 as f64, m2 as f64);
    match method {
        Method::Lecun => Ok(1.0 / (3.0 * m1)),
        Method::Xavier => Ok(2.0 / (m1 + m2)),
        Method::KaiFor => Ok(2.0 / m1),
        Method::KaiBack => Ok(2.0 / m2),
        Method::VirgoFor | Method::VirgoBack => Err(Error::invalid(format!(
            "{method} depends on the graph; use virgo_forward_plan / virgo_backward_plan"
        ))),
    }
}

pub fn classic_plan(method: Method, dims: &LayerDims, family: Family) -> Result<InitPlan> {
    let variances = (0..dims.layers())
        .map(|l| classic_variance(method, dims.fan_in(l), dims.fan_out(l)))
        .collect::<Result<Vec<_>>>()?;
    InitPlan::new(method, family, variances, dims.clone())
}

/// `1ᵀ[Ã^k v]²` for `k = 0..=max_power`.
pub fn propagated_square_sums(
    a: &NormalizedAdjacency,
    v: &[f64],
    max_power: usize,
) -> Result<Vec<f64>> {
    let mut cur = v.to_vec();
    if cur.len() != a.node_count() {
        return Err(Error::dim(format!(
            "vector of length {} for a graph with {} nodes",
            cur.len(),
            a.node_count()
        )));
    }
    let mut sums = Vec::with_capacity(max_power + 1);
    sums.push(cur.iter().map(|x| x * x).sum());
    for _ in 0..max_power {
        cur = a.spmv(&cur)?;
        sums.push(cur.iter().map(|x| x * x).sum());
    }
    Ok(sums)
}

/// Forward graph-aware plan: equalizes the node-summed forward variance of
/// consecutive layers.
///
/// `var(w^l) = (2 / m1^(l)) * S_l / S_(l+1)` with `S_k = 1ᵀ[Ã^k h0bar]²`.
pub fn virgo_forward_plan(
    a: &NormalizedAdjacency,
    h0bar: &[f64],
    dims: &LayerDims,
) -> Result<InitPlan> {
    let sums = propagated_square_sums(a, h0bar, dims.layers())?;
    let variances = (0..dims.layers())
        .map(|l| {
            let kaiming = 2.0 / dims.fan_in(l) as f64;
            if sums[l + 1] < DEGENERATE_DENOMINATOR {
                warn!(
                    "virgo_for: layer {l} denominator {:.3e} is degenerate, using kai_for",
                    sums[l + 1]
                );
                kaiming
            } else {
                kaiming * sums[l] / sums[l + 1]
            }
        })
        .collect();
    InitPlan::new(Method::VirgoFor, Family::Gaussian, variances, dims.clone())
}

/// Backward graph-aware plan using every node as a loss node.
pub fn virgo_backward_plan(a: &NormalizedAdjacency, dims: &LayerDims) -> Result<InitPlan> {
    virgo_backward_plan_for(a, dims, a.node_count())
}

/// Backward graph-aware plan with `loss_nodes` standing in for `|N|` in the
/// last-layer formula.
///
/// For `l < L - 1`: `var(w^l) = (2 / m2^(l)) * R_(L-l-1) / R_(L-l)` with
/// `R_k = 1ᵀ[Ã^k 1]²`. The classifier layer gets
/// `var(w^(L-1)) = |N| / ((C - 1) R_1)`.
pub fn virgo_backward_plan_for(
    a: &NormalizedAdjacency,
    dims: &LayerDims,
    loss_nodes: usize,
) -> Result<InitPlan> {
    let classes = dims.classes();
    if classes < 2 {
        return Err(Error::invalid("virgo_back needs at least two output classes"));
    }
    if loss_nodes == 0 {
        return Err(Error::invalid("virgo_back needs at least one loss node"));
    }
    let layers = dims.layers();
    let sums = propagated_square_sums(a, &vec![1.0; a.node_count()], layers)?;
    let mut variances = Vec::with_capacity(layers);
    for l in 0..layers - 1 {
        let kaiming = 2.0 / dims.fan_out(l) as f64;
        let denom = sums[layers - l];
        if denom < DEGENERATE_DENOMINATOR {
            warn!("virgo_back: layer {l} denominator {denom:.3e} is degenerate, using kai_back");
            variances.push(kaiming);
        } else {
            variances.push(kaiming * sums[layers - l - 1] / denom);
        }
    }
    if sums[1] < DEGENERATE_DENOMINATOR {
        return Err(Error::invalid("virgo_back: empty graph"));
    }
    variances.push(loss_nodes as f64 / ((classes - 1) as f64 * sums[1]));
    InitPlan::new(Method::VirgoBack, Family::Gaussian, variances, dims.clone())
}

/// Any of the six methods. `h0bar` is only read by `virgo_for`; `loss_nodes`
/// only by `virgo_back`.
pub fn build_plan(
    method: Method,
    a: &NormalizedAdjacency,
    h0bar: &[f64],
    dims: &LayerDims,
    family: Family,
    loss_nodes: usize,
) -> Result<InitPlan> {
    let plan = match method {
        Method::VirgoFor => virgo_forward_plan(a, h0bar, dims)?,
        Method::VirgoBack => virgo_backward_plan_for(a, dims, loss_nodes)?,
        classic => classic_plan(classic, dims, family)?,
    };
    Ok(plan.with_family(family))
}

/// Draws every weight matrix of `plan`. Layer `l` uses stream `l` of a
/// ChaCha8 generator seeded with `seed`, so layers are sampled independently
/// and the result does not depend on thread scheduling.
pub fn sample_weights(plan: &InitPlan, seed: u64) -> Vec<Array2<f64>> {
    (0..plan.dims.layers())
        .into_par_iter()
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            let shape = plan.dims.shape(l);
            let var = plan.variances[l];
            match plan.family {
                Family::Gaussian => {
                    let dist = Normal::new(0.0, var.sqrt()).expect("positive variance");
                    Array2::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                }
                Family::Uniform => {
                    let bound = (3.0 * var).sqrt();
                    let dist = Uniform::new(-bound, bound).expect("positive bound");
                    Array2::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                }
            }
        })
        .collect()
}
