//! Per-layer forward and backward variances at initialization, measured on
//! the engine and predicted in closed form.
//!
//! The statistic for layer `l` is the population variance over the neurons of
//! each node's row, averaged over nodes. Both directions are reported for
//! `l = 1..=L`: `h^L` is the logit layer and its gradient is the loss
//! gradient itself.

use std::io::Write;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{backward, forward, output_gradient, ActivationTrace, GradientTrace, Parameters};
use crate::graph::{feature_means, FeatureMatrix, LabelVector, NodeMask, NormalizedAdjacency};
use crate::init::InitPlan;
use crate::plot::{render_panels, Panel, Series};
use crate::stats::population_variance;

/// Mean over rows of the population variance across columns.
pub fn mean_node_variance(m: ArrayView2<'_, f64>) -> Result<f64> {
    if m.ncols() < 2 {
        return Err(Error::invalid(format!(
            "variance over neurons needs width >= 2, got {}",
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::invalid("variance over neurons of an empty node set"));
    }
    let total: f64 = m
        .rows()
        .into_iter()
        .map(|r| population_variance(r.iter().copied()))
        .sum();
    Ok(total / m.nrows() as f64)
}

/// `var(h^l)` for `l = 1..=L`.
pub fn empirical_forward_variance(trace: &ActivationTrace<'_>) -> Result<Vec<f64>> {
    (1..=trace.layers())
        .map(|l| mean_node_variance(trace.activation(l)))
        .collect()
}

/// `var(∂Loss/∂h^l)` for `l = 1..=L`.
pub fn empirical_backward_variance(gtrace: &GradientTrace) -> Result<Vec<f64>> {
    (1..=gtrace.layers())
        .map(|l| mean_node_variance(gtrace.d_activation(l).view()))
        .collect()
}

/// A closed-form variance resolved per node, with its node mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeVariance {
    pub per_node: Vec<f64>,
    pub mean: f64,
}

impl NodeVariance {
    fn scaled_squares(coefficient: f64, v: &[f64]) -> Self {
        let per_node: Vec<f64> = v.iter().map(|x| coefficient * x * x).collect();
        let mean = per_node.iter().sum::<f64>() / per_node.len().max(1) as f64;
        NodeVariance { per_node, mean }
    }

    pub fn sum(&self) -> f64 {
        self.per_node.iter().sum()
    }
}

/// Forward prediction for `l = 1..=L`:
/// `var(h_i^l) = (∏_{k<l} m1^(k) var(w^k) / 2^l) [Ã^l h0bar]²_i`.
pub fn theoretical_forward_variance(
    a: &NormalizedAdjacency,
    h0bar: &[f64],
    plan: &InitPlan,
) -> Result<Vec<NodeVariance>> {
    let dims = plan.dims();
    let mut v = a.power_apply(h0bar, 0)?;
    let mut coefficient = 1.0;
    let mut out = Vec::with_capacity(dims.layers());
    for l in 0..dims.layers() {
        v = a.spmv(&v)?;
        coefficient *= dims.fan_in(l) as f64 * plan.variances()[l] / 2.0;
        out.push(NodeVariance::scaled_squares(coefficient, &v));
    }
    Ok(out)
}

/// Backward prediction at hidden layer `l` (`0 <= l < L`):
/// `var(∂Loss/∂h_i^l) = ∏_{k=l}^{L-1} (m2^(k) var(w^k)) (C - 1) / (2^(L-l) N² C) [Ã^(L-l) 1]²_i`,
/// with `N` the number of loss nodes.
pub fn theoretical_backward_variance(
    a: &NormalizedAdjacency,
    plan: &InitPlan,
    l: usize,
    loss_nodes: usize,
) -> Result<NodeVariance> {
    let dims = plan.dims();
    let layers = dims.layers();
    if l >= layers {
        return Err(Error::invalid(format!("layer {l} out of range 0..{layers}")));
    }
    let c = dims.classes() as f64;
    if c < 2.0 {
        return Err(Error::invalid("backward variance needs at least two classes"));
    }
    let n = loss_nodes as f64;
    let depth = layers - l;
    let weight_product: f64 = (l..layers)
        .map(|k| dims.fan_out(k) as f64 * plan.variances()[k])
        .product();
    let coefficient = weight_product * (c - 1.0) / (2f64.powi(depth as i32) * n * n * c);
    let v = a.power_apply(&vec![1.0; a.node_count()], depth)?;
    Ok(NodeVariance::scaled_squares(coefficient, &v))
}

/// Variance of the loss gradient at the logits under uniform predictions:
/// `(C - 1) / (C² N²)` for every node.
pub fn output_gradient_variance(classes: usize, loss_nodes: usize, node_count: usize) -> NodeVariance {
    let (c, n) = (classes as f64, loss_nodes as f64);
    let value = (c - 1.0) / (c * c * n * n);
    NodeVariance {
        per_node: vec![value; node_count],
        mean: value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVariance {
    pub layer: usize,
    pub empirical_forward: f64,
    pub theoretical_forward: f64,
    pub empirical_backward: f64,
    pub theoretical_backward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub method: String,
    pub seeds: usize,
    pub layers: Vec<LayerVariance>,
}

impl VarianceReport {
    pub fn forward_log_ratio(&self) -> f64 {
        let first = &self.layers[0];
        let last = &self.layers[self.layers.len() - 1];
        (last.empirical_forward / first.empirical_forward).ln()
    }

    pub fn backward_log_ratio(&self) -> f64 {
        let first = &self.layers[0];
        let last = &self.layers[self.layers.len() - 1];
        (last.empirical_backward / first.empirical_backward).ln()
    }
}

/// Empirical variances averaged over one initialization per seed, together
/// with the closed-form predictions. Dropout is off and every node is a loss
/// node.
pub fn probe_variances(
    a: &NormalizedAdjacency,
    x: &FeatureMatrix,
    labels: &LabelVector,
    plan: &InitPlan,
    seeds: &[u64],
) -> Result<VarianceReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("probe needs at least one seed"));
    }
    let n = a.node_count();
    let mask = NodeMask::all(n);
    let runs: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let params = Parameters::from_plan(plan, seed, false);
            let trace = forward(&params, a, x, 0.0, 0)?;
            let out_grad = output_gradient(trace.logits(), labels, &mask)?;
            let gtrace = backward(&trace, a, &params, &out_grad)?;
            Ok((
                empirical_forward_variance(&trace)?,
                empirical_backward_variance(&gtrace)?,
            ))
        })
        .collect::<Result<_>>()?;
    let layers = plan.dims().layers();
    let mean_of = |backward: bool, l: usize| {
        let pick = |r: &(Vec<f64>, Vec<f64>)| if backward { r.1[l] } else { r.0[l] };
        runs.iter().map(pick).sum::<f64>() / runs.len() as f64
    };
    let forward_theory = theoretical_forward_variance(a, &feature_means(x)?, plan)?;
    let mut rows = Vec::with_capacity(layers);
    for l in 1..=layers {
        let backward_theory = if l == layers {
            output_gradient_variance(plan.dims().classes(), n, n)
        } else {
            theoretical_backward_variance(a, plan, l, n)?
        };
        rows.push(LayerVariance {
            layer: l,
            empirical_forward: mean_of(false, l - 1),
            theoretical_forward: forward_theory[l - 1].mean,
            empirical_backward: mean_of(true, l - 1),
            theoretical_backward: backward_theory.mean,
        });
    }
    Ok(VarianceReport {
        method: plan.method().to_string(),
        seeds: seeds.len(),
        layers: rows,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    layer: usize,
    method: &'a str,
    empirical_fwd: f64,
    theoretical_fwd: f64,
    empirical_bwd: f64,
    theoretical_bwd: f64,
}

pub fn write_variance_csv<W: Write>(reports: &[VarianceReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for row in &r.layers {
            w.serialize(CsvRow {
                layer: row.layer,
                method: &r.method,
                empirical_fwd: row.empirical_forward,
                theoretical_fwd: row.theoretical_forward,
                empirical_bwd: row.empirical_backward,
                theoretical_bwd: row.theoretical_backward,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

const FORWARD_METHODS: [&str; 4] = ["lecun", "xavier", "kai_for", "virgo_for"];
const BACKWARD_METHODS: [&str; 4] = ["lecun", "xavier", "kai_back", "virgo_back"];

/// Four panels: empirical and theoretical forward variance for the forward
/// methods, then the same for the backward methods.
pub fn variance_svg(dataset: &str, reports: &[VarianceReport]) -> String {
    let series = |methods: &[&str], pick: fn(&LayerVariance) -> f64| -> Vec<Series> {
        reports
            .iter()
            .filter(|r| methods.contains(&r.method.as_str()))
            .map(|r| Series {
                name: r.method.clone(),
                points: r.layers.iter().map(|v| (v.layer as f64, pick(v))).collect(),
            })
            .collect()
    };
    let panel = |title: &str, y: &str, s: Vec<Series>| Panel {
        title: title.into(),
        x_label: "layer".into(),
        y_label: y.into(),
        log_y: true,
        series: s,
    };
    let panels = [
        panel("forward (empirical)", "var(h)", series(&FORWARD_METHODS, |v| v.empirical_forward)),
        panel("forward (theory)", "var(h)", series(&FORWARD_METHODS, |v| v.theoretical_forward)),
        panel("backward (empirical)", "var(dL/dh)", series(&BACKWARD_METHODS, |v| v.empirical_backward)),
        panel("backward (theory)", "var(dL/dh)", series(&BACKWARD_METHODS, |v| v.theoretical_backward)),
    ];
    render_panels(&format!("Variance at initialization: {dataset}"), &panels)
}
