//! A small full-batch GCN with hand-written reverse-mode gradients.
//!
//! Layer `l` computes `ĥ^l = Ã h̃^l W^l (+ b^l)` where `h̃^l` is `h^l` after
//! (optional) inverted dropout. Hidden layers apply `h^(l+1) = δ(ĥ^l) ⊙ ĥ^l`;
//! the last layer emits raw logits `h^L = ĥ^(L-1)`.

mod adam;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use train::{train_node_classifier, EpochRecord, LossMask, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabelVector, NodeMask, NormalizedAdjacency};
use crate::init::{sample_weights, InitPlan, LayerDims};

/// Weight matrices `W^0..W^(L-1)` and optional per-layer biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    weights: Vec<Array2<f64>>,
    biases: Option<Vec<Array1<f64>>>,
}

impl Parameters {
    pub fn new(weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("a GCN needs at least one layer"));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::dim(format!(
                    "W^{l} has {} columns but W^{} has {} rows",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        Ok(Parameters {
            weights,
            biases: None,
        })
    }

    /// Samples weights from `plan`; biases, when requested, start at zero.
    pub fn from_plan(plan: &InitPlan, seed: u64, bias: bool) -> Self {
        let params = Parameters {
            weights: sample_weights(plan, seed),
            biases: None,
        };
        if bias {
            params.with_zero_bias()
        } else {
            params
        }
    }

    pub fn with_zero_bias(mut self) -> Self {
        self.biases = Some(self.weights.iter().map(|w| Array1::zeros(w.ncols())).collect());
        self
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> Option<&[Array1<f64>]> {
        self.biases.as_deref()
    }

    pub fn biases_mut(&mut self) -> Option<&mut [Array1<f64>]> {
        self.biases.as_deref_mut()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    pub fn dims(&self) -> LayerDims {
        let mut widths: Vec<usize> = self.weights.iter().map(Array2::nrows).collect();
        widths.push(self.output_dim());
        LayerDims::new(widths).expect("weights are non-empty with positive shapes")
    }
}

/// Row-compressed copy of a feature matrix, used to speed up the first
/// layer on sparse bag-of-words inputs.
#[derive(Clone, Debug)]
pub struct SparseFeatures {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFeatures {
    pub fn from_dense(x: &FeatureMatrix) -> Self {
        let v = x.values();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in v.rows() {
            for (j, &val) in row.iter().enumerate() {
                if val != 0.0 {
                    col_idx.push(j);
                    values.push(val);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseFeatures {
            rows: v.nrows(),
            cols: v.ncols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Fraction of non-zero entries.
    pub fn density(&self) -> f64 {
        let total = self.rows * self.cols;
        if total == 0 {
            0.0
        } else {
            self.values.len() as f64 / total as f64
        }
    }

    /// `(X ⊙ mask) W`.
    fn times(&self, w: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, w.ncols()));
        for (i, mut dst) in out.rows_mut().into_iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                let v = self.values[k] * mask.map_or(1.0, |m| m[[i, c]]);
                if v != 0.0 {
                    dst.scaled_add(v, &w.row(c));
                }
            }
        }
        out
    }

    /// `(X ⊙ mask)ᵀ P`.
    fn t_times(&self, p: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
        let mut out = Array2::zeros((self.cols, p.ncols()));
        for i in 0..self.rows {
            let src = p.row(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                let v = self.values[k] * mask.map_or(1.0, |m| m[[i, c]]);
                if v != 0.0 {
                    out.row_mut(c).scaled_add(v, &src);
                }
            }
        }
        out
    }
}

/// Everything the backward pass and the probes need from a forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace<'a> {
    input: ArrayView2<'a, f64>,
    sparse: Option<&'a SparseFeatures>,
    masks: Vec<Option<Array2<f64>>>,
    pre: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
}

impl<'a> ActivationTrace<'a> {
    pub fn layers(&self) -> usize {
        self.pre.len()
    }

    /// `h^l` for `l = 0..=L`; `h^0` is the input and `h^L` the logits.
    pub fn activation(&self, l: usize) -> ArrayView2<'_, f64> {
        match l {
            0 => self.input.view(),
            l if l == self.layers() => self.pre[l - 1].view(),
            l => self.hidden[l - 1].view(),
        }
    }

    /// Pre-activation `ĥ^l` for `l = 0..L`.
    pub fn pre_activation(&self, l: usize) -> &Array2<f64> {
        &self.pre[l]
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.pre[self.layers() - 1]
    }

    /// Inverted-dropout mask applied to `h^l` (entries `0` or `1/(1-p)`).
    pub fn dropout_mask(&self, l: usize) -> Option<&Array2<f64>> {
        self.masks[l].as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.input.nrows()
    }
}

/// Gradients of the loss with respect to activations, pre-activations and
/// parameters.
#[derive(Clone, Debug)]
pub struct GradientTrace {
    d_activations: Vec<Array2<f64>>,
    d_pre: Vec<Array2<f64>>,
    d_weights: Vec<Array2<f64>>,
    d_biases: Option<Vec<Array1<f64>>>,
}

impl GradientTrace {
    /// `∂Loss/∂h^l` for `l = 0..=L`.
    pub fn d_activation(&self, l: usize) -> &Array2<f64> {
        &self.d_activations[l]
    }

    /// `∂Loss/∂ĥ^l` for `l = 0..L`.
    pub fn d_pre_activation(&self, l: usize) -> &Array2<f64> {
        &self.d_pre[l]
    }

    pub fn d_weights(&self) -> &[Array2<f64>] {
        &self.d_weights
    }

    pub fn d_biases(&self) -> Option<&[Array1<f64>]> {
        self.d_biases.as_deref()
    }

    pub fn layers(&self) -> usize {
        self.d_weights.len()
    }
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// ReLU derivative `δ`: 1 where the pre-activation is positive.
pub fn relu_gate(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn dropout_mask(shape: (usize, usize), p: f64, seed: u64, stream: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn(shape, || if rng.random_bool(keep) { scale } else { 0.0 })
}

/// Forward pass. `dropout = 0` disables masking; otherwise layer `l`'s input
/// mask is drawn from stream `l` of a ChaCha8 generator seeded with `seed`.
pub fn forward<'a>(
    params: &Parameters,
    a: &NormalizedAdjacency,
    x: &'a FeatureMatrix,
    dropout: f64,
    seed: u64,
) -> Result<ActivationTrace<'a>> {
    forward_impl(params, a, x.values().view(), None, dropout, seed)
}

/// Same as [`forward`] with a precomputed sparse copy of `x` for the first
/// layer. Results agree with the dense path up to summation order.
pub fn forward_sparse<'a>(
    params: &Parameters,
    a: &NormalizedAdjacency,
    x: &'a FeatureMatrix,
    sparse: &'a SparseFeatures,
    dropout: f64,
    seed: u64,
) -> Result<ActivationTrace<'a>> {
    if (sparse.rows, sparse.cols) != x.values().dim() {
        return Err(Error::dim("sparse copy does not match the feature matrix"));
    }
    forward_impl(params, a, x.values().view(), Some(sparse), dropout, seed)
}

fn forward_impl<'a>(
    params: &Parameters,
    a: &NormalizedAdjacency,
    x: ArrayView2<'a, f64>,
    sparse: Option<&'a SparseFeatures>,
    dropout: f64,
    seed: u64,
) -> Result<ActivationTrace<'a>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::invalid(format!("dropout {dropout} not in [0, 1)")));
    }
    if x.nrows() != a.node_count() {
        return Err(Error::FeatureRows {
            features: x.nrows(),
            nodes: a.node_count(),
        });
    }
    if x.ncols() != params.input_dim() {
        return Err(Error::dim(format!(
            "features have width {}, W^0 expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let layers = params.layers();
    let n = x.nrows();
    let mut masks = Vec::with_capacity(layers);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(layers);
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(layers.saturating_sub(1));
    for (l, w) in params.weights.iter().enumerate() {
        let mask = (dropout > 0.0).then(|| dropout_mask((n, w.nrows()), dropout, seed, l as u64));
        let mut z = if l == 0 {
            match sparse {
                Some(s) => a.propagate(&s.times(w, mask.as_ref()))?,
                None => {
                    let input = match &mask {
                        Some(m) => &x * m,
                        None => x.to_owned(),
                    };
                    linear_propagate(a, &input, w)?
                }
            }
        } else {
            let h = &hidden[l - 1];
            match &mask {
                Some(m) => linear_propagate(a, &(h * m), w)?,
                None => linear_propagate(a, h, w)?,
            }
        };
        if let Some(b) = params.biases.as_ref().map(|b| &b[l]) {
            z += b;
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("pre-activation of layer {l}")));
        }
        if l + 1 < layers {
            hidden.push(z.mapv(relu));
        }
        masks.push(mask);
        pre.push(z);
    }
    Ok(ActivationTrace {
        input: x,
        sparse,
        masks,
        pre,
        hidden,
    })
}

/// `Ã H W`, multiplying in whichever order keeps the propagated matrix narrow.
fn linear_propagate(a: &NormalizedAdjacency, h: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    if w.ncols() <= w.nrows() {
        a.propagate(&h.dot(w))
    } else {
        Ok(a.propagate(h)?.dot(w))
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

fn check_supervision(logits: &Array2<f64>, labels: &LabelVector, mask: &NodeMask) -> Result<usize> {
    let n = logits.nrows();
    if labels.len() != n {
        return Err(Error::LabelRows {
            labels: labels.len(),
            nodes: n,
        });
    }
    if mask.len() != n {
        return Err(Error::dim(format!("mask covers {} nodes, logits have {n}", mask.len())));
    }
    if labels.classes() > logits.ncols() {
        return Err(Error::dim(format!(
            "{} classes but only {} logits per node",
            labels.classes(),
            logits.ncols()
        )));
    }
    match mask.count() {
        0 => Err(Error::invalid("empty node mask")),
        count => Ok(count),
    }
}

/// Mean cross-entropy over the masked nodes.
pub fn cross_entropy(logits: &Array2<f64>, labels: &LabelVector, mask: &NodeMask) -> Result<f64> {
    let count = check_supervision(logits, labels, mask)?;
    let total: f64 = mask
        .indices()
        .map(|i| {
            let row = logits.row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[labels.get(i)]
        })
        .sum();
    Ok(total / count as f64)
}

/// `∂Loss/∂h^L`: `(softmax − onehot) / n_mask` on masked rows, zero elsewhere.
pub fn output_gradient(logits: &Array2<f64>, labels: &LabelVector, mask: &NodeMask) -> Result<Array2<f64>> {
    let count = check_supervision(logits, labels, mask)? as f64;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut grad = softmax(logits);
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        if mask.contains(i) {
            row[labels.get(i)] -= 1.0;
            row /= count;
        } else {
            row.fill(0.0);
        }
    }
    Ok(grad)
}

/// Fraction of masked nodes whose arg-max logit equals the label; ties go to
/// the lowest class index.
pub fn accuracy(logits: &Array2<f64>, labels: &LabelVector, mask: &NodeMask) -> Result<f64> {
    let count = check_supervision(logits, labels, mask)?;
    let correct = mask
        .indices()
        .filter(|&i| argmax(logits.row(i).iter().copied()) == labels.get(i))
        .count();
    Ok(correct as f64 / count as f64)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Exact reverse-mode pass for the trace produced by [`forward`].
pub fn backward(
    trace: &ActivationTrace<'_>,
    a: &NormalizedAdjacency,
    params: &Parameters,
    out_grad: &Array2<f64>,
) -> Result<GradientTrace> {
    backward_impl(trace, a, params, out_grad, true)
}

/// Reverse pass. With `input_grad = false` the gradient with respect to the
/// input features is left as an empty `0 x 0` array.
pub(crate) fn backward_impl(
    trace: &ActivationTrace<'_>,
    a: &NormalizedAdjacency,
    params: &Parameters,
    out_grad: &Array2<f64>,
    input_grad: bool,
) -> Result<GradientTrace> {
    let layers = params.layers();
    if trace.layers() != layers {
        return Err(Error::dim(format!(
            "trace has {} layers, parameters have {layers}",
            trace.layers()
        )));
    }
    for l in 0..layers {
        if trace.pre[l].ncols() != params.weights[l].ncols() {
            return Err(Error::dim(format!("trace layer {l} does not match W^{l}")));
        }
    }
    if out_grad.dim() != trace.logits().dim() {
        return Err(Error::dim(format!(
            "output gradient has shape {:?}, logits have {:?}",
            out_grad.dim(),
            trace.logits().dim()
        )));
    }
    let mut d_act = vec![Array2::zeros((0, 0)); layers + 1];
    let mut d_pre = vec![Array2::zeros((0, 0)); layers];
    let mut d_w = vec![Array2::zeros((0, 0)); layers];
    let mut d_b = params.biases.as_ref().map(|_| vec![Array1::zeros(0); layers]);
    d_act[layers] = out_grad.clone();
    for l in (0..layers).rev() {
        let g = if l + 1 == layers {
            out_grad.clone()
        } else {
            let mut g = d_act[l + 1].clone();
            Zip::from(&mut g)
                .and(&trace.pre[l])
                .for_each(|g, &z| *g *= relu_gate(z));
            g
        };
        let p = a.propagate(&g)?;
        let mask = trace.masks[l].as_ref();
        let w = &params.weights[l];
        d_w[l] = match (l, trace.sparse) {
            (0, Some(s)) => s.t_times(&p, mask),
            _ => {
                let input = trace.activation(l);
                match mask {
                    Some(m) => (&input * m).t().dot(&p),
                    None => input.t().dot(&p),
                }
            }
        };
        if let Some(d_b) = d_b.as_mut() {
            d_b[l] = g.sum_axis(Axis(0));
        }
        if l > 0 || input_grad {
            let mut d_in = p.dot(&w.t());
            if let Some(m) = mask {
                d_in *= m;
            }
            d_act[l] = d_in;
        }
        d_pre[l] = g;
    }
    Ok(GradientTrace {
        d_activations: d_act,
        d_pre,
        d_weights: d_w,
        d_biases: d_b,
    })
}

/// Loss and weight gradients of one deterministic (dropout-free) pass.
pub fn loss_and_gradients(
    params: &Parameters,
    a: &NormalizedAdjacency,
    x: &FeatureMatrix,
    labels: &LabelVector,
    mask: &NodeMask,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let trace = forward(params, a, x, 0.0, 0)?;
    let loss = cross_entropy(trace.logits(), labels, mask)?;
    let grad = output_gradient(trace.logits(), labels, mask)?;
    let gtrace = backward_impl(&trace, a, params, &grad, false)?;
    Ok((loss, gtrace.d_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, generate_synthetic, normalize_adjacency, SyntheticKind};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn p3() -> NormalizedAdjacency {
        normalize_adjacency(&build_graph(&[(0, 1), (1, 2)], 3).unwrap())
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    }

    #[test]
    fn single_node_identity_pass() {
        let a = normalize_adjacency(&build_graph(&[], 1).unwrap());
        let x = FeatureMatrix::new(array![[1.0, 0.0]]).unwrap();
        let params = Parameters::new(vec![Array2::eye(2)]).unwrap();
        let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
        assert_eq!(trace.logits(), &array![[1.0, 0.0]]);
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let a = p3();
        let x = FeatureMatrix::new(random_matrix(3, 4, 1)).unwrap();
        let params = Parameters::new(vec![Array2::zeros((4, 5)), Array2::zeros((5, 2))]).unwrap();
        let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
        for l in 1..=2 {
            assert!(trace.activation(l).iter().all(|&v| v == 0.0));
            assert!(trace.pre_activation(l - 1).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn p3_single_layer_is_spmv() {
        let a = p3();
        let x = FeatureMatrix::new(array![[1.0], [2.0], [3.0]]).unwrap();
        let params = Parameters::new(vec![array![[1.0]]]).unwrap();
        let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
        let expected = a.spmv(&[1.0, 2.0, 3.0]).unwrap();
        for i in 0..3 {
            assert_relative_eq!(trace.logits()[[i, 0]], expected[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn relu_decomposition_matches_max() {
        let z = random_matrix(6, 6, 4);
        let gated = Zip::from(&z).map_collect(|&v| relu_gate(v) * v);
        let maxed = z.mapv(|v| v.max(0.0));
        assert_eq!(gated, maxed);
        assert_eq!(z.mapv(relu), maxed);
    }

    #[test]
    fn sparse_first_layer_matches_dense() {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi, 12, 0.3, 2).unwrap();
        let a = normalize_adjacency(&g);
        let mut xv = random_matrix(12, 9, 5);
        xv.mapv_inplace(|v| if v > 0.5 { v } else { 0.0 });
        let x = FeatureMatrix::new(xv).unwrap();
        let sx = SparseFeatures::from_dense(&x);
        assert!(sx.density() < 0.6);
        let params = Parameters::new(vec![random_matrix(9, 4, 6), random_matrix(4, 3, 7)]).unwrap();
        let dense = forward(&params, &a, &x, 0.5, 9).unwrap();
        let sparse = forward_sparse(&params, &a, &x, &sx, 0.5, 9).unwrap();
        for (d, s) in dense.logits().iter().zip(sparse.logits()) {
            assert_relative_eq!(d, s, epsilon = 1e-12);
        }
        let labels = LabelVector::new((0..12).map(|i| i % 3).collect(), 3).unwrap();
        let mask = NodeMask::all(12);
        let og = output_gradient(dense.logits(), &labels, &mask).unwrap();
        let gd = backward(&dense, &a, &params, &og).unwrap();
        let gs = backward(&sparse, &a, &params, &og).unwrap();
        for (d, s) in gd.d_weights()[0].iter().zip(gs.d_weights()[0].iter()) {
            assert_relative_eq!(d, s, epsilon = 1e-12);
        }
    }

    #[test]
    fn dropout_is_seeded_and_inverted() {
        let a = p3();
        let x = FeatureMatrix::new(Array2::ones((3, 400))).unwrap();
        let params = Parameters::new(vec![Array2::ones((400, 1))]).unwrap();
        let t1 = forward(&params, &a, &x, 0.5, 3).unwrap();
        let t2 = forward(&params, &a, &x, 0.5, 3).unwrap();
        assert_eq!(t1.logits(), t2.logits());
        let m = t1.dropout_mask(0).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_relative_eq!(m.mean().unwrap(), 1.0, epsilon = 0.1);
        assert!(forward(&params, &a, &x, 1.0, 3).is_err());
    }

    #[test]
    fn uniform_logits_gradient() {
        let logits = Array2::zeros((10, 4));
        let labels = LabelVector::new(vec![1; 10], 4).unwrap();
        let g = output_gradient(&logits, &labels, &NodeMask::all(10)).unwrap();
        for i in 0..10 {
            for t in 0..4 {
                let want = if t == 1 { -0.075 } else { 0.025 };
                assert_relative_eq!(g[[i, t]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn saturated_logits_gradient_vanishes() {
        let logits = array![[800.0, 0.0, 0.0]];
        let labels = LabelVector::new(vec![0], 3).unwrap();
        let g = output_gradient(&logits, &labels, &NodeMask::all(1)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let logits = random_matrix(3, 3, 8);
        let labels = LabelVector::new(vec![2, 0, 1], 3).unwrap();
        let mask = NodeMask::new(vec![true, false, true]);
        let g = output_gradient(&logits, &labels, &mask).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for t in 0..3 {
                let mut plus = logits.clone();
                plus[[i, t]] += h;
                let mut minus = logits.clone();
                minus[[i, t]] -= h;
                let fd = (cross_entropy(&plus, &labels, &mask).unwrap()
                    - cross_entropy(&minus, &labels, &mask).unwrap())
                    / (2.0 * h);
                if g[[i, t]] == 0.0 {
                    assert!(fd.abs() < 1e-9);
                } else {
                    assert_relative_eq!(fd, g[[i, t]], max_relative = 1e-6);
                }
            }
        }
        assert!(output_gradient(&logits, &labels, &NodeMask::new(vec![false; 3])).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let a = p3();
        let x = FeatureMatrix::new(random_matrix(3, 4, 1)).unwrap();
        let params = Parameters::new(vec![random_matrix(4, 5, 2), random_matrix(5, 2, 3)])
            .unwrap()
            .with_zero_bias();
        let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
        let g = backward(&trace, &a, &params, &Array2::zeros((3, 2))).unwrap();
        assert!(g.d_weights().iter().flatten().all(|&v| v == 0.0));
        assert!(g.d_biases().unwrap().iter().flatten().all(|&v| v == 0.0));
        assert!(g.d_activation(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_adjacency_reduces_to_linear_layer() {
        let a = normalize_adjacency(&build_graph(&[], 4).unwrap());
        let xv = random_matrix(4, 3, 10);
        let x = FeatureMatrix::new(xv.clone()).unwrap();
        let params = Parameters::new(vec![random_matrix(3, 2, 11)]).unwrap();
        let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
        let g = random_matrix(4, 2, 12);
        let grads = backward(&trace, &a, &params, &g).unwrap();
        let expected = xv.t().dot(&g);
        for (got, want) in grads.d_weights()[0].iter().zip(expected.iter()) {
            assert_relative_eq!(got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn er_gradients_match_finite_differences() {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi, 10, 0.3, 13).unwrap();
        let a = normalize_adjacency(&g);
        let x = FeatureMatrix::new(random_matrix(10, 4, 14)).unwrap();
        let labels = LabelVector::new((0..10).map(|i| i % 3).collect(), 3).unwrap();
        let mask = NodeMask::all(10);
        let mut params = Parameters::new(vec![random_matrix(4, 4, 15), random_matrix(4, 3, 16)]).unwrap();
        let (_, grads) = loss_and_gradients(&params, &a, &x, &labels, &mask).unwrap();
        let h = 1e-5;
        for l in 0..2 {
            for idx in 0..params.weights()[l].len() {
                let (r, c) = (idx / params.weights()[l].ncols(), idx % params.weights()[l].ncols());
                let orig = params.weights()[l][[r, c]];
                params.weights_mut()[l][[r, c]] = orig + h;
                let (lp, _) = loss_and_gradients(&params, &a, &x, &labels, &mask).unwrap();
                params.weights_mut()[l][[r, c]] = orig - h;
                let (lm, _) = loss_and_gradients(&params, &a, &x, &labels, &mask).unwrap();
                params.weights_mut()[l][[r, c]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[l][[r, c]];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-6), "W^{l}[{r},{c}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        let logits = Array2::eye(4);
        let labels = LabelVector::new(vec![0, 1, 2, 3], 4).unwrap();
        let all = NodeMask::all(4);
        assert_eq!(accuracy(&logits, &labels, &all).unwrap(), 1.0);
        let permuted = LabelVector::new(vec![1, 2, 3, 0], 4).unwrap();
        assert_eq!(accuracy(&logits, &permuted, &all).unwrap(), 0.0);
        let half = LabelVector::new(vec![0, 1, 3, 2], 4).unwrap();
        assert_eq!(accuracy(&logits, &half, &all).unwrap(), 0.5);
        let tied = Array2::zeros((1, 3));
        let first = LabelVector::new(vec![0], 3).unwrap();
        assert_eq!(accuracy(&tied, &first, &NodeMask::all(1)).unwrap(), 1.0);
        assert!(accuracy(&logits, &labels, &NodeMask::new(vec![false; 4])).is_err());
    }

    #[test]
    fn parameter_chain_is_checked() {
        assert!(Parameters::new(vec![Array2::zeros((2, 3)), Array2::zeros((2, 1))]).is_err());
        assert!(Parameters::new(vec![]).is_err());
        assert!(Parameters::new(vec![array![[f64::NAN]]]).is_err());
    }
}
