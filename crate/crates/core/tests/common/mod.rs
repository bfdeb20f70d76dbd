//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use gnn_init::gcn::{backward, cross_entropy, forward, output_gradient, Parameters};
use gnn_init::graph::{build_graph, normalize_adjacency, FeatureMatrix, Graph, LabelVector, NodeMask};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `D̃^(-1/2) (A + I) D̃^(-1/2)` built densely from the edge set.
pub fn dense_adjacency(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let mut m = Array2::<f64>::eye(n);
    for (u, v) in g.edges() {
        m[[u, v]] = 1.0;
        m[[v, u]] = 1.0;
    }
    let deg: Vec<f64> = m.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| m[[i, j]] / (deg[i] * deg[j]).sqrt())
}

/// `1ᵀ[Ã^k v]²` for `k = 0..=max_power` by dense matrix powers.
pub fn dense_square_sums(g: &Graph, v: &[f64], max_power: usize) -> Vec<f64> {
    let a = dense_adjacency(g);
    let v = Array1::from(v.to_vec());
    let mut power = Array2::<f64>::eye(g.node_count());
    let mut out = Vec::new();
    for _ in 0..=max_power {
        let pv = power.dot(&v);
        out.push(pv.mapv(|x| x * x).sum());
        power = power.dot(&a);
    }
    out
}

pub fn dense_virgo_forward(g: &Graph, h0bar: &[f64], widths: &[usize]) -> Vec<f64> {
    let layers = widths.len() - 1;
    let s = dense_square_sums(g, h0bar, layers);
    (0..layers).map(|l| 2.0 / widths[l] as f64 * s[l] / s[l + 1]).collect()
}

pub fn dense_virgo_backward(g: &Graph, widths: &[usize], loss_nodes: usize) -> Vec<f64> {
    let layers = widths.len() - 1;
    let r = dense_square_sums(g, &vec![1.0; g.node_count()], layers);
    let classes = widths[layers] as f64;
    let mut out: Vec<f64> = (0..layers - 1)
        .map(|l| 2.0 / widths[l + 1] as f64 * r[layers - l - 1] / r[layers - l])
        .collect();
    out.push(loss_nodes as f64 / ((classes - 1.0) * r[1]));
    out
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / got.abs().max(want.abs())
    }
}

pub fn er_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    build_graph(&edges, n).unwrap()
}

pub fn ring(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    build_graph(&edges, n).unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// One random gradient-check problem.
pub struct Instance {
    pub graph: Graph,
    pub x: FeatureMatrix,
    pub labels: LabelVector,
    pub mask: NodeMask,
    pub params: Parameters,
}

/// At most 20 nodes, 3 layers and width 8.
pub fn random_instance(seed: u64, bias: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=20);
    let p = rng.random_range(0.1..0.6);
    let graph = er_graph(n, p, &mut rng);
    let layers = rng.random_range(1..=3);
    let classes = rng.random_range(2..=4);
    let mut widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=8)).collect();
    widths.push(classes);
    let x = FeatureMatrix::new(gaussian_matrix(n, widths[0], &mut rng)).unwrap();
    let labels = LabelVector::new((0..n).map(|_| rng.random_range(0..classes)).collect(), classes).unwrap();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let weights = (0..layers)
        .map(|l| gaussian_matrix(widths[l], widths[l + 1], &mut rng) * (1.0 / (widths[l] as f64).sqrt()))
        .collect();
    let mut params = Parameters::new(weights).unwrap();
    if bias {
        params = params.with_zero_bias();
        for b in params.biases_mut().unwrap() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    Instance {
        graph,
        x,
        labels,
        mask: NodeMask::new(mask),
        params,
    }
}

fn loss(inst: &Instance, params: &Parameters) -> f64 {
    let a = normalize_adjacency(&inst.graph);
    let trace = forward(params, &a, &inst.x, 0.0, 0).unwrap();
    cross_entropy(trace.logits(), &inst.labels, &inst.mask).unwrap()
}

/// Largest relative error between backpropagated and central-difference
/// gradients (step `1e-5`) over every weight and bias entry. Entries where
/// both gradients are below `1e-6` in magnitude are compared absolutely
/// against that floor.
pub fn max_gradient_error(inst: &Instance) -> f64 {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let a = normalize_adjacency(&inst.graph);
    let trace = forward(&inst.params, &a, &inst.x, 0.0, 0).unwrap();
    let out = output_gradient(trace.logits(), &inst.labels, &inst.mask).unwrap();
    let grads = backward(&trace, &a, &inst.params, &out).unwrap();
    let compare = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);

    let mut worst = 0.0f64;
    let mut params = inst.params.clone();
    for l in 0..params.layers() {
        let (rows, cols) = params.weights()[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.weights()[l][[r, c]];
                params.weights_mut()[l][[r, c]] = orig + STEP;
                let plus = loss(inst, &params);
                params.weights_mut()[l][[r, c]] = orig - STEP;
                let minus = loss(inst, &params);
                params.weights_mut()[l][[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                worst = worst.max(compare(grads.d_weights()[l][[r, c]], numeric));
            }
        }
        if params.biases().is_some() {
            for c in 0..cols {
                let orig = params.biases().unwrap()[l][c];
                params.biases_mut().unwrap()[l][c] = orig + STEP;
                let plus = loss(inst, &params);
                params.biases_mut().unwrap()[l][c] = orig - STEP;
                let minus = loss(inst, &params);
                params.biases_mut().unwrap()[l][c] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                worst = worst.max(compare(grads.d_biases().unwrap()[l][c], numeric));
            }
        }
    }
    worst
}
