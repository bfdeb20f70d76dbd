mod common;

use std::collections::VecDeque;

use approx::assert_relative_eq;
use gnn_init::gcn::{forward, loss_and_gradients, relu, relu_gate, Parameters};
use gnn_init::graph::{build_graph, merge_graphs, normalize_adjacency, FeatureMatrix, Graph, LabelVector};
use gnn_init::init::{
    classic_plan, virgo_backward_plan, virgo_backward_plan_for, virgo_forward_plan, Family, LayerDims, Method,
};
use gnn_init::lab::{walks_to, Lab};
use gnn_init::probe::theoretical_forward_variance;
use gnn_init::stats::pearson;
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::Rng as _;

use common::*;

fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = Graph> {
    (1..=max_nodes).prop_flat_map(|n| {
        vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n {
                for v in u + 1..n {
                    if bits[k] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            build_graph(&edges, n).unwrap()
        })
    })
}

fn widths_strategy() -> impl Strategy<Value = Vec<usize>> {
    (2usize..=5).prop_flat_map(|layers| vec(1usize..=16, layers).prop_map(|mut w| {
        w.push(w[0] % 4 + 2);
        w
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_with_unit_interval_values(g in graph_strategy(20)) {
        let a = normalize_adjacency(&g);
        for i in 0..g.node_count() {
            let (cols, vals) = a.row(i);
            prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            for (&j, &v) in cols.iter().zip(vals) {
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert_eq!(v, a.get(j, i));
            }
        }
    }

    #[test]
    fn propagate_matches_dense_product(g in graph_strategy(20), seed in any::<u64>()) {
        let n = g.node_count();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let h = gaussian_matrix(n, 3, &mut rng);
        let got = normalize_adjacency(&g).propagate(&h).unwrap();
        let want = dense_adjacency(&g).dot(&h);
        for (x, y) in got.iter().zip(want.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn merge_preserves_edges_and_components(gs in vec(graph_strategy(8), 1..5)) {
        let merged = merge_graphs(&gs).unwrap();
        prop_assert_eq!(merged.edge_count(), gs.iter().map(Graph::edge_count).sum::<usize>());
        let mut block = Vec::new();
        for (b, g) in gs.iter().enumerate() {
            block.extend(std::iter::repeat_n(b, g.node_count()));
        }
        prop_assert_eq!(block.len(), merged.node_count());
        for start in 0..merged.node_count() {
            let mut seen = vec![false; merged.node_count()];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                prop_assert_eq!(block[u], block[start]);
                for &v in merged.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
    }

    #[test]
    fn virgo_plans_match_dense_oracle(g in graph_strategy(20), widths in widths_strategy(), seed in any::<u64>()) {
        let n = g.node_count();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let h0bar: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let a = normalize_adjacency(&g);
        let dims = LayerDims::new(widths.clone()).unwrap();
        let fwd = virgo_forward_plan(&a, &h0bar, &dims).unwrap();
        for (got, want) in fwd.variances().iter().zip(dense_virgo_forward(&g, &h0bar, &widths)) {
            prop_assert!(relative_error(*got, want) < 1e-10, "{got} vs {want}");
        }
        let bwd = virgo_backward_plan_for(&a, &dims, n).unwrap();
        for (got, want) in bwd.variances().iter().zip(dense_virgo_backward(&g, &widths, n)) {
            prop_assert!(relative_error(*got, want) < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn virgo_forward_ignores_feature_scale(
        g in graph_strategy(15),
        widths in widths_strategy(),
        scale in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64],
    ) {
        let n = g.node_count();
        let h0bar: Vec<f64> = (0..n).map(|i| 0.3 + (i % 4) as f64).collect();
        let scaled: Vec<f64> = h0bar.iter().map(|v| v * scale).collect();
        let a = normalize_adjacency(&g);
        let dims = LayerDims::new(widths).unwrap();
        let base = virgo_forward_plan(&a, &h0bar, &dims).unwrap();
        let other = virgo_forward_plan(&a, &scaled, &dims).unwrap();
        for (x, y) in base.variances().iter().zip(other.variances()) {
            prop_assert!(relative_error(*x, *y) < 1e-12);
        }
    }

    #[test]
    fn regular_graphs_reduce_to_kaiming(n in 3usize..40, widths in widths_strategy(), c in 0.1..5.0f64, complete in any::<bool>()) {
        let g = if complete {
            let edges: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
            build_graph(&edges, n).unwrap()
        } else {
            ring(n)
        };
        let a = normalize_adjacency(&g);
        let dims = LayerDims::new(widths).unwrap();
        let layers = dims.layers();
        let fwd = virgo_forward_plan(&a, &vec![c; n], &dims).unwrap();
        let kai_for = classic_plan(Method::KaiFor, &dims, Family::Gaussian).unwrap();
        for (x, y) in fwd.variances().iter().zip(kai_for.variances()) {
            prop_assert!(relative_error(*x, *y) < 1e-12, "{x} vs {y}");
        }
        let bwd = virgo_backward_plan(&a, &dims).unwrap();
        let kai_back = classic_plan(Method::KaiBack, &dims, Family::Gaussian).unwrap();
        for l in 0..layers - 1 {
            prop_assert!(relative_error(bwd.variances()[l], kai_back.variances()[l]) < 1e-12);
        }
        let theory = theoretical_forward_variance(&a, &vec![c; n], &kai_for).unwrap();
        for t in &theory {
            prop_assert!(relative_error(t.mean, theory[0].mean) < 1e-12);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pairs in vec((-10.0..10.0f64, -10.0..10.0f64), 3..40),
        scale in 0.01..100.0f64,
        shift in -50.0..50.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(pearson(&x, &y).is_ok());
        let r = pearson(&x, &y).unwrap();
        prop_assert_eq!(r, pearson(&y, &x).unwrap());
        let moved: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        prop_assert!((pearson(&moved, &y).unwrap() - r).abs() < 1e-9);
        let flipped: Vec<f64> = x.iter().map(|v| -scale * v + shift).collect();
        prop_assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), bias in any::<bool>()) {
        let inst = random_instance(seed, bias);
        let err = max_gradient_error(&inst);
        prop_assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn path_terms_sum_to_hidden_states(g in graph_strategy(8), seed in 0u64..1000) {
        let n = g.node_count();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = FeatureMatrix::new(gaussian_matrix(n, 3, &mut rng)).unwrap();
        let lab = Lab::xavier(&g, &x, 5, 2, seed).unwrap();
        for l in 1..=3 {
            let h = lab.trace().activation(l);
            for i in 0..n {
                let mut total = ndarray::Array1::<f64>::zeros(5);
                for p in walks_to(&g, i, l) {
                    let term = lab.decompose(&p).unwrap();
                    let rebuilt = &term.delta * &(term.degree_product * &term.fnn);
                    prop_assert_eq!(&term.assembled, &rebuilt);
                    total += &term.message;
                }
                for t in 0..5 {
                    let want = h[[i, t]];
                    prop_assert!((total[t] - want).abs() <= 1e-9 * want.abs().max(1e-12), "{} vs {}", total[t], want);
                }
            }
        }
    }
}

#[test]
fn relu_gate_decomposition_is_exact() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let g = er_graph(25, 0.2, &mut rng);
    let x = FeatureMatrix::new(gaussian_matrix(25, 6, &mut rng)).unwrap();
    let params = Parameters::new(vec![gaussian_matrix(6, 8, &mut rng), gaussian_matrix(8, 8, &mut rng), gaussian_matrix(8, 3, &mut rng)]).unwrap();
    let a = normalize_adjacency(&g);
    let trace = forward(&params, &a, &x, 0.0, 0).unwrap();
    for l in 1..trace.layers() {
        let pre = trace.pre_activation(l - 1);
        let gated = pre.mapv(relu_gate) * pre;
        let act = trace.activation(l);
        for ((g, r), h) in gated.iter().zip(pre.mapv(relu).iter()).zip(act.iter()) {
            // a zero gate times a negative input is -0.0
            assert_eq!((g + 0.0).to_bits(), r.to_bits());
            assert_eq!(r.to_bits(), h.to_bits());
        }
    }
}

#[test]
fn tiny_gradient_step_does_not_increase_loss() {
    for seed in 0..20 {
        let inst = random_instance(seed, false);
        let a = normalize_adjacency(&inst.graph);
        let (before, grads) = loss_and_gradients(&inst.params, &a, &inst.x, &inst.labels, &inst.mask).unwrap();
        let mut params = inst.params.clone();
        for (w, g) in params.weights_mut().iter_mut().zip(&grads) {
            w.scaled_add(-1e-6, g);
        }
        let (after, _) = loss_and_gradients(&params, &a, &inst.x, &inst.labels, &inst.mask).unwrap();
        assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn ones_propagate_to_one_on_regular_graphs() {
    for n in [3, 4, 7, 12] {
        let a = normalize_adjacency(&ring(n));
        for v in a.spmv(&vec![1.0; n]).unwrap() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-15);
        }
    }
    let star = build_graph(&[(0, 1), (0, 2), (0, 3)], 4).unwrap();
    let a = normalize_adjacency(&star);
    let ones = a.spmv(&[1.0; 4]).unwrap();
    for i in 0..4 {
        let (_, vals) = a.row(i);
        assert!(ones[i] <= vals.iter().sum::<f64>() + 1e-15);
    }
}

#[test]
fn virgo_backward_ignores_features() {
    let g = ring(9);
    let a = normalize_adjacency(&g);
    let dims = LayerDims::new(vec![5, 7, 7, 3]).unwrap();
    let x1 = FeatureMatrix::new(Array2::ones((9, 5))).unwrap();
    let x2 = FeatureMatrix::new(Array2::from_shape_fn((9, 5), |(i, j)| (i * j) as f64)).unwrap();
    let labels = LabelVector::new((0..9).map(|i| i % 3).collect(), 3).unwrap();
    let h1 = gnn_init::graph::feature_means(&x1).unwrap();
    let h2 = gnn_init::graph::feature_means(&x2).unwrap();
    let p1 = gnn_init::init::build_plan(Method::VirgoBack, &a, &h1, &dims, Family::Gaussian, labels.len()).unwrap();
    let p2 = gnn_init::init::build_plan(Method::VirgoBack, &a, &h2, &dims, Family::Gaussian, labels.len()).unwrap();
    assert_eq!(p1, p2);
}
