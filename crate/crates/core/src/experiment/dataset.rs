use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::{DatasetSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::io::{read_cora, read_edge_list, read_features, read_indices, read_labels, write_edge_list, CORA_SHAPE};
use crate::graph::{
    feature_means, generate_synthetic, normalize_adjacency, planted_partition, FeatureMatrix, Graph, LabelVector,
    NodeMask, NormalizedAdjacency, Split,
};

/// A graph with node features, labels and a train / validation / test split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub split: Split,
}

impl Dataset {
    pub fn new(name: &str, graph: Graph, features: FeatureMatrix, labels: LabelVector, split: Split) -> Result<Self> {
        let n = graph.node_count();
        if features.node_count() != n {
            return Err(Error::FeatureRows {
                features: features.node_count(),
                nodes: n,
            });
        }
        if labels.len() != n {
            return Err(Error::LabelRows {
                labels: labels.len(),
                nodes: n,
            });
        }
        if split.train.len() != n {
            return Err(Error::dim(format!("split covers {} nodes, graph has {n}", split.train.len())));
        }
        Ok(Dataset {
            name: name.to_string(),
            graph,
            features,
            labels,
            split,
        })
    }

    pub fn adjacency(&self) -> NormalizedAdjacency {
        normalize_adjacency(&self.graph)
    }

    pub fn feature_means(&self) -> Result<Vec<f64>> {
        feature_means(&self.features)
    }

    /// Writes `edges.tsv`, `features.csv`, `labels.txt` and the three split
    /// index files into `dir`; the `files` dataset kind reads them back.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
        };
        let path = dir.join("edges.tsv");
        let mut out = create("edges.tsv")?;
        write_edge_list(&self.graph, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))?;

        let path = dir.join("features.csv");
        let mut out = create("features.csv")?;
        let written: std::io::Result<()> = (|| {
            for row in self.features.values().rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
            out.flush()
        })();
        written.map_err(|e| Error::io(&path, e))?;

        let write_list = |name: &str, values: Vec<usize>| -> Result<()> {
            let path = dir.join(name);
            let mut out = create(name)?;
            values
                .into_iter()
                .try_for_each(|v| writeln!(out, "{v}"))
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(path, e))
        };
        write_list("labels.txt", self.labels.as_slice().to_vec())?;
        write_list("train.txt", self.split.train.indices().collect())?;
        write_list("valid.txt", self.split.valid.indices().collect())?;
        write_list("test.txt", self.split.test.indices().collect())?;
        Ok(())
    }
}

fn uniform_features(n: usize, dim: usize, low: f64, high: f64, seed: u64) -> Result<FeatureMatrix> {
    if high < low {
        return Err(Error::invalid(format!("feature range [{low}, {high}] is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    FeatureMatrix::new(Array2::from_shape_fn((n, dim), |_| low + (high - low) * rng.random::<f64>()))
}

fn random_labels(n: usize, classes: usize, seed: u64) -> Result<LabelVector> {
    if classes == 0 {
        return Err(Error::invalid("classes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    LabelVector::new((0..n).map(|_| rng.random_range(0..classes)).collect(), classes)
}

/// One-hot class indicator in the first `classes` columns plus Gaussian noise.
fn planted_features(labels: &LabelVector, dim: usize, noise: f64, seed: u64) -> Result<FeatureMatrix> {
    if dim < labels.classes() {
        return Err(Error::invalid(format!(
            "planted features need at least {} columns, got {dim}",
            labels.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    FeatureMatrix::new(Array2::from_shape_fn((labels.len(), dim), |(i, j)| {
        let signal = if labels.get(i) == j { 1.0 } else { 0.0 };
        signal + noise * rng.sample::<f64, _>(StandardNormal)
    }))
}

fn load_split(spec: &SplitSpec, n: usize) -> Result<Split> {
    match &spec.files {
        Some((train, valid, test)) => Split::new(
            NodeMask::from_indices(n, &read_indices(train)?)?,
            NodeMask::from_indices(n, &read_indices(valid)?)?,
            NodeMask::from_indices(n, &read_indices(test)?)?,
        ),
        None => Split::random(n, spec.train, spec.valid, spec.seed),
    }
}

/// Builds or reads the dataset described by `spec`.
pub fn load_dataset(name: &str, spec: &DatasetSpec, split: &SplitSpec) -> Result<Dataset> {
    let (graph, features, labels) = match spec {
        DatasetSpec::Synthetic {
            kind,
            nodes,
            p,
            seed,
            features,
            feature_low,
            feature_high,
            classes,
        } => {
            let g = generate_synthetic(*kind, *nodes, *p, *seed)?;
            let x = uniform_features(*nodes, *features, *feature_low, *feature_high, *seed)?;
            let y = random_labels(*nodes, *classes, *seed)?;
            (g, x, y)
        }
        DatasetSpec::Planted {
            nodes,
            classes,
            p_in,
            p_out,
            seed,
            features,
            noise,
        } => {
            let (g, y) = planted_partition(*nodes, *classes, *p_in, *p_out, *seed)?;
            let x = planted_features(&y, *features, *noise, *seed)?;
            (g, x, y)
        }
        DatasetSpec::Files {
            edges,
            features,
            labels,
            nodes,
        } => {
            let x = read_features(features)?;
            let (pairs, edge_nodes) = read_edge_list(edges)?;
            let n = nodes.unwrap_or(x.node_count());
            if x.node_count() != n || edge_nodes > n {
                return Err(Error::FeatureRows {
                    features: x.node_count(),
                    nodes: n.max(edge_nodes),
                });
            }
            let g = Graph::from_edges(&pairs, n)?;
            let y = read_labels(labels)?;
            (g, x, y)
        }
        DatasetSpec::Cora { dir } => {
            let data = read_cora(&dir.join("cora.content"), &dir.join("cora.cites"))?;
            let shape = (data.graph.node_count(), data.features.dim(), data.labels.classes());
            if shape != CORA_SHAPE {
                warn!("cora shape {shape:?} differs from the published {CORA_SHAPE:?}");
            }
            (data.graph, data.features, data.labels)
        }
    };
    let n = graph.node_count();
    if labels.len() != n {
        return Err(Error::LabelRows {
            labels: labels.len(),
            nodes: n,
        });
    }
    let split = load_split(split, n)?;
    info!(
        "dataset {name}: {n} nodes, {} edges, {} features, {} classes",
        graph.edge_count(),
        features.dim(),
        labels.classes()
    );
    Dataset::new(name, graph, features, labels, split)
}
