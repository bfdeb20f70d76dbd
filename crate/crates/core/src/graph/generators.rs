use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, LabelVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Cycle `0 - 1 - ... - (n-1) - 0`.
    Ring,
    /// Node 0 connected to every other node.
    Star,
    /// G(n, p): every unordered pair independently with probability `p`.
    ErdosRenyi,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Ring => "ring",
            SyntheticKind::Star => "star",
            SyntheticKind::ErdosRenyi => "erdos_renyi",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(SyntheticKind::Ring),
            "star" => Ok(SyntheticKind::Star),
            "erdos_renyi" | "er" | "gnp" => Ok(SyntheticKind::ErdosRenyi),
            other => Err(Error::invalid(format!("unknown graph kind '{other}'"))),
        }
    }
}

/// Deterministic synthetic graph. `p` is only read for Erdős–Rényi graphs
/// and `seed` only affects them.
pub fn generate_synthetic(kind: SyntheticKind, n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("synthetic graphs need at least one node"));
    }
    let edges: Vec<(usize, usize)> = match kind {
        SyntheticKind::Ring => {
            if n < 3 {
                (1..n).map(|i| (i - 1, i)).collect()
            } else {
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            }
        }
        SyntheticKind::Star => (1..n).map(|i| (0, i)).collect(),
        SyntheticKind::ErdosRenyi => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("edge probability {p} not in [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            edges
        }
    };
    Graph::from_edges(&edges, n)
}

/// Planted-partition graph: nodes are split into `classes` contiguous blocks,
/// intra-block pairs connect with `p_in`, inter-block pairs with `p_out`.
/// Returns the block id of every node as its label.
pub fn planted_partition(
    n: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(Graph, LabelVector)> {
    if n == 0 || classes == 0 || classes > n {
        return Err(Error::invalid("planted partition needs 1 <= classes <= n"));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("edge probability {p} not in [0, 1]")));
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| i * classes / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Ok((Graph::from_edges(&edges, n)?, LabelVector::new(labels, classes)?))
}
