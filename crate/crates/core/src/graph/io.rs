//! Plain-text graph and node-data formats.
//!
//! * Edge lists: one `u<TAB>v` pair per line, 0-based; blank lines and
//!   lines starting with `#` are ignored. Any whitespace separates fields.
//! * Features / labels / split indices: header-free numeric rows, one node
//!   per row, comma- or whitespace-separated.
//! * Cora raw: `<id> <binary features...> <class>` content file and a cites
//!   file of id pairs. Ids are remapped to dense indices in content order,
//!   class strings to indices in first-seen order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;

use super::{FeatureMatrix, Graph, LabelVector};
use crate::error::{Error, Result};

/// Published shape of the Cora citation graph: nodes, features, classes.
pub const CORA_SHAPE: (usize, usize, usize) = (2708, 1433, 7);

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads an edge list. Returns the pairs and `1 + max index` (0 when empty).
pub fn read_edge_list(path: &Path) -> Result<(Vec<(usize, usize)>, usize)> {
    let mut edges = Vec::new();
    let mut max_index = None;
    for (lineno, line) in data_lines(path)? {
        let parts: Vec<&str> = fields(&line).collect();
        if parts.len() != 2 {
            return Err(parse_err(path, lineno, "expected two node indices"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad node index '{s}'")))
        };
        let (u, v) = (parse(parts[0])?, parse(parts[1])?);
        max_index = Some(max_index.unwrap_or(0).max(u).max(v));
        edges.push((u, v));
    }
    Ok((edges, max_index.map_or(0, |m| m + 1)))
}

pub fn write_edge_list<W: Write>(g: &Graph, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# nodes: {}", g.node_count())?;
    for (u, v) in g.edges() {
        writeln!(out, "{u}\t{v}")?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut rows = Vec::new();
    for (lineno, line) in data_lines(path)? {
        let row = fields(&line)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, format!("bad number '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("row has {} values, expected {first}", row.len()),
                ));
            }
        }
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

/// One non-negative integer per row (first field).
pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    data_lines(path)?
        .into_iter()
        .map(|(lineno, line)| {
            let first = fields(&line).next().unwrap_or_default();
            first
                .parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad integer '{first}'")))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<LabelVector> {
    Ok(LabelVector::from_labels(read_indices(path)?))
}

/// Cora-format dataset after id remapping.
#[derive(Clone, Debug)]
pub struct CoraData {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub class_names: Vec<String>,
    pub paper_ids: Vec<String>,
}

/// Loads the raw Cora `content` and `cites` files.
///
/// Citations pointing at unknown ids and self-citations are dropped with a
/// warning; citation direction is ignored.
pub fn read_cora(content: &Path, cites: &Path) -> Result<CoraData> {
    let mut ids = Vec::new();
    let mut index_of = HashMap::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in data_lines(content)? {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 3 {
            return Err(parse_err(content, lineno, "expected id, features and class"));
        }
        let id = parts[0].to_string();
        let class = parts[parts.len() - 1].to_string();
        let row = parts[1..parts.len() - 1]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(content, lineno, format!("bad feature '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if index_of.insert(id.clone(), ids.len()).is_some() {
            return Err(parse_err(content, lineno, format!("duplicate id '{id}'")));
        }
        let next = class_names.len();
        let label = *class_index.entry(class.clone()).or_insert_with(|| {
            class_names.push(class);
            next
        });
        ids.push(id);
        labels.push(label);
        rows.push(row);
    }
    let mut edges = Vec::new();
    let (mut unknown, mut self_cites) = (0usize, 0usize);
    for (lineno, line) in data_lines(cites)? {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_err(cites, lineno, "expected two paper ids"));
        }
        match (index_of.get(parts[0]), index_of.get(parts[1])) {
            (Some(&u), Some(&v)) if u == v => self_cites += 1,
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => unknown += 1,
        }
    }
    if unknown > 0 || self_cites > 0 {
        warn!("cora cites: dropped {unknown} citations to unknown ids and {self_cites} self-citations");
    }
    let graph = Graph::from_edges(&edges, ids.len())?;
    let features = FeatureMatrix::from_rows(&rows)?;
    let classes = class_names.len();
    let (n, f, c) = CORA_SHAPE;
    if (graph.node_count(), features.dim(), classes) != (n, f, c) {
        warn!(
            "cora shape is {} nodes / {} features / {} classes, expected {n} / {f} / {c}",
            graph.node_count(),
            features.dim(),
            classes
        );
    }
    Ok(CoraData {
        graph,
        features,
        labels: LabelVector::new(labels, classes)?,
        class_names,
        paper_ids: ids,
    })
}
