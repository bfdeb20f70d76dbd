//! Flat `key = value` experiment files with `[section]` headers.
//!
//! ```text
//! # comments start with '#'
//! [dataset]
//! kind = synthetic
//! graph = erdos_renyi
//! nodes = 500
//! avg_degree = 10
//!
//! [sweep]
//! initializers = xavier, virgo_for
//! seeds = 0..10
//! lr = 0.01, 0.005
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::graph::SyntheticKind;
use crate::init::{Family, Method};

/// Raw parsed file: `(section, key) -> (value, line)`.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = (section.clone(), key.trim().to_string());
            if entries.insert(key.clone(), (value.trim().to_string(), lineno)).is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("duplicate key '{}' in [{}]", key.1, key.0),
                });
            }
        }
        Ok(KeyValues {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeyValues::parse(&text, path)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, _)| v.as_str())
    }

    fn error(&self, section: &str, key: &str, message: String) -> Error {
        let line = self
            .entries
            .get(&(section.to_string(), key.to_string()))
            .map_or(0, |(_, l)| *l);
        Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("[{section}] {key}: {message}"),
        }
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(section, key)
            .map(|v| v.parse::<T>().map_err(|e| self.error(section, key, format!("'{v}': {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| self.error(section, key, format!("'{s}': {e}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn list_or<T: FromStr>(&self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        Ok(self.list(section, key)?.unwrap_or(default))
    }

    /// Seed lists accept `a..b` (half-open) as well as comma lists.
    pub fn seeds(&self, section: &str, key: &str) -> Result<Option<Vec<u64>>> {
        match self.raw(section, key) {
            Some(v) if v.contains("..") => {
                let (lo, hi) = v.split_once("..").expect("checked");
                let parse = |s: &str| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|e| self.error(section, key, format!("'{v}': {e}")))
                };
                Ok(Some((parse(lo)?..parse(hi)?).collect()))
            }
            _ => self.list(section, key),
        }
    }

    pub fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.raw(section, key).map(|v| self.resolve(v))
    }

    /// Relative paths resolve against the experiment file's directory.
    pub fn resolve(&self, v: &str) -> PathBuf {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn keys(&self) -> impl Iterator<Item = &(String, String)> {
        self.entries.keys()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        kind: SyntheticKind,
        nodes: usize,
        p: f64,
        seed: u64,
        features: usize,
        feature_low: f64,
        feature_high: f64,
        classes: usize,
    },
    Planted {
        nodes: usize,
        classes: usize,
        p_in: f64,
        p_out: f64,
        seed: u64,
        features: usize,
        noise: f64,
    },
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        nodes: Option<usize>,
    },
    Cora {
        dir: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub files: Option<(PathBuf, PathBuf, PathBuf)>,
    pub train: f64,
    pub valid: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSpec {
    pub layers: usize,
    pub width: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabSpec {
    pub hidden: usize,
    pub n_paths: usize,
    pub n_neurons: usize,
    pub lengths: Vec<usize>,
    pub seed: u64,
}

/// Everything a command needs, with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub family: Family,
    pub initializers: Vec<Method>,
    pub seeds: Vec<u64>,
    pub grid: Grid,
    pub probe: ProbeSpec,
    pub lab: LabSpec,
    pub out_dir: PathBuf,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("", &["name"]),
    (
        "dataset",
        &[
            "kind", "graph", "nodes", "p", "avg_degree", "seed", "features", "feature_low", "feature_high", "classes",
            "p_in", "p_out", "noise", "edges", "features_file", "labels", "dir",
        ],
    ),
    ("split", &["train", "valid", "test", "train_frac", "valid_frac", "seed"]),
    ("model", &["family", "hidden", "layers", "bias"]),
    (
        "sweep",
        &["initializers", "seeds", "lr", "dropout", "weight_decay", "hidden", "layers", "epochs", "patience"],
    ),
    ("probe", &["layers", "width", "seeds", "methods"]),
    ("lab", &["hidden", "paths", "neurons", "lengths", "seed"]),
    ("output", &["dir"]),
];

/// Warns above this many sweep settings.
pub const GRID_WARN: usize = 64;

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        ExperimentSpec::from_key_values(&KeyValues::load(path)?)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        ExperimentSpec::from_key_values(&KeyValues::parse(text, path)?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        for (section, key) in kv.keys() {
            let known = KNOWN
                .iter()
                .any(|(s, keys)| s == section && keys.contains(&key.as_str()));
            if !known {
                warn!("ignoring unknown key '{key}' in [{section}]");
            }
        }
        let dataset = parse_dataset(kv)?;
        let split_files = match (kv.path("split", "train"), kv.path("split", "valid"), kv.path("split", "test")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            (None, None, None) => None,
            _ => return Err(Error::invalid("[split] needs all of train, valid and test or none")),
        };
        let split = SplitSpec {
            files: split_files,
            train: kv.get_or("split", "train_frac", 0.6)?,
            valid: kv.get_or("split", "valid_frac", 0.2)?,
            seed: kv.get_or("split", "seed", 0)?,
        };
        let hidden: usize = kv.get_or("model", "hidden", 64)?;
        let layers: usize = kv.get_or("model", "layers", 2)?;
        let grid = Grid {
            lr: kv.list_or("sweep", "lr", vec![0.01])?,
            dropout: kv.list_or("sweep", "dropout", vec![0.5])?,
            weight_decay: kv.list_or("sweep", "weight_decay", vec![0.0])?,
            hidden: kv.list_or("sweep", "hidden", vec![hidden])?,
            layers: kv.list_or("sweep", "layers", vec![layers])?,
            epochs: kv.get_or("sweep", "epochs", 1000)?,
            patience: kv.get_or("sweep", "patience", 20)?,
            bias: kv.get_or("model", "bias", false)?,
        };
        let settings = grid.lr.len() * grid.dropout.len() * grid.weight_decay.len() * grid.hidden.len() * grid.layers.len();
        if settings == 0 {
            return Err(Error::invalid("[sweep] grid has an empty axis"));
        }
        if settings > GRID_WARN {
            warn!("sweep grid has {settings} settings (more than {GRID_WARN})");
        }
        let initializers = kv.list_or("sweep", "initializers", vec![Method::Xavier, Method::VirgoFor])?;
        let seeds = kv.seeds("sweep", "seeds")?.unwrap_or_else(|| (0..10).collect());
        if initializers.is_empty() || seeds.is_empty() {
            return Err(Error::invalid("initializer and seed lists must be non-empty"));
        }
        let probe = ProbeSpec {
            layers: kv.get_or("probe", "layers", 5)?,
            width: kv.get_or("probe", "width", 128)?,
            seeds: kv.seeds("probe", "seeds")?.unwrap_or_else(|| (0..50).collect()),
            methods: kv.list_or("probe", "methods", Method::ALL.to_vec())?,
        };
        let lab = LabSpec {
            hidden: kv.get_or("lab", "hidden", 128)?,
            n_paths: kv.get_or("lab", "paths", 100)?,
            n_neurons: kv.get_or("lab", "neurons", 100)?,
            lengths: kv.list_or("lab", "lengths", vec![1, 2, 3])?,
            seed: kv.get_or("lab", "seed", 0)?,
        };
        Ok(ExperimentSpec {
            name: kv.get_or("", "name", "experiment".to_string())?,
            dataset,
            split,
            family: kv.get_or("model", "family", Family::Gaussian)?,
            initializers,
            seeds,
            grid,
            probe,
            lab,
            out_dir: kv.path("output", "dir").unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

fn require<T>(v: Option<T>, section: &str, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(format!("missing [{section}] {key}")))
}

fn parse_dataset(kv: &KeyValues) -> Result<DatasetSpec> {
    let kind = kv.raw("dataset", "kind").unwrap_or("synthetic");
    match kind {
        "synthetic" => {
            let graph: SyntheticKind = kv.get_or("dataset", "graph", SyntheticKind::ErdosRenyi)?;
            let nodes: usize = require(kv.get("dataset", "nodes")?, "dataset", "nodes")?;
            let p = match (kv.get::<f64>("dataset", "p")?, kv.get::<f64>("dataset", "avg_degree")?) {
                (Some(p), _) => p,
                (None, Some(d)) if nodes > 1 => d / (nodes - 1) as f64,
                _ => 0.0,
            };
            Ok(DatasetSpec::Synthetic {
                kind: graph,
                nodes,
                p,
                seed: kv.get_or("dataset", "seed", 0)?,
                features: kv.get_or("dataset", "features", 64)?,
                feature_low: kv.get_or("dataset", "feature_low", 0.0)?,
                feature_high: kv.get_or("dataset", "feature_high", 1.0)?,
                classes: kv.get_or("dataset", "classes", 2)?,
            })
        }
        "planted" => Ok(DatasetSpec::Planted {
            nodes: require(kv.get("dataset", "nodes")?, "dataset", "nodes")?,
            classes: kv.get_or("dataset", "classes", 2)?,
            p_in: kv.get_or("dataset", "p_in", 0.1)?,
            p_out: kv.get_or("dataset", "p_out", 0.01)?,
            seed: kv.get_or("dataset", "seed", 0)?,
            features: kv.get_or("dataset", "features", 16)?,
            noise: kv.get_or("dataset", "noise", 1.0)?,
        }),
        "files" => Ok(DatasetSpec::Files {
            edges: require(kv.path("dataset", "edges"), "dataset", "edges")?,
            features: require(kv.path("dataset", "features_file"), "dataset", "features_file")?,
            labels: require(kv.path("dataset", "labels"), "dataset", "labels")?,
            nodes: kv.get("dataset", "nodes")?,
        }),
        "cora" => Ok(DatasetSpec::Cora {
            dir: kv
                .path("dataset", "dir")
                .unwrap_or_else(|| PathBuf::from(std::env::var("CORA_DIR").unwrap_or_else(|_| "data/cora".into()))),
        }),
        other => Err(Error::invalid(format!(
            "unknown dataset kind '{other}' (synthetic, planted, files, cora)"
        ))),
    }
}
