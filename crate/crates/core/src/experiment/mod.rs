//! Spec-file driven experiments: dataset loading, initializer comparison,
//! variance probes, assumption tables and plan export.

mod dataset;
mod spec;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

pub use dataset::{load_dataset, Dataset};
pub use spec::{DatasetSpec, ExperimentSpec, Grid, KeyValues, LabSpec, ProbeSpec, SplitSpec, GRID_WARN};

use crate::error::{Error, Result};
use crate::gcn::{train_node_classifier, LossMask, TrainConfig, TrainReport};
use crate::graph::{merge_graphs, Graph};
use crate::init::{build_plan, InitPlan, LayerDims, Method};
use crate::lab::{assumption_markdown, run_assumption_checks, write_assumption_csv, AssumptionResults, Lab, LabConfig};
use crate::probe::{probe_variances, variance_svg, write_variance_csv, VarianceReport};
use crate::stats::Summary;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

impl ExperimentSpec {
    pub fn load_dataset(&self) -> Result<Dataset> {
        load_dataset(&self.name, &self.dataset, &self.split)
    }

    /// Every point of the sweep grid, in a fixed order.
    pub fn settings(&self) -> Vec<Setting> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &layers in &g.layers {
            for &hidden in &g.hidden {
                for &lr in &g.lr {
                    for &dropout in &g.dropout {
                        for &weight_decay in &g.weight_decay {
                            out.push(Setting {
                                lr,
                                dropout,
                                weight_decay,
                                hidden,
                                layers,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Replaces every seed with ones derived from `seed`: training uses
    /// `[seed]`, the probe keeps its count but starts at `seed`, and the lab
    /// uses `seed` directly.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        let count = self.probe.seeds.len() as u64;
        self.probe.seeds = (seed..seed + count).collect();
        self.lab.seed = seed;
        self
    }

    pub fn with_out_dir(mut self, dir: PathBuf) -> Self {
        self.out_dir = dir;
        self
    }
}

/// One point of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Setting {
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: usize,
}

impl Setting {
    pub fn train_config(&self, grid: &Grid, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: grid.epochs,
            patience: grid.patience,
            dropout: self.dropout,
            hidden: self.hidden,
            layers: self.layers,
            seed,
            loss_mask: LossMask::Train,
            weight_decay: self.weight_decay,
            bias: grid.bias,
        }
    }
}

/// Plan for `method` on `data` with the given layer widths. `virgo_back`
/// counts only training nodes in the loss.
pub fn plan_for(method: Method, data: &Dataset, dims: &LayerDims, spec: &ExperimentSpec) -> Result<InitPlan> {
    let a = data.adjacency();
    build_plan(method, &a, &data.feature_means()?, dims, spec.family, data.split.train.count())
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Finished { epoch_best: usize, val_acc: f64, test_acc: f64 },
    Diverged { epoch: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub setting: Setting,
    pub seed: u64,
    pub outcome: RunOutcome,
}

/// Aggregate of one `(initializer, setting)` cell over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub setting: Setting,
    pub val: Option<Summary>,
    pub test: Option<Summary>,
    pub diverged: usize,
    /// Test accuracy per seed, `None` where the run diverged.
    pub per_seed: Vec<(u64, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    /// Selected setting per initializer, in initializer order.
    pub rows: Vec<CompareRow>,
    /// Every run, ordered by initializer, setting and seed.
    pub runs: Vec<RunRecord>,
}

impl CompareReport {
    pub fn row(&self, method: Method) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            method: &'a str,
            lr: f64,
            dropout: f64,
            weight_decay: f64,
            hidden: usize,
            layers: usize,
            val_mean: Option<f64>,
            test_mean: Option<f64>,
            test_std: Option<f64>,
            runs: usize,
            diverged: usize,
            per_seed_test: String,
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            let per_seed: Vec<String> = r
                .per_seed
                .iter()
                .map(|(seed, acc)| match acc {
                    Some(a) => format!("{seed}:{a}"),
                    None => format!("{seed}:diverged"),
                })
                .collect();
            w.serialize(Row {
                method: r.method.name(),
                lr: r.setting.lr,
                dropout: r.setting.dropout,
                weight_decay: r.setting.weight_decay,
                hidden: r.setting.hidden,
                layers: r.setting.layers,
                val_mean: r.val.map(|s| s.mean),
                test_mean: r.test.map(|s| s.mean),
                test_std: r.test.map(|s| s.std),
                runs: r.per_seed.len(),
                diverged: r.diverged,
                per_seed_test: per_seed.join(";"),
            })?;
        }
        w.flush().map_err(|e| Error::io("compare csv", e))?;
        Ok(())
    }

    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            method: &'a str,
            lr: f64,
            dropout: f64,
            weight_decay: f64,
            hidden: usize,
            layers: usize,
            seed: u64,
            status: &'a str,
            epoch_best: Option<usize>,
            val_acc: Option<f64>,
            test_acc: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.runs {
            let s = r.setting;
            let (status, epoch_best, val_acc, test_acc) = match r.outcome {
                RunOutcome::Finished {
                    epoch_best,
                    val_acc,
                    test_acc,
                } => ("ok", Some(epoch_best), Some(val_acc), Some(test_acc)),
                RunOutcome::Diverged { epoch } => ("diverged", Some(epoch), None, None),
            };
            w.serialize(Row {
                method: r.method.name(),
                lr: s.lr,
                dropout: s.dropout,
                weight_decay: s.weight_decay,
                hidden: s.hidden,
                layers: s.layers,
                seed: r.seed,
                status,
                epoch_best,
                val_acc,
                test_acc,
            })?;
        }
        w.flush().map_err(|e| Error::io("runs csv", e))?;
        Ok(())
    }
}

fn aggregate(method: Method, setting: Setting, runs: &[RunRecord]) -> CompareRow {
    let mut vals = Vec::new();
    let mut tests = Vec::new();
    let mut per_seed = Vec::new();
    for r in runs {
        match r.outcome {
            RunOutcome::Finished { val_acc, test_acc, .. } => {
                vals.push(val_acc);
                tests.push(test_acc);
                per_seed.push((r.seed, Some(test_acc)));
            }
            RunOutcome::Diverged { .. } => per_seed.push((r.seed, None)),
        }
    }
    CompareRow {
        method,
        setting,
        val: Summary::of(&vals),
        test: Summary::of(&tests),
        diverged: per_seed.len() - tests.len(),
        per_seed,
    }
}

/// Picks the cell with the best mean validation accuracy. Cells without
/// diverged runs are preferred; ties keep the earlier setting.
fn select(cells: Vec<CompareRow>) -> Option<CompareRow> {
    let key = |c: &CompareRow| (c.diverged, c.val.map_or(f64::NEG_INFINITY, |s| s.mean));
    let mut best: Option<CompareRow> = None;
    for c in cells {
        let better = match &best {
            None => true,
            Some(b) => {
                let ((dc, vc), (db, vb)) = (key(&c), key(b));
                dc < db || (dc == db && vc > vb)
            }
        };
        if better {
            best = Some(c);
        }
    }
    best
}

/// Grid search per initializer on mean validation accuracy over seeds, then
/// the test accuracy of the selected setting. Runs execute in parallel; the
/// report does not depend on scheduling.
pub fn compare_on(data: &Dataset, spec: &ExperimentSpec) -> Result<CompareReport> {
    let settings = spec.settings();
    let a = data.adjacency();
    let h0bar = data.feature_means()?;
    let (input, classes) = (data.features.dim(), data.labels.classes());
    let loss_nodes = data.split.train.count();

    let mut plans = Vec::new();
    for &method in &spec.initializers {
        for s in &settings {
            let dims = LayerDims::uniform(input, s.hidden, classes, s.layers)?;
            plans.push(build_plan(method, &a, &h0bar, &dims, spec.family, loss_nodes)?);
        }
    }
    let jobs: Vec<(usize, usize, u64)> = (0..spec.initializers.len())
        .flat_map(|m| (0..settings.len()).flat_map(move |s| spec.seeds.iter().map(move |&seed| (m, s, seed))))
        .collect();
    info!("compare: {} runs over {} settings", jobs.len(), settings.len());
    let runs = jobs
        .par_iter()
        .map(|&(m, s, seed)| {
            let plan = &plans[m * settings.len() + s];
            let cfg = settings[s].train_config(&spec.grid, seed);
            let outcome = match train_node_classifier(&a, &data.features, &data.labels, &data.split, &cfg, plan) {
                Ok(r) => RunOutcome::Finished {
                    epoch_best: r.epoch_best,
                    val_acc: r.val_acc,
                    test_acc: r.test_acc,
                },
                Err(Error::Divergence { epoch, loss }) => {
                    warn!(
                        "{} lr={} seed={seed} diverged at epoch {epoch} (loss {loss})",
                        spec.initializers[m], settings[s].lr
                    );
                    RunOutcome::Diverged { epoch }
                }
                Err(e) => return Err(e),
            };
            Ok(RunRecord {
                method: spec.initializers[m],
                setting: settings[s],
                seed,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_cell = spec.seeds.len();
    let rows = spec
        .initializers
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let cells = settings
                .iter()
                .enumerate()
                .map(|(s, &setting)| {
                    let start = (m * settings.len() + s) * per_cell;
                    aggregate(method, setting, &runs[start..start + per_cell])
                })
                .collect();
            select(cells).expect("grid is non-empty")
        })
        .collect();
    Ok(CompareReport { rows, runs })
}

/// Loads the dataset, runs [`compare_on`] and writes `compare.csv` and
/// `runs.csv` into the output directory.
pub fn run_compare(spec: &ExperimentSpec) -> Result<CompareReport> {
    let data = spec.load_dataset()?;
    let report = compare_on(&data, spec)?;
    report.write_csv(create(&spec.out_dir.join("compare.csv"))?)?;
    report.write_runs_csv(create(&spec.out_dir.join("runs.csv"))?)?;
    Ok(report)
}

/// Trains the first grid setting for every initializer and seed, writing
/// `train.csv` and one loss curve per run. Divergence is an error.
pub fn run_train(spec: &ExperimentSpec) -> Result<Vec<TrainReport>> {
    let data = spec.load_dataset()?;
    let setting = spec.settings()[0];
    let dims = LayerDims::uniform(data.features.dim(), setting.hidden, data.labels.classes(), setting.layers)?;
    let a = data.adjacency();
    let mut reports = Vec::new();
    for &method in &spec.initializers {
        let plan = plan_for(method, &data, &dims, spec)?;
        let batch = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let cfg = setting.train_config(&spec.grid, seed);
                train_node_classifier(&a, &data.features, &data.labels, &data.split, &cfg, &plan)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.extend(batch);
    }
    TrainReport::write_summary_csv(&reports, create(&spec.out_dir.join("train.csv"))?)?;
    for r in &reports {
        let path = spec.out_dir.join(format!("curve_{}_{}.csv", r.method, r.seed));
        r.write_loss_curve(create(&path)?)?;
    }
    Ok(reports)
}

/// Variance probe of every configured method on `data`.
pub fn probe_on(data: &Dataset, spec: &ExperimentSpec) -> Result<Vec<VarianceReport>> {
    let p = &spec.probe;
    let dims = LayerDims::uniform(data.features.dim(), p.width, data.labels.classes(), p.layers)?;
    let a = data.adjacency();
    let h0bar = data.feature_means()?;
    let n = data.graph.node_count();
    p.methods
        .iter()
        .map(|&m| {
            let plan = build_plan(m, &a, &h0bar, &dims, spec.family, n)?;
            probe_variances(&a, &data.features, &data.labels, &plan, &p.seeds)
        })
        .collect()
}

/// Writes `variance.csv` and `variance.svg`.
pub fn run_variance_probe(spec: &ExperimentSpec) -> Result<Vec<VarianceReport>> {
    let data = spec.load_dataset()?;
    let reports = probe_on(&data, spec)?;
    write_variance_csv(&reports, create(&spec.out_dir.join("variance.csv"))?)?;
    write_text(&spec.out_dir.join("variance.svg"), &variance_svg(&data.name, &reports))?;
    Ok(reports)
}

pub fn assumptions_on(data: &Dataset, spec: &ExperimentSpec) -> Result<AssumptionResults> {
    if data.graph.node_count() == 0 || data.graph.edge_count() == 0 {
        return Err(Error::invalid("assumption checks need a graph with at least one edge"));
    }
    let lab = Lab::xavier(
        &data.graph,
        &data.features,
        spec.lab.hidden,
        data.labels.classes(),
        spec.lab.seed,
    )?;
    let cfg = LabConfig {
        lengths: spec.lab.lengths.clone(),
        n_paths: spec.lab.n_paths,
        n_neurons: spec.lab.n_neurons,
        seed: spec.lab.seed,
    };
    run_assumption_checks(&data.name, &lab, &cfg)
}

/// Writes `assumptions.md` and `assumptions.csv`.
pub fn run_assumptions(spec: &ExperimentSpec) -> Result<AssumptionResults> {
    let data = spec.load_dataset()?;
    let results = assumptions_on(&data, spec)?;
    let all = std::slice::from_ref(&results);
    write_text(&spec.out_dir.join("assumptions.md"), &assumption_markdown(all))?;
    write_assumption_csv(all, create(&spec.out_dir.join("assumptions.csv"))?)?;
    Ok(results)
}

#[derive(Serialize)]
struct PlanRow<'a> {
    method: &'a str,
    family: String,
    layer: usize,
    fan_in: usize,
    fan_out: usize,
    variance: f64,
}

/// CSV with one row per `(plan, layer)`.
pub fn write_plans_csv<W: Write>(plans: &[InitPlan], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for plan in plans {
        for (l, &variance) in plan.variances().iter().enumerate() {
            w.serialize(PlanRow {
                method: plan.method().name(),
                family: plan.family().to_string(),
                layer: l,
                fan_in: plan.dims().fan_in(l),
                fan_out: plan.dims().fan_out(l),
                variance,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("plan csv", e))?;
    Ok(())
}

/// Plans for every configured initializer at the first grid setting, written
/// to `plans.csv` and `plans.jsonl`.
pub fn run_init_plan(spec: &ExperimentSpec) -> Result<Vec<InitPlan>> {
    let data = spec.load_dataset()?;
    let setting = spec.settings()[0];
    let dims = LayerDims::uniform(data.features.dim(), setting.hidden, data.labels.classes(), setting.layers)?;
    let plans = spec
        .initializers
        .iter()
        .map(|&m| plan_for(m, &data, &dims, spec))
        .collect::<Result<Vec<_>>>()?;
    write_plans_csv(&plans, create(&spec.out_dir.join("plans.csv"))?)?;
    let mut jsonl = String::new();
    for p in &plans {
        jsonl.push_str(&p.to_json()?);
        jsonl.push('\n');
    }
    write_text(&spec.out_dir.join("plans.jsonl"), &jsonl)?;
    Ok(plans)
}

/// Reads edge lists, merges them into one block-diagonal approximation graph
/// and writes it to `out`.
pub fn merge_edge_lists(inputs: &[PathBuf], out: &Path) -> Result<Graph> {
    let graphs = inputs
        .iter()
        .map(|p| {
            let (edges, n) = crate::graph::io::read_edge_list(p)?;
            Graph::from_edges(&edges, n)
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_graphs(&graphs)?;
    let mut w = create(out)?;
    crate::graph::io::write_edge_list(&merged, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(out, e))?;
    Ok(merged)
}
