use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gnn_init::experiment::{
    self, load_dataset, write_plans_csv, DatasetSpec, ExperimentSpec, SplitSpec,
};
use gnn_init::graph::{normalize_adjacency, SyntheticKind};
use gnn_init::init::{classic_plan, virgo_backward_plan, Family, LayerDims, Method};

#[derive(Parser)]
#[command(name = "gnn-init", version, about = "Graph-aware weight initialization for GCNs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment spec file.
    #[arg(long)]
    spec: PathBuf,

    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Base seed: training runs use only this seed, the probe starts its
    /// seed range here and the lab uses it directly.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::load(&self.spec)?;
        if let Some(seed) = self.seed {
            spec = spec.with_seed(seed);
        }
        if let Some(out) = &self.out {
            spec = spec.with_out_dir(out.clone());
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer weight variances for each configured initializer.
    InitPlan(Common),
    /// Empirical and theoretical per-layer variances (CSV + SVG).
    Probe(Common),
    /// Independence-assumption tables (Markdown + CSV).
    Assumptions(Common),
    /// Train the first grid setting for every initializer and seed.
    Train(Common),
    /// Grid search per initializer and report test accuracy.
    Compare(Common),
    /// Merge edge lists into one block-diagonal approximation graph.
    Merge(MergeArgs),
    /// Write a synthetic dataset bundle.
    Gen(GenArgs),
}

#[derive(Args)]
struct MergeArgs {
    /// Input edge lists.
    #[arg(required = true)]
    graphs: Vec<PathBuf>,

    #[arg(long)]
    out: PathBuf,

    /// Layer widths `input,hidden,...,classes`; writes virgo_back and
    /// kai_back plans for the merged graph.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,

    #[arg(long, default_value = "gaussian")]
    family: Family,
}

#[derive(Args)]
struct GenArgs {
    /// Take the dataset from a spec file instead of the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    /// ring, star or erdos_renyi.
    #[arg(long, default_value = "erdos_renyi")]
    kind: SyntheticKind,

    #[arg(long, default_value_t = 100)]
    nodes: usize,

    /// Edge probability (Erdős–Rényi only).
    #[arg(long, default_value_t = 0.05)]
    p: f64,

    #[arg(long, default_value_t = 16)]
    features: usize,

    #[arg(long, default_value_t = 2)]
    classes: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<gnn_init::Error>(), Some(gnn_init::Error::Divergence { .. })));
    if diverged {
        2
    } else {
        1
    }
}

/// The error chain, skipping causes whose text the message already shows.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::InitPlan(c) => {
            let spec = c.load()?;
            for plan in experiment::run_init_plan(&spec)? {
                println!("{}: {:?}", plan.method(), plan.variances());
            }
            report_out(&spec.out_dir);
        }
        Command::Probe(c) => {
            let spec = c.load()?;
            for r in experiment::run_variance_probe(&spec)? {
                println!(
                    "{}: forward log-ratio {:+.4}, backward log-ratio {:+.4}",
                    r.method,
                    r.forward_log_ratio(),
                    r.backward_log_ratio()
                );
            }
            report_out(&spec.out_dir);
        }
        Command::Assumptions(c) => {
            let spec = c.load()?;
            let results = experiment::run_assumptions(&spec)?;
            print!("{}", gnn_init::lab::assumption_markdown(std::slice::from_ref(&results)));
            report_out(&spec.out_dir);
        }
        Command::Train(c) => {
            let spec = c.load()?;
            for r in experiment::run_train(&spec)? {
                println!(
                    "{} seed {}: best epoch {}, val {:.4}, test {:.4}",
                    r.method, r.seed, r.epoch_best, r.val_acc, r.test_acc
                );
            }
            report_out(&spec.out_dir);
        }
        Command::Compare(c) => {
            let spec = c.load()?;
            let report = experiment::run_compare(&spec)?;
            for row in &report.rows {
                match row.test {
                    Some(t) => println!(
                        "{}: test {:.2} ± {:.2} % (lr {}, dropout {}, wd {}, hidden {}, layers {}, diverged {})",
                        row.method,
                        100.0 * t.mean,
                        100.0 * t.std,
                        row.setting.lr,
                        row.setting.dropout,
                        row.setting.weight_decay,
                        row.setting.hidden,
                        row.setting.layers,
                        row.diverged
                    ),
                    None => println!("{}: every run diverged", row.method),
                }
            }
            report_out(&spec.out_dir);
        }
        Command::Merge(m) => merge(m)?,
        Command::Gen(g) => gen(g)?,
    }
    Ok(())
}

fn report_out(dir: &Path) {
    info!("wrote results to {}", dir.display());
}

fn merge(m: MergeArgs) -> Result<()> {
    let merged = experiment::merge_edge_lists(&m.graphs, &m.out.join("merged.tsv"))?;
    println!(
        "merged {} graphs: {} nodes, {} edges",
        m.graphs.len(),
        merged.node_count(),
        merged.edge_count()
    );
    if let Some(widths) = m.widths {
        let dims = LayerDims::new(widths)?;
        let a = normalize_adjacency(&merged);
        let plans = vec![
            virgo_backward_plan(&a, &dims)?.with_family(m.family),
            classic_plan(Method::KaiBack, &dims, m.family)?,
        ];
        for p in &plans {
            println!("{}: {:?}", p.method(), p.variances());
        }
        let path = m.out.join("plans.csv");
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_plans_csv(&plans, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn gen(g: GenArgs) -> Result<()> {
    let (name, dataset, split) = match &g.spec {
        Some(path) => {
            let spec = ExperimentSpec::load(path)?;
            (spec.name, spec.dataset, spec.split)
        }
        None => (
            g.kind.to_string(),
            DatasetSpec::Synthetic {
                kind: g.kind,
                nodes: g.nodes,
                p: g.p,
                seed: g.seed.unwrap_or(0),
                features: g.features,
                feature_low: 0.0,
                feature_high: 1.0,
                classes: g.classes,
            },
            SplitSpec {
                files: None,
                train: 0.6,
                valid: 0.2,
                seed: g.seed.unwrap_or(0),
            },
        ),
    };
    let data = load_dataset(&name, &dataset, &split)?;
    data.write_bundle(&g.out)?;
    let spec_text = format!(
        "name = {name}\n\n[dataset]\nkind = files\nedges = edges.tsv\nfeatures_file = features.csv\nlabels = labels.txt\nnodes = {}\n\n\
         [split]\ntrain = train.txt\nvalid = valid.txt\ntest = test.txt\n",
        data.graph.node_count()
    );
    let path = g.out.join("dataset.txt");
    std::fs::write(&path, spec_text).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{name}: {} nodes, {} edges, {} features, {} classes -> {}",
        data.graph.node_count(),
        data.graph.edge_count(),
        data.features.dim(),
        data.labels.classes(),
        g.out.display()
    );
    Ok(())
}
