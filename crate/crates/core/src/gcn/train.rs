use std::io::Write;

use log::debug;
use ndarray::Zip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    accuracy, adam_step, backward_impl, cross_entropy, forward, forward_sparse, output_gradient, AdamConfig,
    AdamState, Parameters, SparseFeatures,
};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabelVector, NodeMask, NormalizedAdjacency, Split};
use crate::init::{InitPlan, LayerDims};

/// Feature matrices at or below this density take the sparse first-layer path.
const SPARSE_DENSITY: f64 = 0.25;

/// Which nodes contribute to the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    #[default]
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
    pub loss_mask: LossMask,
    pub weight_decay: f64,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 1000,
            patience: 20,
            dropout: 0.5,
            hidden: 64,
            layers: 2,
            seed: 0,
            loss_mask: LossMask::Train,
            weight_decay: 0.0,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.patience > self.epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("hidden width and layer count must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize, classes: usize) -> Result<LayerDims> {
        LayerDims::uniform(input, self.hidden, classes, self.layers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    /// 1-based epoch of the best validation accuracy; 0 only when
    /// `epochs = 0`.
    pub epoch_best: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub init_val_acc: f64,
    pub init_test_acc: f64,
    pub epochs_run: usize,
    pub curve: Vec<EpochRecord>,
    /// Parameters at the best-validation checkpoint.
    pub parameters: Parameters,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    seed: u64,
    method: &'a str,
    epoch_best: usize,
    val_acc: f64,
    test_acc: f64,
}

impl TrainReport {
    /// CSV with one `(seed, method, epoch_best, val_acc, test_acc)` row per report.
    pub fn write_summary_csv<W: Write>(reports: &[TrainReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in reports {
            w.serialize(SummaryRow {
                seed: r.seed,
                method: &r.method,
                epoch_best: r.epoch_best,
                val_acc: r.val_acc,
                test_acc: r.test_acc,
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_loss_curve<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for rec in &self.curve {
            w.serialize(rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Full-batch training with Adam and early stopping on validation accuracy.
///
/// Every epoch takes one step on the loss mask, then evaluates without
/// dropout. Training stops after `patience` epochs without a strict
/// improvement of validation accuracy; the reported test accuracy is the one
/// measured at the best-validation checkpoint. A non-finite loss or
/// activation returns [`Error::Divergence`].
pub fn train_node_classifier(
    a: &NormalizedAdjacency,
    x: &FeatureMatrix,
    labels: &LabelVector,
    split: &Split,
    cfg: &TrainConfig,
    plan: &InitPlan,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = a.node_count();
    if x.node_count() != n {
        return Err(Error::FeatureRows {
            features: x.node_count(),
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
        return Err(Error::dim("split masks do not match node count"));
    }
    let expected = cfg.dims(x.dim(), labels.classes())?;
    if plan.dims() != &expected {
        return Err(Error::dim(format!(
            "plan widths {:?} do not match the configured model {:?}",
            plan.dims().widths(),
            expected.widths()
        )));
    }
    let loss_mask = match cfg.loss_mask {
        LossMask::Train => split.train.clone(),
        LossMask::All => NodeMask::all(n),
    };
    let sparse = SparseFeatures::from_dense(x);
    let use_sparse = sparse.density() <= SPARSE_DENSITY;
    let run_forward = |params: &Parameters, dropout: f64, seed: u64| {
        if use_sparse {
            forward_sparse(params, a, x, &sparse, dropout, seed)
        } else {
            forward(params, a, x, dropout, seed)
        }
    };
    let diverged = |epoch: usize, loss: f64| move |e: Error| match e {
        Error::NonFinite(_) => Error::Divergence { epoch, loss },
        other => other,
    };

    let mut params = Parameters::from_plan(plan, cfg.seed, cfg.bias);
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::new(cfg.lr);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(u64::MAX);

    let init = run_forward(&params, 0.0, 0).map_err(diverged(0, f64::NAN))?;
    let init_val_acc = accuracy(init.logits(), labels, &split.valid)?;
    let init_test_acc = accuracy(init.logits(), labels, &split.test)?;
    drop(init);

    let mut best = (0usize, init_val_acc, init_test_acc, params.clone());
    let mut since_best = 0;
    let mut curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        let seed = dropout_rng.random::<u64>();
        let trace = run_forward(&params, cfg.dropout, seed).map_err(diverged(epoch, f64::NAN))?;
        let train_loss = cross_entropy(trace.logits(), labels, &loss_mask)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        let out_grad = output_gradient(trace.logits(), labels, &loss_mask)?;
        let grads = backward_impl(&trace, a, &params, &out_grad, false)?;
        drop(trace);
        let mut d_w = grads.d_weights().to_vec();
        if cfg.weight_decay > 0.0 {
            for (g, w) in d_w.iter_mut().zip(params.weights()) {
                Zip::from(g).and(w).for_each(|g, &w| *g += cfg.weight_decay * w);
            }
        }
        adam_step(&mut params, &d_w, grads.d_biases(), &mut adam, &adam_cfg)?;

        let eval = run_forward(&params, 0.0, 0).map_err(diverged(epoch, train_loss))?;
        let val_loss = cross_entropy(eval.logits(), labels, &split.valid)?;
        let val_acc = accuracy(eval.logits(), labels, &split.valid)?;
        let test_acc = accuracy(eval.logits(), labels, &split.test)?;
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            test_acc,
        });
        if epoch == 1 || val_acc > best.1 {
            best = (epoch, val_acc, test_acc, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                debug!("early stop at epoch {epoch}, best epoch {}", best.0);
                break;
            }
        }
    }
    let (epoch_best, val_acc, test_acc, parameters) = if cfg.epochs == 0 {
        (0, init_val_acc, init_test_acc, params)
    } else {
        best
    };
    Ok(TrainReport {
        method: plan.method().to_string(),
        seed: cfg.seed,
        epoch_best,
        val_acc,
        test_acc,
        init_val_acc,
        init_test_acc,
        epochs_run: curve.len(),
        curve,
        parameters,
    })
}
