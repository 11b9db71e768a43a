use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ptmaml_autodiff::ParamSet;

use super::{baseline_step, evaluate, meta_batch_step, Adapter, MetaConfig, MetaError, TaskRef};
use crate::data::Dataset;
use crate::learner::{Encoded, Learner, LossKind};
use crate::relevance::{TaskSet, TypeClassifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Ptmaml,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Ptmaml => "ptmaml",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "ptmaml" | "meta" => Ok(Mode::Ptmaml),
            other => Err(format!("unknown mode `{other}` (baseline|ptmaml)")),
        }
    }
}

/// Inputs to a training run. `train` should already be filtered for copyability.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub dev: &'a Dataset,
    /// Required in ptmaml mode.
    pub tasks: Option<&'a TaskSet>,
    /// Enables adapted dev evaluation.
    pub clf: Option<&'a TypeClassifier>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example (test-example) loss over the epoch.
    pub train_loss: f64,
    pub train_acc_lf: f64,
    pub dev_acc_lf: f64,
    pub dev_acc_ex: f64,
    pub dev_adapted_acc_lf: Option<f64>,
    pub dev_adapted_acc_ex: Option<f64>,
    /// The accuracy used for checkpoint selection.
    pub selection_acc_lf: f64,
    /// Set when a non-finite gradient cut the epoch short.
    pub aborted: bool,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub loss: LossKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub dataset_fingerprint: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_acc_lf: f64,
}

impl TrainReport {
    /// Fixed-width per-epoch table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode={} loss={} seed={} best_epoch={} best_dev_acc_lf={:.4}",
            self.mode.name(),
            self.loss.name(),
            self.seed,
            self.best_epoch,
            self.best_dev_acc_lf
        );
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
            "epoch", "loss", "train_lf", "dev_lf", "dev_ex", "adapt_lf", "adapt_ex", "secs"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{:>5} {:>10.4} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9} {:>8.1}{}",
                e.epoch,
                e.train_loss,
                e.train_acc_lf,
                e.dev_acc_lf,
                e.dev_acc_ex,
                opt(e.dev_adapted_acc_lf),
                opt(e.dev_adapted_acc_ex),
                e.wall_secs,
                if e.aborted { "  (aborted)" } else { "" }
            );
        }
        s
    }
}

pub struct TrainOutcome {
    pub final_params: ParamSet,
    /// Parameters from the epoch with the best selection accuracy (earliest on ties).
    pub best_params: ParamSet,
    pub report: TrainReport,
}

/// Trains from `init` for `cfg.epochs` epochs. Each epoch visits every training
/// example (baseline) or every pseudo-task (ptmaml) once, in a seeded shuffle.
pub fn train(
    learner: &Learner,
    init: ParamSet,
    data: &TrainData<'_>,
    cfg: &MetaConfig,
    mode: Mode,
    config_snapshot: serde_json::Value,
    dataset_fingerprint: String,
) -> Result<TrainOutcome, MetaError> {
    cfg.validate()?;
    learner.check_params(&init)?;
    let train_enc: Vec<Encoded> = data
        .train
        .examples
        .iter()
        .map(|ex| learner.encode(ex))
        .collect::<Result<_, _>>()?;
    let position: HashMap<usize, usize> = data
        .train
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id, i))
        .collect();
    let lookup = |id: usize| position.get(&id).copied().ok_or(MetaError::UnknownExample(id));

    // task i as (test position, support positions)
    let tasks: Vec<(usize, Vec<usize>)> = match (mode, data.tasks) {
        (Mode::Ptmaml, Some(ts)) => ts
            .tasks
            .iter()
            .map(|t| Ok((lookup(t.test_id)?, t.support_ids.iter().map(|&s| lookup(s)).collect::<Result<_, _>>()?)))
            .collect::<Result<_, MetaError>>()?,
        (Mode::Ptmaml, None) => return Err(MetaError::Config("ptmaml mode needs a task set".into())),
        (Mode::Baseline, _) => (0..train_enc.len()).map(|i| (i, Vec::new())).collect(),
    };

    let adapter = data
        .clf
        .filter(|_| mode == Mode::Ptmaml || cfg.eval_adapted)
        .map(|clf| Adapter::new(data.train, &train_enc, clf, cfg.k, cfg.alpha, cfg.inner_steps));
    let train_probe = Dataset {
        split: data.train.split,
        examples: data.train.examples.iter().take(cfg.train_eval_limit).cloned().collect(),
        tables: data.train.tables.clone(),
    };

    let mut params = init;
    let mut opt = cfg.optimizer(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamSet)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut aborted = false;
        for (b, chunk) in order.chunks(cfg.task_batch).enumerate() {
            let stats = match mode {
                Mode::Baseline => {
                    let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train_enc[tasks[i].0]).collect();
                    baseline_step(learner, &mut params, &batch, cfg, &mut opt)?
                }
                Mode::Ptmaml => {
                    let batch: Vec<TaskRef<'_, Encoded>> = chunk
                        .iter()
                        .map(|&i| TaskRef {
                            support: tasks[i].1.iter().map(|&s| &train_enc[s]).collect(),
                            test: &train_enc[tasks[i].0],
                        })
                        .collect();
                    meta_batch_step(learner, &mut params, &batch, cfg, &mut opt)?
                }
            };
            match stats {
                Some(s) => {
                    loss_sum += s.loss;
                    seen += chunk.len();
                }
                None => {
                    let err = MetaError::NonFinite {
                        epoch,
                        batch_start: b * cfg.task_batch,
                    };
                    warn!("{err}; abandoning the rest of the epoch");
                    aborted = true;
                    break;
                }
            }
        }

        let train_m = evaluate(learner, &params, &train_probe, None, cfg.threads)?;
        let dev_m = evaluate(learner, &params, data.dev, None, cfg.threads)?;
        let adapted = match &adapter {
            Some(a) => Some(evaluate(learner, &params, data.dev, Some(a), cfg.threads)?),
            None => None,
        };
        let selection = match (&adapted, mode) {
            (Some(m), Mode::Ptmaml) => m.acc_lf,
            _ => dev_m.acc_lf,
        };
        let rec = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            train_acc_lf: train_m.acc_lf,
            dev_acc_lf: dev_m.acc_lf,
            dev_acc_ex: dev_m.acc_ex,
            dev_adapted_acc_lf: adapted.as_ref().map(|m| m.acc_lf),
            dev_adapted_acc_ex: adapted.as_ref().map(|m| m.acc_ex),
            selection_acc_lf: selection,
            aborted,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        info!(
            "{} epoch {epoch}: loss {:.4} dev_lf {:.4} select {:.4}",
            mode.name(),
            rec.train_loss,
            rec.dev_acc_lf,
            selection
        );
        if best.as_ref().is_none_or(|(_, acc, _)| selection > *acc) {
            best = Some((epoch, selection, params.clone()));
        }
        epochs.push(rec);
    }

    let (best_epoch, best_dev_acc_lf, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        report: TrainReport {
            mode,
            loss: learner.config().loss_kind,
            seed: cfg.seed,
            config: config_snapshot,
            dataset_fingerprint,
            epochs,
            best_epoch,
            best_dev_acc_lf,
        },
    })
}
