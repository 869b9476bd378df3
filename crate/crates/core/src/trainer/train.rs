use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{PlateauSchedule, RmsProp, DEFAULT_EPS, DEFAULT_LR, DEFAULT_RHO};
use super::state::{save_checkpoint, write_atomic, TrainerState};
use crate::data::{derive_seed, SampleRecord};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::model::MbtNet;
use crate::supervision::{evaluate, joint_loss, LossWeights, MeanMetrics, MetricsReport, MetricsSummary, TargetBatch};
use crate::tensor::{Graph, ParamStore};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const REPORT_FILE: &str = "report.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
    pub lr_factor: f32,
    pub lr_patience: usize,
    pub lr_min_delta: f32,
    pub min_lr: f32,
    pub weights: LossWeights,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = PlateauSchedule::default();
        Self {
            epochs: 30,
            lr: DEFAULT_LR,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            lr_factor: s.factor,
            lr_patience: s.patience,
            lr_min_delta: s.min_delta,
            min_lr: s.min_lr,
            weights: LossWeights::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "rho",
    "eps",
    "lr_factor",
    "lr_patience",
    "lr_min_delta",
    "min_lr",
    "lambda_body",
    "lambda_edge",
    "lambda_final",
    "threshold",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        for (field, v) in [("lr", self.lr), ("eps", self.eps), ("min_lr", self.min_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("{v} is not a positive number")));
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config("rho", format!("{} is outside [0, 1)", self.rho)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::config("lr_factor", format!("{} is outside (0, 1)", self.lr_factor)));
        }
        if self.lr_patience == 0 {
            return Err(Error::config("lr_patience", "must be at least 1"));
        }
        if self.lr_min_delta.is_nan() || self.lr_min_delta < 0.0 {
            return Err(Error::config("lr_min_delta", "must be non-negative"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", format!("{} is outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        KvFile::from_pairs([
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("rho", self.rho.to_string()),
            ("eps", self.eps.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("lr_min_delta", self.lr_min_delta.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("lambda_body", self.weights.body.to_string()),
            ("lambda_edge", self.weights.edge.to_string()),
            ("lambda_final", self.weights.final_.to_string()),
            ("threshold", self.threshold.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        macro_rules! take {
            ($($key:literal => $slot:expr),* $(,)?) => {
                $(if let Some(v) = kv.value($key)? {
                    $slot = v;
                })*
            };
        }
        take!(
            "epochs" => self.epochs,
            "lr" => self.lr,
            "rho" => self.rho,
            "eps" => self.eps,
            "lr_factor" => self.lr_factor,
            "lr_patience" => self.lr_patience,
            "lr_min_delta" => self.lr_min_delta,
            "min_lr" => self.min_lr,
            "lambda_body" => self.weights.body,
            "lambda_edge" => self.weights.edge,
            "lambda_final" => self.weights.final_,
            "threshold" => self.threshold,
            "seed" => self.seed,
        );
        Ok(())
    }

    pub fn optimizer(&self, store: &ParamStore<f32>) -> RmsProp {
        RmsProp::new(store, self.lr, self.rho, self.eps)
    }

    pub fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule {
            factor: self.lr_factor,
            patience: self.lr_patience,
            min_delta: self.lr_min_delta,
            min_lr: self.min_lr,
            ..PlateauSchedule::default()
        }
    }

    pub fn fresh_state(&self, store: &ParamStore<f32>) -> TrainerState {
        TrainerState::fresh(store, self.optimizer(store), self.schedule())
    }
}

/// Final-branch logits for one image, flattened row-major.
pub fn predict_logits(model: &MbtNet, store: &ParamStore<f32>, record: &SampleRecord) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let x = g.constant(record.image.to_tensor());
    let out = model.forward(&mut g, store, x)?;
    Ok(g.value(out.final_logits).data().to_vec())
}

/// Mean joint loss and final-branch metrics over `records`.
#[derive(Clone, Debug)]
pub struct Validation {
    pub loss: f64,
    pub metrics: MetricsSummary,
}

pub fn validate(
    model: &MbtNet,
    store: &ParamStore<f32>,
    records: &[SampleRecord],
    weights: &LossWeights,
    threshold: f64,
) -> Result<Validation> {
    if records.is_empty() {
        return Err(Error::config("val", "no validation records"));
    }
    let mut metrics = MetricsSummary::default();
    let mut total = 0.0;
    for r in records {
        let mut g = Graph::new();
        let x = g.constant(r.image.to_tensor());
        let out = model.forward(&mut g, store, x)?;
        let targets = TargetBatch::stack(&[&r.masks])?;
        let loss = joint_loss(&mut g, &out, &targets, weights).map_err(|e| with_record(e, &r.id))?;
        total += g.value(loss.total).data()[0] as f64;
        let logits = g.value(out.final_logits).data();
        metrics.push(r.id.clone(), evaluate(logits, &r.masks.final_mask, threshold)?);
    }
    Ok(Validation {
        loss: total / records.len() as f64,
        metrics,
    })
}

fn with_record(e: Error, id: &str) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (record {id})"),
        },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_body: f64,
    pub train_edge: f64,
    pub train_final: f64,
    pub val_loss: f64,
    pub val: MetricsReport,
    pub val_mean: MeanMetrics,
    /// Learning rate used during this epoch.
    pub lr: f32,
    pub seconds: f64,
}

pub const REPORT_HEADER: &str =
    "epoch,train_loss,train_body,train_edge,train_final,val_loss,val_dice,val_f1,val_se,val_sp,val_dice_mean,val_f1_mean,lr";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_body,
            self.train_edge,
            self.train_final,
            self.val_loss,
            self.val.dice,
            self.val.f1,
            self.val.sensitivity,
            self.val.specificity,
            self.val_mean.dice,
            self.val_mean.f1,
            self.lr
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dice: f32,
    pub seconds: f64,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn lr_trace(&self) -> Vec<f32> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

/// Report rows already on disk for epochs up to `upto`, used when resuming.
fn existing_rows(out: &Path, upto: usize) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(out.join(REPORT_FILE)) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= upto)
        })
        .map(str::to_owned)
        .collect()
}

#[allow(clippy::too_many_arguments)]
/// Runs epochs `state.epoch + 1 ..= cfg.epochs`. With an output directory,
/// writes `last.ckpt` after every epoch, `best.ckpt` whenever validation
/// DICE improves, and the CSV report.
pub fn train(
    model: &MbtNet,
    store: &mut ParamStore<f32>,
    state: &mut TrainerState,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("train", "no training records"));
    }
    if val_set.is_empty() {
        return Err(Error::config("val", "no validation records"));
    }
    if let Some(r) = train_set.iter().find(|r| val_set.iter().any(|v| v.id == r.id)) {
        return Err(Error::config("val", format!("record {} is in both training and validation sets", r.id)));
    }
    let started = Instant::now();
    let mut rows = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            existing_rows(dir, state.epoch)
        }
        None => Vec::new(),
    };
    let mut timing = String::from("epoch,seconds\n");
    if let Some(dir) = out {
        if state.epoch == 0 || !dir.join(LAST_CHECKPOINT).exists() {
            save_checkpoint(&dir.join(LAST_CHECKPOINT), store, state)?;
        }
        if !dir.join(BEST_CHECKPOINT).exists() {
            save_checkpoint(&dir.join(BEST_CHECKPOINT), store, state)?;
        }
        write_report(dir, &rows)?;
    }

    let mut report = TrainReport::default();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        let lr = state.optimizer.lr;
        let mut sums = [0.0f64; 4];
        for &i in &order {
            let r = &train_set[i];
            let mut g = Graph::new();
            let x = g.constant(r.image.to_tensor());
            let outputs = model.forward(&mut g, store, x)?;
            let targets = TargetBatch::stack(&[&r.masks])?;
            let loss = joint_loss(&mut g, &outputs, &targets, &cfg.weights).map_err(|e| with_record(e, &r.id))?;
            let total = g.value(loss.total).data()[0];
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss {total} on record {} in epoch {epoch}", r.id),
                });
            }
            store.zero_grads();
            g.backward_into(loss.total, store)?;
            state.optimizer.step(store).map_err(|e| with_record(e, &r.id))?;
            sums[0] += total as f64;
            sums[1] += loss.body;
            sums[2] += loss.edge;
            sums[3] += loss.final_;
        }
        let n = train_set.len() as f64;
        let v = validate(model, store, val_set, &cfg.weights, cfg.threshold)?;
        state.optimizer.lr = state.schedule.step(lr, v.loss as f32);
        state.epoch = epoch;
        let pooled = v.metrics.pooled();
        let improved = (pooled.dice as f32) > state.best_dice;
        if improved {
            state.best_dice = pooled.dice as f32;
            state.best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            train_loss: sums[0] / n,
            train_body: sums[1] / n,
            train_edge: sums[2] / n,
            train_final: sums[3] / n,
            val_loss: v.loss,
            val: pooled,
            val_mean: v.metrics.mean(),
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        rows.push(record.csv_row());
        let _ = writeln!(timing, "{epoch},{:.3}", record.seconds);
        if let Some(dir) = out {
            if improved {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), store, state)?;
            }
            save_checkpoint(&dir.join(LAST_CHECKPOINT), store, state)?;
            write_report(dir, &rows)?;
            write_atomic(&dir.join(TIMING_FILE), timing.as_bytes())?;
        }
        on_epoch(&record);
        report.epochs.push(record);
    }
    report.best_epoch = state.best_epoch;
    report.best_dice = state.best_dice;
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

fn write_report(dir: &Path, rows: &[String]) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_atomic(&dir.join(REPORT_FILE), text.as_bytes())
}
