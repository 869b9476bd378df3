//! Checkpoint files: an `MBTC` parameter section followed by an `MBTO`
//! section with the optimizer accumulators and trainer scalars.

use std::path::Path;

use super::optim::{PlateauSchedule, RmsProp};
use crate::error::{Error, Result};
use crate::tensor::checkpoint::{
    decode_section, encode_section, load_entries_into, params_to_entries, NamedTensor, OPTIMIZER_MAGIC,
    PARAM_MAGIC,
};
use crate::tensor::ParamStore;

/// Everything besides the parameters needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: RmsProp,
    pub schedule: PlateauSchedule,
    pub best_dice: f32,
    pub best_epoch: usize,
}

impl TrainerState {
    pub fn fresh(store: &ParamStore<f32>, optimizer: RmsProp, schedule: PlateauSchedule) -> Self {
        debug_assert_eq!(optimizer.acc.len(), store.len());
        Self {
            epoch: 0,
            optimizer,
            schedule,
            best_dice: f32::NEG_INFINITY,
            best_epoch: 0,
        }
    }
}

const ACC_PREFIX: &str = "rmsprop.";

const SCALAR_COUNT: usize = 12;

fn scalars(state: &TrainerState) -> [(&'static str, f32); SCALAR_COUNT] {
    let s = &state.schedule;
    let o = &state.optimizer;
    [
        ("state.epoch", state.epoch as f32),
        ("state.best_dice", state.best_dice),
        ("state.best_epoch", state.best_epoch as f32),
        ("optim.lr", o.lr),
        ("optim.rho", o.rho),
        ("optim.eps", o.eps),
        ("schedule.factor", s.factor),
        ("schedule.patience", s.patience as f32),
        ("schedule.min_delta", s.min_delta),
        ("schedule.min_lr", s.min_lr),
        ("schedule.best", s.best),
        ("schedule.bad_epochs", s.bad_epochs as f32),
    ]
}

pub fn encode_checkpoint(store: &ParamStore<f32>, state: &TrainerState) -> Vec<u8> {
    let mut out = encode_section(PARAM_MAGIC, &params_to_entries(store));
    let mut entries: Vec<NamedTensor> = store
        .iter()
        .zip(&state.optimizer.acc)
        .map(|(p, acc)| NamedTensor::from_tensor(format!("{ACC_PREFIX}{}", p.name), acc))
        .collect();
    for (name, v) in scalars(state) {
        entries.push(NamedTensor {
            name: name.into(),
            shape: vec![],
            values: vec![v],
        });
    }
    out.extend(encode_section(OPTIMIZER_MAGIC, &entries));
    out
}

fn count(v: f32, name: &str) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 1.6e7 {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("`{name}` = {v} is not a count")))
    }
}

/// Restores parameters into `store` and returns the trainer state. The store
/// is left untouched when decoding fails.
pub fn decode_checkpoint(bytes: &[u8], store: &mut ParamStore<f32>) -> Result<TrainerState> {
    let (params, used) = decode_section(bytes, PARAM_MAGIC)?;
    let (entries, used_opt) = decode_section(&bytes[used..], OPTIMIZER_MAGIC)?;
    if used + used_opt != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the optimizer section",
            bytes.len() - used - used_opt
        )));
    }
    let scalar = |name: &str| -> Result<f32> {
        let e = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("missing `{name}`")))?;
        match e.values.as_slice() {
            [v] if e.shape.is_empty() => Ok(*v),
            _ => Err(Error::Format(format!("`{name}` is not a scalar"))),
        }
    };
    let mut acc = Vec::with_capacity(store.len());
    for p in store.iter() {
        let name = format!("{ACC_PREFIX}{}", p.name);
        let e = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("no accumulator for `{}`", p.name)))?;
        if e.shape != p.value.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "accumulator `{}` has shape {:?}, parameter has {:?}",
                p.name,
                e.shape,
                p.value.shape()
            )));
        }
        acc.push(e.to_tensor::<f32>()?);
    }
    let expected = store.len() + SCALAR_COUNT;
    if entries.len() != expected {
        return Err(Error::CheckpointMismatch(format!(
            "optimizer section holds {} entries, expected {expected}",
            entries.len()
        )));
    }
    let state = TrainerState {
        epoch: count(scalar("state.epoch")?, "state.epoch")?,
        best_dice: scalar("state.best_dice")?,
        best_epoch: count(scalar("state.best_epoch")?, "state.best_epoch")?,
        optimizer: RmsProp {
            lr: scalar("optim.lr")?,
            rho: scalar("optim.rho")?,
            eps: scalar("optim.eps")?,
            acc,
        },
        schedule: PlateauSchedule {
            factor: scalar("schedule.factor")?,
            patience: count(scalar("schedule.patience")?, "schedule.patience")?,
            min_delta: scalar("schedule.min_delta")?,
            min_lr: scalar("schedule.min_lr")?,
            best: scalar("schedule.best")?,
            bad_epochs: count(scalar("schedule.bad_epochs")?, "schedule.bad_epochs")?,
        },
    };
    let mut staged = store.clone();
    load_entries_into(&mut staged, &params)?;
    *store = staged;
    Ok(state)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>, state: &TrainerState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(store, state))
}

pub fn load_checkpoint(path: &Path, store: &mut ParamStore<f32>) -> Result<TrainerState> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read(path)?, store)
}
