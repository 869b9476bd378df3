//! RMSprop training with plateau learning-rate reduction and checkpoints.

mod optim;
mod state;
mod train;

pub use optim::{PlateauSchedule, RmsProp, DEFAULT_EPS, DEFAULT_LR, DEFAULT_RHO};
pub use state::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, write_atomic, TrainerState};
pub use train::{
    predict_logits, train, validate, EpochRecord, TrainConfig, TrainReport, Validation, BEST_CHECKPOINT,
    LAST_CHECKPOINT, REPORT_FILE, REPORT_HEADER, TIMING_FILE, TRAIN_KEYS,
};
