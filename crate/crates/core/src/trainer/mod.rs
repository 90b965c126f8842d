//! Training loops for the teacher and the students, the optimizer, and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod config;
mod distill;
mod eval;
mod sampling;
mod teacher;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    EnsembleCheckpoint, TeacherCheckpoint, CHECKPOINT_VERSION,
};
pub use config::{DistillConfig, TeacherConfig, WeightSchedule, ABLATION_VARIANTS};
pub use distill::{
    distill_adagmlp, distill_bagging, distill_bagging_with_seeds, distill_glnn, train_members,
    Members,
};
pub use eval::{accuracy, evaluate_ensemble, evaluate_teacher, masked_rows};
pub use sampling::{bootstrap_sample, mask_features, masked_count, rc_partition, RcPartition};
pub use teacher::{teacher_logits, train_teacher};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub train_ms: f64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<TrainReport>,
}

/// Tracks the best validation accuracy and when to stop.
pub(crate) struct EarlyStop<T> {
    pub best: T,
    pub best_epoch: usize,
    pub best_val: f64,
    since: usize,
    patience: usize,
}

impl<T> EarlyStop<T> {
    pub fn new(initial: T, patience: usize) -> Self {
        Self {
            best: initial,
            best_epoch: 0,
            best_val: f64::NEG_INFINITY,
            since: 0,
            patience,
        }
    }

    /// Record an epoch; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, val: f64, snapshot: impl FnOnce() -> T) -> bool {
        if val > self.best_val {
            self.best_val = val;
            self.best_epoch = epoch;
            self.best = snapshot();
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

pub(crate) fn check_loss(epoch: usize, value: f64, terms: &BTreeMap<String, f64>) -> crate::Result<()> {
    if !value.is_finite() {
        return Err(crate::Error::Training {
            epoch,
            msg: format!("loss is {value}"),
        });
    }
    if let Some((name, v)) = terms.iter().find(|(_, v)| !v.is_finite() || **v < -1e-9) {
        return Err(crate::Error::Training {
            epoch,
            msg: format!("loss term {name} = {v}"),
        });
    }
    Ok(())
}
