use std::collections::BTreeMap;
use std::time::Instant;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::TeacherCheckpoint;
use super::config::TeacherConfig;
use super::eval::accuracy;
use super::{check_loss, EarlyStop, EpochRecord, TrainReport};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Dataset};
use crate::models::{Architecture, GcnTeacher};
use crate::numerics::{Tape, Tensor};
use crate::objectives::ce_loss;
use crate::rng;

pub(crate) fn check_split(ds: &Dataset) -> Result<()> {
    ds.validate()?;
    if ds.split.train.is_empty() || ds.split.val.is_empty() {
        return Err(Error::Config("split needs nonempty train and val sets".into()));
    }
    Ok(())
}

/// Supervised GCN training with early stopping on validation accuracy.
/// Inductive splits train on the observed subgraph and test on the full
/// graph.
pub fn train_teacher(ds: &Dataset, cfg: &TeacherConfig) -> Result<(TeacherCheckpoint, TrainReport)> {
    cfg.validate()?;
    check_split(ds)?;
    let start = Instant::now();
    let arch = Architecture::new(ds.feature_dim(), cfg.hidden, ds.num_classes, cfg.layers, cfg.dropout);
    let mut model = GcnTeacher::new(arch, &mut rng::stream(cfg.seed, "teacher-init", 0))?;
    let mut drop_rng = rng::stream(cfg.seed, "teacher-dropout", 0);

    let train_adj = normalize_adjacency(&ds.training_graph()?);
    let full_adj = ds.split.is_inductive().then(|| normalize_adjacency(&ds.graph));
    let split = &ds.split;
    let y_train = ds.labels_of(&split.train);
    let y_val = ds.labels_of(&split.val);
    let y_test = ds.labels_of(&split.test);
    let acc_on = |logits: &Tensor, rows: &[usize], y: &[usize]| -> Result<f64> {
        Ok(accuracy(&logits.gather_rows(rows)?.argmax_rows(), y))
    };
    let evaluate = |m: &GcnTeacher| -> Result<(f64, f64)> {
        let logits = m.predict(&train_adj, &ds.features)?;
        let val = acc_on(&logits, &split.val, &y_val)?;
        let test = match &full_adj {
            Some(adj) => acc_on(&m.predict(adj, &ds.features)?, &split.test, &y_test)?,
            None => acc_on(&logits, &split.test, &y_test)?,
        };
        Ok((val, test))
    };

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut adam = AdamState::new();
    let mut stop = EarlyStop::new(model.clone(), cfg.patience);
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let x = tape.constant(ds.features.clone());
        let logits = model.forward(&mut tape, &train_adj, x, true, &mut drop_rng)?;
        let picked = tape.gather_rows(logits, &split.train)?;
        let loss = ce_loss(&mut tape, picked, &y_train).map_err(|e| Error::Training {
            epoch,
            msg: e.to_string(),
        })?;
        let terms: BTreeMap<String, f64> = loss.terms.iter().cloned().collect();
        check_loss(epoch, loss.value, &terms)?;
        let grads = tape.backward(loss.var)?;
        adam_step(model.params_mut(), &grads, &mut adam, &adam_cfg)?;

        let (val_acc, test_acc) = evaluate(&model)?;
        epochs.push(EpochRecord {
            epoch,
            loss: loss.value,
            terms,
            val_acc,
            test_acc,
        });
        if stop.observe(epoch, val_acc, || model.clone()) {
            break;
        }
    }
    let best = stop.best;
    let (best_val, test_acc) = evaluate(&best)?;
    let report = TrainReport {
        method: "teacher".into(),
        epochs,
        best_epoch: stop.best_epoch,
        best_val_acc: best_val,
        test_acc,
        train_ms: start.elapsed().as_secs_f64() * 1e3,
        config: serde_json::to_value(cfg).expect("serializable"),
        members: Vec::new(),
    };
    Ok((
        TeacherCheckpoint {
            model: best,
            best_epoch: stop.best_epoch,
            seed: cfg.seed,
        },
        report,
    ))
}

/// Frozen teacher logits for every node, computed without dropout on the
/// graph visible during training.
pub fn teacher_logits(ds: &Dataset, teacher: &TeacherCheckpoint) -> Result<Tensor> {
    let arch = &teacher.model.arch;
    if arch.input_dim != ds.feature_dim() || arch.classes != ds.num_classes {
        return Err(Error::Config(format!(
            "teacher expects {} features / {} classes, dataset has {} / {}",
            arch.input_dim,
            arch.classes,
            ds.feature_dim(),
            ds.num_classes
        )));
    }
    teacher
        .model
        .predict(&normalize_adjacency(&ds.training_graph()?), &ds.features)
}
