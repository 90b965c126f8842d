use std::collections::BTreeMap;
use std::time::Instant;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{student_prefix, EnsembleCheckpoint, TeacherCheckpoint};
use super::config::{DistillConfig, WeightSchedule};
use super::eval::accuracy;
use super::sampling::{bootstrap_sample, mask_features, rc_partition};
use super::teacher::{check_split, teacher_logits};
use super::{check_loss, EarlyStop, EpochRecord, TrainReport};
use crate::boost::{adakd_loss, ensemble_predict, run_cascade, Combiner, EnsembleWeights, NodeWeights};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::models::{Architecture, ForwardTrace, MlpStudent};
use crate::numerics::{Tape, Tensor, Var};
use crate::objectives::{
    adagmlp_loss, g2m_loss, na_hidden_loss, na_loss, na_output_loss, rc_loss, LossValue,
};
use crate::rng::{self, Rng};

/// Everything a student run reads, restricted to the nodes visible during
/// training. Row indices below are positions within the visible set.
struct Problem {
    x_vis: Tensor,
    teacher_vis: Tensor,
    train_local: Vec<usize>,
    y_train: Vec<usize>,
    x_val: Tensor,
    y_val: Vec<usize>,
    x_test: Tensor,
    y_test: Vec<usize>,
    classes: usize,
}

impl Problem {
    fn new(ds: &Dataset, teacher: &TeacherCheckpoint) -> Result<Self> {
        check_split(ds)?;
        let logits = teacher_logits(ds, teacher)?;
        let visible = ds.split.visible_nodes(ds.n());
        let train_local = ds
            .split
            .train
            .iter()
            .map(|i| {
                visible
                    .binary_search(i)
                    .map_err(|_| Error::Validation(format!("training node {i} is not visible")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sorted = train_local.clone();
        sorted.sort_unstable();
        Ok(Self {
            x_vis: ds.features.gather_rows(&visible)?,
            teacher_vis: logits.gather_rows(&visible)?,
            y_train: sorted.iter().map(|&l| ds.labels[visible[l]]).collect(),
            train_local: sorted,
            x_val: ds.features.gather_rows(&ds.split.val)?,
            y_val: ds.labels_of(&ds.split.val),
            x_test: ds.features.gather_rows(&ds.split.test)?,
            y_test: ds.labels_of(&ds.split.test),
            classes: ds.num_classes,
        })
    }

    fn labels_of(&self, local: &[usize]) -> Vec<usize> {
        // train_local is sorted, so labels can be found by position
        local
            .iter()
            .map(|l| self.y_train[self.train_local.binary_search(l).expect("labelled row")])
            .collect()
    }

    fn score(&self, students: &[MlpStudent], w: &EnsembleWeights, mode: Combiner) -> Result<(f64, f64)> {
        let acc = |x: &Tensor, y: &[usize]| -> Result<f64> {
            let logits = students.iter().map(|s| s.predict(x)).collect::<Result<Vec<_>>>()?;
            Ok(accuracy(&ensemble_predict(&logits, Some(w), mode)?, y))
        };
        Ok((acc(&self.x_val, &self.y_val)?, acc(&self.x_test, &self.y_test)?))
    }
}

enum Objective {
    AdaGmlp,
    /// Single-student distillation; CE over the given visible rows.
    G2m { ce_rows: Vec<usize> },
}

fn training_error(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Training { .. } => e,
        other => Error::Training {
            epoch,
            msg: other.to_string(),
        },
    }
}

struct Streams {
    dropout: Rng,
    mask: Rng,
}

/// Alignment terms for every student on masked copies of its subset rows.
fn node_alignment(
    tape: &mut Tape,
    cfg: &DistillConfig,
    students: &[MlpStudent],
    traces: &[ForwardTrace],
    subsets: &[Vec<usize>],
    p: &Problem,
    streams: &mut Streams,
) -> Result<Option<LossValue>> {
    let mut clean_o = Vec::new();
    let mut clean_h = Vec::new();
    let mut masked_o = Vec::new();
    let mut masked_h = Vec::new();
    for ((s, trace), rows) in students.iter().zip(traces).zip(subsets) {
        let x_sub = p.x_vis.gather_rows(rows)?;
        let x_masked = mask_features(&x_sub, cfg.rho, &mut streams.mask)?;
        let xm = tape.constant(x_masked);
        let (clean, masked) = if cfg.na_shared_dropout {
            // same row count, so replaying the stream replays the masks
            let snapshot = streams.dropout.clone();
            let xs = tape.constant(x_sub);
            let clean = s.forward(tape, xs, true, &mut streams.dropout)?;
            let masked = s.forward(tape, xm, true, &mut snapshot.clone())?;
            (clean, masked)
        } else {
            let hidden = trace
                .hidden
                .iter()
                .map(|&h| tape.gather_rows(h, rows))
                .collect::<Result<Vec<_>>>()?;
            let logits = tape.gather_rows(trace.logits, rows)?;
            let masked = s.forward(tape, xm, true, &mut streams.dropout)?;
            (ForwardTrace { hidden, logits }, masked)
        };
        clean_o.push(clean.logits);
        masked_o.push(masked.logits);
        clean_h.push(clean.hidden);
        masked_h.push(masked.hidden);
    }
    let o = if cfg.na_o_enabled {
        Some(na_output_loss(tape, &clean_o, &masked_o)?)
    } else {
        None
    };
    let h = if cfg.na_h_enabled {
        Some(na_hidden_loss(tape, &clean_h, &masked_h)?)
    } else {
        None
    };
    na_loss(tape, o.as_ref(), h.as_ref(), cfg.lambda_na, cfg.bounds())
}

fn train_students(p: &Problem, cfg: &DistillConfig, objective: &Objective, method: &str) -> Result<(EnsembleCheckpoint, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let k = match objective {
        Objective::AdaGmlp => cfg.k,
        Objective::G2m { .. } => 1,
    };
    let arch = Architecture::new(p.x_vis.cols(), cfg.hidden, p.classes, cfg.layers, cfg.dropout);
    let mut students = (0..k)
        .map(|i| {
            MlpStudent::new(
                &student_prefix(i),
                arch.clone(),
                &mut rng::stream(cfg.seed, "student-init", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut streams = Streams {
        dropout: rng::stream(cfg.seed, "student-dropout", 0),
        mask: rng::stream(cfg.seed, "na-mask", 0),
    };
    let nv = p.x_vis.rows();
    let mut partition = match objective {
        Objective::AdaGmlp if cfg.rc_enabled => Some(rc_partition(&p.train_local, k, cfg.seed)?),
        _ => None,
    };
    let schedule = cfg.effective_schedule();
    let mut carried = NodeWeights::uniform(nv)?;
    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut adam = AdamState::new();
    let mut stop = EarlyStop::new((students.clone(), EnsembleWeights::uniform(k)?), cfg.patience);
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let fail = training_error(epoch);
        if cfg.rc_resample && epoch > 1 && partition.is_some() {
            let seed = rng::derive_seed(cfg.seed, "rc-epoch", epoch as u64);
            partition = Some(rc_partition(&p.train_local, k, seed)?);
        }
        let mut tape = Tape::new();
        let x = tape.constant(p.x_vis.clone());
        let t = tape.constant(p.teacher_vis.clone());
        let traces = students
            .iter()
            .map(|s| s.forward(&mut tape, x, true, &mut streams.dropout))
            .collect::<Result<Vec<_>>>()?;
        let logits: Vec<Var> = traces.iter().map(|tr| tr.logits).collect();

        let (loss, alphas) = match objective {
            Objective::G2m { ce_rows } => {
                let y = p.labels_of(ce_rows);
                let loss = g2m_loss(&mut tape, logits[0], ce_rows, &y, t, cfg.tau, cfg.lambda, cfg.bounds())
                    .map_err(&fail)?;
                (loss, vec![1.0])
            }
            Objective::AdaGmlp => {
                let subsets: Vec<Vec<usize>> = match &partition {
                    Some(part) => part.subsets.clone(),
                    None => vec![p.train_local.clone(); k],
                };
                let picked = logits
                    .iter()
                    .zip(&subsets)
                    .map(|(&z, rows)| tape.gather_rows(z, rows))
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<Vec<usize>> = subsets.iter().map(|s| p.labels_of(s)).collect();
                let rc = rc_loss(&mut tape, &picked, &labels).map_err(&fail)?;

                let w0 = match schedule {
                    WeightSchedule::Persistent => carried.clone(),
                    _ => NodeWeights::uniform(nv)?,
                };
                let cascade = {
                    let zs: Vec<&Tensor> = logits.iter().map(|&z| tape.value(z)).collect();
                    run_cascade(w0, &p.teacher_vis, &zs, cfg.beta, schedule != WeightSchedule::Uniform)?
                };
                if schedule == WeightSchedule::Persistent {
                    carried = cascade.final_weights.clone();
                }
                let adakd = adakd_loss(&mut tape, t, &logits, cfg.tau, &cascade.stage_weights).map_err(&fail)?;
                let na = if cfg.na_enabled {
                    node_alignment(&mut tape, cfg, &students, &traces, &subsets, p, &mut streams).map_err(&fail)?
                } else {
                    None
                };
                let total = adagmlp_loss(&mut tape, &rc, &adakd, na.as_ref(), cfg.lambda, cfg.bounds())
                    .map_err(&fail)?;
                (total, cascade.stats.iter().map(|s| s.alpha).collect())
            }
        };
        let terms: BTreeMap<String, f64> = loss.terms.iter().cloned().collect();
        check_loss(epoch, loss.value, &terms)?;
        let grads = tape.backward(loss.var)?;
        adam_step(students.iter_mut().flat_map(|s| s.params_mut()), &grads, &mut adam, &adam_cfg)?;

        let weights = EnsembleWeights::from_alphas(&alphas)?;
        let (val_acc, test_acc) = p.score(&students, &weights, Combiner::AdaBoost)?;
        epochs.push(EpochRecord {
            epoch,
            loss: loss.value,
            terms,
            val_acc,
            test_acc,
        });
        if stop.observe(epoch, val_acc, || (students.clone(), weights.clone())) {
            break;
        }
    }

    let (best_students, best_weights) = stop.best;
    let (best_val, test_acc) = p.score(&best_students, &best_weights, Combiner::AdaBoost)?;
    let report = TrainReport {
        method: method.into(),
        epochs,
        best_epoch: stop.best_epoch,
        best_val_acc: best_val,
        test_acc,
        train_ms: start.elapsed().as_secs_f64() * 1e3,
        config: serde_json::to_value(cfg).expect("serializable"),
        members: Vec::new(),
    };
    let ckpt = EnsembleCheckpoint {
        method: method.into(),
        students: best_students,
        weights: best_weights,
        combiner: Combiner::AdaBoost,
        config: cfg.clone(),
        best_epoch: stop.best_epoch,
    };
    Ok((ckpt, report))
}

/// The ensemble objective: random classification, the boosted distillation
/// cascade, and node alignment, with one joint optimizer over all students.
pub fn distill_adagmlp(ds: &Dataset, teacher: &TeacherCheckpoint, cfg: &DistillConfig) -> Result<(EnsembleCheckpoint, TrainReport)> {
    let p = Problem::new(ds, teacher)?;
    train_students(&p, cfg, &Objective::AdaGmlp, "adagmlp")
}

/// Single-student baseline `λ·CE + (1−λ)·KL`. Ignores `cfg.k` and the
/// ensemble-only switches.
pub fn distill_glnn(ds: &Dataset, teacher: &TeacherCheckpoint, cfg: &DistillConfig) -> Result<(EnsembleCheckpoint, TrainReport)> {
    let p = Problem::new(ds, teacher)?;
    let rows = p.train_local.clone();
    train_students(&p, cfg, &Objective::G2m { ce_rows: rows }, "glnn")
}

fn relabel(mut s: MlpStudent, k: usize) -> MlpStudent {
    let prefix = student_prefix(k);
    for p in s.params_mut() {
        let (_, tail) = p.id.split_once('.').expect("prefixed id");
        p.id = format!("{prefix}.{tail}");
    }
    s
}

/// Independently trained single students, one per seed.
#[derive(Clone, Debug)]
pub struct Members {
    pub students: Vec<MlpStudent>,
    pub reports: Vec<TrainReport>,
    pub config: DistillConfig,
}

impl Members {
    pub fn ensemble(&self, method: &str, combiner: Combiner) -> Result<EnsembleCheckpoint> {
        Ok(EnsembleCheckpoint {
            method: method.into(),
            students: self.students.clone(),
            weights: EnsembleWeights::uniform(self.students.len())?,
            combiner,
            config: self.config.clone(),
            best_epoch: 0,
        })
    }

    pub fn train_ms(&self) -> f64 {
        self.reports.iter().map(|r| r.train_ms).sum()
    }
}

fn train_member_set(p: &Problem, cfg: &DistillConfig, seeds: &[u64], bootstrap: bool, method: &str) -> Result<Members> {
    let mut students = Vec::with_capacity(seeds.len());
    let mut reports = Vec::with_capacity(seeds.len());
    for (k, &seed) in seeds.iter().enumerate() {
        let rows = if bootstrap {
            bootstrap_sample(&p.train_local, &mut rng::stream(seed, "bootstrap", 0))
        } else {
            p.train_local.clone()
        };
        let member_cfg = cfg.clone().with_seed(seed);
        let (ck, report) = train_students(p, &member_cfg, &Objective::G2m { ce_rows: rows }, method)?;
        students.push(relabel(ck.students.into_iter().next().expect("one student"), k));
        reports.push(report);
    }
    Ok(Members {
        students,
        reports,
        config: cfg.clone(),
    })
}

/// `cfg.k` single students trained on the full labelled set from different
/// seeds; the shared basis of the average and vote ensembles.
pub fn train_members(ds: &Dataset, teacher: &TeacherCheckpoint, cfg: &DistillConfig) -> Result<Members> {
    let p = Problem::new(ds, teacher)?;
    let seeds: Vec<u64> = (0..cfg.k).map(|i| rng::derive_seed(cfg.seed, "member", i as u64)).collect();
    train_member_set(&p, cfg, &seeds, false, "member")
}

/// `cfg.k` single students, each on its own bootstrap resample of the
/// labelled nodes, combined by averaging.
pub fn distill_bagging(ds: &Dataset, teacher: &TeacherCheckpoint, cfg: &DistillConfig) -> Result<(EnsembleCheckpoint, TrainReport)> {
    let seeds: Vec<u64> = (0..cfg.k).map(|i| rng::derive_seed(cfg.seed, "bagging", i as u64)).collect();
    distill_bagging_with_seeds(ds, teacher, cfg, &seeds)
}

pub fn distill_bagging_with_seeds(
    ds: &Dataset,
    teacher: &TeacherCheckpoint,
    cfg: &DistillConfig,
    seeds: &[u64],
) -> Result<(EnsembleCheckpoint, TrainReport)> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("bagging needs K >= 2, got {}", seeds.len())));
    }
    let p = Problem::new(ds, teacher)?;
    let members = train_member_set(&p, cfg, seeds, true, "bagging-member")?;
    let ckpt = members.ensemble("bagging", Combiner::Average)?;
    let (val, test) = p.score(&ckpt.students, &ckpt.weights, Combiner::Average)?;
    let report = TrainReport {
        method: "bagging".into(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_acc: val,
        test_acc: test,
        train_ms: members.train_ms(),
        config: serde_json::to_value(cfg).expect("serializable"),
        members: members.reports,
    };
    Ok((ckpt, report))
}
