use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::report::MetricRow;
use super::spec::{apply_key, ExperimentKind, ExperimentSpec, Grid, Method};
use crate::boost::Combiner;
use crate::error::{Error, Result};
use crate::graph::{make_inductive_split, make_label_rate_split, make_transductive_split, Dataset};
use crate::trainer::{
    accuracy, distill_adagmlp, distill_bagging, distill_glnn, evaluate_teacher, masked_rows, train_members,
    train_teacher, DistillConfig, EnsembleCheckpoint, Members, TeacherCheckpoint, TrainReport,
};

/// How a run's data is prepared and scored.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Protocol {
    Standard,
    /// Uniformly sampled labelled set at this rate.
    LabelRate(f64),
    /// Standard split, test features masked at this rate.
    Missing(f64),
}

impl Protocol {
    fn split_key(self) -> Option<u64> {
        match self {
            Protocol::LabelRate(r) => Some(r.to_bits()),
            _ => None,
        }
    }

    fn missing_rate(self) -> f64 {
        match self {
            Protocol::Missing(r) => r,
            _ => 0.0,
        }
    }
}

/// One row of the run matrix, before seeds are applied.
#[derive(Clone, Debug)]
struct Point {
    name: String,
    method: Method,
    cfg: DistillConfig,
    protocol: Protocol,
    key: String,
    value: Option<f64>,
}

/// An entry of the planned run matrix, as printed by a dry run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlannedRun {
    pub method: String,
    pub grid_key: String,
    pub grid_value: Option<f64>,
    pub seed: u64,
}

/// AdaGMLP trains with ρ equal to the evaluation missing rate; a zero rate
/// keeps the configured ρ.
fn with_missing_rho(cfg: &DistillConfig, method: Method, rate: f64) -> DistillConfig {
    let mut c = cfg.clone();
    if method == Method::Adagmlp && rate > 0.0 {
        c.rho = rate;
    }
    c
}

fn points(spec: &ExperimentSpec) -> Result<Vec<Point>> {
    use ExperimentKind::*;
    let methods = spec.methods();
    let base = &spec.distill;
    let mut out = Vec::new();
    let push_methods = |out: &mut Vec<Point>, protocol: Protocol, key: &str, value: Option<f64>, cfg: &DistillConfig| {
        for &m in &methods {
            let cfg = with_missing_rho(cfg, m, protocol.missing_rate());
            out.push(Point {
                name: m.as_str().into(),
                method: m,
                cfg,
                protocol,
                key: key.into(),
                value,
            });
        }
    };
    let grid = || spec.grid.clone().unwrap_or(Grid { key: String::new(), values: Vec::new() });
    match spec.kind {
        Transductive | Inductive => push_methods(&mut out, Protocol::Standard, "", None, base),
        LabelRateSweep => {
            for r in grid().values {
                push_methods(&mut out, Protocol::LabelRate(r), "label_rate", Some(r), base);
            }
        }
        FeatureMissingSweep => {
            for r in grid().values {
                push_methods(&mut out, Protocol::Missing(r), "missing_rate", Some(r), base);
            }
        }
        HyperSweep => {
            let g = grid();
            for v in g.values {
                let mut cfg = apply_key(base, &g.key, v)?;
                if g.key != "lambda_na" {
                    cfg = cfg.with_na(false);
                }
                push_methods(&mut out, Protocol::Standard, &g.key, Some(v), &cfg);
            }
        }
        KSweep => {
            for v in grid().values {
                let cfg = DistillConfig { k: v as usize, ..base.clone() };
                push_methods(&mut out, Protocol::Standard, "k", Some(v), &cfg);
            }
        }
        EnsembleCompare => match &spec.grid {
            None => push_methods(&mut out, Protocol::Standard, "", None, base),
            Some(g) => {
                for &r in &g.values {
                    let p = if g.key == "label_rate" { Protocol::LabelRate(r) } else { Protocol::Missing(r) };
                    push_methods(&mut out, p, &g.key, Some(r), base);
                }
            }
        },
        Ablation => {
            let a = &spec.ablation;
            let protocols = a
                .label_rates
                .iter()
                .map(|&r| (Protocol::LabelRate(r), "label_rate", r))
                .chain(a.missing_rates.iter().map(|&r| (Protocol::Missing(r), "missing_rate", r)));
            for (protocol, key, r) in protocols {
                for v in &a.variants {
                    let cfg = with_missing_rho(&base.ablate(v)?, Method::Adagmlp, protocol.missing_rate());
                    out.push(Point {
                        name: v.clone(),
                        method: Method::Adagmlp,
                        cfg,
                        protocol,
                        key: key.into(),
                        value: Some(r),
                    });
                }
            }
        }
        LatencyBench => return Err(Error::Config("latency bench has no training plan".into())),
    }
    Ok(out)
}

/// The full run matrix: every (method, grid point) for every seed, in
/// report order.
pub fn plan(spec: &ExperimentSpec) -> Result<Vec<PlannedRun>> {
    spec.validate()?;
    if spec.kind == ExperimentKind::LatencyBench {
        return Ok(super::latency::plan(spec));
    }
    let pts = points(spec)?;
    Ok(pts
        .iter()
        .flat_map(|p| {
            spec.seeds.iter().map(move |&seed| PlannedRun {
                method: p.name.clone(),
                grid_key: p.key.clone(),
                grid_value: p.value,
                seed,
            })
        })
        .collect())
}

enum Trained {
    Single(EnsembleCheckpoint, TrainReport),
    Members(Members),
}

/// Everything trained for one seed. Teachers are shared by every method on
/// the same split, and identical student runs are trained once.
struct SeedRun<'a> {
    spec: &'a ExperimentSpec,
    base: &'a Dataset,
    seed: u64,
    teachers: HashMap<Option<u64>, (Dataset, TeacherCheckpoint, TrainReport)>,
    students: HashMap<String, Trained>,
}

impl<'a> SeedRun<'a> {
    fn split(&self, protocol: Protocol) -> Result<Dataset> {
        let s = &self.spec.split;
        let labels = &self.base.labels;
        let split = match protocol {
            Protocol::LabelRate(r) => make_label_rate_split(labels, r, s.val_size, self.seed)?,
            _ if self.spec.kind == ExperimentKind::Inductive => {
                make_inductive_split(labels, s.unseen_fraction, s.per_class_train, s.val_size, self.seed)?
            }
            _ if s.use_dataset_split && !self.base.split.train.is_empty() => return Ok(self.base.clone()),
            _ => {
                let used = s.per_class_train * self.base.num_classes + s.val_size;
                let test = s.test_size.unwrap_or(self.base.n().saturating_sub(used));
                make_transductive_split(labels, s.per_class_train, s.val_size, test, self.seed)?
            }
        };
        self.base.clone().with_split(split)
    }

    fn teacher(&mut self, protocol: Protocol) -> Result<&(Dataset, TeacherCheckpoint, TrainReport)> {
        let key = protocol.split_key();
        if !self.teachers.contains_key(&key) {
            let ds = self.split(protocol)?;
            let (ck, report) = train_teacher(&ds, &self.spec.teacher.clone().with_seed(self.seed))?;
            self.teachers.insert(key, (ds, ck, report));
        }
        Ok(&self.teachers[&key])
    }

    fn students(&mut self, p: &Point) -> Result<&Trained> {
        let cfg = p.cfg.clone().with_seed(self.seed);
        let kind = match p.method {
            Method::Vote | Method::Average => "members",
            Method::MlpOnly => "mlp_only",
            m => m.as_str(),
        };
        let key = format!(
            "{:?}|{kind}|{}",
            p.protocol.split_key(),
            serde_json::to_string(&cfg).expect("serializable")
        );
        if !self.students.contains_key(&key) {
            self.teacher(p.protocol)?;
            let (ds, teacher, _) = &self.teachers[&p.protocol.split_key()];
            let trained = match p.method {
                Method::Adagmlp => {
                    let (c, r) = distill_adagmlp(ds, teacher, &cfg)?;
                    Trained::Single(c, r)
                }
                Method::Glnn => {
                    let (c, r) = distill_glnn(ds, teacher, &cfg)?;
                    Trained::Single(c, r)
                }
                Method::MlpOnly => {
                    // pure supervised training: λ = 1 removes the teacher term
                    let cfg = DistillConfig { lambda: 1.0, sweep_mode: true, ..cfg };
                    let (c, r) = distill_glnn(ds, teacher, &cfg)?;
                    Trained::Single(c, r)
                }
                Method::Bagging => {
                    let (c, r) = distill_bagging(ds, teacher, &cfg)?;
                    Trained::Single(c, r)
                }
                Method::Vote | Method::Average => Trained::Members(train_members(ds, teacher, &cfg)?),
                Method::TeacherOnly => unreachable!("teacher rows are scored directly"),
            };
            self.students.insert(key.clone(), trained);
        }
        Ok(&self.students[&key])
    }

    fn row(&mut self, p: &Point) -> Result<MetricRow> {
        let rate = p.protocol.missing_rate();
        let seed = self.seed;
        let (test_acc, val_acc, train_ms, infer_ms) = if p.method == Method::TeacherOnly {
            let (ds, teacher, report) = self.teacher(p.protocol)?;
            let start = Instant::now();
            let acc = evaluate_teacher(teacher, ds, &ds.split.test, rate, seed)?;
            (acc, report.best_val_acc, report.train_ms, ms(start))
        } else {
            let (ckpt, train_ms) = match self.students(p)? {
                Trained::Single(c, r) => (c.clone(), r.train_ms),
                Trained::Members(m) => {
                    let combiner = if p.method == Method::Vote { Combiner::Vote } else { Combiner::Average };
                    (m.ensemble(p.method.as_str(), combiner)?, m.train_ms())
                }
            };
            let ds = &self.teachers[&p.protocol.split_key()].0;
            let x = masked_rows(ds, &ds.split.test, rate, seed)?;
            let start = Instant::now();
            let pred = ckpt.predict(&x)?;
            let infer_ms = ms(start);
            let test_acc = accuracy(&pred, &ds.labels_of(&ds.split.test));
            let xv = ds.features.gather_rows(&ds.split.val)?;
            let val_acc = accuracy(&ckpt.predict(&xv)?, &ds.labels_of(&ds.split.val));
            (test_acc, val_acc, train_ms, infer_ms)
        };
        Ok(MetricRow {
            experiment: self.spec.id(),
            method: p.name.clone(),
            grid_key: p.key.clone(),
            grid_value: p.value,
            seed,
            test_acc: Some(test_acc),
            val_acc: Some(val_acc),
            train_ms,
            infer_ms,
        })
    }
}

pub(crate) fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Worker count: `GDB_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("GDB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run any experiment. Seeds fan out over the worker pool; rows come back
/// ordered by grid point, then method, then seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    if spec.kind == ExperimentKind::LatencyBench {
        return super::latency::bench_latency(spec, &spec.latency.hidden_widths);
    }
    let pts = points(spec)?;
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let base = spec.dataset.load()?;
    let per_seed: Vec<Vec<MetricRow>> = pool()?.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let mut run = SeedRun {
                    spec,
                    base: &base,
                    seed,
                    teachers: HashMap::new(),
                    students: HashMap::new(),
                };
                pts.iter().map(|p| run.row(p)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::with_capacity(pts.len() * spec.seeds.len());
    for i in 0..pts.len() {
        rows.extend(per_seed.iter().map(|r| r[i].clone()));
    }
    Ok(rows)
}

fn with_kind(spec: &ExperimentSpec, kind: ExperimentKind, grid: Option<Grid>) -> ExperimentSpec {
    ExperimentSpec {
        kind,
        grid,
        ..spec.clone()
    }
}

/// Transductive or inductive classification, depending on `spec.kind`.
pub fn run_classification(spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    if !matches!(spec.kind, ExperimentKind::Transductive | ExperimentKind::Inductive) {
        return Err(Error::Config("classification needs kind transductive or inductive".into()));
    }
    run_experiment(spec)
}

pub fn sweep_label_rate(spec: &ExperimentSpec, rates: &[f64]) -> Result<Vec<MetricRow>> {
    let grid = Grid { key: "label_rate".into(), values: rates.to_vec() };
    run_experiment(&with_kind(spec, ExperimentKind::LabelRateSweep, Some(grid)))
}

pub fn sweep_feature_missing(spec: &ExperimentSpec, rates: &[f64]) -> Result<Vec<MetricRow>> {
    let grid = Grid { key: "missing_rate".into(), values: rates.to_vec() };
    run_experiment(&with_kind(spec, ExperimentKind::FeatureMissingSweep, Some(grid)))
}

pub fn sweep_hyper(spec: &ExperimentSpec, key: &str, values: &[f64]) -> Result<Vec<MetricRow>> {
    let grid = Grid { key: key.into(), values: values.to_vec() };
    run_experiment(&with_kind(spec, ExperimentKind::HyperSweep, Some(grid)))
}

pub fn sweep_k(spec: &ExperimentSpec, ks: &[usize]) -> Result<Vec<MetricRow>> {
    let grid = Grid { key: "k".into(), values: ks.iter().map(|&k| k as f64).collect() };
    run_experiment(&with_kind(spec, ExperimentKind::KSweep, Some(grid)))
}

pub fn run_ablation(spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    run_experiment(&with_kind(spec, ExperimentKind::Ablation, None))
}

pub fn run_ensemble_compare(spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    run_experiment(&with_kind(spec, ExperimentKind::EnsembleCompare, spec.grid.clone()))
}
