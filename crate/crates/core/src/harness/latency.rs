//! Inference timing on a large synthetic graph. Models are freshly
//! initialized: wall-clock cost does not depend on the trained values.

use std::time::Instant;

use rayon::prelude::*;

use super::drivers::{ms, pool, PlannedRun};
use super::report::MetricRow;
use super::spec::ExperimentSpec;
use crate::boost::{ensemble_predict, Combiner, EnsembleWeights};
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, normalize_adjacency, SbmConfig};
use crate::models::{Architecture, GcnTeacher, MlpStudent};
use crate::numerics::{spmm_calls_on_this_thread, Tensor};
use crate::rng;

pub(crate) fn plan(spec: &ExperimentSpec) -> Vec<PlannedRun> {
    let l = &spec.latency;
    let mut out = Vec::new();
    for &h in &l.hidden_widths {
        let mut entries = vec![(format!("teacher-h{h}"), String::new(), None)];
        entries.extend(l.k_values.iter().map(|&k| (format!("adagmlp-h{h}"), "k".to_string(), Some(k as f64))));
        for (method, key, value) in entries {
            for &seed in &spec.seeds {
                out.push(PlannedRun {
                    method: method.clone(),
                    grid_key: key.clone(),
                    grid_value: value,
                    seed,
                });
            }
        }
    }
    out
}

/// Median wall-clock milliseconds of `reps` calls after `warmup` calls.
pub fn median_ms<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(ms(start));
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Features-only ensemble prediction, optionally one student per worker.
fn ensemble_inference(students: &[MlpStudent], weights: &EnsembleWeights, x: &Tensor, parallel: bool) -> Result<Vec<usize>> {
    let logits: Vec<Tensor> = if parallel {
        students.par_iter().map(|s| s.predict(x)).collect::<Result<_>>()?
    } else {
        students.iter().map(|s| s.predict(x)).collect::<Result<_>>()?
    };
    ensemble_predict(&logits, Some(weights), Combiner::AdaBoost)
}

/// Teacher inference (graph propagation included) against student
/// ensembles of every K, for each hidden width. Sequential mode also
/// checks that the student path performs no sparse propagation.
pub fn bench_latency(spec: &ExperimentSpec, hidden_widths: &[usize]) -> Result<Vec<MetricRow>> {
    let l = &spec.latency;
    let c = l.classes;
    let m = l.nodes / c;
    // 80% of each node's expected degree stays inside its block
    let p_in = (0.8 * l.mean_degree / (m.max(2) - 1) as f64).min(1.0);
    let p_out = (0.2 * l.mean_degree / (l.nodes - m).max(1) as f64).min(p_in / 2.0);
    let seed = spec.seeds[0];
    let ds = generate_sbm(&SbmConfig {
        classes: c,
        nodes_per_class: m,
        p_in,
        p_out,
        feature_dim: l.feature_dim,
        feature_noise: 1.0,
        seed,
    })?;
    let adj = normalize_adjacency(&ds.graph);
    let x = &ds.features;
    let pool = l.parallel.then(pool).transpose()?;

    let mut rows = Vec::new();
    let row = |method: String, key: &str, value: Option<f64>, seed: u64, infer_ms: f64| MetricRow {
        experiment: spec.id(),
        method,
        grid_key: key.into(),
        grid_value: value,
        seed,
        test_acc: None,
        val_acc: None,
        train_ms: 0.0,
        infer_ms,
    };
    for &h in hidden_widths {
        let arch = Architecture::new(l.feature_dim, h, c, 2, 0.0);
        let mut teacher_rows = Vec::new();
        let mut student_rows = Vec::new();
        for &seed in &spec.seeds {
            let teacher = GcnTeacher::new(arch.clone(), &mut rng::stream(seed, "bench-teacher", 0))?;
            let t = median_ms(l.warmup, l.reps, || teacher.predict(&adj, x))?;
            teacher_rows.push(row(format!("teacher-h{h}"), "", None, seed, t));
        }
        for &k in &l.k_values {
            for &seed in &spec.seeds {
                let mut init = rng::stream(seed, "bench-students", k as u64);
                let students = (0..k)
                    .map(|i| MlpStudent::new(&format!("student{}", i + 1), arch.clone(), &mut init))
                    .collect::<Result<Vec<_>>>()?;
                let weights = EnsembleWeights::uniform(k)?;
                let before = spmm_calls_on_this_thread();
                let t = match &pool {
                    Some(p) => p.install(|| median_ms(l.warmup, l.reps, || ensemble_inference(&students, &weights, x, true)))?,
                    None => median_ms(l.warmup, l.reps, || ensemble_inference(&students, &weights, x, false))?,
                };
                if spmm_calls_on_this_thread() != before {
                    return Err(Error::Contract("student inference performed graph propagation".into()));
                }
                student_rows.push(row(format!("adagmlp-h{h}"), "k", Some(k as f64), seed, t));
            }
        }
        rows.extend(teacher_rows);
        rows.extend(student_rows);
    }
    Ok(rows)
}
