use super::checkpoint::{EnsembleCheckpoint, TeacherCheckpoint};
use super::sampling::mask_features;
use crate::error::Result;
use crate::graph::{normalize_adjacency, Dataset};
use crate::numerics::Tensor;
use crate::rng;

/// Fraction of matching entries; zero for empty input.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// Features of `rows`, each with `⌊rate·d⌋` entries zeroed.
pub fn masked_rows(ds: &Dataset, rows: &[usize], rate: f64, seed: u64) -> Result<Tensor> {
    let x = ds.features.gather_rows(rows)?;
    mask_features(&x, rate, &mut rng::stream(seed, "test-mask", 0))
}

pub fn evaluate_ensemble(
    ckpt: &EnsembleCheckpoint,
    ds: &Dataset,
    rows: &[usize],
    missing_rate: f64,
    seed: u64,
) -> Result<f64> {
    let x = masked_rows(ds, rows, missing_rate, seed)?;
    Ok(accuracy(&ckpt.predict(&x)?, &ds.labels_of(rows)))
}

/// Teacher accuracy on `rows` over the full graph, with those rows'
/// features masked exactly as [`evaluate_ensemble`] masks them.
pub fn evaluate_teacher(
    ckpt: &TeacherCheckpoint,
    ds: &Dataset,
    rows: &[usize],
    missing_rate: f64,
    seed: u64,
) -> Result<f64> {
    let mut x = ds.features.clone();
    let masked = masked_rows(ds, rows, missing_rate, seed)?;
    for (k, &i) in rows.iter().enumerate() {
        x.row_mut(i).copy_from_slice(masked.row(k));
    }
    let logits = ckpt.model.predict(&normalize_adjacency(&ds.graph), &x)?;
    let pred = logits.gather_rows(rows)?.argmax_rows();
    Ok(accuracy(&pred, &ds.labels_of(rows)))
}
