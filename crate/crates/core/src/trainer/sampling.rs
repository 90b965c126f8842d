use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};

/// Disjoint labelled subsets, one per student.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RcPartition {
    pub subsets: Vec<Vec<usize>>,
}

/// Shuffle `labeled`, give students 1..K−1 `⌊|V^L|/K⌋` nodes each and the
/// last student the rest. Each subset is returned sorted.
pub fn rc_partition(labeled: &[usize], k: usize, seed: u64) -> Result<RcPartition> {
    if k == 0 || labeled.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} labelled nodes across {k} students",
            labeled.len()
        )));
    }
    let mut order = labeled.to_vec();
    order.shuffle(&mut rng::stream(seed, "rc-partition", 0));
    let size = labeled.len() / k;
    let mut subsets: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            let end = if i + 1 == k { order.len() } else { (i + 1) * size };
            order[i * size..end].to_vec()
        })
        .collect();
    subsets.iter_mut().for_each(|s| s.sort_unstable());
    Ok(RcPartition { subsets })
}

/// Number of positions zeroed per row for a masking rate.
pub fn masked_count(d: usize, rho: f64) -> usize {
    // tolerate representation error such as 0.29·100 = 28.999…
    ((rho * d as f64) + 1e-9).floor() as usize
}

/// Zero exactly `⌊ρ·d⌋` uniformly chosen positions in each row.
pub fn mask_features(x: &Tensor, rho: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("masking rate must be in [0,1), got {rho}")));
    }
    let d = x.cols();
    let m = masked_count(d, rho).min(d.saturating_sub(1));
    let mut out = x.clone();
    if m == 0 {
        return Ok(out);
    }
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for j in index::sample(rng, d, m) {
            row[j] = 0.0;
        }
    }
    Ok(out)
}

/// `rows.len()` draws with replacement from `rows`.
pub fn bootstrap_sample(rows: &[usize], rng: &mut Rng) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    (0..rows.len())
        .map(|_| rows[rng.random_range(0..rows.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn partition_sizes() {
        let sizes = |n: usize, k| {
            let v: Vec<usize> = (0..n).collect();
            rc_partition(&v, k, 5)
                .unwrap()
                .subsets
                .iter()
                .map(Vec::len)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(7, 3), vec![2, 2, 3]);
        assert_eq!(sizes(140, 2), vec![70, 70]);
        let all: Vec<usize> = (10..20).collect();
        assert_eq!(rc_partition(&all, 1, 3).unwrap().subsets, vec![all.clone()]);
        assert!(matches!(rc_partition(&all[..2], 3, 0), Err(Error::Config(_))));
        assert_eq!(rc_partition(&all, 3, 9).unwrap(), rc_partition(&all, 3, 9).unwrap());
    }

    #[test]
    fn masking_counts() {
        let x = Tensor::full(4, 10, 1.0);
        let mut r = Rng::seed_from_u64(0);
        assert_eq!(mask_features(&x, 0.0, &mut r).unwrap(), x);
        let m = mask_features(&x, 0.3, &mut r).unwrap();
        for i in 0..4 {
            assert_eq!(m.row(i).iter().filter(|&&v| v == 0.0).count(), 3);
        }
        let m = mask_features(&x, 0.9999, &mut r).unwrap();
        for i in 0..4 {
            assert_eq!(m.row(i).iter().filter(|&&v| v == 0.0).count(), 9);
        }
        assert_eq!(masked_count(100, 0.29), 29);
        assert!(mask_features(&x, 1.0, &mut r).is_err());
    }

    #[test]
    fn bootstrap_statistics() {
        let rows: Vec<usize> = (0..1000).collect();
        let s = bootstrap_sample(&rows, &mut Rng::seed_from_u64(4));
        assert_eq!(s.len(), 1000);
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        let frac = u.len() as f64 / 1000.0;
        assert!((frac - (1.0 - (-1f64).exp())).abs() < 0.03, "{frac}");
    }
}
