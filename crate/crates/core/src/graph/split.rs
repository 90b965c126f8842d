use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Named node index sets. `observed`/`unseen` are present only for
/// inductive splits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen: Option<Vec<usize>>,
}

impl Split {
    pub fn is_inductive(&self) -> bool {
        self.unseen.is_some()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![0u8; n];
        for (tag, set) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::Validation(format!("split index {i} >= {n}")));
                }
                if owner[i] != 0 {
                    return Err(Error::Validation(format!(
                        "node {i} appears in more than one split"
                    )));
                }
                owner[i] = tag;
            }
        }
        match (&self.observed, &self.unseen) {
            (None, None) => Ok(()),
            (Some(obs), Some(unseen)) => {
                let mut side = vec![0u8; n];
                for (tag, set) in [(1u8, obs), (2, unseen)] {
                    for &i in set {
                        if i >= n {
                            return Err(Error::Validation(format!("split index {i} >= {n}")));
                        }
                        if side[i] != 0 {
                            return Err(Error::Validation(format!(
                                "node {i} both observed and unseen"
                            )));
                        }
                        side[i] = tag;
                    }
                }
                if self.test.iter().any(|&i| side[i] != 2) {
                    return Err(Error::Validation("inductive test must be unseen".into()));
                }
                if self.train.iter().chain(&self.val).any(|&i| side[i] != 1) {
                    return Err(Error::Validation(
                        "inductive train/val must be observed".into(),
                    ));
                }
                Ok(())
            }
            _ => Err(Error::Validation(
                "observed and unseen must be given together".into(),
            )),
        }
    }

    /// Nodes whose features and teacher outputs are visible during training.
    pub fn visible_nodes(&self, n: usize) -> Vec<usize> {
        match &self.observed {
            Some(obs) => obs.clone(),
            None => (0..n).collect(),
        }
    }
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |&m| m + 1)
}

/// Class-balanced training set of `per_class_train` nodes per class, then
/// `val_size` and `test_size` nodes drawn from the remainder.
pub fn make_transductive_split(
    labels: &[usize],
    per_class_train: usize,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<Split> {
    let mut rng = rng::stream(seed, "split/transductive", 0);
    let c = num_classes(labels);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::with_capacity(per_class_train * c);
    let mut rest = Vec::new();
    for (cls, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < per_class_train {
            return Err(Error::Config(format!(
                "class {cls} has {} nodes, need {per_class_train} for training",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        train.extend_from_slice(&nodes[..per_class_train]);
        rest.extend_from_slice(&nodes[per_class_train..]);
    }
    if rest.len() < val_size + test_size {
        return Err(Error::Config(format!(
            "{} nodes left after training set, need {} for val+test",
            rest.len(),
            val_size + test_size
        )));
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    train.sort_unstable();
    let mut val = rest[..val_size].to_vec();
    let mut test = rest[val_size..val_size + test_size].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val,
        test,
        observed: None,
        unseen: None,
    })
}

/// Uniform (not class-stratified) training set of `round(rate·N)` nodes,
/// `val_size` validation nodes, and every remaining node as test.
pub fn make_label_rate_split(labels: &[usize], rate: f64, val_size: usize, seed: u64) -> Result<Split> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("label rate must be in (0,1), got {rate}")));
    }
    let n = labels.len();
    let n_train = (rate * n as f64).round() as usize;
    if n_train == 0 {
        return Err(Error::Config(format!(
            "label rate {rate} on {n} nodes leaves an empty training set"
        )));
    }
    if n_train + val_size >= n {
        return Err(Error::Config(format!(
            "{n_train} train + {val_size} val leaves no test nodes out of {n}"
        )));
    }
    let mut rng = rng::stream(seed, "split/label-rate", 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + val_size].to_vec();
    let mut test = order[n_train + val_size..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val,
        test,
        observed: None,
        unseen: None,
    })
}

/// Hold out `round(unseen_fraction·N)` nodes as unseen test nodes; draw a
/// class-balanced training set and a validation set from the observed rest.
pub fn make_inductive_split(
    labels: &[usize],
    unseen_fraction: f64,
    per_class_train: usize,
    val_size: usize,
    seed: u64,
) -> Result<Split> {
    if !(unseen_fraction > 0.0 && unseen_fraction < 1.0) {
        return Err(Error::Config(format!(
            "unseen fraction must be in (0,1), got {unseen_fraction}"
        )));
    }
    let n = labels.len();
    let n_unseen = (unseen_fraction * n as f64).round() as usize;
    if n_unseen == 0 || n_unseen >= n {
        return Err(Error::Config(format!(
            "unseen fraction {unseen_fraction} on {n} nodes is degenerate"
        )));
    }
    let mut rng = rng::stream(seed, "split/inductive", 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut unseen = order[..n_unseen].to_vec();
    let mut observed = order[n_unseen..].to_vec();
    unseen.sort_unstable();
    observed.sort_unstable();

    let obs_labels: Vec<usize> = observed.iter().map(|&i| labels[i]).collect();
    let local = make_transductive_split(&obs_labels, per_class_train, val_size, 0, seed)?;
    let lift = |v: &[usize]| -> Vec<usize> {
        let mut out: Vec<usize> = v.iter().map(|&i| observed[i]).collect();
        out.sort_unstable();
        out
    };
    Ok(Split {
        train: lift(&local.train),
        val: lift(&local.val),
        test: unseen.clone(),
        observed: Some(observed),
        unseen: Some(unseen),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyclic_labels(n: usize, c: usize) -> Vec<usize> {
        (0..n).map(|i| i % c).collect()
    }

    #[test]
    fn planetoid_sizes() {
        let labels = cyclic_labels(2708, 7);
        let s = make_transductive_split(&labels, 20, 500, 1000, 3).unwrap();
        assert_eq!(s.train.len(), 140);
        assert_eq!(s.val.len(), 500);
        assert_eq!(s.test.len(), 1000);
        s.validate(2708).unwrap();
        for c in 0..7 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
        assert_eq!(s, make_transductive_split(&labels, 20, 500, 1000, 3).unwrap());
        let other = make_transductive_split(&labels, 20, 500, 1000, 4).unwrap();
        assert_ne!(s.train, other.train);
    }

    #[test]
    fn transductive_insufficient() {
        let labels = cyclic_labels(30, 3);
        assert!(matches!(
            make_transductive_split(&labels, 11, 0, 0, 0),
            Err(Error::Config(_))
        ));
        assert!(make_transductive_split(&labels, 5, 10, 10, 0).is_err());
    }

    #[test]
    fn label_rate_sizes() {
        let labels = cyclic_labels(2708, 7);
        let s = make_label_rate_split(&labels, 0.01, 500, 1).unwrap();
        assert_eq!(s.train.len(), 27);
        assert_eq!(s.val.len(), 500);
        assert_eq!(s.test.len(), 2708 - 527);
        s.validate(2708).unwrap();
        let s3 = make_label_rate_split(&labels, 0.03, 500, 1).unwrap();
        assert_eq!(s3.train.len(), 81);
        assert!(make_label_rate_split(&labels, 0.0001, 10, 1).is_err());
        assert!(make_label_rate_split(&labels, 1.0, 10, 1).is_err());
    }

    #[test]
    fn inductive_partition() {
        let labels = cyclic_labels(100, 2);
        let s = make_inductive_split(&labels, 0.2, 5, 10, 9).unwrap();
        let unseen = s.unseen.as_ref().unwrap();
        let observed = s.observed.as_ref().unwrap();
        assert_eq!(unseen.len(), 20);
        assert_eq!(observed.len() + unseen.len(), 100);
        let mut all: Vec<usize> = observed.iter().chain(unseen).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(&s.test, unseen);
        s.validate(100).unwrap();
        assert!(make_inductive_split(&labels, 0.001, 5, 10, 9).is_err());
        assert!(make_inductive_split(&labels, 0.0, 5, 10, 9).is_err());
    }

    #[test]
    fn validate_catches_overlap() {
        let s = Split {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
            observed: None,
            unseen: None,
        };
        assert!(s.validate(3).is_err());
        let s = Split {
            train: vec![0],
            val: vec![],
            test: vec![5],
            observed: None,
            unseen: None,
        };
        assert!(s.validate(3).is_err());
    }
}
