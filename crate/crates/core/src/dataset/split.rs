use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_paths: BTreeSet<String>,
    pub test_paths: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_train(&self, path_id: &str) -> bool {
        self.train_paths.contains(path_id)
    }

    pub fn is_test(&self, path_id: &str) -> bool {
        self.test_paths.contains(path_id)
    }
}

/// Number of held-out paths for `n` paths at train fraction `ratio`.
///
/// The held-out side receives `round((1 - ratio) * n)` paths plus one, so
/// 25 paths at 0.70 split 16/9 and 8 paths split 5/3. Both sides keep at
/// least one path.
fn test_count(n: usize, ratio: f64) -> usize {
    let base = ((1.0 - ratio) * n as f64).round() as usize;
    (base + 1).clamp(1, n - 1)
}

/// Randomly partitions paths (never clips) into train and test sets.
/// Deterministic for a given seed and set of path ids.
pub fn make_split(path_ids: &[String], ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let unique: BTreeSet<&String> = path_ids.iter().collect();
    if unique.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 distinct paths to split, found {}",
            unique.len()
        )));
    }
    let mut order: Vec<&String> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = test_count(order.len(), ratio);
    let n_train = order.len() - n_test;
    Ok(SplitSpec {
        train_paths: order[..n_train].iter().map(|s| s.to_string()).collect(),
        test_paths: order[n_train..].iter().map(|s| s.to_string()).collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("path_{i:02}")).collect()
    }

    #[test]
    fn twenty_five_paths_split_sixteen_nine() {
        let s = make_split(&ids(25), 0.70, 3).unwrap();
        assert_eq!((s.train_paths.len(), s.test_paths.len()), (16, 9));
    }

    #[test]
    fn two_paths_split_one_one() {
        let s = make_split(&ids(2), 0.70, 0).unwrap();
        assert_eq!((s.train_paths.len(), s.test_paths.len()), (1, 1));
    }

    #[test]
    fn eight_paths_split_five_three() {
        let s = make_split(&ids(8), 0.70, 0).unwrap();
        assert_eq!((s.train_paths.len(), s.test_paths.len()), (5, 3));
    }

    #[test]
    fn same_seed_same_split() {
        assert_eq!(
            make_split(&ids(25), 0.7, 11).unwrap(),
            make_split(&ids(25), 0.7, 11).unwrap()
        );
        assert_ne!(
            make_split(&ids(25), 0.7, 11).unwrap().train_paths,
            make_split(&ids(25), 0.7, 12).unwrap().train_paths
        );
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(make_split(&ids(5), 1.0, 0).is_err());
        assert!(make_split(&ids(5), 0.0, 0).is_err());
        assert!(make_split(&ids(1), 0.5, 0).is_err());
        assert!(make_split(&["a".into(), "a".into()], 0.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..60, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let all = ids(n);
            let s = make_split(&all, ratio, seed).unwrap();
            prop_assert!(s.train_paths.is_disjoint(&s.test_paths));
            prop_assert_eq!(s.train_paths.len() + s.test_paths.len(), n);
            prop_assert!(!s.train_paths.is_empty() && !s.test_paths.is_empty());
        }
    }
}
