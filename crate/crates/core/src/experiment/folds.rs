//! Leave-one-subject-out fold construction.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Subject-level split for one LOSO fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: String,
}

/// One fold per subject: the subject under test is excluded from training,
/// and 20% of the remaining subjects (at least one) are held out for
/// validation. Deterministic for a given seed.
pub fn loso_folds(subject_ids: &[String], seed: u64) -> Result<Vec<Fold>> {
    if subject_ids.len() < 3 {
        return Err(Error::Config(format!(
            "LOSO needs at least 3 subjects, got {}",
            subject_ids.len()
        )));
    }
    let mut sorted = subject_ids.to_vec();
    sorted.sort();
    let folds = sorted
        .iter()
        .enumerate()
        .map(|(k, test)| {
            let mut rest: Vec<String> = sorted.iter().filter(|s| *s != test).cloned().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            rest.shuffle(&mut rng);
            let n_val = ((0.2 * rest.len() as f64).round() as usize).max(1);
            let val: Vec<String> = rest[..n_val].to_vec();
            let mut train: Vec<String> = rest[n_val..].to_vec();
            train.sort();
            let mut val = val;
            val.sort();
            Fold {
                train,
                val,
                test: test.clone(),
            }
        })
        .collect();
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn one_fold_per_subject_all_distinct() {
        let folds = loso_folds(&ids(20), 7).unwrap();
        assert_eq!(folds.len(), 20);
        let tests: BTreeSet<&String> = folds.iter().map(|f| &f.test).collect();
        assert_eq!(tests.len(), 20);
    }

    #[test]
    fn minimum_three_subjects() {
        let folds = loso_folds(&ids(3), 1).unwrap();
        for f in &folds {
            assert_eq!(f.train.len(), 1);
            assert_eq!(f.val.len(), 1);
        }
        assert!(loso_folds(&ids(2), 1).is_err());
    }

    #[test]
    fn partitions_are_exact_and_disjoint() {
        let all = ids(9);
        let folds = loso_folds(&all, 42).unwrap();
        let mut tests = BTreeSet::new();
        for f in &folds {
            let train: BTreeSet<&String> = f.train.iter().collect();
            let val: BTreeSet<&String> = f.val.iter().collect();
            assert!(train.is_disjoint(&val));
            assert!(!train.contains(&f.test));
            assert!(!val.contains(&f.test));
            assert_eq!(train.len() + val.len() + 1, all.len());
            tests.insert(f.test.clone());
        }
        assert_eq!(tests, all.iter().cloned().collect());
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(loso_folds(&ids(8), 5).unwrap(), loso_folds(&ids(8), 5).unwrap());
        assert_ne!(loso_folds(&ids(8), 5).unwrap(), loso_folds(&ids(8), 6).unwrap());
    }
}
