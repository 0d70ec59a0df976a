use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::SeedStream;

/// Row indices partitioned so that no number value crosses splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub val_values: Vec<i64>,
    pub test_values: Vec<i64>,
}

impl ValueSplit {
    pub fn train_values(&self, labels: &[i64]) -> BTreeSet<i64> {
        self.train_idx.iter().map(|&i| labels[i]).collect()
    }
}

/// Hold out `holdout_val` and `holdout_test` distinct values, chosen
/// uniformly at random from the values present in `labels`.
pub fn split_by_value(labels: &[i64], holdout_val: usize, holdout_test: usize, seed: u64) -> Result<ValueSplit> {
    if let Some(bad) = labels.iter().find(|&&l| l < 0) {
        return Err(Error::Split(format!("label {bad} is not a number value")));
    }
    let mut rows_by_value: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        rows_by_value.entry(l).or_default().push(i);
    }
    let distinct = rows_by_value.len();
    if holdout_val + holdout_test >= distinct {
        return Err(Error::Split(format!(
            "holding out {holdout_val}+{holdout_test} values leaves no training values ({distinct} distinct)"
        )));
    }
    let mut values: Vec<i64> = rows_by_value.keys().copied().collect();
    values.shuffle(&mut SeedStream::new(seed).rng("split_by_value"));
    let mut val_values = values[..holdout_val].to_vec();
    let mut test_values = values[holdout_val..holdout_val + holdout_test].to_vec();
    val_values.sort_unstable();
    test_values.sort_unstable();
    let val_set: BTreeSet<i64> = val_values.iter().copied().collect();
    let test_set: BTreeSet<i64> = test_values.iter().copied().collect();

    let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (i, l) in labels.iter().enumerate() {
        if val_set.contains(l) {
            val_idx.push(i);
        } else if test_set.contains(l) {
            test_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    Ok(ValueSplit {
        train_idx,
        val_idx,
        test_idx,
        val_values,
        test_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thousand_values_hold_out_hundred_each() {
        let labels: Vec<i64> = (0..5000).map(|i| (i * 7919) % 1000).collect();
        let s = split_by_value(&labels, 100, 100, 3).unwrap();
        assert_eq!(s.val_values.len(), 100);
        assert_eq!(s.test_values.len(), 100);
        let train = s.train_values(&labels);
        assert_eq!(train.len(), 800);
        for v in &s.test_values {
            assert!(!train.contains(v));
            assert!(!s.val_values.contains(v));
        }
        assert_eq!(s.train_idx.len() + s.val_idx.len() + s.test_idx.len(), labels.len());
    }

    #[test]
    fn single_value_cannot_split() {
        assert!(matches!(split_by_value(&[4; 10], 1, 1, 0), Err(Error::Split(_))));
        assert!(matches!(split_by_value(&[1, 2, 3], 1, 2, 0), Err(Error::Split(_))));
    }

    #[test]
    fn same_seed_same_split() {
        let labels: Vec<i64> = (0..300).map(|i| i % 50).collect();
        assert_eq!(split_by_value(&labels, 5, 5, 11).unwrap(), split_by_value(&labels, 5, 5, 11).unwrap());
        assert_ne!(split_by_value(&labels, 5, 5, 11).unwrap(), split_by_value(&labels, 5, 5, 12).unwrap());
    }

    proptest! {
        #[test]
        fn value_sets_disjoint_and_rows_partitioned(
            labels in prop::collection::vec(0i64..60, 1..300),
            hv in 0usize..5,
            ht in 0usize..5,
            seed in any::<u64>(),
        ) {
            match split_by_value(&labels, hv, ht, seed) {
                Ok(s) => {
                    let train = s.train_values(&labels);
                    let val: BTreeSet<i64> = s.val_idx.iter().map(|&i| labels[i]).collect();
                    let test: BTreeSet<i64> = s.test_idx.iter().map(|&i| labels[i]).collect();
                    prop_assert!(train.is_disjoint(&val));
                    prop_assert!(train.is_disjoint(&test));
                    prop_assert!(val.is_disjoint(&test));
                    prop_assert_eq!(val.len(), hv);
                    prop_assert_eq!(test.len(), ht);
                    let mut all: Vec<usize> = s.train_idx.iter().chain(&s.val_idx).chain(&s.test_idx).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                }
                Err(Error::Split(_)) => {
                    let distinct: BTreeSet<i64> = labels.iter().copied().collect();
                    prop_assert!(hv + ht >= distinct.len());
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
