use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{CmfError, Result};
use crate::CmfRng;

pub const MIN_CLASS_SIZE: usize = 5;

/// Sample indices per split, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut classes = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        classes[l].push(i);
    }
    classes
}

fn class_rng(seed: u64, class: usize) -> CmfRng {
    let mut rng = CmfRng::seed_from_u64(seed);
    rng.set_stream(class as u64);
    rng
}

/// Per class: shuffle, then take `round(train·n)` for training,
/// `round(val·n)` for validation and the rest for test.
pub fn stratified_split(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(CmfError::Data(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut split = DatasetSplit::default();
    for (class, mut idx) in by_class(labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_CLASS_SIZE {
            return Err(CmfError::Data(format!(
                "class {class} has {} samples, stratified splitting needs at least {MIN_CLASS_SIZE}",
                idx.len()
            )));
        }
        idx.shuffle(&mut class_rng(seed, class));
        let n = idx.len() as f64;
        let n_train = (tr * n).round() as usize;
        let n_val = ((va * n).round() as usize).min(idx.len() - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stratified fold index for every sample. Within a class, shuffled samples
/// are dealt round-robin; the dealing position carries over between classes
/// so fold sizes differ by at most one.
pub fn kfold_assign(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(CmfError::Data(format!("k-fold needs k >= 2, got {k}")));
    }
    if labels.len() < k {
        return Err(CmfError::Data(format!("{} samples cannot fill {k} folds", labels.len())));
    }
    let classes = by_class(labels);
    if let Some((class, idx)) = classes.iter().enumerate().find(|(_, idx)| !idx.is_empty() && idx.len() < k) {
        return Err(CmfError::Data(format!("class {class} has {} samples, fewer than {k} folds", idx.len())));
    }
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut idx) in classes.into_iter().enumerate() {
        let mut rng = class_rng(seed, class);
        rng.set_word_pos(1 << 20);
        idx.shuffle(&mut rng);
        for i in idx {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_hundred() {
        let s = stratified_split(&vec![0; 100], (0.6, 0.2, 0.2), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
    }

    #[test]
    fn two_classes_of_fifty() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = stratified_split(&labels, (0.6, 0.2, 0.2), 3).unwrap();
        for class in 0..2 {
            let count = |ids: &[usize]| ids.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (30, 10, 10));
        }
    }

    #[test]
    fn deterministic_partition_within_one_sample() {
        let labels: Vec<usize> = (0..97).map(|i| (i * 7) % 4).collect();
        let a = stratified_split(&labels, (0.6, 0.2, 0.2), 11).unwrap();
        assert_eq!(a, stratified_split(&labels, (0.6, 0.2, 0.2), 11).unwrap());
        assert_ne!(a, stratified_split(&labels, (0.6, 0.2, 0.2), 12).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
        for class in 0..4 {
            let n = labels.iter().filter(|&&l| l == class).count() as f64;
            for (ids, r) in [(&a.train, 0.6), (&a.val, 0.2), (&a.test, 0.2)] {
                let c = ids.iter().filter(|&&i| labels[i] == class).count() as f64;
                assert!((c - r * n).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn small_class_rejected() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1];
        assert!(stratified_split(&labels, (0.6, 0.2, 0.2), 0).is_err());
        assert!(stratified_split(&[0; 10], (0.6, 0.2, 0.3), 0).is_err());
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let folds = kfold_assign(&labels, 4, 1).unwrap();
        for f in 0..4 {
            for class in 0..4 {
                let n = (0..40).filter(|&i| folds[i] == f && labels[i] == class).count();
                assert!((2..=3).contains(&n));
            }
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 10);
        }
        assert_eq!(folds, kfold_assign(&labels, 4, 1).unwrap());
        assert!(kfold_assign(&labels, 1, 1).is_err());
    }
}
