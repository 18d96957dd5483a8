//! Stratified hold-out splits and k-fold partitions.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("class {class} has {count} samples, need at least {need}")]
    TooFewSamples { class: usize, count: usize, need: usize },
    #[error("cannot stratify {k} folds: class {class} has {count} samples")]
    UnstratifiableFold { k: usize, class: usize, count: usize },
}

/// Stratified train/test index split. Each class contributes
/// `round(test_fraction * count)` samples to the test side (at least one).
pub fn split_stratified<R: Rng>(
    data: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in data.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 4 {
            return Err(SplitError::TooFewSamples {
                class,
                count: idx.len(),
                need: 4,
            });
        }
        idx.shuffle(rng);
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified k-fold assignment: returns `k` disjoint validation index sets
/// covering all samples. Every fold receives at least one sample of every
/// present class.
pub fn stratified_kfold<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, SplitError> {
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for (class, mut idx) in data.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(SplitError::UnstratifiableFold {
                k,
                class,
                count: idx.len(),
            });
        }
        idx.shuffle(rng);
        // rotate the starting fold so remainders spread across folds
        for (j, i) in idx.into_iter().enumerate() {
            folds[(j + offset) % k].push(i);
        }
        offset += 1;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices for fold `f`: all samples not in it.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(counts: &[usize]) -> Dataset {
        let y: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        Dataset::new(1, counts.len(), (0..y.len()).map(|i| i as f64).collect(), y)
    }

    #[test]
    fn table_scale_split_proportions() {
        let d = labels(&[54, 63, 27]);
        let (train, test) = split_stratified(&d, 0.25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let count = |idx: &[usize], c| idx.iter().filter(|&&i| d.y[i] == c).count();
        let t: Vec<usize> = (0..3).map(|c| count(&test, c)).collect();
        assert!((13..=14).contains(&t[0]));
        assert!((15..=16).contains(&t[1]));
        assert!((6..=7).contains(&t[2]));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let d = labels(&[20, 20, 8]);
        let a = split_stratified(&d, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = split_stratified(&d, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            split_stratified(&labels(&[3, 10]), 0.25, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SplitError::TooFewSamples { class: 0, .. })
        ));
    }

    #[test]
    fn kfold_partition_and_stratification() {
        let d = labels(&[23, 31, 10]);
        let folds = stratified_kfold(&d, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for f in &folds {
            for c in 0..3 {
                assert!(f.iter().any(|&i| d.y[i] == c));
            }
        }
        assert!(matches!(
            stratified_kfold(&labels(&[5, 20]), 10, &mut ChaCha8Rng::seed_from_u64(2)),
            Err(SplitError::UnstratifiableFold { .. })
        ));
        assert_eq!(complement(5, &[1, 3]), vec![0, 2, 4]);
    }
}
