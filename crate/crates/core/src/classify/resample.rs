//! Class rebalancing and train-fitted min-max scaling.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::dataset::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    None,
    Oversample,
    Undersample,
}

impl Sampling {
    pub const ALL: [Sampling; 3] = [Sampling::None, Sampling::Oversample, Sampling::Undersample];

    pub fn name(self) -> &'static str {
        match self {
            Sampling::None => "none",
            Sampling::Oversample => "oversample",
            Sampling::Undersample => "undersample",
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Sampling {
    type Err = ClassifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Sampling::None),
            "over" | "oversample" => Ok(Sampling::Oversample),
            "under" | "undersample" => Ok(Sampling::Undersample),
            _ => Err(ClassifyError::Parse(format!("unknown sampling mode {s:?}"))),
        }
    }
}

/// Oversampling draws duplicates with replacement until every present class
/// has the largest count; undersampling keeps a random subset of the
/// smallest count per class. Output rows are grouped by class.
pub fn resample<R: Rng>(data: &Dataset, mode: Sampling, rng: &mut R) -> Dataset {
    if mode == Sampling::None {
        return data.clone();
    }
    let groups: Vec<Vec<usize>> = data.class_indices().into_iter().filter(|g| !g.is_empty()).collect();
    let target = match mode {
        Sampling::Oversample => groups.iter().map(Vec::len).max().unwrap_or(0),
        _ => groups.iter().map(Vec::len).min().unwrap_or(0),
    };
    let mut idx = Vec::with_capacity(target * groups.len());
    for g in &groups {
        match mode {
            Sampling::Oversample => {
                idx.extend_from_slice(g);
                for _ in g.len()..target {
                    idx.push(*g.choose(rng).unwrap());
                }
            }
            _ => {
                let mut g = g.clone();
                g.shuffle(rng);
                g.truncate(target);
                g.sort_unstable();
                idx.extend(g);
            }
        }
    }
    data.subset(&idx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset) -> Result<Self, ClassifyError> {
        if data.is_empty() {
            return Err(ClassifyError::EmptyTrain);
        }
        let p = data.n_features;
        let mut lo = vec![f64::INFINITY; p];
        let mut hi = vec![f64::NEG_INFINITY; p];
        for i in 0..data.len() {
            for (j, &v) in data.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let w = self.hi[j] - self.lo[j];
        if w > 0.0 {
            (v - self.lo[j]) / w
        } else {
            0.5
        }
    }

    /// Applies the fitted affine map; values outside the train range are not clipped.
    pub fn transform(&self, data: &Dataset) -> Dataset {
        let p = data.n_features;
        let x = data.x.iter().enumerate().map(|(k, &v)| self.scale(k % p, v)).collect();
        Dataset { x, ..data.clone() }
    }
}

/// Fits on `train` and transforms both sides.
pub fn scale_train_test(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, MinMaxScaler), ClassifyError> {
    let s = MinMaxScaler::fit(train)?;
    Ok((s.transform(train), s.transform(test), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(c: &[usize]) -> Dataset {
        let y: Vec<usize> = c.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        Dataset::new(1, 3, (0..y.len()).map(|i| i as f64).collect(), y)
    }

    #[test]
    fn rebalancing_counts() {
        let d = counts(&[40, 47, 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(resample(&d, Sampling::Oversample, &mut rng).class_counts(), vec![47, 47, 47]);
        assert_eq!(resample(&d, Sampling::Undersample, &mut rng).class_counts(), vec![20, 20, 20]);
        assert_eq!(resample(&d, Sampling::None, &mut rng), d);
    }

    #[test]
    fn scaler_is_train_fitted_affine() {
        let train = Dataset::new(2, 2, vec![2.0, 1.0, 6.0, 1.0], vec![0, 1]);
        let test = Dataset::new(2, 2, vec![4.0, 7.0, 8.0, 1.0], vec![0, 1]);
        let (tr, te, s) = scale_train_test(&train, &test).unwrap();
        assert_eq!(tr.x, vec![0.0, 0.5, 1.0, 0.5]);
        assert_eq!(te.x, vec![0.5, 0.5, 1.5, 0.5]);
        // not idempotent on test values outside the train range
        assert_ne!(s.transform(&te).x, te.x);
    }
}
