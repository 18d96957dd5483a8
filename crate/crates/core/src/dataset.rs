//! Dense row-major sample matrix with class labels.

use serde::{Deserialize, Serialize};

use crate::functionals::FeatureTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major, `len() * n_features` values.
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(n_features: usize, n_classes: usize, x: Vec<f64>, y: Vec<usize>) -> Self {
        assert_eq!(x.len(), y.len() * n_features, "shape mismatch");
        assert!(y.iter().all(|&c| c < n_classes), "label out of range");
        Self {
            n_features,
            n_classes,
            x,
            y,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>, n_classes: usize) -> Self {
        let n_features = rows.first().map_or(0, Vec::len);
        let x = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(n_features, n_classes, x, y)
    }

    pub fn from_table(table: &FeatureTable) -> Self {
        let x = table.rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        let y = table.rows.iter().map(|r| r.risk_label.index()).collect();
        Self::new(table.n_features(), 3, x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n_features + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i, j)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(self.len() * cols.len());
        for i in 0..self.len() {
            let r = self.row(i);
            x.extend(cols.iter().map(|&j| r[j]));
        }
        Dataset {
            n_features: cols.len(),
            n_classes: self.n_classes,
            x,
            y: self.y.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    /// Sample indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.y.iter().enumerate() {
            g[y].push(i);
        }
        g
    }

    pub fn present_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }
}
