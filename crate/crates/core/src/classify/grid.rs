//! Hyperparameter grids and cross-validated selection by mean balanced
//! accuracy. Ties go to the earlier candidate, which is the smaller model
//! or the smaller C.

use serde::{Deserialize, Serialize};

use super::metrics::{balanced_accuracy_present, confusion_matrix};
use super::mlp::train_mlp;
use super::svm::{gram, sq_dist_matrix, train_svm_rows, Kernel};
use super::{ClassifyConfig, ClassifyError, Hyper, ModelKind};
use crate::dataset::Dataset;
use crate::seed;
use crate::split::{complement, stratified_kfold};

/// Ten evenly spaced hidden-layer sizes from `round(n/10) + 1` to
/// `n + round(n/10) + 1`.
pub fn mlp_hidden_grid(n_features: usize) -> Vec<usize> {
    let lo = (n_features as f64 / 10.0).round() + 1.0;
    let hi = n_features as f64 + lo;
    let mut g: Vec<usize> = (0..10).map(|i| (lo + (hi - lo) * i as f64 / 9.0).round() as usize).collect();
    g.dedup();
    g
}

/// `1 / (n_features * variance of all training values)`.
pub fn gamma_base(train: &Dataset) -> f64 {
    let n = train.x.len() as f64;
    let m = train.x.iter().sum::<f64>() / n;
    let var = train.x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let p = train.n_features.max(1) as f64;
    if var > 0.0 {
        1.0 / (p * var)
    } else {
        1.0 / p
    }
}

/// 0.1, 0.2, ..., 1.0, optionally extended beyond 1.
pub fn coarse_c_grid(extended: bool) -> Vec<f64> {
    let mut g: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    if extended {
        g.extend([2.0, 5.0, 10.0, 20.0, 50.0, 100.0]);
    }
    g
}

/// Steps of 0.01 within 0.09 of `center`, clipped to [0.01, 1].
pub fn fine_c_grid(center: f64) -> Vec<f64> {
    let c = (center * 100.0).round() as i64;
    ((c - 9).max(1)..=(c + 9).min(100)).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub hyper: Hyper,
    pub cv_score: f64,
    pub evaluated: Vec<(Hyper, f64)>,
}

struct Cv {
    folds: Vec<Vec<usize>>,
    trains: Vec<Vec<usize>>,
}

fn cv_folds(train: &Dataset, k_max: usize, seed_value: u64) -> Result<Cv, ClassifyError> {
    let min_class = train.class_counts().into_iter().filter(|&c| c > 0).min().unwrap_or(0);
    let k = k_max.min(min_class);
    if k < 2 {
        return Err(ClassifyError::TooFewForCv(min_class));
    }
    let mut rng = seed::rng(seed_value, &[seed::tag_str("cv")]);
    let folds = stratified_kfold(train, k, &mut rng)?;
    let trains = folds.iter().map(|f| complement(train.len(), f)).collect();
    Ok(Cv { folds, trains })
}

fn fold_score(data: &Dataset, val: &[usize], pred: &[usize]) -> f64 {
    let truth: Vec<usize> = val.iter().map(|&i| data.y[i]).collect();
    balanced_accuracy_present(&confusion_matrix(&truth, pred, data.n_classes))
}

fn svm_cv(train: &Dataset, k: &[f64], kernel: Kernel, c: f64, cv: &Cv, cfg: &ClassifyConfig) -> Result<f64, ClassifyError> {
    let mut total = 0.0;
    for (val, tr) in cv.folds.iter().zip(&cv.trains) {
        let m = train_svm_rows(train, k, tr, kernel, c, &cfg.smo)?;
        let n = train.len();
        // decision values straight from the kernel matrix
        let pred: Vec<usize> = val
            .iter()
            .map(|&i| {
                let row = &k[i * n..(i + 1) * n];
                m.predict_from_kernel_row(|p| row[m.pool_rows[p]])
            })
            .collect();
        total += fold_score(train, val, &pred);
    }
    Ok(total / cv.folds.len() as f64)
}

fn better(score: f64, best: Option<f64>) -> bool {
    best.is_none_or(|b| score > b)
}

pub fn grid_search(train: &Dataset, kind: ModelKind, cfg: &ClassifyConfig, seed_value: u64) -> Result<GridOutcome, ClassifyError> {
    let cv = cv_folds(train, cfg.cv_folds, seed_value)?;
    let mut evaluated = Vec::new();
    let mut best: Option<(Hyper, f64)> = None;
    let mut consider = |h: Hyper, s: f64, best: &mut Option<(Hyper, f64)>| {
        evaluated.push((h.clone(), s));
        if better(s, best.as_ref().map(|b| b.1)) {
            *best = Some((h, s));
        }
    };
    match kind {
        ModelKind::Mlp1Hidden => {
            for h in mlp_hidden_grid(train.n_features) {
                let mut total = 0.0;
                for (f, (val, tr)) in cv.folds.iter().zip(&cv.trains).enumerate() {
                    let sub = train.subset(tr);
                    let mut rng = seed::rng(seed_value, &[seed::tag_str("mlp-cv"), h as u64, f as u64]);
                    let m = train_mlp(&sub, h, &cfg.mlp, &mut rng)?;
                    let pred = m.predict(&train.subset(val));
                    total += fold_score(train, val, &pred);
                }
                consider(Hyper::Mlp { hidden_units: h }, total / cv.folds.len() as f64, &mut best);
            }
        }
        ModelKind::SvmLinear => {
            let k = gram(train, Kernel::Linear);
            for c in coarse_c_grid(cfg.extended_c) {
                let s = svm_cv(train, &k, Kernel::Linear, c, &cv, cfg)?;
                consider(Hyper::SvmLinear { c }, s, &mut best);
            }
            let c0 = best.as_ref().map(|b| b.0.c()).unwrap();
            if c0 <= 1.0 {
                let mut fine: Option<(Hyper, f64)> = None;
                for c in fine_c_grid(c0) {
                    let s = svm_cv(train, &k, Kernel::Linear, c, &cv, cfg)?;
                    consider(Hyper::SvmLinear { c }, s, &mut fine);
                }
                best = fine;
            }
        }
        ModelKind::SvmRbf => {
            let d = sq_dist_matrix(train);
            let base = gamma_base(train);
            let gammas: Vec<f64> = cfg.gamma_multipliers.iter().map(|m| m * base).collect();
            let grams: Vec<Vec<f64>> = gammas.iter().map(|g| d.iter().map(|v| (-g * v).exp()).collect()).collect();
            for c in coarse_c_grid(cfg.extended_c) {
                for (g, k) in gammas.iter().zip(&grams) {
                    let s = svm_cv(train, k, Kernel::Rbf { gamma: *g }, c, &cv, cfg)?;
                    consider(Hyper::SvmRbf { c, gamma: *g }, s, &mut best);
                }
            }
            let (c0, g0) = match best.as_ref().unwrap().0 {
                Hyper::SvmRbf { c, gamma } => (c, gamma),
                _ => unreachable!(),
            };
            if c0 <= 1.0 {
                let gi = gammas.iter().position(|&g| g == g0).unwrap();
                let mut fine: Option<(Hyper, f64)> = None;
                for c in fine_c_grid(c0) {
                    let s = svm_cv(train, &grams[gi], Kernel::Rbf { gamma: g0 }, c, &cv, cfg)?;
                    consider(Hyper::SvmRbf { c, gamma: g0 }, s, &mut fine);
                }
                best = fine;
            }
        }
    }
    let (hyper, cv_score) = best.expect("non-empty grid");
    Ok(GridOutcome {
        hyper,
        cv_score,
        evaluated,
    })
}
