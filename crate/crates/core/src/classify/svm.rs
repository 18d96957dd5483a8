//! Soft-margin kernel SVM trained by SMO with second-order working-set
//! selection; one-vs-one for more than two classes.
//!
//! The dual is `min ½ aᵀQa - eᵀa` subject to `yᵀa = 0`, `0 <= a <= C`,
//! with `Q_ij = y_i y_j K(x_i, x_j)`. Iteration stops when the maximal
//! violating pair gap `m(a) - M(a)` drops below `eps` or after `max_iter`
//! updates.

use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::dataset::Dataset;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel matrix over all rows of `data`, row-major.
pub fn gram(data: &Dataset, kernel: Kernel) -> Vec<f64> {
    let n = data.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(data.row(i), data.row(j));
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Squared Euclidean distances, for building RBF kernels at several gammas.
pub fn sq_dist_matrix(data: &Dataset) -> Vec<f64> {
    let n = data.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(data.row(i), data.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Binary dual solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `m(a) - M(a)` at exit.
    pub gap: f64,
}

/// Solves the binary dual on the sub-problem `idx` of a full kernel matrix
/// `k` (row stride `n`), labels `y` in {+1, -1} aligned with `idx`.
pub fn smo_solve(k: &[f64], n: usize, idx: &[usize], y: &[f64], c: f64, cfg: &SmoConfig) -> DualSolution {
    let l = idx.len();
    let kk = |a: usize, b: usize| k[idx[a] * n + idx[b]];
    let qd: Vec<f64> = (0..l).map(|t| kk(t, t)).collect();
    let mut alpha = vec![0.0; l];
    let mut g = vec![-1.0; l];
    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    while iterations < cfg.max_iter {
        // i: maximal -y G over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if up(alpha[t], y[t]) && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        // j: second-order choice over I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..l {
                if !low(alpha[t], y[t]) {
                    continue;
                }
                let v = y[t] * g[t];
                if v >= gmax2 {
                    gmax2 = v;
                }
                let grad_diff = gmax + v;
                if grad_diff > 0.0 {
                    let quad = qd[i] + qd[t] - 2.0 * kk(i, t);
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j = t;
                    }
                }
            }
        }
        gap = gmax + gmax2;
        if i == usize::MAX || j == usize::MAX || gap < cfg.eps {
            converged = true;
            break;
        }
        iterations += 1;
        let qij = y[i] * y[j] * kk(i, j);
        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = qd[i] + qd[j] + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = qd[i] + qd[j] - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..l {
            g[t] += y[t] * (y[i] * kk(i, t) * di + y[j] * kk(j, t) * dj);
        }
    }
    let rho = compute_rho(&alpha, &g, y, c);
    DualSolution {
        alpha,
        rho,
        iterations,
        converged,
        gap,
    }
}

fn compute_rho(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut nfree = 0;
    for t in 0..alpha.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum += yg;
        }
    }
    if nfree > 0 {
        sum / nfree as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    }
}

/// Largest violation of the complementary-slackness conditions, measured
/// on the margins `y_t f(x_t)` directly.
pub fn kkt_violation(k: &[f64], n: usize, idx: &[usize], y: &[f64], sol: &DualSolution, c: f64) -> f64 {
    let l = idx.len();
    let mut worst: f64 = 0.0;
    for t in 0..l {
        let f: f64 = (0..l).map(|s| sol.alpha[s] * y[s] * k[idx[s] * n + idx[t]]).sum::<f64>() - sol.rho;
        let m = y[t] * f - 1.0;
        let v = if sol.alpha[t] <= 0.0 {
            (-m).max(0.0)
        } else if sol.alpha[t] >= c {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub pos: usize,
    pub neg: usize,
    /// Indices into the model's support-vector pool.
    pub sv: Vec<usize>,
    /// `alpha_t * y_t` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major support-vector pool.
    pub pool: Vec<f64>,
    /// Training-set row of each pool entry.
    pub pool_rows: Vec<usize>,
    pub pairs: Vec<PairModel>,
}

/// Trains one-vs-one SVMs over the present classes, using a precomputed
/// kernel matrix over all of `data` (row stride `data.len()`).
pub fn train_svm_with_gram(
    data: &Dataset,
    k: &[f64],
    kernel: Kernel,
    c: f64,
    cfg: &SmoConfig,
) -> Result<SvmModel, ClassifyError> {
    let rows: Vec<usize> = (0..data.len()).collect();
    train_svm_rows(data, k, &rows, kernel, c, cfg)
}

/// As [`train_svm_with_gram`], restricted to the sample indices `rows`.
pub fn train_svm_rows(
    data: &Dataset,
    k: &[f64],
    rows: &[usize],
    kernel: Kernel,
    c: f64,
    cfg: &SmoConfig,
) -> Result<SvmModel, ClassifyError> {
    if c.is_nan() || c <= 0.0 {
        return Err(ClassifyError::InvalidHyper(format!("C must be > 0, got {c}")));
    }
    let n = data.len();
    let mut groups = vec![Vec::new(); data.n_classes];
    for &i in rows {
        groups[data.y[i]].push(i);
    }
    let present: Vec<usize> = (0..data.n_classes).filter(|&c| !groups[c].is_empty()).collect();
    if present.len() < 2 {
        return Err(ClassifyError::SingleClassTrain);
    }
    let mut pool_index: Vec<Option<usize>> = vec![None; n];
    let mut pool = Vec::new();
    let mut pool_rows = Vec::new();
    let mut pairs = Vec::new();
    for (a_pos, &a) in present.iter().enumerate() {
        for &b in &present[a_pos + 1..] {
            let idx: Vec<usize> = groups[a].iter().chain(&groups[b]).copied().collect();
            let y: Vec<f64> = idx.iter().map(|&i| if data.y[i] == a { 1.0 } else { -1.0 }).collect();
            let sol = smo_solve(k, n, &idx, &y, c, cfg);
            let viol = kkt_violation(k, n, &idx, &y, &sol, c);
            let mut sv = Vec::new();
            let mut coef = Vec::new();
            for (t, &i) in idx.iter().enumerate() {
                if sol.alpha[t] > 0.0 {
                    let p = *pool_index[i].get_or_insert_with(|| {
                        pool.extend_from_slice(data.row(i));
                        pool_rows.push(i);
                        pool_rows.len() - 1
                    });
                    sv.push(p);
                    coef.push(sol.alpha[t] * y[t]);
                }
            }
            pairs.push(PairModel {
                pos: a,
                neg: b,
                sv,
                coef,
                rho: sol.rho,
                iterations: sol.iterations,
                converged: sol.converged,
                kkt_violation: viol,
            });
        }
    }
    Ok(SvmModel {
        kernel,
        c,
        n_classes: data.n_classes,
        n_features: data.n_features,
        pool,
        pool_rows,
        pairs,
    })
}

pub fn train_svm(data: &Dataset, kernel: Kernel, c: f64, cfg: &SmoConfig) -> Result<SvmModel, ClassifyError> {
    let k = gram(data, kernel);
    train_svm_with_gram(data, &k, kernel, c, cfg)
}

impl SvmModel {
    /// Signed decision value of every pair, positive favouring `pos`.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let nf = self.n_features;
        self.decisions_from(|p| self.kernel.eval(&self.pool[p * nf..(p + 1) * nf], x))
    }

    /// Decision values given kernel values against each pool entry.
    fn decisions_from(&self, kx: impl Fn(usize) -> f64) -> Vec<f64> {
        let kx: Vec<f64> = (0..self.pool_rows.len()).map(kx).collect();
        self.pairs
            .iter()
            .map(|pm| pm.sv.iter().zip(&pm.coef).map(|(&s, &c)| c * kx[s]).sum::<f64>() - pm.rho)
            .collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        self.vote(&self.decision_values(x))
    }

    /// Prediction from precomputed kernel values `kx(pool index)`.
    pub fn predict_from_kernel_row(&self, kx: impl Fn(usize) -> f64) -> usize {
        self.vote(&self.decisions_from(kx))
    }

    /// Majority vote; ties go to the larger summed decision value, then the
    /// lower class index.
    fn vote(&self, d: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        let mut score = vec![0.0; self.n_classes];
        for (pm, &v) in self.pairs.iter().zip(d) {
            if v > 0.0 {
                votes[pm.pos] += 1;
            } else {
                votes[pm.neg] += 1;
            }
            score[pm.pos] += v;
            score[pm.neg] -= v;
        }
        let mut best = 0;
        for c in 1..self.n_classes {
            if votes[c] > votes[best] || (votes[c] == votes[best] && score[c] > score[best]) {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, data: &Dataset) -> Vec<usize> {
        (0..data.len()).map(|i| self.predict_row(data.row(i))).collect()
    }

    pub fn max_kkt_violation(&self) -> f64 {
        self.pairs.iter().map(|p| p.kkt_violation).fold(0.0, f64::max)
    }

    pub fn all_converged(&self) -> bool {
        self.pairs.iter().all(|p| p.converged)
    }
}
