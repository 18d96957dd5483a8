//! One-hidden-layer perceptron: ReLU hidden units, softmax output,
//! cross-entropy loss with L2 weight decay, mini-batch Adam.
//!
//! Parameters live in one flat vector: `W1` (h × d, column-major), `b1`,
//! `W2` (k × h, column-major), `b2`.

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a `tol` improvement of the training loss before stopping.
    pub patience: usize,
    pub tol: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            tol: 1e-4,
            l2: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub w: Vec<f64>,
}

impl Mlp {
    pub fn n_params(d: usize, h: usize, k: usize) -> usize {
        h * d + h + k * h + k
    }

    /// He-normal hidden weights, Glorot-normal output weights, zero biases.
    pub fn init<R: Rng>(d: usize, h: usize, k: usize, rng: &mut R) -> Self {
        let mut w = vec![0.0; Self::n_params(d, h, k)];
        let n1 = Normal::new(0.0, (2.0 / d.max(1) as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0 / (h + k) as f64).sqrt()).unwrap();
        for v in &mut w[..h * d] {
            *v = n1.sample(rng);
        }
        let o = h * d + h;
        for v in &mut w[o..o + k * h] {
            *v = n2.sample(rng);
        }
        Self { d, h, k, w }
    }

    fn split(&self) -> (DMatrixView<'_, f64>, DVectorView<'_, f64>, DMatrixView<'_, f64>, DVectorView<'_, f64>) {
        let (d, h, k) = (self.d, self.h, self.k);
        let (w1, rest) = self.w.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        (
            DMatrixView::from_slice(w1, h, d),
            DVectorView::from_slice(b1, h),
            DMatrixView::from_slice(w2, k, h),
            DVectorView::from_slice(b2, k),
        )
    }

    fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (w1, b1, _, _) = self.split();
        let mut z1 = x * w1.transpose();
        for mut row in z1.row_iter_mut() {
            row += b1.transpose();
        }
        z1
    }

    /// Output-layer logits, one row per sample.
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (_, _, w2, b2) = self.split();
        let a = self.hidden(x).map(|v| v.max(0.0));
        let mut z2 = a * w2.transpose();
        for mut row in z2.row_iter_mut() {
            row += b2.transpose();
        }
        z2
    }

    /// Mean cross-entropy plus `l2 / 2 * |W|^2` (weights only) and its gradient.
    pub fn loss_grad(&self, x: &DMatrix<f64>, y: &[usize], l2: f64) -> (f64, Vec<f64>) {
        let (d, h, k) = (self.d, self.h, self.k);
        let b = x.nrows();
        let (w1, _, w2, b2) = self.split();
        let z1 = self.hidden(x);
        let a = z1.map(|v| v.max(0.0));
        let mut z2 = &a * w2.transpose();
        for mut row in z2.row_iter_mut() {
            row += b2.transpose();
        }
        // softmax with the max subtracted per row
        let mut loss = 0.0;
        let mut dz2 = DMatrix::<f64>::zeros(b, k);
        for i in 0..b {
            let m = (0..k).map(|c| z2[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..k).map(|c| (z2[(i, c)] - m).exp()).sum();
            let lse = m + s.ln();
            loss += lse - z2[(i, y[i])];
            for c in 0..k {
                dz2[(i, c)] = (z2[(i, c)] - lse).exp() / b as f64;
            }
            dz2[(i, y[i])] -= 1.0 / b as f64;
        }
        loss /= b as f64;
        loss += 0.5 * l2 * (w1.norm_squared() + w2.norm_squared());

        let gw2 = dz2.transpose() * &a;
        let gb2: Vec<f64> = (0..k).map(|c| dz2.column(c).sum()).collect();
        let mut dz1 = &dz2 * w2;
        dz1.zip_apply(&z1, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let gw1 = dz1.transpose() * x;
        let gb1: Vec<f64> = (0..h).map(|j| dz1.column(j).sum()).collect();

        let mut g = Vec::with_capacity(self.w.len());
        g.extend(gw1.iter().zip(w1.iter()).map(|(gv, wv)| gv + l2 * wv));
        g.extend(gb1);
        g.extend(gw2.iter().zip(w2.iter()).map(|(gv, wv)| gv + l2 * wv));
        g.extend(gb2);
        debug_assert_eq!(g.len(), Self::n_params(d, h, k));
        (loss, g)
    }

    pub fn predict(&self, data: &Dataset) -> Vec<usize> {
        if data.is_empty() {
            return Vec::new();
        }
        let z = self.logits(&design(data, &(0..data.len()).collect::<Vec<_>>()));
        (0..z.nrows())
            .map(|i| {
                let mut best = 0;
                for c in 1..self.k {
                    if z[(i, c)] > z[(i, best)] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Rows `idx` of `data` as a batch matrix.
pub fn design(data: &Dataset, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), data.n_features, |r, c| data.get(idx[r], c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub net: Mlp,
    pub epochs: usize,
    pub final_loss: f64,
}

impl MlpModel {
    pub fn predict(&self, data: &Dataset) -> Vec<usize> {
        self.net.predict(data)
    }
}

pub fn train_mlp<R: Rng>(data: &Dataset, hidden: usize, cfg: &MlpConfig, rng: &mut R) -> Result<MlpModel, ClassifyError> {
    if hidden == 0 {
        return Err(ClassifyError::InvalidHyper("hidden_units must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(ClassifyError::EmptyTrain);
    }
    let mut net = Mlp::init(data.n_features, hidden, data.n_classes, rng);
    let np = net.w.len();
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    let mut last = f64::NAN;
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let x = design(data, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
            let (loss, g) = net.loss_grad(&x, &y, cfg.l2);
            total += loss * chunk.len() as f64;
            t += 1;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for p in 0..np {
                m[p] = cfg.beta1 * m[p] + (1.0 - cfg.beta1) * g[p];
                v[p] = cfg.beta2 * v[p] + (1.0 - cfg.beta2) * g[p] * g[p];
                net.w[p] -= cfg.learning_rate * (m[p] / c1) / ((v[p] / c2).sqrt() + 1e-8);
            }
        }
        last = total / data.len() as f64;
        if last > best - cfg.tol {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(last);
    }
    Ok(MlpModel {
        net,
        epochs,
        final_loss: last,
    })
}
