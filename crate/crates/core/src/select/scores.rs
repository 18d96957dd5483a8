//! Filter-style relevance scores. Higher is more relevant; a constant
//! feature scores 0 under every method.

use serde::{Deserialize, Serialize};

use super::SelectError;
use crate::dataset::Dataset;

pub const N_BINS: usize = 10;
pub const RELIEFF_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FScore,
    MutualInfo,
    Chi2,
    Relieff,
    Mrmr,
    VarianceRatio,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FScore,
        Method::MutualInfo,
        Method::Chi2,
        Method::Relieff,
        Method::Mrmr,
        Method::VarianceRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FScore => "f_score",
            Method::MutualInfo => "mutual_info",
            Method::Chi2 => "chi2",
            Method::Relieff => "relieff",
            Method::Mrmr => "mrmr",
            Method::VarianceRatio => "variance_ratio",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = SelectError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SelectError::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorScore {
    pub method: Method,
    pub scores: Vec<f64>,
    /// 1 = most relevant; ties go to the lower feature index.
    pub ranks: Vec<usize>,
}

/// Feature indices ordered from most to least relevant.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn ranks_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; scores.len()];
    for (r, i) in order_by_score(scores).into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Per-feature columns plus the precomputed facts every scorer needs.
pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
    pub constant: Vec<bool>,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl Columns {
    pub fn new(data: &Dataset) -> Self {
        let cols: Vec<Vec<f64>> = (0..data.n_features).map(|j| data.column(j)).collect();
        let constant = cols.iter().map(|c| c.iter().all(|&v| v == c[0])).collect();
        Self {
            cols,
            constant,
            y: data.y.clone(),
            n_classes: data.n_classes,
        }
    }

    fn bins(&self, j: usize) -> Vec<usize> {
        discretize(&self.cols[j])
    }
}

/// Equal-width bins over the observed range; a constant column maps to bin 0.
pub fn discretize(col: &[f64]) -> Vec<usize> {
    let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let w = hi - lo;
    col.iter()
        .map(|&v| {
            if w > 0.0 {
                (((v - lo) / w * N_BINS as f64) as usize).min(N_BINS - 1)
            } else {
                0
            }
        })
        .collect()
}

/// A large finite stand-in for a ratio with a zero denominator.
const SEPARATION_CAP: f64 = 1e300;

fn class_moments(col: &[f64], y: &[usize], k: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut n = vec![0usize; k];
    let mut s = vec![0.0; k];
    for (&v, &c) in col.iter().zip(y) {
        n[c] += 1;
        s[c] += v;
    }
    let means: Vec<f64> = (0..k).map(|c| if n[c] > 0 { s[c] / n[c] as f64 } else { 0.0 }).collect();
    let mut ss = vec![0.0; k];
    for (&v, &c) in col.iter().zip(y) {
        ss[c] += (v - means[c]).powi(2);
    }
    (n, means, ss)
}

fn f_score(c: &Columns, j: usize) -> f64 {
    let col = &c.cols[j];
    let (n, means, ss) = class_moments(col, &c.y, c.n_classes);
    let present: Vec<usize> = (0..c.n_classes).filter(|&k| n[k] > 0).collect();
    let total = col.len();
    if present.len() < 2 || total <= present.len() {
        return 0.0;
    }
    let grand = col.iter().sum::<f64>() / total as f64;
    let ssb: f64 = present.iter().map(|&k| n[k] as f64 * (means[k] - grand).powi(2)).sum();
    let ssw: f64 = present.iter().map(|&k| ss[k]).sum();
    let msb = ssb / (present.len() - 1) as f64;
    let msw = ssw / (total - present.len()) as f64;
    ratio(msb, msw)
}

fn ratio(num: f64, den: f64) -> f64 {
    let tiny = 1e-24 * num.abs().max(1e-300);
    if num <= 0.0 {
        0.0
    } else if den <= tiny {
        SEPARATION_CAP
    } else {
        (num / den).min(SEPARATION_CAP)
    }
}

/// Population variance of the class means over the mean within-class
/// population variance, both unweighted across classes.
fn variance_ratio(c: &Columns, j: usize) -> f64 {
    let (n, means, ss) = class_moments(&c.cols[j], &c.y, c.n_classes);
    let present: Vec<usize> = (0..c.n_classes).filter(|&k| n[k] > 0).collect();
    if present.len() < 2 {
        return 0.0;
    }
    let k = present.len() as f64;
    let mm = present.iter().map(|&i| means[i]).sum::<f64>() / k;
    let between = present.iter().map(|&i| (means[i] - mm).powi(2)).sum::<f64>() / k;
    let within = present.iter().map(|&i| ss[i] / n[i] as f64).sum::<f64>() / k;
    ratio(between, within)
}

fn contingency(a: &[usize], ka: usize, b: &[usize], kb: usize) -> Vec<f64> {
    let mut t = vec![0.0; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        t[x * kb + y] += 1.0;
    }
    t
}

/// Mutual information (nats) of two discrete variables.
pub fn mutual_information(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    let t = contingency(a, ka, b, kb);
    let ra: Vec<f64> = (0..ka).map(|i| (0..kb).map(|j| t[i * kb + j]).sum()).collect();
    let rb: Vec<f64> = (0..kb).map(|j| (0..ka).map(|i| t[i * kb + j]).sum()).collect();
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let o = t[i * kb + j];
            if o > 0.0 {
                mi += o / n * (o * n / (ra[i] * rb[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

fn chi2(c: &Columns, bins: &[usize]) -> f64 {
    let k = c.n_classes;
    let n = bins.len() as f64;
    let t = contingency(bins, N_BINS, &c.y, k);
    let rb: Vec<f64> = (0..N_BINS).map(|i| (0..k).map(|j| t[i * k + j]).sum()).collect();
    let rc: Vec<f64> = (0..k).map(|j| (0..N_BINS).map(|i| t[i * k + j]).sum()).collect();
    let mut x2 = 0.0;
    for i in 0..N_BINS {
        for j in 0..k {
            let e = rb[i] * rc[j] / n;
            if e > 0.0 {
                x2 += (t[i * k + j] - e).powi(2) / e;
            }
        }
    }
    x2
}

fn relieff(c: &Columns) -> Vec<f64> {
    let n = c.y.len();
    let p = c.cols.len();
    let k = c.n_classes;
    // per-feature scaled differences
    let scaled: Vec<Vec<f64>> = c
        .cols
        .iter()
        .map(|col| {
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let w = hi - lo;
            col.iter().map(|&v| if w > 0.0 { (v - lo) / w } else { 0.0 }).collect()
        })
        .collect();
    let mut dist = vec![0.0; n * n];
    for col in &scaled {
        for i in 0..n {
            for j in i + 1..n {
                let d = (col[i] - col[j]).abs();
                dist[i * n + j] += d;
                dist[j * n + i] += d;
            }
        }
    }
    let mut prior = vec![0.0; k];
    for &y in &c.y {
        prior[y] += 1.0 / n as f64;
    }
    let mut w = vec![0.0; p];
    for i in 0..n {
        let ci = c.y[i];
        for cls in 0..k {
            let mut cand: Vec<usize> = (0..n).filter(|&j| j != i && c.y[j] == cls).collect();
            if cand.is_empty() {
                continue;
            }
            cand.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
            cand.truncate(RELIEFF_K);
            let m = cand.len() as f64;
            let weight = if cls == ci {
                -1.0
            } else if prior[ci] < 1.0 {
                prior[cls] / (1.0 - prior[ci])
            } else {
                0.0
            };
            for (f, col) in scaled.iter().enumerate() {
                let s: f64 = cand.iter().map(|&j| (col[i] - col[j]).abs()).sum();
                w[f] += weight * s / (m * n as f64);
            }
        }
    }
    for (f, v) in w.iter_mut().enumerate() {
        if c.constant[f] {
            *v = 0.0;
        }
    }
    w
}

/// Greedy mutual-information-difference ordering. The first pick scores
/// `n`, the next `n - 1`, and so on; constant features score 0.
fn mrmr(c: &Columns, bins: &[Vec<usize>]) -> Vec<f64> {
    let p = bins.len();
    let rel: Vec<f64> = bins.iter().map(|b| mutual_information(b, N_BINS, &c.y, c.n_classes)).collect();
    let mut remaining: Vec<usize> = (0..p).filter(|&j| !c.constant[j]).collect();
    let mut red_sum = vec![0.0; p];
    let mut scores = vec![0.0; p];
    let mut picked = 0usize;
    while !remaining.is_empty() {
        let crit = |j: usize| {
            if picked == 0 {
                rel[j]
            } else {
                rel[j] - red_sum[j] / picked as f64
            }
        };
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| crit(a).total_cmp(&crit(b)).then(b.cmp(&a)))
            .unwrap();
        scores[best] = (p - picked) as f64;
        remaining.remove(pos);
        picked += 1;
        for &j in &remaining {
            red_sum[j] += mutual_information(&bins[j], N_BINS, &bins[best], N_BINS);
        }
    }
    scores
}

pub(crate) fn score_columns(method: Method, c: &Columns) -> Vec<f64> {
    let p = c.cols.len();
    let raw: Vec<f64> = match method {
        Method::FScore => (0..p).map(|j| f_score(c, j)).collect(),
        Method::VarianceRatio => (0..p).map(|j| variance_ratio(c, j)).collect(),
        Method::Chi2 => (0..p).map(|j| chi2(c, &c.bins(j))).collect(),
        Method::MutualInfo => (0..p).map(|j| mutual_information(&c.bins(j), N_BINS, &c.y, c.n_classes)).collect(),
        Method::Relieff => relieff(c),
        Method::Mrmr => {
            let bins: Vec<Vec<usize>> = (0..p).map(|j| c.bins(j)).collect();
            mrmr(c, &bins)
        }
    };
    raw.into_iter()
        .zip(&c.constant)
        .map(|(s, &k)| if k || !s.is_finite() { 0.0 } else { s })
        .collect()
}

pub fn score_features(method: Method, data: &Dataset) -> Result<SelectorScore, SelectError> {
    if data.x.iter().any(|v| !v.is_finite()) {
        return Err(SelectError::NonFinite);
    }
    if data.present_classes() < 2 {
        return Err(SelectError::TooFewClasses(data.present_classes()));
    }
    let scores = score_columns(method, &Columns::new(data));
    let ranks = ranks_from_scores(&scores);
    Ok(SelectorScore { method, scores, ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut x = Vec::new();
        for &c in &y {
            x.push(c as f64);
            x.push(rng.random::<f64>());
            x.push(3.5);
            x.push(rng.random::<f64>() + 0.3 * c as f64);
        }
        Dataset::new(4, 3, x, y)
    }

    #[test]
    fn label_feature_wins_and_constant_scores_zero() {
        let d = data(90, 1);
        for m in Method::ALL {
            let s = score_features(m, &d).unwrap();
            assert_eq!(s.ranks[0], 1, "{m}");
            assert_eq!(s.scores[2], 0.0, "{m}");
            assert!(s.scores.iter().all(|v| v.is_finite()));
            let mut r = s.ranks.clone();
            r.sort_unstable();
            assert_eq!(r, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn mutual_information_of_identical_variables_is_entropy() {
        let a = [0, 1, 2, 0, 1, 2];
        let mi = mutual_information(&a, 3, &a, 3);
        assert!((mi - 3f64.ln()).abs() < 1e-12);
        let b = [0, 0, 0, 1, 1, 1];
        let c = [0, 1, 0, 1, 0, 1];
        assert!(mutual_information(&b, 2, &c, 2) < 0.06);
    }

    #[test]
    fn discretize_edges() {
        assert_eq!(discretize(&[0.0, 0.5, 1.0]), vec![0, 5, 9]);
        assert_eq!(discretize(&[2.0, 2.0]), vec![0, 0]);
    }
}
