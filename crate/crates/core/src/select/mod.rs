//! Stability-validated multi-method feature selection.
//!
//! Every method scores features on the training side of each fold of a
//! repeated stratified k-fold. Stability is measured two ways:
//!
//! * JI: mean pairwise Jaccard similarity of a method's top-10% sets across
//!   all fold-runs.
//! * BTS: for a (method, feature) pair, the fraction of (fold, run,
//!   threshold) triples whose top-t set contains the feature. A feature's
//!   BTS is the mean over the stable methods (JI at or above `ji_min`).
//!
//! A feature enters the final set when at least `m_min` stable methods
//! select it with BTS of at least `bts_min` and its own BTS also clears
//! `bts_min`. Near-duplicates (|r| above `corr_max`) are pruned keeping the
//! higher-BTS member, and the result is capped at 10% of the features by
//! mean rank.

pub mod scores;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scores::{discretize, mutual_information, ranks_from_scores, score_features, Method, SelectorScore};

use crate::dataset::Dataset;
use crate::functionals::FeatureTable;
use crate::seed;
use crate::split::{complement, stratified_kfold, SplitError};
use crate::stats::{direction_order, Direction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("feature matrix has non-finite values")]
    NonFinite,
    #[error("unknown selector method {0:?}")]
    UnknownMethod(String),
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("{0} feature names for {1} columns")]
    Shape(usize, usize),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub methods: Vec<Method>,
    pub k_folds: usize,
    pub runs: usize,
    pub threshold_grid: Vec<f64>,
    /// Top fraction used for the Jaccard index and for the final cap.
    pub top_fraction: f64,
    pub bts_min: f64,
    pub ji_min: f64,
    /// Defaults to half of the methods, rounded up.
    pub m_min: Option<usize>,
    pub corr_max: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            k_folds: 10,
            runs: 2,
            threshold_grid: vec![0.05, 0.10, 0.15, 0.20],
            top_fraction: 0.10,
            bts_min: 0.5,
            ji_min: 0.3,
            m_min: None,
            corr_max: 0.95,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("methods is empty");
        }
        if self.k_folds < 2 || self.runs < 1 {
            return bad("k_folds must be >= 2 and runs >= 1");
        }
        if self.threshold_grid.is_empty() || self.threshold_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return bad("threshold_grid values must lie in (0, 1]");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.bts_min) || !(0.0..=1.0).contains(&self.ji_min) {
            return bad("bts_min and ji_min must lie in [0, 1]");
        }
        if self.m_min.is_some_and(|m| m == 0 || m > self.methods.len()) {
            return bad("m_min must lie in 1..=methods");
        }
        Ok(())
    }

    pub fn effective_m_min(&self) -> usize {
        self.m_min.unwrap_or(self.methods.len().div_ceil(2))
    }
}

/// `ceil(fraction * n)` guarded against representation error.
pub fn top_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStability {
    pub method: Method,
    pub jaccard_index: f64,
    pub stable: bool,
    /// Per feature: fraction of fold-runs with the feature in the top set.
    pub selection_frequency: Vec<f64>,
    /// Per feature, over (fold, run, threshold).
    pub bts: Vec<f64>,
    pub mean_rank: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub feature_names: Vec<String>,
    pub config: SelectConfig,
    pub methods: Vec<MethodStability>,
    pub bts: Vec<f64>,
    pub votes: Vec<usize>,
    pub mean_rank: Vec<f64>,
    pub final_set: Vec<String>,
    /// Candidates removed as near-duplicates: (dropped, kept).
    pub pruned: Vec<(String, String)>,
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn stability_run(
    data: &Dataset,
    names: &[String],
    cfg: &SelectConfig,
    master_seed: u64,
) -> Result<SelectionReport, SelectError> {
    cfg.validate()?;
    let p = data.n_features;
    if names.len() != p {
        return Err(SelectError::Shape(names.len(), p));
    }
    if data.x.iter().any(|v| !v.is_finite()) {
        return Err(SelectError::NonFinite);
    }
    if data.present_classes() < 2 {
        return Err(SelectError::TooFewClasses(data.present_classes()));
    }
    let n_top = top_count(cfg.top_fraction, p);
    let thresholds: Vec<usize> = cfg.threshold_grid.iter().map(|&t| top_count(t, p)).collect();
    let nm = cfg.methods.len();
    let mut top_sets: Vec<Vec<Vec<usize>>> = vec![Vec::new(); nm];
    let mut bts_hits = vec![vec![0usize; p]; nm];
    let mut freq_hits = vec![vec![0usize; p]; nm];
    let mut rank_sum = vec![vec![0.0; p]; nm];
    let mut fold_runs = 0usize;
    for run in 0..cfg.runs {
        let mut rng = seed::rng(master_seed, &[seed::tag_str("select"), run as u64]);
        let folds = stratified_kfold(data, cfg.k_folds, &mut rng)?;
        for fold in &folds {
            let train = data.subset(&complement(data.len(), fold));
            let cols = scores::Columns::new(&train);
            for (mi, &m) in cfg.methods.iter().enumerate() {
                let s = scores::score_columns(m, &cols);
                let order = scores::order_by_score(&s);
                for (r, &j) in order.iter().enumerate() {
                    rank_sum[mi][j] += (r + 1) as f64;
                }
                for &t in &thresholds {
                    for &j in &order[..t] {
                        bts_hits[mi][j] += 1;
                    }
                }
                let mut top: Vec<usize> = order[..n_top].to_vec();
                top.sort_unstable();
                for &j in &top {
                    freq_hits[mi][j] += 1;
                }
                top_sets[mi].push(top);
            }
            fold_runs += 1;
        }
    }
    let denom_bts = (fold_runs * thresholds.len()) as f64;
    let methods: Vec<MethodStability> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let sets = &top_sets[mi];
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..sets.len() {
                for b in a + 1..sets.len() {
                    sum += jaccard(&sets[a], &sets[b]);
                    pairs += 1;
                }
            }
            let ji = if pairs == 0 { 1.0 } else { sum / pairs as f64 };
            MethodStability {
                method: m,
                jaccard_index: ji,
                stable: ji >= cfg.ji_min,
                selection_frequency: freq_hits[mi].iter().map(|&h| h as f64 / fold_runs as f64).collect(),
                bts: bts_hits[mi].iter().map(|&h| h as f64 / denom_bts).collect(),
                mean_rank: rank_sum[mi].iter().map(|&r| r / fold_runs as f64).collect(),
            }
        })
        .collect();
    let stable: Vec<&MethodStability> = methods.iter().filter(|m| m.stable).collect();
    let pool: Vec<&MethodStability> = if stable.is_empty() { methods.iter().collect() } else { stable.clone() };
    let bts: Vec<f64> = (0..p).map(|j| pool.iter().map(|m| m.bts[j]).sum::<f64>() / pool.len() as f64).collect();
    let votes: Vec<usize> = (0..p).map(|j| stable.iter().filter(|m| m.bts[j] >= cfg.bts_min).count()).collect();
    let mean_rank: Vec<f64> = (0..p).map(|j| methods.iter().map(|m| m.mean_rank[j]).sum::<f64>() / nm as f64).collect();

    let m_min = cfg.effective_m_min();
    let mut candidates: Vec<usize> = (0..p).filter(|&j| votes[j] >= m_min && bts[j] >= cfg.bts_min).collect();
    // higher BTS first so the pruning keeps the more stable member
    candidates.sort_by(|&a, &b| {
        bts[b]
            .total_cmp(&bts[a])
            .then(mean_rank[a].total_cmp(&mean_rank[b]))
            .then(names[a].cmp(&names[b]))
    });
    let columns: BTreeMap<usize, Vec<f64>> = candidates.iter().map(|&j| (j, data.column(j))).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut pruned = Vec::new();
    for &j in &candidates {
        match kept.iter().find(|&&k| pearson(&columns[&j], &columns[&k]).abs() > cfg.corr_max) {
            Some(&k) => pruned.push((names[j].clone(), names[k].clone())),
            None => kept.push(j),
        }
    }
    kept.sort_by(|&a, &b| mean_rank[a].total_cmp(&mean_rank[b]).then(names[a].cmp(&names[b])));
    kept.truncate(n_top);
    Ok(SelectionReport {
        feature_names: names.to_vec(),
        config: cfg.clone(),
        methods,
        bts,
        votes,
        mean_rank,
        final_set: kept.iter().map(|&j| names[j].clone()).collect(),
        pruned,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedFeature {
    pub name: String,
    pub bts: f64,
    pub mean_rank: f64,
    /// Group means in L, M, H order.
    pub means: [f64; 3],
    pub direction: Direction,
}

/// Group means and direction strings for each selected feature.
pub fn explain_selection(report: &SelectionReport, table: &FeatureTable) -> Vec<ExplainedFeature> {
    report
        .final_set
        .iter()
        .filter_map(|name| {
            let j = table.index_of(name)?;
            let r = report.feature_names.iter().position(|n| n == name)?;
            let mut sum = [0.0; 3];
            let mut cnt = [0usize; 3];
            for row in &table.rows {
                let c = row.risk_label.index();
                sum[c] += row.values[j];
                cnt[c] += 1;
            }
            let means = [0, 1, 2].map(|c| if cnt[c] > 0 { sum[c] / cnt[c] as f64 } else { f64::NAN });
            Some(ExplainedFeature {
                name: name.clone(),
                bts: report.bts[r],
                mean_rank: report.mean_rank[r],
                means,
                direction: direction_order(means),
            })
        })
        .collect()
}

impl SelectionReport {
    /// One row per feature with per-method BTS and selection frequency.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &[String]) -> Result<(), SelectError> {
        let io = |e: std::io::Error| SelectError::Io(e.to_string());
        for line in preamble {
            writeln!(w, "# {line}").map_err(io)?;
        }
        let mut cw = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| SelectError::Io(e.to_string());
        let mut header = vec!["feature".to_string(), "bts".into(), "votes".into(), "mean_rank".into(), "selected".into()];
        for m in &self.methods {
            header.push(format!("{}_bts", m.method));
            header.push(format!("{}_frequency", m.method));
        }
        cw.write_record(&header).map_err(csv_err)?;
        for (j, name) in self.feature_names.iter().enumerate() {
            let mut rec = vec![
                name.clone(),
                format!("{}", self.bts[j]),
                self.votes[j].to_string(),
                format!("{}", self.mean_rank[j]),
                self.final_set.contains(name).to_string(),
            ];
            for m in &self.methods {
                rec.push(format!("{}", m.bts[j]));
                rec.push(format!("{}", m.selection_frequency[j]));
            }
            cw.write_record(&rec).map_err(csv_err)?;
        }
        cw.flush().map_err(io)?;
        Ok(())
    }
}
