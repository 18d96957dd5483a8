//! Hypothesis tests over the functional table.
//!
//! Each feature gets a one-way ANOVA across risk levels (Bonferroni-corrected
//! over the feature count), Welch post-hoc tests for the three level pairs,
//! a type-III risk × identity ANOVA and a subject-level repeated-measures
//! test. Per-feature failures are recorded on the row and never abort the
//! suite.

pub mod dist;
pub mod factorial;
pub mod hypothesis;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use factorial::{anova_two_factor_type3, repeated_measures_subject_level, EffectTest, TwoFactorResult};
pub use hypothesis::{anova_oneway, direction_order, ttest_two_tailed, AnovaResult, Direction, StatFlag, TTestResult};

use crate::functionals::FeatureTable;
use crate::ingest::RiskLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has {size} observations, need at least 2")]
    GroupTooSmall { group: usize, size: usize },
    #[error("rank-deficient design: {0}")]
    RankDeficientDesign(String),
    #[error("risk group {group} has {count} subjects, need at least 2")]
    FewerThanTwoSubjectsPerGroup { group: usize, count: usize },
    #[error("values and factor lengths differ")]
    LengthMismatch,
    #[error("risk level {0} has fewer than two segments")]
    MissingLevel(char),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alpha {
    pub alpha: f64,
    pub n_tests: usize,
    pub corrected: f64,
}

impl Alpha {
    pub fn bonferroni(alpha: f64, n_tests: usize) -> Self {
        Self {
            alpha,
            n_tests,
            corrected: alpha / n_tests.max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Family alpha before Bonferroni correction.
    pub alpha: f64,
    /// Uncorrected level for the two-factor flags.
    pub two_factor_alpha: f64,
    /// Uncorrected level for the subject-level test.
    pub rm_alpha: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            two_factor_alpha: 0.05,
            rm_alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

/// Level pairs in report order.
pub const PAIRS: [(RiskLevel, RiskLevel); 3] = [
    (RiskLevel::Low, RiskLevel::High),
    (RiskLevel::Medium, RiskLevel::High),
    (RiskLevel::Low, RiskLevel::Medium),
];

pub fn pair_name(pair: (RiskLevel, RiskLevel)) -> String {
    format!("{}{}", pair.0.code(), pair.1.code())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorSummary {
    pub risk_p: f64,
    pub subject_p: f64,
    pub interaction_p: f64,
    pub subject_free: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub anova_f: f64,
    pub anova_p: f64,
    pub anova_flag: Option<StatFlag>,
    pub raw_significant: bool,
    pub bonferroni_significant: bool,
    /// LH, MH, LM.
    pub pairwise: [Option<PairTest>; 3],
    pub means: [f64; 3],
    pub direction: Direction,
    pub two_factor: Option<TwoFactorSummary>,
    pub rm_f: Option<f64>,
    pub rm_p: Option<f64>,
    pub significant: bool,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: Alpha,
    pub config: StatsConfig,
    pub features: Vec<FeatureStat>,
    /// Bonferroni ANOVA pass and at least one significant pair.
    pub significant: Vec<String>,
    pub subject_free: Vec<String>,
    pub repeated_measures: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn run_stat_suite(table: &FeatureTable, cfg: &StatsConfig) -> Result<StatReport, StatsError> {
    let labels: Vec<usize> = table.rows.iter().map(|r| r.risk_label.index()).collect();
    let mut subject_codes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &table.rows {
        let next = subject_codes.len();
        subject_codes.entry(r.subject_id.as_str()).or_insert(next);
    }
    let subjects: Vec<usize> = table.rows.iter().map(|r| subject_codes[r.subject_id.as_str()]).collect();
    let by_level: Vec<Vec<usize>> = (0..3).map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect()).collect();
    for (c, idx) in by_level.iter().enumerate() {
        if idx.len() < 2 {
            return Err(StatsError::MissingLevel(RiskLevel::from_index(c).unwrap().code()));
        }
    }
    let alpha = Alpha::bonferroni(cfg.alpha, table.n_features());
    let mut features = Vec::with_capacity(table.n_features());
    for (j, name) in table.names.iter().enumerate() {
        let col = table.column(j);
        let groups: Vec<Vec<f64>> = by_level.iter().map(|idx| idx.iter().map(|&i| col[i]).collect()).collect();
        features.push(feature_stat(name, &col, &groups, &labels, &subjects, &alpha, cfg));
    }
    let pick = |f: &dyn Fn(&FeatureStat) -> bool| features.iter().filter(|s| f(s)).map(|s| s.name.clone()).collect();
    let significant = pick(&|s| s.significant);
    let subject_free = pick(&|s| s.two_factor.as_ref().is_some_and(|t| t.subject_free));
    let repeated_measures = pick(&|s| s.rm_p.is_some_and(|p| p <= cfg.rm_alpha));
    Ok(StatReport {
        alpha,
        config: cfg.clone(),
        features,
        significant,
        subject_free,
        repeated_measures,
    })
}

fn feature_stat(
    name: &str,
    col: &[f64],
    groups: &[Vec<f64>],
    labels: &[usize],
    subjects: &[usize],
    alpha: &Alpha,
    cfg: &StatsConfig,
) -> FeatureStat {
    let mut errors = Vec::new();
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    let (anova_f, anova_p, anova_flag) = match anova_oneway(&refs) {
        Ok(r) => (r.f, r.p, r.flag),
        Err(e) => {
            errors.push(format!("anova: {e}"));
            (f64::NAN, f64::NAN, None)
        }
    };
    let bonferroni_significant = anova_p <= alpha.corrected;
    let pairwise = PAIRS.map(|(x, y)| match ttest_two_tailed(&groups[x.index()], &groups[y.index()]) {
        Ok(t) => Some(PairTest {
            t: t.t,
            p: t.p,
            significant: t.p <= alpha.corrected,
        }),
        Err(e) => {
            errors.push(format!("t-test {}{}: {e}", x.code(), y.code()));
            None
        }
    });
    let means = [mean(&groups[0]), mean(&groups[1]), mean(&groups[2])];
    let two_factor = match anova_two_factor_type3(col, labels, subjects) {
        Ok(r) => Some(TwoFactorSummary {
            risk_p: r.risk.p,
            subject_p: r.subject.p,
            interaction_p: r.interaction.p,
            subject_free: r.subject_free(cfg.two_factor_alpha),
        }),
        Err(e) => {
            errors.push(format!("two-factor: {e}"));
            None
        }
    };
    let (rm_f, rm_p) = match repeated_measures_subject_level(col, labels, subjects) {
        Ok(r) => (Some(r.f), Some(r.p)),
        Err(e) => {
            errors.push(format!("repeated measures: {e}"));
            (None, None)
        }
    };
    let significant = bonferroni_significant && pairwise.iter().flatten().any(|p| p.significant);
    FeatureStat {
        name: name.to_string(),
        anova_f,
        anova_p,
        anova_flag,
        raw_significant: anova_p <= alpha.alpha,
        bonferroni_significant,
        pairwise,
        means,
        direction: direction_order(means),
        two_factor,
        rm_f,
        rm_p,
        significant,
        errors,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl StatReport {
    pub fn feature(&self, name: &str) -> Option<&FeatureStat> {
        self.features.iter().find(|f| f.name == name)
    }

    /// One row per feature; `preamble` lines are written first as `# ` comments.
    pub fn write_csv<W: Write>(&self, w: W, preamble: &[String]) -> Result<(), StatsError> {
        let io = |e: std::io::Error| StatsError::Io(e.to_string());
        let mut w = w;
        for line in preamble {
            writeln!(w, "# {line}").map_err(io)?;
        }
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["feature", "anova_f", "anova_p", "bonferroni_significant"].into_iter().map(String::from).collect::<Vec<_>>();
        for pair in PAIRS {
            let n = pair_name(pair);
            header.extend([format!("{n}_t"), format!("{n}_p"), format!("{n}_significant")]);
        }
        header.extend(
            [
                "mean_L",
                "mean_M",
                "mean_H",
                "direction",
                "direction_tie",
                "risk_p",
                "subject_p",
                "interaction_p",
                "subject_free",
                "rm_f",
                "rm_p",
                "significant",
                "errors",
            ]
            .map(String::from),
        );
        let csv_err = |e: csv::Error| StatsError::Io(e.to_string());
        cw.write_record(&header).map_err(csv_err)?;
        for f in &self.features {
            let mut rec = vec![
                f.name.clone(),
                format!("{}", f.anova_f),
                format!("{}", f.anova_p),
                f.bonferroni_significant.to_string(),
            ];
            for p in &f.pairwise {
                match p {
                    Some(p) => rec.extend([format!("{}", p.t), format!("{}", p.p), p.significant.to_string()]),
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            rec.extend(f.means.iter().map(|m| format!("{m}")));
            rec.push(f.direction.ordering.clone());
            rec.push(f.direction.tie.to_string());
            let tf = f.two_factor.as_ref();
            rec.push(opt(tf.map(|t| t.risk_p)));
            rec.push(opt(tf.map(|t| t.subject_p)));
            rec.push(opt(tf.map(|t| t.interaction_p)));
            rec.push(tf.map_or_else(String::new, |t| t.subject_free.to_string()));
            rec.push(opt(f.rm_f));
            rec.push(opt(f.rm_p));
            rec.push(f.significant.to_string());
            rec.push(f.errors.join("; "));
            cw.write_record(&rec).map_err(csv_err)?;
        }
        cw.flush().map_err(io)?;
        Ok(())
    }

    /// Significant-feature lists with direction strings.
    pub fn summary_json(&self) -> serde_json::Value {
        let annotate = |names: &[String]| -> Vec<serde_json::Value> {
            names
                .iter()
                .filter_map(|n| self.feature(n))
                .map(|f| {
                    serde_json::json!({
                        "feature": f.name,
                        "anova_p": f.anova_p,
                        "direction": f.direction.ordering,
                        "direction_tie": f.direction.tie,
                    })
                })
                .collect()
        };
        serde_json::json!({
            "alpha": self.alpha,
            "n_features": self.features.len(),
            "n_bonferroni_significant": self.features.iter().filter(|f| f.bonferroni_significant).count(),
            "significant": annotate(&self.significant),
            "subject_free": annotate(&self.subject_free),
            "repeated_measures": annotate(&self.repeated_measures),
        })
    }
}
