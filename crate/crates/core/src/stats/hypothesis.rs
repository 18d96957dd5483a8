//! One-way ANOVA, Welch's t-test and group-mean direction strings.

use serde::{Deserialize, Serialize};

use super::dist::{f_sf, t_two_tailed};
use super::StatsError;
use crate::ingest::RiskLevel;

/// Degenerate-input markers carried alongside a test result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatFlag {
    /// Groups differ but every group is constant: F = inf, p = 0.
    ZeroWithinVariance,
    /// All observations equal: F = 0, p = 1.
    ConstantResponse,
    /// Both samples constant.
    ZeroVarianceBoth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub flag: Option<StatFlag>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Classical one-way ANOVA, `F = MSB / MSW` on `(k - 1, N - k)` df.
pub fn anova_oneway(groups: &[&[f64]]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (g, xs) in groups.iter().enumerate() {
        if xs.len() < 2 {
            return Err(StatsError::GroupTooSmall { group: g, size: xs.len() });
        }
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let dfb = (k - 1) as f64;
    let dfw = (n - k) as f64;
    let scale = groups
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(1e-300);
    let tiny = 1e-24 * scale * scale * n as f64;
    let (f, p, flag) = if ssw <= tiny {
        if ssb <= tiny {
            (0.0, 1.0, Some(StatFlag::ConstantResponse))
        } else {
            (f64::INFINITY, 0.0, Some(StatFlag::ZeroWithinVariance))
        }
    } else {
        let f = (ssb / dfb) / (ssw / dfw);
        (f, f_sf(f, dfb, dfw), None)
    };
    Ok(AnovaResult {
        f,
        p,
        df_between: dfb,
        df_within: dfw,
        ss_between: ssb,
        ss_within: ssw,
        flag,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub mean_diff: f64,
    pub flag: Option<StatFlag>,
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's unequal-variance two-tailed t-test of `a` against `b`.
pub fn ttest_two_tailed(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    for (g, xs) in [a, b].iter().enumerate() {
        if xs.len() < 2 {
            return Err(StatsError::GroupTooSmall { group: g, size: xs.len() });
        }
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a, ma), sample_var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 <= 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTestResult {
            t,
            p,
            df: na + nb - 2.0,
            mean_diff: diff,
            flag: Some(StatFlag::ZeroVarianceBoth),
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTestResult {
        t,
        p: t_two_tailed(t, df),
        df,
        mean_diff: diff,
        flag: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    /// Levels by descending mean, e.g. `L>M>H`.
    pub ordering: String,
    pub tie: bool,
}

/// Orders the three risk levels by descending group mean. Exact ties keep
/// label order L, M, H and set `tie`.
pub fn direction_order(means: [f64; 3]) -> Direction {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let tie = means[idx[0]] == means[idx[1]] || means[idx[1]] == means[idx[2]];
    let ordering = idx
        .iter()
        .map(|&i| RiskLevel::from_index(i).unwrap().code().to_string())
        .collect::<Vec<_>>()
        .join(">");
    Direction { ordering, tie }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_identical_groups() {
        let g = [1.0, 2.0, 3.0];
        let r = anova_oneway(&[&g, &g, &g]).unwrap();
        assert_eq!(r.f, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn anova_hand_example() {
        let r = anova_oneway(&[&[1.0, 2.0], &[2.0, 3.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(r.ss_between, 4.0);
        assert_eq!(r.ss_within, 1.5);
        assert_eq!(r.f, 4.0);
        assert_eq!((r.df_between, r.df_within), (2.0, 3.0));
    }

    #[test]
    fn anova_degenerate_flags() {
        let r = anova_oneway(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert_eq!(r.flag, Some(StatFlag::ZeroWithinVariance));
        assert_eq!(r.p, 0.0);
        let r = anova_oneway(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(r.flag, Some(StatFlag::ConstantResponse));
        assert_eq!(r.p, 1.0);
        assert!(anova_oneway(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    #[test]
    fn welch_cases() {
        let a = [0.3, 1.2, 2.2, 0.1];
        let r = ttest_two_tailed(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = ttest_two_tailed(&[0.0; 4], &[1.0, 1.0, 1.0, 0.99]).unwrap();
        assert!((r.t + 399.0).abs() < 1e-9, "t = {}", r.t);
        assert!((r.df - 3.0).abs() < 1e-12);
        assert!(r.p < 1e-4);
        let b = [2.0, 2.5, 1.0];
        let (ab, ba) = (ttest_two_tailed(&a, &b).unwrap(), ttest_two_tailed(&b, &a).unwrap());
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
        let z = ttest_two_tailed(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.flag, Some(StatFlag::ZeroVarianceBoth));
    }

    #[test]
    fn direction_strings() {
        assert_eq!(direction_order([0.9, 0.5, 0.1]).ordering, "L>M>H");
        assert_eq!(direction_order([0.2, 0.7, 0.6]).ordering, "M>H>L");
        let t = direction_order([0.4, 0.4, 0.4]);
        assert_eq!(t.ordering, "L>M>H");
        assert!(t.tie);
        assert!(!direction_order([0.9, 0.5, 0.1]).tie);
    }
}
