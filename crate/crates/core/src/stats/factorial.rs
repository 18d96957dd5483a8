//! Type-III two-factor ANOVA (risk × subject identity) and the subject-level
//! repeated-measures test.
//!
//! The identity factor is the subject's position among the subjects of its
//! own risk level, taken modulo the smallest per-level subject count so every
//! risk × identity cell is populated. Levels holding more subjects than that
//! put several subjects in one cell; a subject-within-cell term is added to
//! the full model so the residual stays the within-subject segment variance.
//! Sums of squares come from model comparison under sum-to-zero effect
//! coding, `SS(effect) = SSE(full without effect) - SSE(full)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dist::f_sf;
use super::hypothesis::{anova_oneway, AnovaResult};
use super::StatsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectTest {
    pub ss: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorResult {
    pub risk: EffectTest,
    pub subject: EffectTest,
    pub interaction: EffectTest,
    pub df_resid: f64,
    pub ss_resid: f64,
}

impl TwoFactorResult {
    /// Interaction significant while the identity main effect is not.
    pub fn subject_free(&self, alpha: f64) -> bool {
        self.interaction.p <= alpha && self.subject.p > alpha
    }
}

/// Sum-to-zero codes of `level` among `k` levels (`k - 1` entries).
fn effect_codes(level: usize, k: usize) -> Vec<f64> {
    (0..k - 1)
        .map(|j| {
            if level == j {
                1.0
            } else if level == k - 1 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Residual sum of squares and rank of a least-squares fit.
fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd.solve(y, tol).expect("svd computed with u and v");
    let r = y - x * beta;
    (r.norm_squared(), rank)
}

fn dense_codes(values: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<usize> = values.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let codes = values.iter().map(|v| uniq.binary_search(v).unwrap()).collect();
    (codes, uniq.len())
}

/// `values[i]` observed for risk level `risk[i]` on subject `subject[i]`.
/// Subject codes are global; each subject must belong to a single risk level.
pub fn anova_two_factor_type3(
    values: &[f64],
    risk: &[usize],
    subject: &[usize],
) -> Result<TwoFactorResult, StatsError> {
    let n = values.len();
    if risk.len() != n || subject.len() != n {
        return Err(StatsError::LengthMismatch);
    }
    let (a, ka) = dense_codes(risk);
    let (s, ns) = dense_codes(subject);
    let mut subj_level = vec![usize::MAX; ns];
    for i in 0..n {
        if subj_level[s[i]] == usize::MAX {
            subj_level[s[i]] = a[i];
        } else if subj_level[s[i]] != a[i] {
            return Err(StatsError::RankDeficientDesign("subject spans several risk levels".into()));
        }
    }
    // position of each subject within its level
    let mut per_level = vec![0usize; ka];
    let mut pos = vec![0usize; ns];
    for (sj, &lv) in subj_level.iter().enumerate() {
        pos[sj] = per_level[lv];
        per_level[lv] += 1;
    }
    let m = per_level.iter().copied().min().unwrap_or(0);
    if ka < 2 || m < 2 {
        return Err(StatsError::RankDeficientDesign(format!(
            "need at least 2 subjects in each of at least 2 risk levels (levels {ka}, min subjects {m})"
        )));
    }
    let kb = m;
    let b: Vec<usize> = (0..n).map(|i| pos[s[i]] % kb).collect();
    // subjects sharing each cell, in code order
    let mut cell_subjects: Vec<Vec<usize>> = vec![Vec::new(); ka * kb];
    for (sj, &lv) in subj_level.iter().enumerate() {
        cell_subjects[lv * kb + pos[sj] % kb].push(sj);
    }

    let n_a = ka - 1;
    let n_b = kb - 1;
    let n_ab = n_a * n_b;
    let n_s: usize = cell_subjects.iter().map(|c| c.len() - 1).sum();
    let p = 1 + n_a + n_b + n_ab + n_s;
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let ca = effect_codes(a[i], ka);
        let cb = effect_codes(b[i], kb);
        x[(i, 0)] = 1.0;
        let mut col = 1;
        for &v in &ca {
            x[(i, col)] = v;
            col += 1;
        }
        for &v in &cb {
            x[(i, col)] = v;
            col += 1;
        }
        for &va in &ca {
            for &vb in &cb {
                x[(i, col)] = va * vb;
                col += 1;
            }
        }
        for (c, subs) in cell_subjects.iter().enumerate() {
            let q = subs.len();
            if c == a[i] * kb + b[i] {
                let j = subs.iter().position(|&t| t == s[i]).unwrap();
                for (k, v) in effect_codes(j, q).into_iter().enumerate() {
                    x[(i, col + k)] = v;
                }
            }
            col += q - 1;
        }
    }
    let ybar = values.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, values.iter().map(|v| v - ybar));
    let (sse_full, rank_full) = fit(&x, &y);
    let df_resid = n as f64 - rank_full as f64;
    if df_resid < 1.0 {
        return Err(StatsError::RankDeficientDesign("no residual degrees of freedom".into()));
    }
    let scale = y.norm_squared().max(values.iter().map(|v| v * v).sum::<f64>() * 1e-300);
    let tiny = 1e-20 * scale.max(f64::MIN_POSITIVE);

    let test = |cols: std::ops::Range<usize>| -> Result<EffectTest, StatsError> {
        let keep: Vec<usize> = (0..p).filter(|c| !cols.contains(c)).collect();
        let xr = x.select_columns(&keep);
        let (sse_r, rank_r) = fit(&xr, &y);
        let df = (rank_full - rank_r) as f64;
        if df < 1.0 {
            return Err(StatsError::RankDeficientDesign("effect not estimable".into()));
        }
        let ss = (sse_r - sse_full).max(0.0);
        let (f, p) = if sse_full <= tiny {
            if ss <= tiny {
                (0.0, 1.0)
            } else {
                (f64::INFINITY, 0.0)
            }
        } else {
            let f = (ss / df) / (sse_full / df_resid);
            (f, f_sf(f, df, df_resid))
        };
        Ok(EffectTest { ss, df, f, p })
    };
    let risk_t = test(1..1 + n_a)?;
    let subj_t = test(1 + n_a..1 + n_a + n_b)?;
    let inter_t = test(1 + n_a + n_b..1 + n_a + n_b + n_ab)?;
    Ok(TwoFactorResult {
        risk: risk_t,
        subject: subj_t,
        interaction: inter_t,
        df_resid,
        ss_resid: sse_full,
    })
}

/// Aggregates segments to per-subject means, then runs a one-way ANOVA of
/// those means across risk levels.
pub fn repeated_measures_subject_level(
    values: &[f64],
    risk: &[usize],
    subject: &[usize],
) -> Result<AnovaResult, StatsError> {
    let n = values.len();
    if risk.len() != n || subject.len() != n {
        return Err(StatsError::LengthMismatch);
    }
    let (s, ns) = dense_codes(subject);
    let (a, ka) = dense_codes(risk);
    let mut sum = vec![0.0; ns];
    let mut cnt = vec![0usize; ns];
    let mut level = vec![0usize; ns];
    for i in 0..n {
        sum[s[i]] += values[i];
        cnt[s[i]] += 1;
        level[s[i]] = a[i];
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); ka];
    for j in 0..ns {
        groups[level[j]].push(sum[j] / cnt[j] as f64);
    }
    for (g, xs) in groups.iter().enumerate() {
        if xs.len() < 2 {
            return Err(StatsError::FewerThanTwoSubjectsPerGroup { group: g, count: xs.len() });
        }
    }
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    anova_oneway(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Balanced 2 risk × 2 identity design with `r` replicates per cell.
    fn design(r: usize, f: impl Fn(usize, usize, usize) -> f64) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
        let (mut v, mut a, mut s) = (vec![], vec![], vec![]);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..r {
                    v.push(f(i, j, k));
                    a.push(i);
                    s.push(10 * i + j);
                }
            }
        }
        (v, a, s)
    }

    fn noise(k: usize) -> f64 {
        [0.3, -0.2, 0.05, -0.15, 0.0][k % 5]
    }

    #[test]
    fn balanced_matches_classical_sums() {
        let (v, a, s) = design(5, |i, j, k| 1.0 + 0.7 * i as f64 + 0.3 * j as f64 + 0.2 * (i * j) as f64 + noise(k + 3 * j));
        let r = anova_two_factor_type3(&v, &a, &s).unwrap();
        // classical balanced two-way sums of squares
        let m = |i: Option<usize>, j: Option<usize>| {
            let xs: Vec<f64> = (0..v.len())
                .filter(|&t| i.is_none_or(|i| a[t] == i) && j.is_none_or(|j| s[t] % 10 == j))
                .map(|t| v[t])
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let g = m(None, None);
        let ssa: f64 = (0..2).map(|i| 10.0 * (m(Some(i), None) - g).powi(2)).sum();
        let ssb: f64 = (0..2).map(|j| 10.0 * (m(None, Some(j)) - g).powi(2)).sum();
        let ssab: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| 5.0 * (m(Some(i), Some(j)) - m(Some(i), None) - m(None, Some(j)) + g).powi(2))
            .sum();
        assert!((r.risk.ss - ssa).abs() < 1e-10);
        assert!((r.subject.ss - ssb).abs() < 1e-10);
        assert!((r.interaction.ss - ssab).abs() < 1e-10);
        assert_eq!(r.df_resid, 16.0);
    }

    #[test]
    fn pure_risk_effect() {
        let (v, a, s) = design(6, |i, _, k| 2.0 * i as f64 + noise(k));
        let r = anova_two_factor_type3(&v, &a, &s).unwrap();
        assert!(r.risk.p < 0.01);
        assert!(r.subject.p > 0.5);
    }

    #[test]
    fn pure_subject_effect_is_not_subject_free() {
        let (v, a, s) = design(6, |_, j, k| 2.0 * j as f64 + noise(k));
        let r = anova_two_factor_type3(&v, &a, &s).unwrap();
        assert!(r.subject.p < 0.01);
        assert!(!r.subject_free(0.05));
    }

    #[test]
    fn constant_response_gives_unit_p() {
        let (v, a, s) = design(3, |_, _, _| 4.2);
        let r = anova_two_factor_type3(&v, &a, &s).unwrap();
        for e in [&r.risk, &r.subject, &r.interaction] {
            assert_eq!(e.p, 1.0);
            assert_eq!(e.ss, 0.0);
        }
    }

    #[test]
    fn unbalanced_cohort_layout() {
        // 4 / 4 / 2 subjects, uneven segment counts
        let mut v = vec![];
        let (mut a, mut s) = (vec![], vec![]);
        let counts = [4, 4, 2];
        let mut sid = 0;
        for (lv, &c) in counts.iter().enumerate() {
            for q in 0..c {
                for k in 0..(5 + q + lv) {
                    v.push(lv as f64 + 0.1 * q as f64 + noise(k + q));
                    a.push(lv);
                    s.push(sid);
                }
                sid += 1;
            }
        }
        let r = anova_two_factor_type3(&v, &a, &s).unwrap();
        assert_eq!(r.risk.df, 2.0);
        assert_eq!(r.subject.df, 1.0);
        assert_eq!(r.interaction.df, 2.0);
        assert_eq!(r.df_resid, (v.len() - 10) as f64);
        assert!(r.risk.p < 1e-6);
    }

    #[test]
    fn single_subject_level_is_rank_deficient() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let a = [0, 0, 0, 1, 1, 1];
        let s = [0, 0, 1, 2, 2, 2];
        assert!(matches!(
            anova_two_factor_type3(&v, &a, &s),
            Err(StatsError::RankDeficientDesign(_))
        ));
    }

    #[test]
    fn repeated_measures_aggregation() {
        let a = [0, 0, 0, 1, 1, 1, 1];
        let s = [0, 0, 1, 2, 2, 3, 3];
        let v = [1.0, 3.0, 4.0, 2.0, 2.0, 5.0, 3.0];
        let r = repeated_measures_subject_level(&v, &a, &s).unwrap();
        // subject means 2, 4 | 2, 4
        assert_eq!(r.f, 0.0);
        // more segments with the same subject means leave the test unchanged
        let v2 = [1.0, 3.0, 4.0, 2.0, 2.0, 5.0, 3.0, 4.0, 4.0];
        let a2 = [0, 0, 0, 1, 1, 1, 1, 0, 1];
        let s2 = [0, 0, 1, 2, 2, 3, 3, 1, 3];
        assert_eq!(repeated_measures_subject_level(&v2, &a2, &s2).unwrap(), r);
        assert!(matches!(
            repeated_measures_subject_level(&[1.0, 2.0, 3.0], &[0, 0, 1], &[0, 1, 2]),
            Err(StatsError::FewerThanTwoSubjectsPerGroup { group: 1, count: 1 })
        ));
    }
}
