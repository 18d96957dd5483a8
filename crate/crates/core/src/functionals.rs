//! Segment functionals: ten statistics of each channel and of its first and
//! second index-domain differences, 30 values per channel.
//!
//! Conventions: population moments; skewness and excess kurtosis are 0 when
//! the variance is below 1e-12; peaks and valleys are strict local extrema
//! with plateaus counted once. Differences never cross invalid gaps, and
//! extrema are counted within each contiguous valid run.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RiskLevel;
use crate::postproc::Segment;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("empty series")]
    EmptySeries,
    #[error("series of length {len} too short for order-{order} difference")]
    TooShort { len: usize, order: usize },
    #[error("derivative order must be 1 or 2, got {0}")]
    BadOrder(usize),
    #[error("feature table: {0}")]
    Table(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const STAT_NAMES: [&str; 10] = [
    "max", "min", "range", "mean", "var", "std", "skew", "kurt", "peaks", "valleys",
];

pub const ORDERS: [&str; 3] = ["d0", "d1", "d2"];

const VAR_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatBlock {
    pub max: f64,
    pub min: f64,
    pub range: f64,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub n_peaks: f64,
    pub n_valleys: f64,
}

impl StatBlock {
    pub const ZERO: StatBlock = StatBlock {
        max: 0.0,
        min: 0.0,
        range: 0.0,
        mean: 0.0,
        variance: 0.0,
        std: 0.0,
        skewness: 0.0,
        kurtosis: 0.0,
        n_peaks: 0.0,
        n_valleys: 0.0,
    };

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.max,
            self.min,
            self.range,
            self.mean,
            self.variance,
            self.std,
            self.skewness,
            self.kurtosis,
            self.n_peaks,
            self.n_valleys,
        ]
    }
}

/// First or second differences of one contiguous sequence.
pub fn derivative(series: &[f64], order: usize) -> Result<Vec<f64>, FunctionalError> {
    if !(1..=2).contains(&order) {
        return Err(FunctionalError::BadOrder(order));
    }
    if series.len() < order + 1 {
        return Err(FunctionalError::TooShort {
            len: series.len(),
            order,
        });
    }
    let mut d: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    if order == 2 {
        d = d.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(d)
}

/// Counts (peaks, valleys) with plateau deduplication.
fn extrema(xs: &[f64]) -> (usize, usize) {
    // collapse plateaus to single levels
    let mut levels: Vec<f64> = Vec::with_capacity(xs.len());
    for &x in xs {
        if levels.last() != Some(&x) {
            levels.push(x);
        }
    }
    let (mut peaks, mut valleys) = (0, 0);
    for w in levels.windows(3) {
        if w[0] < w[1] && w[1] > w[2] {
            peaks += 1;
        } else if w[0] > w[1] && w[1] < w[2] {
            valleys += 1;
        }
    }
    (peaks, valleys)
}

pub fn stat_block(series: &[f64]) -> Result<StatBlock, FunctionalError> {
    stat_block_runs(&[series])
}

/// Statistics of several contiguous runs pooled together: moments and
/// extremes over all samples, peaks and valleys summed per run.
pub fn stat_block_runs(runs: &[&[f64]]) -> Result<StatBlock, FunctionalError> {
    let n: usize = runs.iter().map(|r| r.len()).sum();
    if n == 0 {
        return Err(FunctionalError::EmptySeries);
    }
    let all = || runs.iter().flat_map(|r| r.iter().copied());
    let nf = n as f64;
    let mean = all().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    for x in all() {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        max = max.max(x);
        min = min.min(x);
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skewness, kurtosis) = if m2 < VAR_EPS {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let (mut peaks, mut valleys) = (0, 0);
    for r in runs {
        let (p, v) = extrema(r);
        peaks += p;
        valleys += v;
    }
    Ok(StatBlock {
        max,
        min,
        range: max - min,
        mean,
        variance: m2,
        std: m2.sqrt(),
        skewness,
        kurtosis,
        n_peaks: peaks as f64,
        n_valleys: valleys as f64,
    })
}

/// `<channel>-<d0|d1|d2>_<stat>` names for a channel list.
pub fn feature_names(channels: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(channels.len() * 30);
    for ch in channels {
        for o in ORDERS {
            for s in STAT_NAMES {
                out.push(format!("{ch}-{o}_{s}"));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    pub segment_index: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Channels with fewer than three valid frames, zero-filled.
    pub short_channels: Vec<String>,
}

/// The 30 functionals of one channel slice.
pub fn channel_functionals(values: &[f64], valid: &[bool]) -> Option<[f64; 30]> {
    let mut runs: Vec<&[f64]> = Vec::new();
    let mut start = None;
    for i in 0..=valid.len() {
        let ok = i < valid.len() && valid[i];
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(&values[s..i]);
                start = None;
            }
            _ => {}
        }
    }
    let n: usize = runs.iter().map(|r| r.len()).sum();
    if n < 3 {
        return None;
    }
    let d1: Vec<Vec<f64>> = runs.iter().filter_map(|r| derivative(r, 1).ok()).collect();
    let d2: Vec<Vec<f64>> = runs.iter().filter_map(|r| derivative(r, 2).ok()).collect();
    let d1r: Vec<&[f64]> = d1.iter().map(Vec::as_slice).collect();
    let d2r: Vec<&[f64]> = d2.iter().map(Vec::as_slice).collect();
    let b0 = stat_block_runs(&runs).ok()?;
    let b1 = stat_block_runs(&d1r).unwrap_or(StatBlock::ZERO);
    let b2 = stat_block_runs(&d2r).unwrap_or(StatBlock::ZERO);
    let mut out = [0.0; 30];
    out[..10].copy_from_slice(&b0.to_array());
    out[10..20].copy_from_slice(&b1.to_array());
    out[20..].copy_from_slice(&b2.to_array());
    Some(out)
}

pub fn featurize(segment: &Segment) -> SegmentFeatures {
    let names: Vec<&str> = segment.channels.iter().map(|c| c.name.as_str()).collect();
    let mut values = Vec::with_capacity(30 * names.len());
    let mut short_channels = Vec::new();
    for ch in &segment.channels {
        match channel_functionals(&ch.values, &ch.valid) {
            Some(f) => values.extend_from_slice(&f),
            None => {
                values.extend_from_slice(&[0.0; 30]);
                short_channels.push(ch.name.clone());
            }
        }
    }
    SegmentFeatures {
        subject_id: segment.subject_id.clone(),
        risk_label: segment.risk_label,
        segment_index: segment.segment_index,
        names: feature_names(&names),
        values,
        short_channels,
    }
}

/// One row of a [`FeatureTable`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    pub segment_index: usize,
    pub values: Vec<f64>,
}

/// Segment-by-functional table, rows ordered by (subject_id, segment_index).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn from_segments(mut feats: Vec<SegmentFeatures>) -> Result<Self, FunctionalError> {
        feats.sort_by(|a, b| {
            a.subject_id
                .cmp(&b.subject_id)
                .then(a.segment_index.cmp(&b.segment_index))
        });
        let names = feats.first().map(|f| f.names.clone()).unwrap_or_default();
        if feats.iter().any(|f| f.names != names) {
            return Err(FunctionalError::Table("segments disagree on feature names".into()));
        }
        Ok(Self {
            names,
            rows: feats
                .into_iter()
                .map(|f| FeatureRow {
                    subject_id: f.subject_id,
                    risk_label: f.risk_label,
                    segment_index: f.segment_index,
                    values: f.values,
                })
                .collect(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn labels(&self) -> Vec<RiskLevel> {
        self.rows.iter().map(|r| r.risk_label).collect()
    }

    /// Keeps only the named columns, in the given order.
    pub fn restrict(&self, names: &[String]) -> Result<FeatureTable, FunctionalError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| FunctionalError::Table(format!("unknown feature `{n}`")))
            })
            .collect::<Result<_, _>>()?;
        Ok(FeatureTable {
            names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    /// CSV with the functional columns followed by subject_id, risk_label,
    /// segment_index. Leading `#` lines carry provenance.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &[String]) -> Result<(), FunctionalError> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        let mut header = self.names.clone();
        header.extend(["subject_id", "risk_label", "segment_index"].map(String::from));
        cw.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            rec.push(r.subject_id.clone());
            rec.push(r.risk_label.to_string());
            rec.push(r.segment_index.to_string());
            cw.write_record(&rec)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<FeatureTable, FunctionalError> {
        let mut text = String::new();
        BufReader::new(r).read_to_string(&mut text)?;
        let body: String = text
            .as_bytes()
            .lines()
            .map_while(Result::ok)
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        let col = |n: &str| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| FunctionalError::Table(format!("missing column `{n}`")))
        };
        let (sc, rc, ic) = (col("subject_id")?, col("risk_label")?, col("segment_index")?);
        let feat_cols: Vec<usize> = (0..header.len()).filter(|&c| c != sc && c != rc && c != ic).collect();
        let names = feat_cols.iter().map(|&c| header[c].to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: &str| FunctionalError::Table(format!("row {}: {m}", i + 1));
            let values = feat_cols
                .iter()
                .map(|&c| rec[c].trim().parse::<f64>().map_err(|_| bad("non-numeric feature")))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(FeatureRow {
                subject_id: rec[sc].to_string(),
                risk_label: rec[rc].parse().map_err(|_| bad("unknown risk label"))?,
                segment_index: rec[ic].trim().parse().map_err(|_| bad("bad segment_index"))?,
                values,
            });
        }
        Ok(FeatureTable { names, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::ChannelSeries;

    #[test]
    fn derivative_examples() {
        assert_eq!(derivative(&[0.0, 1.0, 3.0, 6.0], 1).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(derivative(&[0.0, 1.0, 3.0, 6.0], 2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(derivative(&[4.0; 5], 1).unwrap(), vec![0.0; 4]);
        assert!(matches!(derivative(&[1.0, 2.0], 2), Err(FunctionalError::TooShort { .. })));
    }

    #[test]
    fn stat_block_ramp() {
        let b = stat_block(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((b.max, b.min, b.range, b.mean), (3.0, 1.0, 2.0, 2.0));
        assert!((b.variance - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.skewness, 0.0);
        assert_eq!(b.n_peaks, 0.0);
    }

    #[test]
    fn stat_block_extrema_and_constant() {
        let b = stat_block(&[0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!((b.n_peaks, b.n_valleys), (2.0, 1.0));
        let c = stat_block(&[5.0; 4]).unwrap();
        assert_eq!(
            (c.variance, c.skewness, c.kurtosis, c.n_peaks, c.n_valleys),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        // plateau peak counted once
        let p = stat_block(&[0.0, 2.0, 2.0, 2.0, 1.0, 3.0, 3.0]).unwrap();
        assert_eq!((p.n_peaks, p.n_valleys), (1.0, 1.0));
        assert!(matches!(stat_block(&[]), Err(FunctionalError::EmptySeries)));
    }

    #[test]
    fn ramp_d1_has_zero_variance() {
        let ramp: Vec<f64> = (0..50).map(|i| 0.25 * i as f64 + 1.0).collect();
        let f = channel_functionals(&ramp, &vec![true; 50]).unwrap();
        assert_eq!(f[10 + 3], 0.25);
        assert!(f[10 + 4].abs() < 1e-20);
    }

    fn segment(channels: Vec<ChannelSeries>) -> Segment {
        Segment {
            subject_id: "s".into(),
            risk_label: RiskLevel::Low,
            segment_index: 0,
            start_s: 0.0,
            end_s: 120.0,
            channels,
            valid_fraction: 1.0,
        }
    }

    #[test]
    fn constant_segment_functionals() {
        let chans = crate::postproc::Channel::ALL
            .iter()
            .map(|c| ChannelSeries::dense(c.name(), vec![0.5; 240], 2.0))
            .collect();
        let f = featurize(&segment(chans));
        assert_eq!(f.values.len(), 210);
        assert_eq!(f.names.len(), 210);
        for (name, v) in f.names.iter().zip(&f.values) {
            if name.ends_with("d0_mean") || name.ends_with("d0_max") || name.ends_with("d0_min") {
                assert_eq!(*v, 0.5, "{name}");
            } else {
                assert_eq!(*v, 0.0, "{name}");
            }
        }
        assert!(f.names.contains(&"head_roll-d1_kurt".to_string()));
        assert_eq!(f.names[0], "avg_ear-d0_max");
    }

    #[test]
    fn short_channel_is_zero_filled_and_flagged() {
        let mut a = ChannelSeries::dense("avg_ear", vec![0.1; 10], 1.0);
        a.valid = vec![false; 10];
        a.valid[4] = true;
        let b = ChannelSeries::dense("head_yaw", (0..10).map(|i| i as f64).collect(), 1.0);
        let f = featurize(&segment(vec![a, b]));
        assert_eq!(f.values.len(), 60);
        assert_eq!(f.short_channels, vec!["avg_ear".to_string()]);
        assert!(f.values[..30].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn differences_do_not_cross_gaps() {
        let vals = [0.0, 1.0, 2.0, 50.0, 10.0, 11.0, 12.0];
        let valid = [true, true, true, false, true, true, true];
        let f = channel_functionals(&vals, &valid).unwrap();
        // d1 pooled over both runs is all ones
        assert_eq!(f[10 + 0], 1.0);
        assert_eq!(f[10 + 1], 1.0);
    }

    #[test]
    fn table_csv_round_trip() {
        let t = FeatureTable {
            names: vec!["a-d0_max".into(), "b-d1_std".into()],
            rows: vec![
                FeatureRow { subject_id: "s1".into(), risk_label: RiskLevel::Low, segment_index: 0, values: vec![0.1, 1e-17] },
                FeatureRow { subject_id: "s2".into(), risk_label: RiskLevel::High, segment_index: 3, values: vec![-2.5, 7.0] },
            ],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["config_hash=abc seed=1".into()]).unwrap();
        assert_eq!(FeatureTable::read_csv(buf.as_slice()).unwrap(), t);
        let r = t.restrict(&["b-d1_std".into()]).unwrap();
        assert_eq!(r.rows[1].values, vec![7.0]);
        assert!(t.restrict(&["nope".into()]).is_err());
    }
}
