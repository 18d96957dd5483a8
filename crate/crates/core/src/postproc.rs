//! Smoothing, eye averaging, normalization and thin-slice segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RiskLevel;
use crate::signals::RecordingSignals;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("moving-average window must be odd and >= 1, got {0}")]
    EvenWindow(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series `{0}` has no valid samples")]
    AllInvalid(String),
    #[error("window_s ({window_s}) must exceed hop_s ({hop_s}) > 0")]
    BadWindow { window_s: f64, hop_s: f64 },
}

/// The seven post-processed channels, in functional-vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    AvgEar,
    EyePitch,
    EyeYaw,
    HeadDistance,
    HeadPitch,
    HeadYaw,
    HeadRoll,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::AvgEar,
        Channel::EyePitch,
        Channel::EyeYaw,
        Channel::HeadDistance,
        Channel::HeadPitch,
        Channel::HeadYaw,
        Channel::HeadRoll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::AvgEar => "avg_ear",
            Channel::EyePitch => "eye_pitch",
            Channel::EyeYaw => "eye_yaw",
            Channel::HeadDistance => "head_distance",
            Channel::HeadPitch => "head_pitch",
            Channel::HeadYaw => "head_yaw",
            Channel::HeadRoll => "head_roll",
        }
    }

    pub fn is_gaze(self) -> bool {
        matches!(self, Channel::EyePitch | Channel::EyeYaw)
    }

    /// Channel set for a cohort, dropping gaze when it is unavailable.
    pub fn set(with_gaze: bool) -> Vec<Channel> {
        Self::ALL.into_iter().filter(|c| with_gaze || !c.is_gaze()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub fps: f64,
}

impl ChannelSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>, valid: Vec<bool>, fps: f64) -> Self {
        assert_eq!(values.len(), valid.len());
        Self {
            name: name.into(),
            values,
            valid,
            fps,
        }
    }

    /// All-valid series.
    pub fn dense(name: impl Into<String>, values: Vec<f64>, fps: f64) -> Self {
        let valid = vec![true; values.len()];
        Self::new(name, values, valid, fps)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Maximal runs of consecutive valid samples as `start..end` ranges.
    pub fn valid_runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &ok) in self.valid.iter().enumerate() {
            match (ok, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(s..self.valid.len());
        }
        runs
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ChannelSeries {
        ChannelSeries {
            name: self.name.clone(),
            values: self.values[range.clone()].to_vec(),
            valid: self.valid[range].to_vec(),
            fps: self.fps,
        }
    }
}

/// Centered moving average. The window is truncated to the contiguous valid
/// run containing each sample, so edges and gaps shrink it; invalid samples
/// stay invalid.
pub fn moving_average(series: &ChannelSeries, window: usize) -> Result<ChannelSeries, PostprocError> {
    if window == 0 || window % 2 == 0 {
        return Err(PostprocError::EvenWindow(window));
    }
    let half = window / 2;
    let mut out = vec![0.0; series.len()];
    for run in series.valid_runs() {
        let vals = &series.values[run.clone()];
        let mut prefix = Vec::with_capacity(vals.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in vals {
            acc += v;
            prefix.push(acc);
        }
        for i in 0..vals.len() {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(vals.len());
            // direct sum for short windows keeps rounding identical to a
            // naive convolution on constant input
            let s: f64 = if hi - lo <= 32 {
                vals[lo..hi].iter().sum()
            } else {
                prefix[hi] - prefix[lo]
            };
            out[run.start + i] = s / (hi - lo) as f64;
        }
    }
    Ok(ChannelSeries {
        name: series.name.clone(),
        values: out,
        valid: series.valid.clone(),
        fps: series.fps,
    })
}

/// Per-frame mean of two eyes; one valid side is used alone.
pub fn average_eyes(left: &ChannelSeries, right: &ChannelSeries) -> Result<ChannelSeries, PostprocError> {
    if left.len() != right.len() {
        return Err(PostprocError::LengthMismatch(left.len(), right.len()));
    }
    let mut values = vec![0.0; left.len()];
    let mut valid = vec![false; left.len()];
    for i in 0..left.len() {
        match (left.valid[i], right.valid[i]) {
            (true, true) => {
                values[i] = 0.5 * (left.values[i] + right.values[i]);
                valid[i] = true;
            }
            (true, false) => {
                values[i] = left.values[i];
                valid[i] = true;
            }
            (false, true) => {
                values[i] = right.values[i];
                valid[i] = true;
            }
            (false, false) => {}
        }
    }
    let name = left
        .name
        .strip_suffix("_left")
        .map(|s| format!("avg_{s}"))
        .unwrap_or_else(|| left.name.clone());
    Ok(ChannelSeries {
        name,
        values,
        valid,
        fps: left.fps,
    })
}

/// Min-max scaling to [0, 1] over the valid samples of the whole series.
/// Constant series map to 0.5.
pub fn minmax_normalize(series: &ChannelSeries) -> Result<ChannelSeries, PostprocError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, ok) in series.values.iter().zip(&series.valid) {
        if *ok {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if lo > hi {
        return Err(PostprocError::AllInvalid(series.name.clone()));
    }
    let range = hi - lo;
    let values = series
        .values
        .iter()
        .zip(&series.valid)
        .map(|(&v, &ok)| match (ok, range > 0.0) {
            (false, _) => 0.0,
            (true, true) => ((v - lo) / range).clamp(0.0, 1.0),
            (true, false) => 0.5,
        })
        .collect();
    Ok(ChannelSeries {
        name: series.name.clone(),
        values,
        valid: series.valid.clone(),
        fps: series.fps,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingOrder {
    /// Smooth each eye, then average.
    #[default]
    SmoothThenAverage,
    AverageThenSmooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocConfig {
    pub smoothing_window: usize,
    pub smoothing_order: SmoothingOrder,
    pub window_s: f64,
    pub hop_s: f64,
    pub min_valid_fraction: f64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 7,
            smoothing_order: SmoothingOrder::SmoothThenAverage,
            window_s: 120.0,
            hop_s: 60.0,
            min_valid_fraction: 0.8,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(PostprocError::EvenWindow(self.smoothing_window));
        }
        if !(self.hop_s > 0.0 && self.window_s > self.hop_s) {
            return Err(PostprocError::BadWindow {
                window_s: self.window_s,
                hop_s: self.hop_s,
            });
        }
        Ok(())
    }
}

fn raw_series(sig: &RecordingSignals, name: &str, f: impl Fn(&crate::signals::FrameSignals) -> Option<f64>) -> ChannelSeries {
    let mut values = Vec::with_capacity(sig.frames.len());
    let mut valid = Vec::with_capacity(sig.frames.len());
    for s in &sig.frames {
        match s.as_ref().and_then(&f) {
            Some(v) if v.is_finite() => {
                values.push(v);
                valid.push(true);
            }
            _ => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    ChannelSeries::new(name, values, valid, sig.fps)
}

fn eye_pair(
    left: ChannelSeries,
    right: ChannelSeries,
    cfg: &PostprocConfig,
) -> Result<ChannelSeries, PostprocError> {
    match cfg.smoothing_order {
        SmoothingOrder::SmoothThenAverage => average_eyes(
            &moving_average(&left, cfg.smoothing_window)?,
            &moving_average(&right, cfg.smoothing_window)?,
        ),
        SmoothingOrder::AverageThenSmooth => {
            moving_average(&average_eyes(&left, &right)?, cfg.smoothing_window)
        }
    }
}

/// Builds the smoothed, eye-averaged, normalized channels of a recording.
/// Gaze channels are produced only when `with_gaze` is set.
pub fn build_channels(
    sig: &RecordingSignals,
    with_gaze: bool,
    cfg: &PostprocConfig,
) -> Result<Vec<ChannelSeries>, PostprocError> {
    let mut out = Vec::with_capacity(7);
    for ch in Channel::set(with_gaze) {
        let s = match ch {
            Channel::AvgEar => eye_pair(
                raw_series(sig, "ear_left", |s| Some(s.ear_left)),
                raw_series(sig, "ear_right", |s| Some(s.ear_right)),
                cfg,
            )?,
            Channel::EyePitch => eye_pair(
                raw_series(sig, "eye_pitch_left", |s| s.gaze_left.map(|g| g.pitch)),
                raw_series(sig, "eye_pitch_right", |s| s.gaze_right.map(|g| g.pitch)),
                cfg,
            )?,
            Channel::EyeYaw => eye_pair(
                raw_series(sig, "eye_yaw_left", |s| s.gaze_left.map(|g| g.yaw)),
                raw_series(sig, "eye_yaw_right", |s| s.gaze_right.map(|g| g.yaw)),
                cfg,
            )?,
            Channel::HeadDistance => moving_average(
                &raw_series(sig, "head_distance", |s| Some(s.head_distance)),
                cfg.smoothing_window,
            )?,
            Channel::HeadPitch => moving_average(
                &raw_series(sig, "head_pitch", |s| Some(s.head_pitch)),
                cfg.smoothing_window,
            )?,
            Channel::HeadYaw => moving_average(
                &raw_series(sig, "head_yaw", |s| Some(s.head_yaw)),
                cfg.smoothing_window,
            )?,
            Channel::HeadRoll => moving_average(
                &raw_series(sig, "head_roll", |s| Some(s.head_roll)),
                cfg.smoothing_window,
            )?,
        };
        let mut n = minmax_normalize(&s)?;
        n.name = ch.name().to_string();
        out.push(n);
    }
    Ok(out)
}

/// Number of full windows of `window` frames at stride `hop` in `n` frames.
pub fn segment_count(n: usize, window: usize, hop: usize) -> usize {
    if window == 0 || hop == 0 || n < window {
        0
    } else {
        (n - window) / hop + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    /// Window position k; the window starts at `k * hop_s`.
    pub segment_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub channels: Vec<ChannelSeries>,
    pub valid_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SliceOutcome {
    pub segments: Vec<Segment>,
    pub discarded: usize,
}

/// Cuts the channels into overlapping windows. Trailing partial windows are
/// dropped; windows whose least-valid channel falls below
/// `min_valid_fraction` are discarded and counted.
pub fn slice_segments(
    subject_id: &str,
    risk_label: RiskLevel,
    channels: &[ChannelSeries],
    cfg: &PostprocConfig,
) -> Result<SliceOutcome, PostprocError> {
    cfg.validate()?;
    let Some(first) = channels.first() else {
        return Ok(SliceOutcome::default());
    };
    let n = first.len();
    if let Some(bad) = channels.iter().find(|c| c.len() != n) {
        return Err(PostprocError::LengthMismatch(n, bad.len()));
    }
    let fps = first.fps;
    let w = (cfg.window_s * fps).round() as usize;
    let h = (cfg.hop_s * fps).round() as usize;
    let mut out = SliceOutcome::default();
    for k in 0..segment_count(n, w, h) {
        let range = k * h..k * h + w;
        let valid_fraction = channels
            .iter()
            .map(|c| c.valid[range.clone()].iter().filter(|&&v| v).count() as f64 / w as f64)
            .fold(1.0, f64::min);
        if valid_fraction < cfg.min_valid_fraction {
            out.discarded += 1;
            continue;
        }
        out.segments.push(Segment {
            subject_id: subject_id.to_string(),
            risk_label,
            segment_index: k,
            start_s: range.start as f64 / fps,
            end_s: range.end as f64 / fps,
            channels: channels.iter().map(|c| c.slice(range.clone())).collect(),
            valid_fraction,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_constant_and_identity() {
        let s = ChannelSeries::dense("c", vec![2.5; 20], 10.0);
        assert_eq!(moving_average(&s, 7).unwrap().values, vec![2.5; 20]);
        let r = ChannelSeries::dense("r", (0..9).map(|i| (i * i) as f64).collect(), 10.0);
        assert_eq!(moving_average(&r, 1).unwrap(), r);
    }

    #[test]
    fn moving_average_impulse() {
        let mut v = vec![0.0; 25];
        v[10] = 1.0;
        let out = moving_average(&ChannelSeries::dense("i", v, 10.0), 7).unwrap();
        for (i, x) in out.values.iter().enumerate() {
            let expect = if (7..=13).contains(&i) { 1.0 / 7.0 } else { 0.0 };
            assert!((x - expect).abs() < 1e-15, "index {i}");
        }
    }

    #[test]
    fn moving_average_truncates_at_gaps() {
        let v = vec![1.0, 2.0, 3.0, 100.0, 5.0, 6.0];
        let valid = vec![true, true, true, false, true, true];
        let out = moving_average(&ChannelSeries::new("g", v, valid.clone(), 1.0), 3).unwrap();
        assert_eq!(out.valid, valid);
        assert_eq!(out.values[0], 1.5);
        assert_eq!(out.values[2], 2.5);
        assert_eq!(out.values[4], 5.5);
        assert!(matches!(
            moving_average(&ChannelSeries::dense("e", vec![1.0], 1.0), 4),
            Err(PostprocError::EvenWindow(4))
        ));
    }

    #[test]
    fn eye_average_rules() {
        let l = ChannelSeries::new("ear_left", vec![0.2, 0.0, 0.3, 0.0], vec![true, false, true, false], 1.0);
        let r = ChannelSeries::new("ear_right", vec![0.4, 0.4, 0.3, 0.0], vec![true, true, true, false], 1.0);
        let a = average_eyes(&l, &r).unwrap();
        assert_eq!(a.name, "avg_ear");
        assert!((a.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(a.values[1], 0.4);
        assert_eq!(a.values[2], 0.3);
        assert_eq!(a.valid, vec![true, true, true, false]);
        assert_eq!(average_eyes(&l, &l).unwrap().values[..3], l.values[..3]);
        let short = ChannelSeries::dense("x", vec![1.0], 1.0);
        assert_eq!(average_eyes(&l, &short), Err(PostprocError::LengthMismatch(4, 1)));
    }

    #[test]
    fn normalization_cases() {
        let s = ChannelSeries::dense("s", vec![2.0, 4.0, 6.0], 1.0);
        assert_eq!(minmax_normalize(&s).unwrap().values, vec![0.0, 0.5, 1.0]);
        let c = ChannelSeries::dense("c", vec![3.0; 3], 1.0);
        assert_eq!(minmax_normalize(&c).unwrap().values, vec![0.5; 3]);
        let none = ChannelSeries::new("n", vec![1.0], vec![false], 1.0);
        assert!(matches!(minmax_normalize(&none), Err(PostprocError::AllInvalid(_))));
    }

    fn channels_of(n: usize, fps: f64) -> Vec<ChannelSeries> {
        (0..7)
            .map(|c| ChannelSeries::dense(format!("c{c}"), (0..n).map(|i| (i % 13) as f64).collect(), fps))
            .collect()
    }

    #[test]
    fn slice_counts() {
        let cfg = PostprocConfig {
            min_valid_fraction: 0.0,
            ..Default::default()
        };
        for (secs, expect) in [(300, 4), (120, 1), (90, 0)] {
            let out = slice_segments("s", RiskLevel::Low, &channels_of(secs * 2, 2.0), &cfg).unwrap();
            assert_eq!(out.segments.len(), expect, "{secs} s");
        }
        let out = slice_segments("s", RiskLevel::Low, &channels_of(600, 2.0), &cfg).unwrap();
        let starts: Vec<f64> = out.segments.iter().map(|s| s.start_s).collect();
        assert_eq!(starts, vec![0.0, 60.0, 120.0, 180.0]);
        assert!(out.segments.iter().all(|s| s.end_s - s.start_s == 120.0));
        // adjacent windows share 60 s of frames
        let a = &out.segments[0].channels[0].values[120..];
        let b = &out.segments[1].channels[0].values[..120];
        assert_eq!(a, b);
    }

    #[test]
    fn slice_discards_sparse_windows() {
        let mut ch = channels_of(600, 2.0);
        for v in &mut ch[3].valid[0..200] {
            *v = false;
        }
        let out = slice_segments("s", RiskLevel::High, &ch, &PostprocConfig::default()).unwrap();
        assert_eq!(out.discarded, 2);
        assert_eq!(out.segments.len(), 2);
        assert_eq!(out.segments[0].segment_index, 2);
    }

    proptest! {
        #[test]
        fn smoothing_stays_in_window_range(v in prop::collection::vec(-100.0f64..100.0, 1..60), w in 0usize..6) {
            let window = 2 * w + 1;
            let s = ChannelSeries::dense("p", v.clone(), 1.0);
            let out = moving_average(&s, window).unwrap();
            for i in 0..v.len() {
                let lo = i.saturating_sub(w);
                let hi = (i + w + 1).min(v.len());
                let mn = v[lo..hi].iter().cloned().fold(f64::INFINITY, f64::min);
                let mx = v[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.values[i] >= mn - 1e-9 && out.values[i] <= mx + 1e-9);
            }
        }

        #[test]
        fn normalization_idempotent_and_ranged(v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let s = ChannelSeries::dense("p", v, 1.0);
            let once = minmax_normalize(&s).unwrap();
            let twice = minmax_normalize(&once).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(once.values.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn slice_count_matches_formula(n in 0usize..2000, fps in 1usize..4) {
            let cfg = PostprocConfig { min_valid_fraction: 0.0, ..Default::default() };
            let ch = channels_of(n, fps as f64);
            let out = slice_segments("s", RiskLevel::Low, &ch, &cfg).unwrap();
            prop_assert_eq!(out.segments.len(), segment_count(n, 120 * fps, 60 * fps));
        }
    }
}
