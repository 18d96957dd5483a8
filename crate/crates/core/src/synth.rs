//! Deterministic synthetic cohorts.
//!
//! Each subject is a landmark stream produced by animating a rigid 68-point
//! face: blinks lower the eyelid points, head nods and turns rotate the whole
//! face before weak-perspective projection, forward leans shrink the
//! apparent size, and gaze pitch/yaw follow a look-down/look-up process with
//! scanning saccades. Per-level profiles set the rates and amplitudes.
//!
//! Every stochastic process of every subject draws from its own stream
//! derived from the cohort seed, so a spec reproduces its cohort bit-exactly.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{self, Format, Gaze, LandmarkFrame, Manifest, ManifestEntry, Point2, Recording, RiskLevel};
use crate::seed;
use crate::signals::{rotation_from_euler, FaceModel3D};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

/// Behavior parameters of one risk level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelProfile {
    /// Mean blinks per second.
    pub blink_rate_hz: f64,
    /// Full close-and-open time of one blink; longer means slower blinks.
    pub blink_duration_s: f64,
    /// Horizontal gaze saccades per second.
    pub gaze_scan_rate_hz: f64,
    /// Head nods and turns per second.
    pub head_motion_rate_hz: f64,
    /// Peak rotation of a nod or turn.
    pub head_motion_amplitude_rad: f64,
    /// Long-run mean gaze pitch; negative looks down.
    pub mean_gaze_pitch_rad: f64,
    /// Forward-lean episodes per second.
    pub lean_rate_hz: f64,
}

impl LevelProfile {
    fn validate(&self, level: &str) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(format!("{level}: {m}")));
        for (name, v) in [
            ("blink_rate_hz", self.blink_rate_hz),
            ("blink_duration_s", self.blink_duration_s),
            ("gaze_scan_rate_hz", self.gaze_scan_rate_hz),
            ("head_motion_rate_hz", self.head_motion_rate_hz),
            ("head_motion_amplitude_rad", self.head_motion_amplitude_rad),
            ("lean_rate_hz", self.lean_rate_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.blink_rate_hz > 0.0 && self.blink_duration_s <= 0.0 {
            return bad("blink_duration_s must be > 0 when blinks occur".into());
        }
        if self.blink_rate_hz * self.blink_duration_s >= 1.0 {
            return bad("blink_rate_hz * blink_duration_s must be < 1".into());
        }
        if self.head_motion_rate_hz * MOTION_MEAN_S >= 1.0 {
            return bad(format!("head_motion_rate_hz must be < {}", 1.0 / MOTION_MEAN_S));
        }
        if self.lean_rate_hz * LEAN_MEAN_S >= 1.0 {
            return bad(format!("lean_rate_hz must be < {}", 1.0 / LEAN_MEAN_S));
        }
        if self.head_motion_amplitude_rad > 0.6 {
            return bad("head_motion_amplitude_rad must be <= 0.6".into());
        }
        if !(GAZE_DOWN_RAD..=GAZE_UP_RAD).contains(&self.mean_gaze_pitch_rad) {
            return bad(format!(
                "mean_gaze_pitch_rad must lie in [{GAZE_DOWN_RAD}, {GAZE_UP_RAD}]"
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectProfile {
    pub low: LevelProfile,
    pub medium: LevelProfile,
    pub high: LevelProfile,
}

impl EffectProfile {
    pub fn get(&self, level: RiskLevel) -> &LevelProfile {
        match level {
            RiskLevel::Low => &self.low,
            RiskLevel::Medium => &self.medium,
            RiskLevel::High => &self.high,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    /// Subjects at Low, Medium, High.
    pub n_subjects_per_level: [usize; 3],
    pub minutes_per_subject: f64,
    pub fps: f64,
    pub effect_profile: EffectProfile,
    /// Gaussian landmark jitter in pixels.
    pub noise_sigma: f64,
    /// Log-normal spread of each subject's rates around the level profile.
    pub subject_jitter: f64,
    /// Stationary standard deviation of slow head wander.
    pub head_drift_rad: f64,
    pub gaze_noise_rad: f64,
    /// Probability that a frame has no detected face.
    pub dropout_prob: f64,
    pub has_gaze: bool,
    pub seed: u64,
}

const GAZE_UP_RAD: f64 = 0.0;
const GAZE_DOWN_RAD: f64 = -0.4;
const GAZE_DWELL_CYCLE_S: f64 = 10.0;
const MOTION_MEAN_S: f64 = 1.75;
const LEAN_MEAN_S: f64 = 5.5;
const BASE_DISTANCE_M: f64 = 0.6;
const LEAN_DEPTH_M: f64 = 0.08;
const MIN_OPENNESS: f64 = 0.05;
/// Vertical eyelid separation of an open eye, in metres.
const EYE_OPENING_M: f64 = 0.0093;
const DRIFT_TAU_S: f64 = 3.0;
const CENTER: Point2 = Point2::new(320.0, 240.0);

fn profile(
    blink_rate_hz: f64,
    blink_duration_s: f64,
    gaze_scan_rate_hz: f64,
    head_motion_rate_hz: f64,
    head_motion_amplitude_rad: f64,
    mean_gaze_pitch_rad: f64,
    lean_rate_hz: f64,
) -> LevelProfile {
    LevelProfile {
        blink_rate_hz,
        blink_duration_s,
        gaze_scan_rate_hz,
        head_motion_rate_hz,
        head_motion_amplitude_rad,
        mean_gaze_pitch_rad,
        lean_rate_hz,
    }
}

impl Default for CohortSpec {
    /// Strongly separated levels, 4/4/2 subjects, 16 minutes each at 10 fps.
    fn default() -> Self {
        Self {
            n_subjects_per_level: [4, 4, 2],
            minutes_per_subject: 16.0,
            fps: 10.0,
            effect_profile: EffectProfile {
                low: profile(0.40, 0.35, 0.50, 0.25, 0.15, -0.05, 0.030),
                medium: profile(0.27, 0.50, 0.30, 0.15, 0.10, -0.15, 0.020),
                high: profile(0.15, 0.70, 0.15, 0.08, 0.05, -0.25, 0.010),
            },
            noise_sigma: 0.3,
            subject_jitter: 0.05,
            head_drift_rad: 0.01,
            gaze_noise_rad: 0.01,
            dropout_prob: 0.001,
            has_gaze: true,
            seed: 7,
        }
    }
}

impl CohortSpec {
    /// Named presets: `default` (alias `strong`), `weak` and `null`.
    pub fn preset(name: &str) -> Result<CohortSpec, SynthError> {
        let base = CohortSpec::default();
        match name {
            "default" | "strong" => Ok(base),
            "weak" => Ok(CohortSpec {
                effect_profile: EffectProfile {
                    low: profile(0.30, 0.50, 0.32, 0.16, 0.11, -0.13, 0.020),
                    medium: profile(0.28, 0.52, 0.30, 0.15, 0.10, -0.15, 0.020),
                    high: profile(0.26, 0.54, 0.28, 0.14, 0.09, -0.17, 0.020),
                },
                subject_jitter: 0.15,
                ..base
            }),
            "null" => {
                let still = profile(0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0);
                Ok(CohortSpec {
                    effect_profile: EffectProfile {
                        low: still.clone(),
                        medium: still.clone(),
                        high: still,
                    },
                    noise_sigma: 0.0,
                    subject_jitter: 0.0,
                    head_drift_rad: 0.0,
                    gaze_noise_rad: 0.0,
                    dropout_prob: 0.0,
                    ..base
                })
            }
            other => Err(SynthError::InvalidSpec(format!(
                "unknown preset `{other}` (expected default, strong, weak or null)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_subjects_per_level.iter().sum::<usize>() == 0 {
            return bad("cohort has no subjects".into());
        }
        if self.n_subjects_per_level.iter().any(|&n| n > 99) {
            return bad("at most 99 subjects per level".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        if !(self.minutes_per_subject.is_finite() && self.minutes_per_subject > 0.0) {
            return bad(format!("minutes_per_subject must be > 0, got {}", self.minutes_per_subject));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("subject_jitter", self.subject_jitter),
            ("head_drift_rad", self.head_drift_rad),
            ("gaze_noise_rad", self.gaze_noise_rad),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob must lie in [0, 1), got {}", self.dropout_prob));
        }
        for level in RiskLevel::ALL {
            self.effect_profile.get(level).validate(level.as_str())?;
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.minutes_per_subject * 60.0 * self.fps).round() as usize
    }
}

/// Subject id of the `index`-th subject of a level, e.g. `M03`.
pub fn subject_id(level: RiskLevel, index: usize) -> String {
    format!("{}{:02}", level.code(), index + 1)
}

/// Generic 68-point face in metres, x right, y down, z away from the camera.
/// The six pose points coincide with [`FaceModel3D::default`]; eyelid points
/// are placed by [`eye_points`].
fn face_template() -> [[f64; 3]; 68] {
    let mut p = [[0.0; 3]; 68];
    // jaw line
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let phi = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 16.0;
        *q = [0.07 * phi.sin(), -0.02 + 0.09 * phi.cos(), 0.03 * (1.0 - phi.cos())];
    }
    // brows
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let arch = -0.006 * (1.0 - (2.0 * t - 1.0).powi(2));
        p[17 + i] = [-0.06 + 0.045 * t, -0.05 + arch, 0.005];
        p[22 + i] = [0.015 + 0.045 * t, -0.05 + arch, 0.005];
    }
    // nose bridge and base
    for i in 0..4 {
        let t = i as f64 / 3.0;
        p[27 + i] = [0.0, -0.03 + 0.045 * t, -0.01 - 0.02 * t];
    }
    for i in 0..5 {
        let t = i as f64 / 4.0;
        p[31 + i] = [-0.015 + 0.03 * t, 0.02, -0.01 + 0.005 * (1.0 - (2.0 * t - 1.0).abs())];
    }
    // outer lip contour 48..59 and inner 60..67
    let mouth = |theta: f64, rx: f64, ry: f64| [rx * theta.cos(), 0.035 + ry * theta.sin(), 0.008];
    for i in 0..12 {
        let theta = std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 12.0;
        p[48 + i] = mouth(theta, 0.025, 0.01);
    }
    for i in 0..8 {
        let theta = std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 8.0;
        p[60 + i] = mouth(theta, 0.018, 0.004);
    }
    let model = FaceModel3D::default();
    for (k, &idx) in [36usize, 39, 42, 45, 48, 54].iter().enumerate() {
        p[idx] = model.points[k];
    }
    p
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Upper and lower eyelid points between corners `p1` and `p4` for an
/// openness in [0, 1], in p2, p3, p5, p6 order.
fn eye_points(p1: [f64; 3], p4: [f64; 3], openness: f64) -> [[f64; 3]; 4] {
    let half = 0.5 * EYE_OPENING_M * openness;
    let shift = |mut q: [f64; 3], dy: f64| {
        q[1] += dy;
        q
    };
    [
        shift(lerp(p1, p4, 1.0 / 3.0), -half),
        shift(lerp(p1, p4, 2.0 / 3.0), -half),
        shift(lerp(p1, p4, 2.0 / 3.0), half),
        shift(lerp(p1, p4, 1.0 / 3.0), half),
    ]
}

/// Event onsets and durations of a renewal process on `[0, total_s)`: each
/// event is followed by a Gamma-distributed gap chosen so that onsets occur
/// at `rate` per second on average.
fn renewal(
    rng: &mut ChaCha8Rng,
    rate: f64,
    total_s: f64,
    mut duration: impl FnMut(&mut ChaCha8Rng) -> f64,
    mean_duration: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let shape = 4.0;
    let mean_gap = (1.0 / rate - mean_duration).max(1e-3);
    let gap = Gamma::new(shape, mean_gap / shape).expect("positive gamma parameters");
    let mut t = rng.random::<f64>() / rate;
    while t < total_s {
        let d = duration(rng);
        out.push((t, d));
        t += d + gap.sample(rng);
    }
    out
}

fn raised_cosine(u: f64) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * u).cos())
}

/// Adds `amp * shape((t - onset) / dur)` over each event to `out`.
fn add_events(out: &mut [f64], fps: f64, events: &[(f64, f64, f64)], shape: impl Fn(f64) -> f64) {
    for &(onset, dur, amp) in events {
        let first = (onset * fps).ceil().max(0.0) as usize;
        let last = (((onset + dur) * fps).floor() as usize).min(out.len().saturating_sub(1));
        for (i, o) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let u = (i as f64 / fps - onset) / dur;
            if (0.0..=1.0).contains(&u) {
                *o += amp * shape(u);
            }
        }
    }
}

/// Ornstein-Uhlenbeck path with stationary standard deviation `sd`.
fn drift(rng: &mut ChaCha8Rng, n: usize, fps: f64, sd: f64) -> Vec<f64> {
    if sd <= 0.0 {
        return vec![0.0; n];
    }
    let dt = 1.0 / fps;
    let a = (-dt / DRIFT_TAU_S).exp();
    let step = sd * (1.0 - a * a).sqrt();
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut x = sd * z.sample(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = a * x + step * z.sample(rng);
            v
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    if sd <= 0.0 {
        return vec![0.0; n];
    }
    let z = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| z.sample(rng)).collect()
}

/// Per-frame eyelid openness in [MIN_OPENNESS, 1] with triangular blinks.
fn openness(rng: &mut ChaCha8Rng, n: usize, fps: f64, rate: f64, dur: f64) -> Vec<f64> {
    let blinks = renewal(rng, rate, n as f64 / fps, |_| dur, dur);
    let events: Vec<(f64, f64, f64)> = blinks.iter().map(|&(t, d)| (t, d, -(1.0 - MIN_OPENNESS))).collect();
    let mut out = vec![1.0; n];
    add_events(&mut out, fps, &events, |u| 1.0 - (2.0 * u - 1.0).abs());
    out
}

/// Alternating up/down dwell periods whose long-run down fraction gives
/// `mean_pitch`.
fn gaze_pitch(rng: &mut ChaCha8Rng, n: usize, fps: f64, mean_pitch: f64) -> Vec<f64> {
    let down = (mean_pitch - GAZE_UP_RAD) / (GAZE_DOWN_RAD - GAZE_UP_RAD);
    let down = down.clamp(0.0, 1.0);
    if down == 0.0 || down == 1.0 {
        return vec![if down == 1.0 { GAZE_DOWN_RAD } else { GAZE_UP_RAD }; n];
    }
    let up_dwell = Exp::new(1.0 / (GAZE_DWELL_CYCLE_S * (1.0 - down))).unwrap();
    let down_dwell = Exp::new(1.0 / (GAZE_DWELL_CYCLE_S * down)).unwrap();
    let mut is_down = rng.random::<f64>() < down;
    let mut out = Vec::with_capacity(n);
    let mut until = 0.0;
    for i in 0..n {
        let t = i as f64 / fps;
        while t >= until {
            is_down = !is_down;
            until += if is_down { down_dwell.sample(rng) } else { up_dwell.sample(rng) };
        }
        out.push(if is_down { GAZE_DOWN_RAD } else { GAZE_UP_RAD });
    }
    out
}

/// Piecewise-constant horizontal gaze with a new target at each saccade.
fn gaze_yaw(rng: &mut ChaCha8Rng, n: usize, fps: f64, rate: f64) -> Vec<f64> {
    let saccades = renewal(rng, rate, n as f64 / fps, |_| 0.0, 0.0);
    let targets: Vec<f64> = saccades.iter().map(|_| rng.random_range(-0.3..0.3)).collect();
    let mut out = vec![0.0; n];
    let mut k = 0;
    let mut cur = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / fps;
        while k < saccades.len() && saccades[k].0 <= t {
            cur = targets[k];
            k += 1;
        }
        *o = cur;
    }
    out
}

/// Subject-specific copy of a level profile.
fn personalize(p: &LevelProfile, jitter: f64, rng: &mut ChaCha8Rng) -> LevelProfile {
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut f = || if jitter > 0.0 { (jitter * z.sample(rng)).exp() } else { 1.0 };
    let mut q = LevelProfile {
        blink_rate_hz: p.blink_rate_hz * f(),
        blink_duration_s: p.blink_duration_s * f(),
        gaze_scan_rate_hz: p.gaze_scan_rate_hz * f(),
        head_motion_rate_hz: p.head_motion_rate_hz * f(),
        head_motion_amplitude_rad: p.head_motion_amplitude_rad * f(),
        mean_gaze_pitch_rad: (p.mean_gaze_pitch_rad * f()).clamp(GAZE_DOWN_RAD, GAZE_UP_RAD),
        lean_rate_hz: p.lean_rate_hz * f(),
    };
    // keep the personalized rates inside the valid region
    if q.blink_rate_hz * q.blink_duration_s >= 0.9 {
        q.blink_rate_hz = 0.9 / q.blink_duration_s;
    }
    q.head_motion_rate_hz = q.head_motion_rate_hz.min(0.9 / MOTION_MEAN_S);
    q.lean_rate_hz = q.lean_rate_hz.min(0.9 / LEAN_MEAN_S);
    q
}

/// Synthesizes one subject. `index` counts within the level.
pub fn generate_subject(spec: &CohortSpec, level: RiskLevel, index: usize) -> Recording {
    let n = spec.n_frames();
    let fps = spec.fps;
    let total_s = n as f64 / fps;
    let tags = |name: &str| [seed::tag_str("synth"), level.index() as u64, index as u64, seed::tag_str(name)];
    let stream = |name: &str| seed::rng(spec.seed, &tags(name));

    let p = personalize(spec.effect_profile.get(level), spec.subject_jitter, &mut stream("profile"));
    let base_distance = BASE_DISTANCE_M
        * if spec.subject_jitter > 0.0 {
            (spec.subject_jitter * Normal::new(0.0, 1.0).unwrap().sample(&mut stream("distance"))).exp()
        } else {
            1.0
        };

    // eyelids
    let open_l = openness(&mut stream("blink"), n, fps, p.blink_rate_hz, p.blink_duration_s);

    // head rotation: nods on pitch, turns on yaw, wander on all three axes
    let mut rng = stream("head");
    let motions = renewal(&mut rng, p.head_motion_rate_hz, total_s, |r| r.random_range(1.0..2.5), MOTION_MEAN_S);
    let mut nods = Vec::new();
    let mut turns = Vec::new();
    for &(t, d) in &motions {
        let amp = p.head_motion_amplitude_rad * rng.random_range(0.5..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        if rng.random::<bool>() {
            nods.push((t, d, amp));
        } else {
            turns.push((t, d, amp));
        }
    }
    let mut pitch = drift(&mut stream("pitch-drift"), n, fps, spec.head_drift_rad);
    let mut yaw = drift(&mut stream("yaw-drift"), n, fps, spec.head_drift_rad);
    let roll = drift(&mut stream("roll-drift"), n, fps, 0.5 * spec.head_drift_rad);
    add_events(&mut pitch, fps, &nods, raised_cosine);
    add_events(&mut yaw, fps, &turns, raised_cosine);

    // distance: forward leans plus slow wander
    let mut rng = stream("lean");
    let leans = renewal(&mut rng, p.lean_rate_hz, total_s, |r| r.random_range(3.0..8.0), LEAN_MEAN_S);
    let lean_events: Vec<(f64, f64, f64)> = leans
        .iter()
        .map(|&(t, d)| (t, d, -LEAN_DEPTH_M * rng.random_range(0.5..1.0)))
        .collect();
    let mut distance = drift(&mut stream("distance-drift"), n, fps, 0.5 * spec.head_drift_rad);
    for v in distance.iter_mut() {
        *v += base_distance;
    }
    add_events(&mut distance, fps, &lean_events, raised_cosine);

    // image-plane translation wander in pixels
    let tx = drift(&mut stream("tx"), n, fps, 300.0 * spec.head_drift_rad);
    let ty = drift(&mut stream("ty"), n, fps, 300.0 * spec.head_drift_rad);

    // gaze
    let g_pitch = gaze_pitch(&mut stream("gaze-pitch"), n, fps, p.mean_gaze_pitch_rad);
    let g_yaw = gaze_yaw(&mut stream("gaze-yaw"), n, fps, p.gaze_scan_rate_hz);
    let mut rng = stream("gaze-noise");
    let gaze_noise: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            let v = gaussian(&mut rng, 4, spec.gaze_noise_rad);
            [v[0], v[1], v[2], v[3]]
        })
        .collect();

    let template = face_template();
    let model = FaceModel3D::default();
    let mut noise_rng = stream("landmark-noise");
    let mut drop_rng = stream("dropout");
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).unwrap());

    let mut frames = Vec::with_capacity(n);
    let mut pts = template;
    for i in 0..n {
        let t = i as f64 / fps;
        if spec.dropout_prob > 0.0 && drop_rng.random::<f64>() < spec.dropout_prob {
            frames.push(LandmarkFrame::invalid(i as u64, t));
            continue;
        }
        let lids_l = eye_points(template[36], template[39], open_l[i]);
        let lids_r = eye_points(template[42], template[45], open_l[i]);
        for (k, idx) in [37, 38, 40, 41].into_iter().enumerate() {
            pts[idx] = lids_l[k];
        }
        for (k, idx) in [43, 44, 46, 47].into_iter().enumerate() {
            pts[idx] = lids_r[k];
        }
        let r: Matrix3<f64> = rotation_from_euler(pitch[i], yaw[i], roll[i]);
        let scale = model.focal_length_px / distance[i];
        let c = Point2::new(CENTER.x + tx[i], CENTER.y + ty[i]);
        let landmarks = pts
            .iter()
            .map(|q| {
                let v = r * Vector3::new(q[0], q[1], q[2]);
                let (mut x, mut y) = (scale * v.x + c.x, scale * v.y + c.y);
                if let Some(nd) = &noise {
                    x += nd.sample(&mut noise_rng);
                    y += nd.sample(&mut noise_rng);
                }
                Point2::new(x, y)
            })
            .collect();
        let g = gaze_noise[i];
        let (gl, gr) = if spec.has_gaze {
            (
                Some(Gaze {
                    pitch: g_pitch[i] + g[0],
                    yaw: g_yaw[i] + g[1],
                }),
                Some(Gaze {
                    pitch: g_pitch[i] + g[2],
                    yaw: g_yaw[i] + g[3],
                }),
            )
        } else {
            (None, None)
        };
        frames.push(LandmarkFrame {
            frame_index: i as u64,
            timestamp_s: t,
            landmarks,
            gaze_left: gl,
            gaze_right: gr,
            valid: true,
        });
    }
    Recording {
        subject_id: subject_id(level, index),
        risk_label: level,
        fps,
        has_gaze: spec.has_gaze,
        frames,
    }
}

/// All subjects, Low first, then Medium, then High.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<Recording>, SynthError> {
    spec.validate()?;
    let mut out = Vec::new();
    for level in RiskLevel::ALL {
        for i in 0..spec.n_subjects_per_level[level.index()] {
            out.push(generate_subject(spec, level, i));
        }
    }
    Ok(out)
}

/// Writes one file per recording plus `manifest.toml` into `dir` and returns
/// the manifest path.
pub fn write_cohort(recordings: &[Recording], dir: &Path, format: Format) -> Result<PathBuf, SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| ingest::IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    };
    let mut manifest = Manifest {
        format: Some(format),
        recordings: Vec::with_capacity(recordings.len()),
    };
    for rec in recordings {
        let name = PathBuf::from(format!("{}.{ext}", rec.subject_id));
        ingest::write_recording(rec, &dir.join(&name), format)?;
        manifest.recordings.push(ManifestEntry {
            path: name,
            subject_id: Some(rec.subject_id.clone()),
            risk_label: Some(rec.risk_label),
            fps: Some(rec.fps),
            format: None,
        });
    }
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}
