//! Per-frame low-level signals: eye aspect ratio, head pose, head distance.
//!
//! Head pose uses a weak-perspective (scaled orthographic) fit of a generic
//! six-point face model (four eye corners, two mouth corners) to the image
//! landmarks. The rotation maps model coordinates into the camera frame, both
//! in image convention: x right, y down, z away from the camera. Euler angles
//! are intrinsic x-y-z, `R = Rx(pitch) * Ry(yaw) * Rz(roll)`.
//!
//! The eye aspect ratio is `(|p2 - p6| + |p3 - p5|) / (2 |p1 - p4|)`. Some
//! printed variants of the formula carry a minus sign between the two
//! vertical distances, which is identically zero for a vertically symmetric
//! eye; the sum form is the one implemented here.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, Matrix2x6, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EyeIndexMap, Gaze, LandmarkFrame, Point2, Recording, RiskLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("degenerate eye: corner distance {0} px")]
    DegenerateEye(f64),
    #[error("degenerate landmark configuration (rank < 2)")]
    DegenerateConfiguration,
    #[error("projection scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid face model: {0}")]
    InvalidModel(String),
    #[error("frame is not valid")]
    InvalidFrame,
}

const EYE_EPS: f64 = 1e-9;

/// Eye aspect ratio from the six eye contour points p1..p6.
pub fn compute_ear(eye: &[Point2; 6]) -> Result<f64, SignalError> {
    let [p1, p2, p3, p4, p5, p6] = *eye;
    let width = p1.dist(p4);
    if !(width >= EYE_EPS) {
        return Err(SignalError::DegenerateEye(width));
    }
    Ok((p2.dist(p6) + p3.dist(p5)) / (2.0 * width))
}

/// Generic rigid face model for pose fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceModel3D {
    /// Image-left outer eye corner, image-left inner, image-right inner,
    /// image-right outer, image-left mouth corner, image-right mouth corner.
    pub points: [[f64; 3]; 6],
    pub interocular_width: f64,
    pub focal_length_px: f64,
}

impl Default for FaceModel3D {
    /// Canonical adult face in metres: outer eye corners 9 cm apart, mouth
    /// corners 5 cm apart and 7 cm below the eye line, outer eye corners
    /// 1 cm deeper than the inner ones. Focal length matches a 640x480
    /// webcam with roughly 55 degrees horizontal field of view.
    fn default() -> Self {
        Self {
            points: [
                [-0.045, -0.035, 0.010],
                [-0.015, -0.035, 0.000],
                [0.015, -0.035, 0.000],
                [0.045, -0.035, 0.010],
                [-0.025, 0.035, 0.008],
                [0.025, 0.035, 0.008],
            ],
            interocular_width: 0.09,
            focal_length_px: 600.0,
        }
    }
}

impl FaceModel3D {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.interocular_width > 0.0 && self.interocular_width.is_finite()) {
            return Err(SignalError::InvalidModel("interocular_width must be > 0".into()));
        }
        if !(self.focal_length_px > 0.0 && self.focal_length_px.is_finite()) {
            return Err(SignalError::InvalidModel("focal_length_px must be > 0".into()));
        }
        let m = self.centered();
        let sv = (m * m.transpose()).symmetric_eigenvalues();
        let mut sv: Vec<f64> = sv.iter().map(|v| v.max(0.0).sqrt()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if !(sv[0] > 0.0 && sv[1] > 1e-9 * sv[0]) {
            return Err(SignalError::InvalidModel("points must span at least a plane".into()));
        }
        Ok(())
    }

    fn centered(&self) -> Matrix3x6<f64> {
        let mut m = Matrix3x6::from_fn(|r, c| self.points[c][r]);
        for r in 0..3 {
            let mean = m.row(r).mean();
            m.row_mut(r).add_scalar_mut(-mean);
        }
        m
    }

    /// Weak-perspective projection of the model: `scale * R[0..2] * X + t`.
    pub fn project(&self, rotation: &Matrix3<f64>, scale: f64, translation: Point2) -> [Point2; 6] {
        let mut out = [Point2::default(); 6];
        for (o, p) in out.iter_mut().zip(&self.points) {
            let v = rotation * Vector3::new(p[0], p[1], p[2]);
            *o = Point2::new(scale * v.x + translation.x, scale * v.y + translation.y);
        }
        out
    }
}

/// `Rx(pitch) * Ry(yaw) * Rz(roll)`.
pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    let (sx, cx) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sz, cz) = roll.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Inverse of [`rotation_from_euler`]; yaw in [-pi/2, pi/2].
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let yaw = r[(0, 2)].atan2(r[(0, 0)].hypot(r[(0, 1)]));
    let pitch = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let roll = (-r[(0, 1)]).atan2(r[(0, 0)]);
    (pitch, yaw, roll)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadPose {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    /// Pixels per model unit.
    pub scale: f64,
    pub rotation: Matrix3<f64>,
}

impl HeadPose {
    /// Close to the x-y-z gimbal singularity (middle angle near +-90 deg).
    pub fn near_gimbal_lock(&self) -> bool {
        self.yaw.cos() < 0.05
    }
}

/// Fits a scaled rotation to six image points under weak perspective.
///
/// Both point sets are centered, the 2x3 linear map minimizing squared
/// reprojection error is solved in closed form, and the map is completed to
/// the nearest proper rotation through an SVD with determinant correction.
pub fn fit_head_pose(image: &[Point2; 6], model: &FaceModel3D) -> Result<HeadPose, SignalError> {
    if image.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(SignalError::DegenerateConfiguration);
    }
    let mut x = Matrix2x6::from_fn(|r, c| if r == 0 { image[c].x } else { image[c].y });
    for r in 0..2 {
        let mean = x.row(r).mean();
        x.row_mut(r).add_scalar_mut(-mean);
    }
    let sv = x.singular_values();
    let (smax, smin) = (sv[0].max(sv[1]), sv[0].min(sv[1]));
    if !(smax > 0.0) || smin <= 1e-9 * smax.max(1.0) {
        return Err(SignalError::DegenerateConfiguration);
    }

    let m = model.centered();
    let mmt = m * m.transpose();
    let inv = mmt
        .pseudo_inverse(1e-12 * mmt.norm())
        .map_err(|_| SignalError::DegenerateConfiguration)?;
    let p: Matrix2x3<f64> = x * m.transpose() * inv;

    let r1 = p.row(0).transpose();
    let r2 = p.row(1).transpose();
    let scale = 0.5 * (r1.norm() + r2.norm());
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(SignalError::DegenerateConfiguration);
    }
    let (a1, a2) = (r1 / scale, r2 / scale);
    let a3 = a1.cross(&a2);
    let approx = Matrix3::from_rows(&[a1.transpose(), a2.transpose(), a3.transpose()]);
    let svd = approx.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    let (pitch, yaw, roll) = euler_from_rotation(&rotation);
    Ok(HeadPose {
        pitch,
        yaw,
        roll,
        scale,
        rotation,
    })
}

/// Camera-to-face distance from the projection scale (pinhole relation
/// `apparent = focal * size / distance`), in model units.
pub fn head_distance(scale: f64, model: &FaceModel3D) -> Result<f64, SignalError> {
    if !(scale > 0.0) {
        return Err(SignalError::NonPositiveScale(scale));
    }
    Ok(model.focal_length_px / scale)
}

/// Scale implied by an apparent interocular width in pixels.
pub fn scale_from_apparent_width(apparent_px: f64, model: &FaceModel3D) -> f64 {
    apparent_px / model.interocular_width
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSignals {
    pub ear_left: f64,
    pub ear_right: f64,
    pub head_pitch: f64,
    pub head_yaw: f64,
    pub head_roll: f64,
    pub head_distance: f64,
    pub gaze_left: Option<Gaze>,
    pub gaze_right: Option<Gaze>,
    pub gimbal_flag: bool,
}

fn pick<const N: usize>(lm: &[Point2], idx: &[usize; N]) -> [Point2; N] {
    idx.map(|i| lm[i])
}

pub fn frame_signals(
    frame: &LandmarkFrame,
    map: &EyeIndexMap,
    model: &FaceModel3D,
) -> Result<FrameSignals, SignalError> {
    if !frame.valid || frame.landmarks.len() != crate::ingest::N_LANDMARKS {
        return Err(SignalError::InvalidFrame);
    }
    let lm = &frame.landmarks;
    let ear_left = compute_ear(&pick(lm, &map.left_eye))?;
    let ear_right = compute_ear(&pick(lm, &map.right_eye))?;
    let pose = fit_head_pose(&pick(lm, &map.pose_indices()), model)?;
    let head_distance = head_distance(pose.scale, model)?;
    Ok(FrameSignals {
        ear_left,
        ear_right,
        head_pitch: pose.pitch,
        head_yaw: pose.yaw,
        head_roll: pose.roll,
        head_distance,
        gaze_left: frame.gaze_left,
        gaze_right: frame.gaze_right,
        gimbal_flag: pose.near_gimbal_lock(),
    })
}

/// Frames that produced no signals, by reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub total_frames: usize,
    pub invalid_input: usize,
    pub degenerate_eye: usize,
    pub degenerate_pose: usize,
    pub gimbal_flagged: usize,
}

impl SkipReport {
    pub fn skipped(&self) -> usize {
        self.invalid_input + self.degenerate_eye + self.degenerate_pose
    }
}

/// Signals of one recording on a dense frame grid starting at `first_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingSignals {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    pub fps: f64,
    pub has_gaze: bool,
    pub first_index: u64,
    pub frames: Vec<Option<FrameSignals>>,
    pub skips: SkipReport,
}

pub fn recording_signals(
    rec: &Recording,
    map: &EyeIndexMap,
    model: &FaceModel3D,
) -> RecordingSignals {
    let first_index = rec.frames.first().map_or(0, |f| f.frame_index);
    let mut frames = vec![None; rec.span_frames()];
    let mut skips = SkipReport {
        total_frames: frames.len(),
        ..Default::default()
    };
    // Frame positions absent from the file count as invalid input.
    skips.invalid_input = frames.len() - rec.frames.len();
    for f in &rec.frames {
        let slot = (f.frame_index - first_index) as usize;
        match frame_signals(f, map, model) {
            Ok(s) => {
                skips.gimbal_flagged += s.gimbal_flag as usize;
                frames[slot] = Some(s);
            }
            Err(SignalError::DegenerateEye(_)) => skips.degenerate_eye += 1,
            Err(SignalError::DegenerateConfiguration) | Err(SignalError::NonPositiveScale(_)) => {
                skips.degenerate_pose += 1
            }
            Err(_) => skips.invalid_input += 1,
        }
    }
    RecordingSignals {
        subject_id: rec.subject_id.clone(),
        risk_label: rec.risk_label,
        fps: rec.fps,
        has_gaze: rec.has_gaze,
        first_index,
        frames,
        skips,
    }
}

pub const SIGNAL_COLUMNS: [&str; 12] = [
    "frame_index",
    "timestamp_s",
    "ear_left",
    "ear_right",
    "head_pitch",
    "head_yaw",
    "head_roll",
    "head_distance",
    "gazeL_pitch",
    "gazeL_yaw",
    "gazeR_pitch",
    "gazeR_yaw",
];

/// One CSV row per frame that produced signals.
pub fn write_signals_csv<W: std::io::Write>(sig: &RecordingSignals, w: W) -> csv::Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(SIGNAL_COLUMNS)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for (i, s) in sig.frames.iter().enumerate() {
        let Some(s) = s else { continue };
        let idx = sig.first_index + i as u64;
        cw.write_record([
            idx.to_string(),
            (idx as f64 / sig.fps).to_string(),
            s.ear_left.to_string(),
            s.ear_right.to_string(),
            s.head_pitch.to_string(),
            s.head_yaw.to_string(),
            s.head_roll.to_string(),
            s.head_distance.to_string(),
            opt(s.gaze_left.map(|g| g.pitch)),
            opt(s.gaze_left.map(|g| g.yaw)),
            opt(s.gaze_right.map(|g| g.pitch)),
            opt(s.gaze_right.map(|g| g.yaw)),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn example_eye() -> [Point2; 6] {
        [p(0.0, 0.0), p(1.0, 1.0), p(3.0, 1.0), p(4.0, 0.0), p(3.0, -1.0), p(1.0, -1.0)]
    }

    #[test]
    fn ear_hand_example() {
        assert_eq!(compute_ear(&example_eye()).unwrap(), 0.5);
    }

    #[test]
    fn ear_closed_eye_is_zero() {
        let eye = [p(0.0, 0.0), p(1.0, 0.2), p(3.0, 0.1), p(4.0, 0.0), p(3.0, 0.1), p(1.0, 0.2)];
        assert_eq!(compute_ear(&eye).unwrap(), 0.0);
    }

    #[test]
    fn ear_scale_invariant() {
        for s in [0.01, 0.5, 3.0, 1e4] {
            let eye = example_eye().map(|q| p(q.x * s, q.y * s));
            assert!((compute_ear(&eye).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn ear_degenerate_corners() {
        let mut eye = example_eye();
        eye[3] = eye[0];
        assert!(matches!(compute_ear(&eye), Err(SignalError::DegenerateEye(_))));
    }

    #[test]
    fn identity_pose() {
        let model = FaceModel3D::default();
        let img = model.project(&Matrix3::identity(), 1.0, Point2::default());
        let pose = fit_head_pose(&img, &model).unwrap();
        assert!(pose.pitch.abs() < 1e-9 && pose.yaw.abs() < 1e-9 && pose.roll.abs() < 1e-9);
        assert!((pose.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn known_rotation_recovered() {
        let model = FaceModel3D::default();
        let r = rotation_from_euler(0.2, -0.3, 0.1);
        let img = model.project(&r, 950.0, p(320.0, 240.0));
        let pose = fit_head_pose(&img, &model).unwrap();
        assert!((pose.pitch - 0.2).abs() < 1e-6);
        assert!((pose.yaw + 0.3).abs() < 1e-6);
        assert!((pose.roll - 0.1).abs() < 1e-6);
        assert!((pose.scale - 950.0).abs() < 1e-6);
    }

    #[test]
    fn collinear_points_rejected() {
        let model = FaceModel3D::default();
        let img: [Point2; 6] = std::array::from_fn(|i| p(i as f64 * 3.0, 2.0 * i as f64 * 3.0 + 1.0));
        assert_eq!(fit_head_pose(&img, &model), Err(SignalError::DegenerateConfiguration));
    }

    #[test]
    fn distance_pinhole() {
        let model = FaceModel3D {
            interocular_width: 0.1,
            focal_length_px: 500.0,
            ..Default::default()
        };
        let s = scale_from_apparent_width(100.0, &model);
        assert!((head_distance(s, &model).unwrap() - 0.5).abs() < 1e-12);
        assert!((head_distance(2.0 * s, &model).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(head_distance(0.0, &model), Err(SignalError::NonPositiveScale(0.0)));
    }

    #[test]
    fn model_validation() {
        assert!(FaceModel3D::default().validate().is_ok());
        let mut m = FaceModel3D::default();
        m.points = [[0.0, 0.0, 0.0]; 6];
        assert!(m.validate().is_err());
        m = FaceModel3D::default();
        m.focal_length_px = 0.0;
        assert!(m.validate().is_err());
    }

    fn frontal_frame() -> LandmarkFrame {
        let model = FaceModel3D::default();
        let map = EyeIndexMap::default();
        let mut lm = vec![p(0.0, 0.0); 68];
        for (k, i) in (0..68).enumerate() {
            lm[i] = p(200.0 + 3.0 * k as f64, 100.0 + ((k * 7) % 11) as f64);
        }
        let pose_pts = model.project(&Matrix3::identity(), 1000.0, p(320.0, 240.0));
        for (&i, q) in map.pose_indices().iter().zip(pose_pts) {
            lm[i] = q;
        }
        let eye = |o: Point2, i: Point2, lm: &mut Vec<Point2>, idx: [usize; 6]| {
            let w = i.x - o.x;
            lm[idx[1]] = p(o.x + w / 3.0, o.y - 4.0);
            lm[idx[2]] = p(o.x + 2.0 * w / 3.0, o.y - 4.0);
            lm[idx[4]] = p(o.x + 2.0 * w / 3.0, o.y + 4.0);
            lm[idx[5]] = p(o.x + w / 3.0, o.y + 4.0);
        };
        eye(lm[36], lm[39], &mut lm, map.left_eye);
        eye(lm[42], lm[45], &mut lm, map.right_eye);
        LandmarkFrame {
            frame_index: 0,
            timestamp_s: 0.0,
            landmarks: lm,
            gaze_left: Some(Gaze { pitch: -0.1, yaw: 0.2 }),
            gaze_right: None,
            valid: true,
        }
    }

    #[test]
    fn frontal_frame_signals() {
        let f = frontal_frame();
        let s = frame_signals(&f, &EyeIndexMap::default(), &FaceModel3D::default()).unwrap();
        assert!(s.ear_left > 0.0 && s.ear_right > 0.0);
        assert!(s.head_pitch.abs() < 1e-9 && s.head_yaw.abs() < 1e-9 && s.head_roll.abs() < 1e-9);
        assert!((s.head_distance - 0.6).abs() < 1e-9);
        assert_eq!(s.gaze_left, f.gaze_left);
        assert_eq!(s.gaze_right, None);
    }

    #[test]
    fn invalid_and_degenerate_frames_are_skipped() {
        let model = FaceModel3D::default();
        let map = EyeIndexMap::default();
        let good = frontal_frame();
        let mut bad_eye = good.clone();
        bad_eye.frame_index = 1;
        bad_eye.landmarks[39] = bad_eye.landmarks[36];
        let invalid = LandmarkFrame::invalid(3, 0.3);
        let mut g2 = good.clone();
        g2.frame_index = 4;
        let rec = Recording {
            subject_id: "s".into(),
            risk_label: RiskLevel::Low,
            fps: 10.0,
            has_gaze: true,
            frames: vec![good, bad_eye, invalid, g2],
        };
        let sig = recording_signals(&rec, &map, &model);
        assert_eq!(sig.frames.len(), 5);
        assert!(sig.frames[0].is_some() && sig.frames[4].is_some());
        assert!(sig.frames[1].is_none() && sig.frames[2].is_none() && sig.frames[3].is_none());
        assert_eq!(sig.skips.degenerate_eye, 1);
        // one missing index plus one explicit invalid frame
        assert_eq!(sig.skips.invalid_input, 2);
        assert_eq!(sig.skips.skipped(), 3);
        assert_eq!(
            frame_signals(&rec.frames[2], &map, &model),
            Err(SignalError::InvalidFrame)
        );
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (a, b, c) = (rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            let (x, y, z) = euler_from_rotation(&rotation_from_euler(a, b, c));
            assert!((x - a).abs() < 1e-9 && (y - b).abs() < 1e-9 && (z - c).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn ear_similarity_invariant(theta in -3.1f64..3.1, s in 0.05f64..50.0, tx in -500.0f64..500.0, ty in -500.0f64..500.0) {
            let (sn, cs) = theta.sin_cos();
            let eye = example_eye().map(|q| p(s * (cs * q.x - sn * q.y) + tx, s * (sn * q.x + cs * q.y) + ty));
            prop_assert!((compute_ear(&eye).unwrap() - 0.5).abs() < 1e-9);
        }

        #[test]
        fn distance_decreasing_in_scale(a in 1e-3f64..1e4, b in 1e-3f64..1e4) {
            let m = FaceModel3D::default();
            prop_assume!(a < b);
            prop_assert!(head_distance(a, &m).unwrap() > head_distance(b, &m).unwrap());
        }
    }
}
