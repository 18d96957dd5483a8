//! Landmark recording ingestion.
//!
//! A recording is one subject's interview as a sequence of frames, each with
//! the 68-point 2D facial landmark layout and optional per-eye gaze angles.
//! Two on-disk formats are supported:
//!
//! * CSV: `# key=value` metadata lines (`subject_id`, `risk_label`, `fps`),
//!   then a header row `frame_index,timestamp_s,x0,y0,...,x67,y67` with the
//!   optional gaze columns `gazeL_pitch,gazeL_yaw,gazeR_pitch,gazeR_yaw`.
//! * JSONL: a header object on the first line, then one frame object per line.
//!
//! Rows whose landmark count is wrong or that contain non-finite values are
//! kept as `valid = false` frames; they never contribute landmark values
//! downstream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::postproc::segment_count;

pub const N_LANDMARKS: usize = 68;

pub const GAZE_COLUMNS: [&str; 4] = ["gazeL_pitch", "gazeL_yaw", "gazeR_pitch", "gazeR_yaw"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("missing header field `{0}`")]
    MissingHeaderField(String),
    #[error("unknown risk label `{0}` (expected low, medium or high)")]
    UnknownRiskLabel(String),
    #[error("frame index {next} does not follow {prev}")]
    NonMonotonicFrameIndex { prev: u64, next: u64 },
    #[error("timestamp {next} s precedes {prev} s")]
    NonMonotonicTimestamp { prev: f64, next: f64 },
    #[error("fps must be a positive finite number, got {0}")]
    InvalidFps(f64),
    #[error("malformed row {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("cohort is empty")]
    EmptyCohort,
}

type Result<T> = std::result::Result<T, IngestError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Gaze direction of one eye, radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaze {
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Single-letter code used in direction strings.
    pub fn code(self) -> char {
        match self {
            RiskLevel::Low => 'L',
            RiskLevel::Medium => 'M',
            RiskLevel::High => 'H',
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLevel {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "l" => Ok(RiskLevel::Low),
            "medium" | "m" => Ok(RiskLevel::Medium),
            "high" | "h" => Ok(RiskLevel::High),
            _ => Err(IngestError::UnknownRiskLabel(s.trim().to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub frame_index: u64,
    pub timestamp_s: f64,
    /// Exactly [`N_LANDMARKS`] points when `valid`, empty otherwise.
    pub landmarks: Vec<Point2>,
    pub gaze_left: Option<Gaze>,
    pub gaze_right: Option<Gaze>,
    pub valid: bool,
}

impl LandmarkFrame {
    pub fn invalid(frame_index: u64, timestamp_s: f64) -> Self {
        Self {
            frame_index,
            timestamp_s,
            landmarks: Vec::new(),
            gaze_left: None,
            gaze_right: None,
            valid: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    pub fps: f64,
    /// Whether the source carried gaze columns at all.
    pub has_gaze: bool,
    pub frames: Vec<LandmarkFrame>,
}

impl Recording {
    /// Number of frame positions spanned, counting skipped indices.
    pub fn span_frames(&self) -> usize {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (b.frame_index - a.frame_index + 1) as usize,
            _ => 0,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.span_frames() as f64 / self.fps
    }

    pub fn valid_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.valid).count()
    }
}

/// Landmark indices of the eyes, eye corners and mouth corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EyeIndexMap {
    /// p1..p6, p1 and p4 the horizontal corners.
    pub left_eye: [usize; 6],
    pub right_eye: [usize; 6],
    /// Image-left outer, image-left inner, image-right inner, image-right outer.
    pub eye_corners: [usize; 4],
    /// Image-left, image-right.
    pub mouth_corners: [usize; 2],
}

impl Default for EyeIndexMap {
    fn default() -> Self {
        Self {
            left_eye: [36, 37, 38, 39, 40, 41],
            right_eye: [42, 43, 44, 45, 46, 47],
            eye_corners: [36, 39, 42, 45],
            mouth_corners: [48, 54],
        }
    }
}

impl EyeIndexMap {
    pub fn validate(&self) -> std::result::Result<(), String> {
        fn check(name: &str, idx: &[usize]) -> std::result::Result<(), String> {
            let mut seen = BTreeSet::new();
            for &i in idx {
                if i >= N_LANDMARKS {
                    return Err(format!("{name}: index {i} out of range 0..=67"));
                }
                if !seen.insert(i) {
                    return Err(format!("{name}: duplicate index {i}"));
                }
            }
            Ok(())
        }
        check("left_eye", &self.left_eye)?;
        check("right_eye", &self.right_eye)?;
        check("eye_corners", &self.eye_corners)?;
        check("mouth_corners", &self.mouth_corners)
    }

    /// The six pose landmarks in [`crate::signals::FaceModel3D`] order.
    pub fn pose_indices(&self) -> [usize; 6] {
        let c = self.eye_corners;
        let m = self.mouth_corners;
        [c[0], c[1], c[2], c[3], m[0], m[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

pub fn parse_recording(path: &Path, format: Format) -> Result<Recording> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        Format::Csv => read_csv(reader),
        Format::Jsonl => read_jsonl(reader),
    }
}

pub fn write_recording(rec: &Recording, path: &Path, format: Format) -> Result<()> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        Format::Csv => write_csv(rec, &mut w)?,
        Format::Jsonl => write_jsonl(rec, &mut w)?,
    }
    w.flush().map_err(io_err)
}

struct Header {
    subject_id: String,
    risk_label: RiskLevel,
    fps: f64,
}

fn header_from_map(map: &BTreeMap<String, String>) -> Result<Header> {
    let get = |k: &str| {
        map.get(k)
            .cloned()
            .ok_or_else(|| IngestError::MissingHeaderField(k.to_string()))
    };
    let subject_id = get("subject_id")?;
    let risk_label = get("risk_label")?.parse()?;
    let fps_raw = get("fps")?;
    let fps: f64 = fps_raw
        .trim()
        .parse()
        .map_err(|_| IngestError::MissingHeaderField("fps".into()))?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(IngestError::InvalidFps(fps));
    }
    Ok(Header {
        subject_id,
        risk_label,
        fps,
    })
}

struct FrameOrder {
    prev: Option<(u64, f64)>,
}

impl FrameOrder {
    fn check(&mut self, idx: u64, ts: f64) -> Result<()> {
        if let Some((pi, pt)) = self.prev {
            if idx <= pi {
                return Err(IngestError::NonMonotonicFrameIndex { prev: pi, next: idx });
            }
            if ts < pt {
                return Err(IngestError::NonMonotonicTimestamp { prev: pt, next: ts });
            }
        }
        self.prev = Some((idx, ts));
        Ok(())
    }
}

fn parse_num(field: Option<&str>) -> Option<f64> {
    let v: f64 = field?.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn gaze_pair(p: Option<f64>, y: Option<f64>) -> Option<Gaze> {
    Some(Gaze { pitch: p?, yaw: y? })
}

pub fn read_csv<R: Read>(reader: R) -> Result<Recording> {
    let mut buf = BufReader::new(reader);
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    let mut line = String::new();
    // Metadata lines come before the column header.
    loop {
        line.clear();
        let n = buf.read_line(&mut line).map_err(|source| IngestError::Io {
            path: PathBuf::from("<csv>"),
            source,
        })?;
        if n == 0 {
            break;
        }
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        body.push_str(&line);
        break;
    }
    buf.read_to_string(&mut body).map_err(|source| IngestError::Io {
        path: PathBuf::from("<csv>"),
        source,
    })?;
    let header = header_from_map(&meta)?;

    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let cols = rdr.headers()?.clone();
    let pos = |name: &str| cols.iter().position(|c| c.trim() == name);
    let idx_col = pos("frame_index").ok_or_else(|| IngestError::MissingHeaderField("frame_index".into()))?;
    let ts_col = pos("timestamp_s").ok_or_else(|| IngestError::MissingHeaderField("timestamp_s".into()))?;
    let mut lm_cols = Vec::with_capacity(N_LANDMARKS);
    for i in 0..N_LANDMARKS {
        let x = pos(&format!("x{i}")).ok_or_else(|| IngestError::MissingHeaderField(format!("x{i}")))?;
        let y = pos(&format!("y{i}")).ok_or_else(|| IngestError::MissingHeaderField(format!("y{i}")))?;
        lm_cols.push((x, y));
    }
    let gaze_cols: Vec<Option<usize>> = GAZE_COLUMNS.iter().map(|c| pos(c)).collect();
    let has_gaze = gaze_cols.iter().all(Option::is_some);

    let mut frames = Vec::new();
    let mut order = FrameOrder { prev: None };
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line_no = row_no + 2;
        let frame_index: u64 = rec
            .get(idx_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| IngestError::MalformedRow {
                line: line_no,
                msg: "unreadable frame_index".into(),
            })?;
        let timestamp_s = parse_num(rec.get(ts_col)).ok_or_else(|| IngestError::MalformedRow {
            line: line_no,
            msg: "unreadable timestamp_s".into(),
        })?;
        order.check(frame_index, timestamp_s)?;

        if rec.len() != cols.len() {
            frames.push(LandmarkFrame::invalid(frame_index, timestamp_s));
            continue;
        }
        let landmarks: Option<Vec<Point2>> = lm_cols
            .iter()
            .map(|&(xc, yc)| Some(Point2::new(parse_num(rec.get(xc))?, parse_num(rec.get(yc))?)))
            .collect();
        let Some(landmarks) = landmarks else {
            frames.push(LandmarkFrame::invalid(frame_index, timestamp_s));
            continue;
        };
        let g = |k: usize| gaze_cols[k].and_then(|c| parse_num(rec.get(c)));
        frames.push(LandmarkFrame {
            frame_index,
            timestamp_s,
            landmarks,
            gaze_left: gaze_pair(g(0), g(1)),
            gaze_right: gaze_pair(g(2), g(3)),
            valid: true,
        });
    }
    Ok(Recording {
        subject_id: header.subject_id,
        risk_label: header.risk_label,
        fps: header.fps,
        has_gaze,
        frames,
    })
}

pub fn write_csv<W: Write>(rec: &Recording, w: &mut W) -> Result<()> {
    let io = |source| IngestError::Io {
        path: PathBuf::from("<csv>"),
        source,
    };
    writeln!(w, "# subject_id={}", rec.subject_id).map_err(io)?;
    writeln!(w, "# risk_label={}", rec.risk_label).map_err(io)?;
    writeln!(w, "# fps={}", rec.fps).map_err(io)?;
    let mut cw = csv::Writer::from_writer(w);
    let mut header = vec!["frame_index".to_string(), "timestamp_s".to_string()];
    for i in 0..N_LANDMARKS {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    if rec.has_gaze {
        header.extend(GAZE_COLUMNS.iter().map(|s| s.to_string()));
    }
    cw.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for f in &rec.frames {
        row.clear();
        row.push(f.frame_index.to_string());
        row.push(f.timestamp_s.to_string());
        if f.valid {
            for p in &f.landmarks {
                row.push(p.x.to_string());
                row.push(p.y.to_string());
            }
        } else {
            row.extend(std::iter::repeat_n(String::new(), 2 * N_LANDMARKS));
        }
        if rec.has_gaze {
            for g in [f.gaze_left, f.gaze_right] {
                match g {
                    Some(g) if f.valid => {
                        row.push(g.pitch.to_string());
                        row.push(g.yaw.to_string());
                    }
                    _ => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
        }
        cw.write_record(&row)?;
    }
    cw.flush().map_err(io)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    subject_id: Option<String>,
    risk_label: Option<String>,
    fps: Option<f64>,
    #[serde(default)]
    has_gaze: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct JsonFrame {
    frame_index: u64,
    timestamp_s: f64,
    #[serde(default)]
    landmarks: Option<Vec<[Option<f64>; 2]>>,
    #[serde(default)]
    gaze_left: Option<[Option<f64>; 2]>,
    #[serde(default)]
    gaze_right: Option<[Option<f64>; 2]>,
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Recording> {
    let buf = BufReader::new(reader);
    let mut lines = buf.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let io = |source| IngestError::Io {
        path: PathBuf::from("<jsonl>"),
        source,
    };
    let (ln, first) = lines
        .next()
        .ok_or_else(|| IngestError::MissingHeaderField("subject_id".into()))?;
    let first = first.map_err(io)?;
    let jh: JsonHeader =
        serde_json::from_str(&first).map_err(|source| IngestError::Json { line: ln, source })?;
    let mut meta = BTreeMap::new();
    if let Some(s) = jh.subject_id {
        meta.insert("subject_id".to_string(), s);
    }
    if let Some(s) = jh.risk_label {
        meta.insert("risk_label".to_string(), s);
    }
    if let Some(f) = jh.fps {
        meta.insert("fps".to_string(), f.to_string());
    }
    let header = header_from_map(&meta)?;
    let mut has_gaze = jh.has_gaze.unwrap_or(false);
    let explicit_gaze = jh.has_gaze.is_some();

    let mut frames = Vec::new();
    let mut order = FrameOrder { prev: None };
    for (ln, line) in lines {
        let line = line.map_err(io)?;
        let jf: JsonFrame =
            serde_json::from_str(&line).map_err(|source| IngestError::Json { line: ln, source })?;
        order.check(jf.frame_index, jf.timestamp_s)?;
        if !explicit_gaze && (jf.gaze_left.is_some() || jf.gaze_right.is_some()) {
            has_gaze = true;
        }
        let pts: Option<Vec<Point2>> = jf.landmarks.as_ref().and_then(|lm| {
            if lm.len() != N_LANDMARKS {
                return None;
            }
            lm.iter()
                .map(|[x, y]| {
                    let (x, y) = (x.filter(|v| v.is_finite())?, y.filter(|v| v.is_finite())?);
                    Some(Point2::new(x, y))
                })
                .collect()
        });
        let g = |a: Option<[Option<f64>; 2]>| {
            a.and_then(|[p, y]| gaze_pair(p.filter(|v| v.is_finite()), y.filter(|v| v.is_finite())))
        };
        frames.push(match pts {
            Some(landmarks) => LandmarkFrame {
                frame_index: jf.frame_index,
                timestamp_s: jf.timestamp_s,
                landmarks,
                gaze_left: g(jf.gaze_left),
                gaze_right: g(jf.gaze_right),
                valid: true,
            },
            None => LandmarkFrame::invalid(jf.frame_index, jf.timestamp_s),
        });
    }
    Ok(Recording {
        subject_id: header.subject_id,
        risk_label: header.risk_label,
        fps: header.fps,
        has_gaze,
        frames,
    })
}

pub fn write_jsonl<W: Write>(rec: &Recording, w: &mut W) -> Result<()> {
    let io = |source| IngestError::Io {
        path: PathBuf::from("<jsonl>"),
        source,
    };
    let json = |e| IngestError::Json { line: 0, source: e };
    let h = JsonHeader {
        subject_id: Some(rec.subject_id.clone()),
        risk_label: Some(rec.risk_label.to_string()),
        fps: Some(rec.fps),
        has_gaze: Some(rec.has_gaze),
    };
    writeln!(w, "{}", serde_json::to_string(&h).map_err(json)?).map_err(io)?;
    for f in &rec.frames {
        let g = |g: Option<Gaze>| {
            g.filter(|_| f.valid && rec.has_gaze)
                .map(|g| [Some(g.pitch), Some(g.yaw)])
        };
        let jf = JsonFrame {
            frame_index: f.frame_index,
            timestamp_s: f.timestamp_s,
            landmarks: f
                .valid
                .then(|| f.landmarks.iter().map(|p| [Some(p.x), Some(p.y)]).collect()),
            gaze_left: g(f.gaze_left),
            gaze_right: g(f.gaze_right),
        };
        writeln!(w, "{}", serde_json::to_string(&jf).map_err(json)?).map_err(io)?;
    }
    Ok(())
}

/// One entry of a cohort manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_label: Option<RiskLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default)]
    pub recordings: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| IngestError::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Paths resolved against the manifest's directory, with formats.
    pub fn resolved_paths(&self, manifest_path: &Path, default: Option<Format>) -> Vec<(PathBuf, Format)> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.recordings
            .iter()
            .map(|e| {
                let p = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                let fmt = e
                    .format
                    .or(default)
                    .or(self.format)
                    .unwrap_or_else(|| Format::from_path(&p));
                (p, fmt)
            })
            .collect()
    }
}

/// Parses every recording listed in a manifest, checking that any metadata
/// the manifest states agrees with the file header.
pub fn load_cohort(manifest_path: &Path, format: Option<Format>) -> Result<Vec<Recording>> {
    let manifest = Manifest::load(manifest_path)?;
    let mut out = Vec::with_capacity(manifest.recordings.len());
    for (entry, (path, fmt)) in manifest
        .recordings
        .iter()
        .zip(manifest.resolved_paths(manifest_path, format))
    {
        let rec = parse_recording(&path, fmt)?;
        let mismatch = |field: &str| {
            IngestError::Manifest(format!("{}: manifest {field} disagrees with file header", path.display()))
        };
        if entry.subject_id.as_ref().is_some_and(|s| *s != rec.subject_id) {
            return Err(mismatch("subject_id"));
        }
        if entry.risk_label.is_some_and(|r| r != rec.risk_label) {
            return Err(mismatch("risk_label"));
        }
        if entry.fps.is_some_and(|f| (f - rec.fps).abs() > 1e-9 * rec.fps) {
            return Err(mismatch("fps"));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: Option<RiskLevel>,
    pub subjects: usize,
    pub recordings: usize,
    pub minutes: f64,
    pub predicted_segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub levels: Vec<LevelSummary>,
    pub total: LevelSummary,
    pub window_s: f64,
    pub hop_s: f64,
}

impl CohortSummary {
    pub fn level(&self, level: RiskLevel) -> &LevelSummary {
        &self.levels[level.index()]
    }
}

pub fn validate_cohort(recordings: &[Recording]) -> Result<CohortSummary> {
    validate_cohort_with(recordings, 120.0, 60.0)
}

/// Per-level subject counts, durations and predicted segment counts.
pub fn validate_cohort_with(recordings: &[Recording], window_s: f64, hop_s: f64) -> Result<CohortSummary> {
    if recordings.is_empty() {
        return Err(IngestError::EmptyCohort);
    }
    let mut levels: Vec<LevelSummary> = RiskLevel::ALL
        .iter()
        .map(|&l| LevelSummary {
            level: Some(l),
            ..Default::default()
        })
        .collect();
    let mut subjects: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); 3];
    for r in recordings {
        let s = &mut levels[r.risk_label.index()];
        s.recordings += 1;
        s.minutes += r.duration_s() / 60.0;
        let w = (window_s * r.fps).round() as usize;
        let h = (hop_s * r.fps).round() as usize;
        s.predicted_segments += segment_count(r.span_frames(), w, h);
        subjects[r.risk_label.index()].insert(&r.subject_id);
    }
    for (s, ids) in levels.iter_mut().zip(&subjects) {
        s.subjects = ids.len();
    }
    let total = LevelSummary {
        level: None,
        subjects: levels.iter().map(|l| l.subjects).sum(),
        recordings: levels.iter().map(|l| l.recordings).sum(),
        minutes: levels.iter().map(|l| l.minutes).sum(),
        predicted_segments: levels.iter().map(|l| l.predicted_segments).sum(),
    };
    Ok(CohortSummary {
        levels,
        total,
        window_s,
        hop_s,
    })
}
