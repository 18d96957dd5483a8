//! End-to-end runs.
//!
//! A run loads a cohort (from a manifest or the synthetic generator),
//! computes per-frame signals, slices and featurizes them, runs the
//! statistical suite and the stability selection, and classifies twice:
//! once on all functionals and once on the selected subset. Everything lands
//! in `out_dir/<run name>/{signals,features,stats,selection,models,summary}`
//! as CSV and JSON, each file stamped with the config hash and master seed.
//!
//! Stage results are cached under `cache_dir/<stage>/<key>.json`, where the
//! key hashes the stage's inputs and configuration.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    run_experiment, run_experiment_with, write_results_csv, ClassifyConfig, Control,
    ExperimentResult, ModelSpec,
};
use crate::dataset::Dataset;
use crate::functionals::{featurize, FeatureTable};
use crate::ingest::{self, EyeIndexMap, Format, Recording, RiskLevel};
use crate::postproc::{build_channels, slice_segments, PostprocConfig, Segment};
use crate::select::{explain_selection, stability_run, ExplainedFeature, SelectConfig, SelectionReport};
use crate::signals::{recording_signals, write_signals_csv, FaceModel3D, RecordingSignals, SkipReport};
use crate::stats::{run_stat_suite, StatReport, StatsConfig, PAIRS};
use crate::synth::{generate_cohort, CohortSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Signals,
    Postproc,
    Featurize,
    Stats,
    Select,
    Classify,
    Summary,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Signals => "signals",
            Stage::Postproc => "postproc",
            Stage::Featurize => "featurize",
            Stage::Stats => "stats",
            Stage::Select => "select",
            Stage::Classify => "classify",
            Stage::Summary => "summary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

fn config_err<E: fmt::Display>(e: E) -> PipelineError {
    PipelineError::new(Stage::Config, e)
}

/// Which specs get the shuffled-label and shuffled-feature controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlScope {
    None,
    /// The best all-feature spec.
    #[default]
    Best,
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Cohort manifest; the synthetic cohort is used when absent.
    pub manifest: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Run directory name; a UTC timestamp when absent.
    pub run_name: Option<String>,
    /// Stage cache root; caching is off when absent.
    pub cache_dir: Option<PathBuf>,
    /// Largest accuracy gap for which the selected set counts as representative.
    pub representative_tolerance: f64,
    pub write_signals: bool,
    pub controls: ControlScope,
    pub input: InputConfig,
    pub synth: Option<CohortSpec>,
    pub eye_map: EyeIndexMap,
    pub face_model: FaceModel3D,
    pub postproc: PostprocConfig,
    pub stats: StatsConfig,
    pub select: SelectConfig,
    pub classify: ClassifyConfig,
    pub models: Vec<ModelSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            out_dir: PathBuf::from("runs"),
            run_name: None,
            cache_dir: None,
            representative_tolerance: 0.03,
            write_signals: true,
            controls: ControlScope::Best,
            input: InputConfig::default(),
            synth: None,
            eye_map: EyeIndexMap::default(),
            face_model: FaceModel3D::default(),
            postproc: PostprocConfig::default(),
            stats: StatsConfig::default(),
            select: SelectConfig::default(),
            classify: ClassifyConfig::default(),
            models: ModelSpec::all(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML. `schema_version` must be present and supported; unknown
    /// keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let table: toml::Table = toml::from_str(text).map_err(config_err)?;
        match table.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(config_err(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"))),
            None => return Err(config_err("missing integer `schema_version`")),
        }
        let cfg: PipelineConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.input.manifest.is_some() && self.synth.is_some() {
            return Err(config_err("set either input.manifest or [synth], not both"));
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(config_err)?;
        }
        self.eye_map.validate().map_err(config_err)?;
        self.face_model.validate().map_err(config_err)?;
        self.postproc.validate().map_err(config_err)?;
        self.select.validate().map_err(config_err)?;
        if !(self.representative_tolerance >= 0.0 && self.representative_tolerance.is_finite()) {
            return Err(config_err("representative_tolerance must be >= 0"));
        }
        if self.models.is_empty() {
            return Err(config_err("no models configured"));
        }
        if self.classify.n_trials == 0 {
            return Err(config_err("classify.n_trials must be >= 1"));
        }
        if !(self.classify.test_fraction > 0.0 && self.classify.test_fraction < 1.0) {
            return Err(config_err("classify.test_fraction must lie in (0, 1)"));
        }
        for m in &self.models {
            if let Some(h) = &m.hyper {
                h.validate().map_err(config_err)?;
                if h.kind() != m.kind {
                    return Err(config_err(format!("hyperparameters {h} do not fit {}", m.kind)));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, in hex. Output location,
    /// run name and cache root are left out so that relocated or cached runs
    /// of the same experiment share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.run_name = None;
        c.cache_dir = None;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Config hash and master seed, stamped into every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn preamble(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.config_hash), format!("seed={}", self.seed)]
    }

    pub fn wrap<T: Serialize>(&self, data: &T) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "data": data,
        })
    }
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable")
}

/// Content-addressed stage cache.
pub struct Cache {
    root: Option<PathBuf>,
    pub hits: Vec<String>,
    pub misses: Vec<String>,
}

impl Cache {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self {
            root,
            hits: Vec::new(),
            misses: Vec::new(),
        }
    }

    pub fn path(&self, stage: &str, key: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(stage).join(format!("{key}.json")))
    }

    /// Returns the cached value for `(stage, key)` or computes and stores it.
    /// Unreadable entries are recomputed.
    pub fn get_or<T, F>(&mut self, stage: &str, key: &str, compute: F) -> Result<T, PipelineError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, PipelineError>,
    {
        let Some(path) = self.path(stage, key) else {
            return compute();
        };
        if let Some(v) = std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()) {
            self.hits.push(format!("{stage}/{key}"));
            return Ok(v);
        }
        self.misses.push(format!("{stage}/{key}"));
        let v = compute()?;
        let dir = path.parent().expect("cache path has a parent");
        let store = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!(".{key}.tmp"));
            std::fs::write(&tmp, json_bytes(&v))?;
            std::fs::rename(&tmp, &path)
        };
        // a failed store only costs a recomputation next time
        let _ = store();
        Ok(v)
    }
}

/// Segment bookkeeping for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSegments {
    pub subject_id: String,
    pub risk_label: RiskLevel,
    pub segments: usize,
    pub discarded: usize,
    pub skips: SkipReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: RiskLevel,
    pub subjects: usize,
    pub segments: usize,
    pub discarded: usize,
}

pub fn level_counts(subjects: &[SubjectSegments]) -> Vec<LevelCount> {
    RiskLevel::ALL
        .iter()
        .map(|&level| {
            let of: Vec<&SubjectSegments> = subjects.iter().filter(|s| s.risk_label == level).collect();
            LevelCount {
                level,
                subjects: of.len(),
                segments: of.iter().map(|s| s.segments).sum(),
                discarded: of.iter().map(|s| s.discarded).sum(),
            }
        })
        .collect()
}

/// Cohort recordings: the manifest when configured, otherwise the
/// synthetic cohort (the default spec when `[synth]` is absent).
pub fn load_recordings(cfg: &PipelineConfig, base: &Path) -> Result<Vec<Recording>, PipelineError> {
    match &cfg.input.manifest {
        Some(m) => ingest::load_cohort(&cfg.resolve(base, m), cfg.input.format).map_err(at(Stage::Ingest)),
        None => generate_cohort(&cfg.synth.clone().unwrap_or_default()).map_err(at(Stage::Ingest)),
    }
}

/// Hash of everything the cohort depends on: the synthetic spec, or the
/// bytes of the manifest and every recording it lists.
pub fn input_key(cfg: &PipelineConfig, base: &Path) -> Result<String, PipelineError> {
    match &cfg.input.manifest {
        None => Ok(sha_hex(&[b"synth", &json_bytes(&cfg.synth.clone().unwrap_or_default())])),
        Some(m) => {
            let path = cfg.resolve(base, m);
            let read = |p: &Path| std::fs::read(p).map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", p.display())));
            let manifest = ingest::Manifest::load(&path).map_err(at(Stage::Ingest))?;
            let mut h = Sha256::new();
            h.update(read(&path)?);
            h.update(json_bytes(&cfg.input.format));
            for (p, _) in manifest.resolved_paths(&path, cfg.input.format) {
                h.update(Sha256::digest(read(&p)?));
            }
            Ok(hex::encode(h.finalize()))
        }
    }
}

pub fn compute_signals(recordings: &[Recording], cfg: &PipelineConfig) -> Vec<RecordingSignals> {
    recordings
        .iter()
        .map(|r| recording_signals(r, &cfg.eye_map, &cfg.face_model))
        .collect()
}

/// Post-processes and slices every recording. Gaze channels are kept only
/// when every recording carries gaze.
pub fn slice_cohort(
    signals: &[RecordingSignals],
    cfg: &PostprocConfig,
) -> Result<(Vec<Segment>, Vec<SubjectSegments>), PipelineError> {
    let with_gaze = signals.iter().all(|s| s.has_gaze);
    let mut segments = Vec::new();
    let mut subjects = Vec::with_capacity(signals.len());
    for sig in signals {
        let err = |e: crate::postproc::PostprocError| PipelineError::new(Stage::Postproc, format!("{}: {e}", sig.subject_id));
        let channels = build_channels(sig, with_gaze, cfg).map_err(err)?;
        let out = slice_segments(&sig.subject_id, sig.risk_label, &channels, cfg).map_err(err)?;
        subjects.push(SubjectSegments {
            subject_id: sig.subject_id.clone(),
            risk_label: sig.risk_label,
            segments: out.segments.len(),
            discarded: out.discarded,
            skips: sig.skips.clone(),
        });
        segments.extend(out.segments);
    }
    Ok((segments, subjects))
}

pub fn featurize_segments(segments: &[Segment]) -> Result<FeatureTable, PipelineError> {
    FeatureTable::from_segments(segments.iter().map(featurize).collect()).map_err(at(Stage::Featurize))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStage {
    pub table: FeatureTable,
    pub subjects: Vec<SubjectSegments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub n_features: usize,
    pub control: Option<Control>,
    pub avg_accuracy: f64,
    pub std_accuracy: f64,
    pub avg_mcc: f64,
}

impl From<&ExperimentResult> for ResultRow {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            label: r.spec.label(),
            n_features: r.n_features,
            control: r.control,
            avg_accuracy: r.avg_accuracy,
            std_accuracy: r.std_accuracy,
            avg_mcc: r.avg_mcc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificantRow {
    pub name: String,
    pub anova_f: f64,
    pub anova_p: f64,
    pub means: [f64; 3],
    pub direction: String,
    /// Significant level pairs, e.g. `LH MH`.
    pub pairs: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub jaccard_index: f64,
    pub stable: bool,
}

/// Everything the human-readable report shows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub schema_version: u32,
    pub cohort: Vec<LevelCount>,
    pub total_segments: usize,
    pub n_features: usize,
    pub bonferroni_alpha: f64,
    pub significant: Vec<SignificantRow>,
    pub subject_free: Vec<String>,
    pub repeated_measures: Vec<String>,
    pub methods: Vec<MethodRow>,
    pub selected: Vec<ExplainedFeature>,
    pub all_features: Vec<ResultRow>,
    pub selected_features: Vec<ResultRow>,
    pub controls: Vec<ResultRow>,
    pub best_all: Option<ResultRow>,
    pub best_selected: Option<ResultRow>,
    pub representative_tolerance: f64,
    pub selection_representative: bool,
}

/// First experiment with the highest average accuracy.
pub fn best_result(results: &[ExperimentResult]) -> Option<&ExperimentResult> {
    results
        .iter()
        .fold(None, |best: Option<&ExperimentResult>, r| match best {
            Some(b) if b.avg_accuracy >= r.avg_accuracy => Some(b),
            _ => Some(r),
        })
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub summary: Summary,
    pub provenance: Provenance,
    pub cache_hits: Vec<String>,
    pub cache_misses: Vec<String>,
}

struct RunDir {
    root: PathBuf,
    prov: Provenance,
}

impl RunDir {
    fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.root.join(sub).join(name)
    }

    fn create(&self, sub: &str, name: &str) -> Result<std::io::BufWriter<std::fs::File>, PipelineError> {
        let p = self.path(sub, name);
        std::fs::File::create(&p)
            .map(std::io::BufWriter::new)
            .map_err(|e| PipelineError::new(Stage::Summary, format!("{}: {e}", p.display())))
    }

    fn json<T: Serialize>(&self, stage: Stage, sub: &str, name: &str, data: &T) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(&self.prov.wrap(data)).map_err(at(stage))?;
        text.push('\n');
        let p = self.path(sub, name);
        std::fs::write(&p, text).map_err(|e| PipelineError::new(stage, format!("{}: {e}", p.display())))
    }

    fn text(&self, stage: Stage, sub: &str, name: &str, body: &str) -> Result<(), PipelineError> {
        let p = self.path(sub, name);
        std::fs::write(&p, body).map_err(|e| PipelineError::new(stage, format!("{}: {e}", p.display())))
    }
}

pub const RUN_SUBDIRS: [&str; 6] = ["signals", "features", "stats", "selection", "models", "summary"];

fn new_run_dir(out: &Path, name: Option<&str>) -> Result<PathBuf, PipelineError> {
    let err = |e: std::io::Error| PipelineError::new(Stage::Config, format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(err)?;
    let dir = match name {
        Some(n) => out.join(n),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
            let mut dir = out.join(&stamp);
            let mut k = 2;
            while dir.exists() {
                dir = out.join(format!("{stamp}-{k}"));
                k += 1;
            }
            dir
        }
    };
    for sub in RUN_SUBDIRS {
        std::fs::create_dir_all(dir.join(sub)).map_err(err)?;
    }
    Ok(dir)
}

fn experiment_key(features_key: &str, columns: &[String], spec: &ModelSpec, cfg: &PipelineConfig, control: Option<Control>) -> String {
    sha_hex(&[
        b"classify",
        features_key.as_bytes(),
        &json_bytes(&columns),
        &json_bytes(spec),
        &json_bytes(&cfg.classify),
        &cfg.seed.to_le_bytes(),
        &json_bytes(&control),
    ])
}

fn run_models(
    data: &Dataset,
    columns: &[String],
    features_key: &str,
    cfg: &PipelineConfig,
    cache: &mut Cache,
) -> Result<Vec<ExperimentResult>, PipelineError> {
    cfg.models
        .iter()
        .map(|spec| {
            let key = experiment_key(features_key, columns, spec, cfg, None);
            cache.get_or("classify", &key, || {
                run_experiment(data, spec, &cfg.classify, cfg.seed)
                    .map_err(|e| PipelineError::new(Stage::Classify, format!("{}: {e}", spec.label())))
            })
        })
        .collect()
}

fn run_controls(
    data: &Dataset,
    columns: &[String],
    features_key: &str,
    specs: &[ModelSpec],
    cfg: &PipelineConfig,
    cache: &mut Cache,
) -> Result<Vec<ExperimentResult>, PipelineError> {
    let mut out = Vec::new();
    for spec in specs {
        for control in [Control::ShuffledLabels, Control::ShuffledFeatures] {
            let key = experiment_key(features_key, columns, spec, cfg, Some(control));
            out.push(cache.get_or("classify", &key, || {
                run_experiment_with(data, spec, &cfg.classify, cfg.seed, Some(control))
                    .map_err(|e| PipelineError::new(Stage::Classify, format!("{} {control:?}: {e}", spec.label())))
            })?);
        }
    }
    Ok(out)
}

/// Runs every stage and writes the run directory. `base` anchors relative
/// paths in the config. On a stage failure, `summary/error.json` records
/// the stage and message before the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let prov = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    let root = new_run_dir(&cfg.resolve(base, &cfg.out_dir), cfg.run_name.as_deref())?;
    let dir = RunDir { root, prov };
    let mut cache = Cache::new(cfg.cache_dir.as_ref().map(|c| cfg.resolve(base, c)));
    match execute(cfg, base, &dir, &mut cache) {
        Ok(summary) => Ok(RunOutcome {
            run_dir: dir.root.clone(),
            summary,
            provenance: dir.prov.clone(),
            cache_hits: cache.hits,
            cache_misses: cache.misses,
        }),
        Err(e) => {
            let _ = dir.json(
                Stage::Summary,
                "summary",
                "error.json",
                &serde_json::json!({"stage": e.stage, "message": e.message}),
            );
            Err(e)
        }
    }
}

fn execute(cfg: &PipelineConfig, base: &Path, dir: &RunDir, cache: &mut Cache) -> Result<Summary, PipelineError> {
    let pre = dir.prov.preamble();
    let mut config_text: String = pre.iter().map(|l| format!("# {l}\n")).collect();
    config_text.push_str(&cfg.to_toml());
    dir.text(Stage::Config, "summary", "config.toml", &config_text)?;

    // ingest, signals, postproc, featurize
    let input = input_key(cfg, base)?;
    let features_key = sha_hex(&[
        b"features",
        input.as_bytes(),
        &json_bytes(&cfg.eye_map),
        &json_bytes(&cfg.face_model),
        &json_bytes(&cfg.postproc),
    ]);
    let mut signals: Option<Vec<RecordingSignals>> = None;
    let load_signals = || -> Result<Vec<RecordingSignals>, PipelineError> {
        let recs = load_recordings(cfg, base)?;
        if recs.is_empty() {
            return Err(PipelineError::new(Stage::Ingest, "cohort is empty"));
        }
        Ok(compute_signals(&recs, cfg))
    };
    let features: FeatureStage = cache.get_or("features", &features_key, || {
        let sig = load_signals()?;
        let (segments, subjects) = slice_cohort(&sig, &cfg.postproc)?;
        let table = featurize_segments(&segments)?;
        signals = Some(sig);
        Ok(FeatureStage { table, subjects })
    })?;
    if cfg.write_signals {
        let sig = match signals.take() {
            Some(s) => s,
            None => load_signals()?,
        };
        for s in &sig {
            let mut w = dir.create("signals", &format!("{}.csv", s.subject_id))?;
            for l in &pre {
                writeln!(w, "# {l}").map_err(at(Stage::Signals))?;
            }
            write_signals_csv(s, &mut w).map_err(at(Stage::Signals))?;
            w.flush().map_err(at(Stage::Signals))?;
        }
    }
    let table = &features.table;
    if table.is_empty() {
        return Err(PipelineError::new(Stage::Featurize, "no segments survived slicing"));
    }
    let cohort = level_counts(&features.subjects);
    table
        .write_csv(dir.create("features", "features.csv")?, &pre)
        .map_err(at(Stage::Featurize))?;
    dir.json(
        Stage::Featurize,
        "features",
        "segments.json",
        &serde_json::json!({"levels": cohort, "subjects": features.subjects}),
    )?;

    // stats
    let stats_key = sha_hex(&[b"stats", features_key.as_bytes(), &json_bytes(&cfg.stats)]);
    let stats: StatReport = cache.get_or("stats", &stats_key, || run_stat_suite(table, &cfg.stats).map_err(at(Stage::Stats)))?;
    stats.write_csv(dir.create("stats", "stats.csv")?, &pre).map_err(at(Stage::Stats))?;
    dir.json(
        Stage::Stats,
        "stats",
        "stats.json",
        &serde_json::json!({"summary": stats.summary_json(), "report": stats}),
    )?;

    // selection
    let data = Dataset::from_table(table);
    let select_key = sha_hex(&[b"select", features_key.as_bytes(), &json_bytes(&cfg.select), &cfg.seed.to_le_bytes()]);
    let selection: SelectionReport = cache.get_or("select", &select_key, || {
        stability_run(&data, &table.names, &cfg.select, cfg.seed).map_err(at(Stage::Select))
    })?;
    let explained = explain_selection(&selection, table);
    selection
        .write_csv(dir.create("selection", "selection.csv")?, &pre)
        .map_err(at(Stage::Select))?;
    dir.json(
        Stage::Select,
        "selection",
        "selection.json",
        &serde_json::json!({"final_set": explained, "report": selection}),
    )?;

    // classification on all features, then on the selected subset
    let all = run_models(&data, &table.names, &features_key, cfg, cache)?;
    let selected_cols: Vec<usize> = selection
        .final_set
        .iter()
        .map(|n| table.index_of(n).expect("selected names come from the table"))
        .collect();
    let selected = if selected_cols.is_empty() {
        Vec::new()
    } else {
        run_models(&data.select_columns(&selected_cols), &selection.final_set, &features_key, cfg, cache)?
    };
    let control_specs: Vec<ModelSpec> = match cfg.controls {
        ControlScope::None => Vec::new(),
        ControlScope::Best => best_result(&all).map(|b| vec![b.spec.clone()]).unwrap_or_default(),
        ControlScope::All => cfg.models.clone(),
    };
    let controls = run_controls(&data, &table.names, &features_key, &control_specs, cfg, cache)?;
    let mut rows: Vec<ExperimentResult> = all.clone();
    rows.extend(selected.iter().cloned());
    rows.extend(controls.iter().cloned());
    write_results_csv(&rows, dir.create("models", "results.csv")?, &pre).map_err(at(Stage::Classify))?;
    dir.json(
        Stage::Classify,
        "models",
        "experiments.json",
        &serde_json::json!({"all_features": all, "selected_features": selected, "controls": controls}),
    )?;

    // summary
    let best_all = best_result(&all).map(ResultRow::from);
    let best_selected = best_result(&selected).map(ResultRow::from);
    let selection_representative = match (&best_all, &best_selected) {
        (Some(a), Some(s)) => (a.avg_accuracy - s.avg_accuracy).abs() <= cfg.representative_tolerance + 1e-12,
        _ => false,
    };
    let significant = stats
        .significant
        .iter()
        .filter_map(|n| stats.feature(n))
        .map(|f| SignificantRow {
            name: f.name.clone(),
            anova_f: f.anova_f,
            anova_p: f.anova_p,
            means: f.means,
            direction: f.direction.ordering.clone(),
            pairs: PAIRS
                .iter()
                .zip(&f.pairwise)
                .filter(|(_, t)| t.as_ref().is_some_and(|t| t.significant))
                .map(|(p, _)| crate::stats::pair_name(*p))
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect();
    let summary = Summary {
        config_hash: dir.prov.config_hash.clone(),
        seed: cfg.seed,
        schema_version: cfg.schema_version,
        total_segments: table.len(),
        cohort,
        n_features: table.n_features(),
        bonferroni_alpha: stats.alpha.corrected,
        significant,
        subject_free: stats.subject_free.clone(),
        repeated_measures: stats.repeated_measures.clone(),
        methods: selection
            .methods
            .iter()
            .map(|m| MethodRow {
                method: m.method.name().to_string(),
                jaccard_index: m.jaccard_index,
                stable: m.stable,
            })
            .collect(),
        selected: explained,
        all_features: all.iter().map(ResultRow::from).collect(),
        selected_features: selected.iter().map(ResultRow::from).collect(),
        controls: controls.iter().map(ResultRow::from).collect(),
        best_all,
        best_selected,
        representative_tolerance: cfg.representative_tolerance,
        selection_representative,
    };
    dir.json(Stage::Summary, "summary", "summary.json", &summary)?;
    let mut w = dir.create("summary", "summary.csv")?;
    write_results_csv(&rows, &mut w, &pre).map_err(at(Stage::Summary))?;
    dir.text(Stage::Summary, "summary", "report.md", &render_report(&summary))?;
    Ok(summary)
}

/// Reads `summary/summary.json` of a run directory.
pub fn load_summary(run_dir: &Path) -> Result<Summary, PipelineError> {
    let p = run_dir.join("summary").join("summary.json");
    let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::new(Stage::Summary, format!("{}: {e}", p.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(at(Stage::Summary))?;
    serde_json::from_value(v.get("data").cloned().unwrap_or(v)).map_err(at(Stage::Summary))
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Markdown tables: segment counts per level, significant functionals with
/// their level ordering, the selected set, and classification results on
/// all and selected features plus the randomization controls.
pub fn render_report(s: &Summary) -> String {
    let mut o = String::new();
    let mut line = |l: String| {
        o.push_str(&l);
        o.push('\n');
    };
    line("# Thin-slice run report".into());
    line(String::new());
    line(format!("config hash `{}`, seed {}", s.config_hash, s.seed));
    line(String::new());
    line("## Segments".into());
    line(String::new());
    line("| level | subjects | segments | discarded |".into());
    line("|---|---:|---:|---:|".into());
    for c in &s.cohort {
        line(format!("| {} | {} | {} | {} |", c.level, c.subjects, c.segments, c.discarded));
    }
    line(format!("| total | {} | {} | {} |", s.cohort.iter().map(|c| c.subjects).sum::<usize>(), s.total_segments, s.cohort.iter().map(|c| c.discarded).sum::<usize>()));
    line(String::new());
    line("## Significant functionals".into());
    line(String::new());
    line(format!(
        "{} of {} functionals pass the ANOVA at the corrected level {:.4e} with at least one significant pair.",
        s.significant.len(),
        s.n_features,
        s.bonferroni_alpha
    ));
    line(String::new());
    if !s.significant.is_empty() {
        line("| functional | F | p | mean L | mean M | mean H | ordering | pairs |".into());
        line("|---|---:|---:|---:|---:|---:|---|---|".into());
        for r in &s.significant {
            line(format!(
                "| {} | {:.2} | {:.2e} | {:.4} | {:.4} | {:.4} | {} | {} |",
                r.name, r.anova_f, r.anova_p, r.means[0], r.means[1], r.means[2], r.direction, r.pairs
            ));
        }
        line(String::new());
    }
    line(format!(
        "Subject-free (interaction without subject effect): {}. Subject-level test significant: {}.",
        s.subject_free.len(),
        s.repeated_measures.len()
    ));
    line(String::new());
    line("## Feature selection".into());
    line(String::new());
    line("| method | Jaccard index | stable |".into());
    line("|---|---:|---|".into());
    for m in &s.methods {
        line(format!("| {} | {:.3} | {} |", m.method, m.jaccard_index, if m.stable { "yes" } else { "no" }));
    }
    line(String::new());
    if s.selected.is_empty() {
        line("No functional met the voting and stability thresholds.".into());
    } else {
        line("| selected functional | BTS | mean rank | ordering |".into());
        line("|---|---:|---:|---|".into());
        for f in &s.selected {
            line(format!("| {} | {:.3} | {:.1} | {} |", f.name, f.bts, f.mean_rank, f.direction.ordering));
        }
    }
    line(String::new());
    line("## Classification".into());
    line(String::new());
    line("Balanced accuracy in percent (population std) and multiclass MCC, averaged over trials.".into());
    line(String::new());
    line("| model | all: acc | all: std | all: MCC | selected: acc | selected: std | selected: MCC |".into());
    line("|---|---:|---:|---:|---:|---:|---:|".into());
    for a in &s.all_features {
        let sel = s.selected_features.iter().find(|r| r.label == a.label);
        let (sa, ss, sm) = sel.map_or(("-".into(), "-".into(), "-".into()), |r| {
            (pct(r.avg_accuracy), pct(r.std_accuracy), format!("{:.3}", r.avg_mcc))
        });
        line(format!(
            "| {} | {} | {} | {:.3} | {} | {} | {} |",
            a.label,
            pct(a.avg_accuracy),
            pct(a.std_accuracy),
            a.avg_mcc,
            sa,
            ss,
            sm
        ));
    }
    line(String::new());
    if let (Some(a), Some(b)) = (&s.best_all, &s.best_selected) {
        line(format!(
            "Best on all {} functionals: {} at {}%. Best on the {} selected: {} at {}%. Selected set representative (within {} points): {}.",
            a.n_features,
            a.label,
            pct(a.avg_accuracy),
            b.n_features,
            b.label,
            pct(b.avg_accuracy),
            pct(s.representative_tolerance),
            if s.selection_representative { "yes" } else { "no" }
        ));
        line(String::new());
    }
    if !s.controls.is_empty() {
        line("## Randomization controls".into());
        line(String::new());
        line("| model | control | acc | std | MCC |".into());
        line("|---|---|---:|---:|---:|".into());
        for r in &s.controls {
            let c = match r.control {
                Some(Control::ShuffledLabels) => "shuffled labels",
                Some(Control::ShuffledFeatures) => "shuffled features",
                None => "none",
            };
            line(format!("| {} | {} | {} | {} | {:.3} |", r.label, c, pct(r.avg_accuracy), pct(r.std_accuracy), r.avg_mcc));
        }
    }
    o
}
