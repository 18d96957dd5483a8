//! Risk-level classification experiments.
//!
//! A trial is: stratified 75/25 split, resampling of the training side,
//! min-max scaling fitted on the (resampled) training side, grid search by
//! cross-validated balanced accuracy, refit on the whole training side and
//! evaluation on the test side. An experiment repeats this for
//! `n_trials` seeds derived from the master seed.

pub mod grid;
pub mod metrics;
pub mod mlp;
pub mod resample;
pub mod svm;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{coarse_c_grid, fine_c_grid, gamma_base, grid_search, mlp_hidden_grid, GridOutcome};
pub use metrics::{balanced_accuracy, confusion_matrix, mcc_multiclass};
pub use mlp::{train_mlp, MlpConfig, MlpModel};
pub use resample::{resample, scale_train_test, MinMaxScaler, Sampling};
pub use svm::{train_svm, Kernel, SmoConfig, SvmModel};

use crate::dataset::Dataset;
use crate::seed;
use crate::split::{split_stratified, SplitError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("true class {0} has no test samples")]
    EmptyTrueClass(usize),
    #[error("training data holds a single class")]
    SingleClassTrain,
    #[error("training data is empty")]
    EmptyTrain,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("smallest class has {0} samples, too few for cross-validation")]
    TooFewForCv(usize),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mlp_1hidden")]
    Mlp1Hidden,
    #[serde(rename = "svm_linear")]
    SvmLinear,
    #[serde(rename = "svm_rbf")]
    SvmRbf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp1Hidden, ModelKind::SvmLinear, ModelKind::SvmRbf];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp1Hidden => "mlp_1hidden",
            ModelKind::SvmLinear => "svm_linear",
            ModelKind::SvmRbf => "svm_rbf",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ClassifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp" | "mlp_1hidden" => Ok(ModelKind::Mlp1Hidden),
            "svm-linear" | "svm_linear" => Ok(ModelKind::SvmLinear),
            "svm-rbf" | "svm_rbf" => Ok(ModelKind::SvmRbf),
            _ => Err(ClassifyError::Parse(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hyper {
    Mlp { hidden_units: usize },
    SvmLinear { c: f64 },
    SvmRbf { c: f64, gamma: f64 },
}

impl Hyper {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyper::Mlp { .. } => ModelKind::Mlp1Hidden,
            Hyper::SvmLinear { .. } => ModelKind::SvmLinear,
            Hyper::SvmRbf { .. } => ModelKind::SvmRbf,
        }
    }

    /// C of an SVM hyperparameter set, NaN for the MLP.
    pub fn c(&self) -> f64 {
        match *self {
            Hyper::SvmLinear { c } | Hyper::SvmRbf { c, .. } => c,
            Hyper::Mlp { .. } => f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let ok = match *self {
            Hyper::Mlp { hidden_units } => hidden_units >= 1,
            Hyper::SvmLinear { c } => c > 0.0,
            Hyper::SvmRbf { c, gamma } => c > 0.0 && gamma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ClassifyError::InvalidHyper(format!("{self:?}")))
        }
    }
}

impl std::fmt::Display for Hyper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hyper::Mlp { hidden_units } => write!(f, "hidden_units={hidden_units}"),
            Hyper::SvmLinear { c } => write!(f, "C={c}"),
            Hyper::SvmRbf { c, gamma } => write!(f, "C={c} gamma={gamma:.6}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub sampling: Sampling,
    /// Fixed hyperparameters; grid search when absent.
    #[serde(default)]
    pub hyper: Option<Hyper>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, sampling: Sampling) -> Self {
        Self {
            kind,
            sampling,
            hyper: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.kind, self.sampling)
    }

    /// Every model kind under every sampling mode, simplest model first so
    /// that accuracy ties resolve toward it.
    pub fn all() -> Vec<ModelSpec> {
        [ModelKind::SvmLinear, ModelKind::SvmRbf, ModelKind::Mlp1Hidden]
            .iter()
            .flat_map(|&k| Sampling::ALL.iter().map(move |&s| ModelSpec::new(k, s)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub n_trials: usize,
    pub test_fraction: f64,
    pub cv_folds: usize,
    /// Adds C values above 1 to the coarse grid.
    pub extended_c: bool,
    pub gamma_multipliers: Vec<f64>,
    pub smo: SmoConfig,
    pub mlp: MlpConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            n_trials: 10,
            test_fraction: 0.25,
            cv_folds: 10,
            extended_c: false,
            gamma_multipliers: vec![0.1, 1.0, 10.0],
            smo: SmoConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Svm(SvmModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn predict(&self, data: &Dataset) -> Vec<usize> {
        match self {
            Model::Svm(m) => m.predict(data),
            Model::Mlp(m) => m.predict(data),
        }
    }
}

pub fn fit(train: &Dataset, hyper: &Hyper, cfg: &ClassifyConfig, seed_value: u64) -> Result<Model, ClassifyError> {
    hyper.validate()?;
    Ok(match *hyper {
        Hyper::Mlp { hidden_units } => {
            let mut rng = seed::rng(seed_value, &[seed::tag_str("fit")]);
            Model::Mlp(train_mlp(train, hidden_units, &cfg.mlp, &mut rng)?)
        }
        Hyper::SvmLinear { c } => Model::Svm(train_svm(train, Kernel::Linear, c, &cfg.smo)?),
        Hyper::SvmRbf { c, gamma } => Model::Svm(train_svm(train, Kernel::Rbf { gamma }, c, &cfg.smo)?),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    /// Labels permuted once per trial.
    ShuffledLabels,
    /// Each feature column permuted independently per trial.
    ShuffledFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub seed: u64,
    pub balanced_accuracy: f64,
    pub mcc: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub chosen_hyper: Hyper,
    pub cv_score: Option<f64>,
    pub svm_max_kkt_violation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ModelSpec,
    pub control: Option<Control>,
    pub n_features: usize,
    pub trials: Vec<TrialResult>,
    pub avg_accuracy: f64,
    /// Population standard deviation across trials.
    pub std_accuracy: f64,
    pub avg_mcc: f64,
}

/// Mean accuracy, population std of accuracy, mean MCC.
pub fn aggregate(trials: &[TrialResult]) -> (f64, f64, f64) {
    let n = trials.len() as f64;
    let avg = trials.iter().map(|t| t.balanced_accuracy).sum::<f64>() / n;
    let var = trials.iter().map(|t| (t.balanced_accuracy - avg).powi(2)).sum::<f64>() / n;
    let mcc = trials.iter().map(|t| t.mcc).sum::<f64>() / n;
    (avg, var.sqrt(), mcc)
}

fn apply_control(data: &Dataset, control: Option<Control>, trial_seed: u64) -> Dataset {
    let Some(control) = control else {
        return data.clone();
    };
    let mut rng = seed::rng(trial_seed, &[seed::tag_str("control")]);
    let mut out = data.clone();
    match control {
        Control::ShuffledLabels => out.y.shuffle(&mut rng),
        Control::ShuffledFeatures => {
            let n = data.len();
            let p = data.n_features;
            let mut perm: Vec<usize> = (0..n).collect();
            for j in 0..p {
                perm.shuffle(&mut rng);
                for (i, &src) in perm.iter().enumerate() {
                    out.x[i * p + j] = data.x[src * p + j];
                }
            }
        }
    }
    out
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    seed::derive(master_seed, &[seed::tag_str("trial"), trial as u64])
}

pub fn run_trial(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &ClassifyConfig,
    master_seed: u64,
    trial: usize,
    control: Option<Control>,
) -> Result<TrialResult, ClassifyError> {
    let ts = trial_seed(master_seed, trial);
    let data = apply_control(data, control, ts);
    let (tr_idx, te_idx) = split_stratified(&data, cfg.test_fraction, &mut seed::rng(ts, &[seed::tag_str("split")]))?;
    let train = resample(
        &data.subset(&tr_idx),
        spec.sampling,
        &mut seed::rng(ts, &[seed::tag_str("resample")]),
    );
    let (train, test, _) = scale_train_test(&train, &data.subset(&te_idx))?;
    let (hyper, cv_score) = match &spec.hyper {
        Some(h) => (h.clone(), None),
        None => {
            let g = grid_search(&train, spec.kind, cfg, seed::derive(ts, &[seed::tag_str("grid")]))?;
            (g.hyper, Some(g.cv_score))
        }
    };
    let model = fit(&train, &hyper, cfg, ts)?;
    let pred = model.predict(&test);
    let conf = confusion_matrix(&test.y, &pred, data.n_classes);
    Ok(TrialResult {
        trial_index: trial,
        seed: ts,
        balanced_accuracy: balanced_accuracy(&conf)?,
        mcc: mcc_multiclass(&conf),
        confusion: conf,
        chosen_hyper: hyper,
        cv_score,
        svm_max_kkt_violation: match &model {
            Model::Svm(m) => Some(m.max_kkt_violation()),
            Model::Mlp(_) => None,
        },
    })
}

pub fn run_experiment_with(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &ClassifyConfig,
    master_seed: u64,
    control: Option<Control>,
) -> Result<ExperimentResult, ClassifyError> {
    if let Some(h) = &spec.hyper {
        h.validate()?;
        if h.kind() != spec.kind {
            return Err(ClassifyError::InvalidHyper(format!("{h:?} does not fit {}", spec.kind)));
        }
    }
    let trials = (0..cfg.n_trials)
        .map(|t| run_trial(data, spec, cfg, master_seed, t, control))
        .collect::<Result<Vec<_>, _>>()?;
    let (avg_accuracy, std_accuracy, avg_mcc) = aggregate(&trials);
    Ok(ExperimentResult {
        spec: spec.clone(),
        control,
        n_features: data.n_features,
        trials,
        avg_accuracy,
        std_accuracy,
        avg_mcc,
    })
}

pub fn run_experiment(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &ClassifyConfig,
    master_seed: u64,
) -> Result<ExperimentResult, ClassifyError> {
    run_experiment_with(data, spec, cfg, master_seed, None)
}

/// A deployable model: resampling, scaling and hyperparameters chosen on
/// the whole input, then one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub hyper: Hyper,
    pub cv_score: Option<f64>,
    pub scaler: MinMaxScaler,
    pub model: Model,
}

pub fn train_final(
    data: &Dataset,
    feature_names: &[String],
    spec: &ModelSpec,
    cfg: &ClassifyConfig,
    master_seed: u64,
) -> Result<TrainedModel, ClassifyError> {
    let s = seed::derive(master_seed, &[seed::tag_str("final")]);
    let train = resample(data, spec.sampling, &mut seed::rng(s, &[seed::tag_str("resample")]));
    let scaler = MinMaxScaler::fit(&train)?;
    let train = scaler.transform(&train);
    let (hyper, cv_score) = match &spec.hyper {
        Some(h) => (h.clone(), None),
        None => {
            let g = grid_search(&train, spec.kind, cfg, seed::derive(s, &[seed::tag_str("grid")]))?;
            (g.hyper, Some(g.cv_score))
        }
    };
    let model = fit(&train, &hyper, cfg, s)?;
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_names: feature_names.to_vec(),
        hyper,
        cv_score,
        scaler,
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub balanced_accuracy: f64,
    pub mcc: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl TrainedModel {
    pub fn predict(&self, data: &Dataset) -> Vec<usize> {
        self.model.predict(&self.scaler.transform(data))
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation, ClassifyError> {
        let conf = confusion_matrix(&data.y, &self.predict(data), data.n_classes);
        Ok(Evaluation {
            balanced_accuracy: balanced_accuracy(&conf)?,
            mcc: mcc_multiclass(&conf),
            confusion: conf,
        })
    }
}

/// Shuffled-label and shuffled-feature runs of the same protocol.
pub fn randomization_controls(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &ClassifyConfig,
    master_seed: u64,
) -> Result<(ExperimentResult, ExperimentResult), ClassifyError> {
    Ok((
        run_experiment_with(data, spec, cfg, master_seed, Some(Control::ShuffledLabels))?,
        run_experiment_with(data, spec, cfg, master_seed, Some(Control::ShuffledFeatures))?,
    ))
}

impl ExperimentResult {
    /// Column label for result tables: model, sampling, feature count and control.
    pub fn row_label(&self) -> String {
        let mut s = format!("{} ({} features)", self.spec.label(), self.n_features);
        if let Some(c) = self.control {
            s.push_str(match c {
                Control::ShuffledLabels => " shuffled labels",
                Control::ShuffledFeatures => " shuffled features",
            });
        }
        s
    }
}

/// One row per experiment: avg/std accuracy and avg MCC.
pub fn write_results_csv<W: Write>(results: &[ExperimentResult], mut w: W, preamble: &[String]) -> Result<(), ClassifyError> {
    let io = |e: std::io::Error| ClassifyError::Io(e.to_string());
    for line in preamble {
        writeln!(w, "# {line}").map_err(io)?;
    }
    let mut cw = csv::Writer::from_writer(w);
    let ce = |e: csv::Error| ClassifyError::Io(e.to_string());
    cw.write_record(["model", "sampling", "n_features", "control", "avg_accuracy", "std_accuracy", "avg_mcc"])
        .map_err(ce)?;
    for r in results {
        cw.write_record([
            r.spec.kind.to_string(),
            r.spec.sampling.to_string(),
            r.n_features.to_string(),
            r.control.map_or_else(|| "none".into(), |c| match c {
                Control::ShuffledLabels => "shuffled_labels".to_string(),
                Control::ShuffledFeatures => "shuffled_features".to_string(),
            }),
            format!("{}", r.avg_accuracy),
            format!("{}", r.std_accuracy),
            format!("{}", r.avg_mcc),
        ])
        .map_err(ce)?;
    }
    cw.flush().map_err(io)?;
    Ok(())
}
