//! `thinslice` command-line interface.
//!
//! Each subcommand runs one pipeline stage on files; `run` executes the whole
//! chain from a config file and `report` re-renders a finished run.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use thinslice::classify::{run_experiment, train_final, ModelKind, ModelSpec, Sampling, TrainedModel};
use thinslice::functionals::FeatureTable;
use thinslice::ingest::{self, Format, Recording};
use thinslice::pipeline::{
    self, compute_signals, featurize_segments, level_counts, render_report, slice_cohort, PipelineConfig,
    PipelineError, Stage,
};
use thinslice::select::{explain_selection, stability_run};
use thinslice::signals::write_signals_csv;
use thinslice::stats::run_stat_suite;
use thinslice::synth::{generate_cohort, write_cohort, CohortSpec};
use thinslice::Dataset;

#[derive(Parser)]
#[command(name = "thinslice", version, about = "Thin-slice behavioral signal pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CohortArgs {
    /// Cohort manifest (TOML); the config's input is used when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Recording format, overriding manifest and file extensions.
    #[arg(long)]
    format: Option<Format>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Pipeline config (TOML) supplying stage settings; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<(PipelineConfig, PathBuf)> {
        match &self.config {
            Some(p) => {
                let cfg = PipelineConfig::load(p)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((cfg, base))
            }
            None => Ok((PipelineConfig::default(), PathBuf::from("."))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as recording files plus a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// default, strong, weak or null.
        #[arg(long, default_value = "default")]
        preset: String,
        /// Cohort spec file (TOML); replaces the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        minutes: Option<f64>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Validate a cohort and print per-recording metadata as JSON.
    Ingest {
        #[command(flatten)]
        cohort: CohortArgs,
    },
    /// Write per-frame signals of every recording.
    Signals {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-process and slice; print segment counts per subject and level.
    Slice {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Also write the counts as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the functional table of every segment.
    Featurize {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hypothesis tests on a feature table.
    Stats {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Stability-validated feature selection on a feature table.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Grid-search and fit one model on a whole feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// mlp, svm-linear or svm-rbf.
        #[arg(long)]
        model: ModelKind,
        /// none, over or under.
        #[arg(long, default_value = "none")]
        sampling: Sampling,
        /// Comma-separated functional names to keep.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score a trained model on a feature table, or run the repeated-trial
    /// protocol for a model when no model file is given.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, conflicts_with = "model")]
        model_file: Option<PathBuf>,
        #[arg(long, required_unless_present = "model_file")]
        model: Option<ModelKind>,
        #[arg(long, default_value = "none")]
        sampling: Sampling,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Execute the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_name: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the markdown report of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn staged<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> anyhow::Error {
    move |e| PipelineError::new(stage, e).into()
}

fn recordings(args: &CohortArgs) -> Result<(Vec<Recording>, PipelineConfig)> {
    let (cfg, base) = args.config.load()?;
    let recs = match &args.manifest {
        Some(m) => ingest::load_cohort(m, args.format).map_err(staged(Stage::Ingest))?,
        None => pipeline::load_recordings(&cfg, &base)?,
    };
    if recs.is_empty() {
        return Err(PipelineError::new(Stage::Ingest, "cohort is empty").into());
    }
    Ok((recs, cfg))
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    let f = std::fs::File::open(path).with_context(|| format!("[featurize] {}", path.display()))?;
    FeatureTable::read_csv(f).map_err(staged(Stage::Featurize))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| path.display().to_string())?,
    ))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            preset,
            spec,
            seed,
            minutes,
            format,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    toml::from_str::<CohortSpec>(&text).map_err(staged(Stage::Config))?
                }
                None => CohortSpec::preset(&preset).map_err(staged(Stage::Config))?,
            };
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(m) = minutes {
                s.minutes_per_subject = m;
            }
            let cohort = generate_cohort(&s).map_err(staged(Stage::Ingest))?;
            let manifest = write_cohort(&cohort, &out, format).map_err(staged(Stage::Ingest))?;
            std::fs::write(out.join("cohort_spec.toml"), toml::to_string(&s)?)?;
            println!("{}", manifest.display());
        }
        Command::Ingest { cohort } => {
            let (recs, _) = recordings(&cohort)?;
            let rows: Vec<serde_json::Value> = recs
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "subject_id": r.subject_id,
                        "risk_label": r.risk_label,
                        "fps": r.fps,
                        "frames": r.span_frames(),
                        "valid_frames": r.valid_frames(),
                        "duration_s": r.duration_s(),
                        "has_gaze": r.has_gaze,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "recordings": rows }))?;
        }
        Command::Signals { cohort, out } => {
            let (recs, cfg) = recordings(&cohort)?;
            std::fs::create_dir_all(&out)?;
            let sig = compute_signals(&recs, &cfg);
            let mut skips = serde_json::Map::new();
            for s in &sig {
                let mut w = create(&out.join(format!("{}.csv", s.subject_id)))?;
                write_signals_csv(s, &mut w).map_err(staged(Stage::Signals))?;
                w.flush()?;
                skips.insert(s.subject_id.clone(), serde_json::to_value(&s.skips)?);
            }
            write_json(&out.join("skips.json"), &serde_json::Value::Object(skips))?;
            println!("{}", out.display());
        }
        Command::Slice { cohort, out } => {
            let (recs, cfg) = recordings(&cohort)?;
            let (_, subjects) = slice_cohort(&compute_signals(&recs, &cfg), &cfg.postproc)?;
            let v = serde_json::json!({ "levels": level_counts(&subjects), "subjects": subjects });
            if let Some(p) = out {
                write_json(&p, &v)?;
            }
            print_json(&v)?;
        }
        Command::Featurize { cohort, out } => {
            let (recs, cfg) = recordings(&cohort)?;
            let (segments, _) = slice_cohort(&compute_signals(&recs, &cfg), &cfg.postproc)?;
            let table = featurize_segments(&segments)?;
            let mut w = create(&out)?;
            table.write_csv(&mut w, &[]).map_err(staged(Stage::Featurize))?;
            w.flush()?;
            println!("{} segments x {} functionals -> {}", table.len(), table.n_features(), out.display());
        }
        Command::Stats { features, out, config } => {
            let (cfg, _) = config.load()?;
            let table = read_features(&features)?;
            let report = run_stat_suite(&table, &cfg.stats).map_err(staged(Stage::Stats))?;
            std::fs::create_dir_all(&out)?;
            let mut w = create(&out.join("stats.csv"))?;
            report.write_csv(&mut w, &[]).map_err(staged(Stage::Stats))?;
            w.flush()?;
            let summary = report.summary_json();
            write_json(&out.join("stats.json"), &serde_json::json!({ "summary": summary, "report": report }))?;
            print_json(&summary)?;
        }
        Command::Select {
            features,
            out,
            seed,
            config,
        } => {
            let (cfg, _) = config.load()?;
            let table = read_features(&features)?;
            let data = Dataset::from_table(&table);
            let report = stability_run(&data, &table.names, &cfg.select, seed.unwrap_or(cfg.seed))
                .map_err(staged(Stage::Select))?;
            let explained = explain_selection(&report, &table);
            std::fs::create_dir_all(&out)?;
            let mut w = create(&out.join("selection.csv"))?;
            report.write_csv(&mut w, &[]).map_err(staged(Stage::Select))?;
            w.flush()?;
            write_json(
                &out.join("selection.json"),
                &serde_json::json!({ "final_set": explained, "report": report }),
            )?;
            for f in &explained {
                println!("{}\tBTS={:.3}\t{}", f.name, f.bts, f.direction.ordering);
            }
        }
        Command::Train {
            features,
            model,
            sampling,
            columns,
            seed,
            out,
            config,
        } => {
            let (cfg, _) = config.load()?;
            let mut table = read_features(&features)?;
            if let Some(cols) = columns {
                table = table.restrict(&cols).map_err(staged(Stage::Featurize))?;
            }
            let data = Dataset::from_table(&table);
            let spec = ModelSpec::new(model, sampling);
            let trained = train_final(&data, &table.names, &spec, &cfg.classify, seed.unwrap_or(cfg.seed))
                .map_err(staged(Stage::Classify))?;
            write_json(&out, &serde_json::to_value(&trained)?)?;
            println!("{} {} -> {}", spec.label(), trained.hyper, out.display());
        }
        Command::Evaluate {
            features,
            model_file,
            model,
            sampling,
            seed,
            config,
        } => {
            let (cfg, _) = config.load()?;
            let table = read_features(&features)?;
            match (model_file, model) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    let trained: TrainedModel = serde_json::from_str(&text).map_err(staged(Stage::Classify))?;
                    let table = table
                        .restrict(&trained.feature_names)
                        .map_err(staged(Stage::Featurize))?;
                    let eval = trained
                        .evaluate(&Dataset::from_table(&table))
                        .map_err(staged(Stage::Classify))?;
                    print_json(&serde_json::to_value(&eval)?)?;
                }
                (None, Some(kind)) => {
                    let data = Dataset::from_table(&table);
                    let r = run_experiment(&data, &ModelSpec::new(kind, sampling), &cfg.classify, seed.unwrap_or(cfg.seed))
                        .map_err(staged(Stage::Classify))?;
                    print_json(&serde_json::to_value(&r)?)?;
                }
                (None, None) => unreachable!("clap requires --model or --model-file"),
            }
        }
        Command::Run {
            config,
            run_name,
            out_dir,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            let mut base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            if run_name.is_some() {
                cfg.run_name = run_name;
            }
            if let Some(o) = out_dir {
                // an explicit output directory is taken relative to the caller
                cfg.out_dir = std::path::absolute(&o)?;
            }
            if base.as_os_str().is_empty() {
                base = PathBuf::from(".");
            }
            let outcome = pipeline::run_pipeline(&cfg, &base)?;
            let s = &outcome.summary;
            println!("run directory: {}", outcome.run_dir.display());
            println!("segments: {}", s.total_segments);
            if let Some(b) = &s.best_all {
                println!("best (all {}): {} {:.4}", b.n_features, b.label, b.avg_accuracy);
            }
            if let Some(b) = &s.best_selected {
                println!("best (selected {}): {} {:.4}", b.n_features, b.label, b.avg_accuracy);
            }
            println!("selection representative: {}", s.selection_representative);
            if !outcome.cache_hits.is_empty() {
                println!("cache hits: {}", outcome.cache_hits.len());
            }
        }
        Command::Report { run } => {
            let s = pipeline::load_summary(&run)?;
            print!("{}", render_report(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
