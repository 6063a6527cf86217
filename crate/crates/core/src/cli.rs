//! Command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 usage or config
//! error, 3 data error, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attention::QueryMode;
use crate::data::{
    self, feature_names, load_feature_csv, load_landmark_csv, stratified_split, synth_generate, write_feature_csv,
    zscore_apply, zscore_fit, Dataset,
};
use crate::error::{Error, Result};
use crate::eval::{confusion, emit_curves, report, ClassificationReport, ConfusionMatrix};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::model::gradcheck::random_batch;
use crate::model::{
    gradient_check, predict_batch, train_with, Fault, GradCheckOptions, GradCheckReport, ModelConfig, ModelParams,
    TrainConfig, TrainHistory,
};
use crate::numerics::Mat;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub const CHECKPOINT_FILE: &str = "model.tapt";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";

#[derive(Debug, Parser)]
#[command(name = "tapnet", version, about = "Finger-tapping severity classifier")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML file of key = value settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Held-out fraction for the final report.
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    /// `final` or `all`.
    #[arg(long, global = true)]
    pub attention_mode: Option<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, normalize, train and report on a labeled feature CSV.
    Train { data: PathBuf },
    /// Score a checkpoint on a labeled feature CSV.
    Evaluate { checkpoint: PathBuf, data: PathBuf },
    /// Per-row class and probabilities for a feature CSV.
    Predict {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Defaults to `<out-dir>/predictions.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients on a tiny model.
    Gradcheck {
        /// Double the conv kernel gradient before comparing.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
    /// Write a synthetic five-cluster feature CSV.
    Synth {
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        /// Defaults to `<out-dir>/synth.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert landmark recordings to one feature row each.
    Extract {
        #[arg(required = true)]
        landmarks: Vec<PathBuf>,
        /// Defaults to `<out-dir>/features.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = data::DEFAULT_FEATURE_WIDTH)]
        width: usize,
        #[arg(long, default_value_t = data::features::DEFAULT_MAX_GAP)]
        max_gap: usize,
    },
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub input_features: Option<usize>,
    pub num_classes: Option<usize>,
    pub conv_filters: Option<usize>,
    pub kernel_size: Option<usize>,
    pub pool_size: Option<usize>,
    pub bilstm_units_per_direction: Option<usize>,
    pub attention_width: Option<usize>,
    pub attention_mode: Option<QueryMode>,
    pub dense_units: Option<usize>,
    pub dropout_rate: Option<f64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub out_dir: PathBuf,
    /// Whether `input_features` was given; otherwise training adopts the
    /// width of its data.
    pub input_features_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            out_dir: PathBuf::from("out"),
            input_features_set: false,
        }
    }
}

impl RunConfig {
    /// File values over defaults, then flags over both.
    pub fn resolve(file: &FileConfig, flags: &GlobalArgs) -> Result<Self> {
        let mut rc = RunConfig::default();
        let m = &mut rc.model;
        let t = &mut rc.train;
        macro_rules! take {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        take!(m.input_features, file.input_features);
        take!(m.num_classes, file.num_classes);
        take!(m.conv_filters, file.conv_filters);
        take!(m.kernel_size, file.kernel_size);
        take!(m.pool_size, file.pool_size);
        take!(m.bilstm_units_per_direction, file.bilstm_units_per_direction);
        take!(m.attention_width, file.attention_width);
        take!(m.attention_mode, file.attention_mode);
        take!(m.dense_units, file.dense_units);
        take!(m.dropout_rate, file.dropout_rate);
        take!(t.epochs, file.epochs);
        take!(t.batch_size, file.batch_size);
        take!(t.learning_rate, file.learning_rate);
        take!(t.validation_fraction, file.validation_fraction);
        take!(rc.test_fraction, file.test_fraction);
        take!(rc.out_dir, file.out_dir);
        let mut seed = file.seed.unwrap_or(0);

        take!(seed, flags.seed);
        take!(t.epochs, flags.epochs);
        take!(t.batch_size, flags.batch_size);
        take!(t.learning_rate, flags.lr);
        take!(rc.test_fraction, flags.test_fraction);
        take!(rc.out_dir, flags.out_dir);
        if let Some(mode) = &flags.attention_mode {
            m.attention_mode = mode.parse()?;
        }
        m.seed = seed;
        t.seed = seed;
        rc.input_features_set = file.input_features.is_some();
        Ok(rc)
    }

    pub fn from_flags(flags: &GlobalArgs) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        RunConfig::resolve(&file, flags)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Param(m) | Error::Shape(m) => Error::Config(m),
            other => other,
        };
        self.model.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// The effective settings in `--config` syntax.
    pub fn to_toml(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let fc = FileConfig {
            seed: Some(t.seed),
            epochs: Some(t.epochs),
            batch_size: Some(t.batch_size),
            learning_rate: Some(t.learning_rate),
            validation_fraction: Some(t.validation_fraction),
            test_fraction: Some(self.test_fraction),
            out_dir: Some(self.out_dir.clone()),
            input_features: Some(m.input_features),
            num_classes: Some(m.num_classes),
            conv_filters: Some(m.conv_filters),
            kernel_size: Some(m.kernel_size),
            pool_size: Some(m.pool_size),
            bilstm_units_per_direction: Some(m.bilstm_units_per_direction),
            attention_width: Some(m.attention_width),
            attention_mode: Some(m.attention_mode),
            dense_units: Some(m.dense_units),
            dropout_rate: Some(m.dropout_rate),
        };
        toml::to_string(&fc).expect("config serializes")
    }
}

fn echo_config(rc: &RunConfig, out: &mut dyn Write) {
    let _ = writeln!(out, "# effective configuration\n{}", rc.to_toml());
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Everything `train` produces.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub train_rows: usize,
    pub test_rows: usize,
}

fn labels_or_config_error<'a>(ds: &'a Dataset, command: &str) -> Result<&'a [usize]> {
    ds.labels.as_deref().ok_or_else(|| {
        let hint = if command == "evaluate" {
            "; use `predict` for unlabeled data"
        } else {
            ""
        };
        Error::Config(format!(
            "{}: missing `label` column required by `{command}`{hint}",
            ds.provenance
        ))
    })
}

fn score(ckpt: &Checkpoint, ds: &Dataset) -> Result<(ConfusionMatrix, ClassificationReport)> {
    let labels = ds.require_labels()?;
    let preds = predict_batch(&ckpt.params, &ckpt.config, &ds.features)?;
    let y_pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let cm = confusion(labels, &y_pred, ckpt.config.num_classes)?;
    let rep = report(&cm)?;
    Ok((cm, rep))
}

/// Split, fit normalization on the training side, train, and score the
/// held-out side. Writes nothing.
pub fn run_train(
    rc: &RunConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&crate::model::EpochRecord, &ModelParams),
) -> Result<TrainArtifacts> {
    labels_or_config_error(data, "train")?;
    let mut rc = rc.clone();
    if !rc.input_features_set {
        rc.model.input_features = data.width();
    } else if rc.model.input_features != data.width() {
        return Err(Error::Config(format!(
            "input_features = {} but {} has {} feature columns",
            rc.model.input_features,
            data.provenance,
            data.width()
        )));
    }
    rc.validate()?;
    let (train_raw, test_raw) = stratified_split(data, rc.test_fraction, rc.train.seed)?;
    let stats = zscore_fit(&train_raw)?;
    let train_ds = zscore_apply(&stats, &train_raw)?;
    let test_ds = zscore_apply(&stats, &test_raw)?;
    let (params, history) = train_with(&train_ds, &rc.model, &rc.train, &mut on_epoch)?;
    let checkpoint = Checkpoint {
        config: rc.model.clone(),
        params,
        normalization: Some(stats),
    };
    let (cm, rep) = score(&checkpoint, &test_ds)?;
    Ok(TrainArtifacts {
        checkpoint,
        history,
        confusion: cm,
        report: rep,
        train_rows: train_ds.len(),
        test_rows: test_ds.len(),
    })
}

fn write_report(dir: &Path, cm: &ConfusionMatrix, rep: &ClassificationReport) -> Result<()> {
    write_file(&dir.join(REPORT_TEXT_FILE), rep.render().as_bytes())?;
    write_file(&dir.join(REPORT_JSON_FILE), rep.to_json().as_bytes())?;
    write_file(&dir.join(CONFUSION_FILE), cm.to_csv().as_bytes())
}

fn cmd_train(rc: &RunConfig, data_path: &Path, out: &mut dyn Write) -> Result<()> {
    let data = load_feature_csv(data_path)?;
    labels_or_config_error(&data, "train")?;
    let mut shown = rc.clone();
    if !shown.input_features_set {
        shown.model.input_features = data.width();
    }
    echo_config(&shown, out);
    shown.validate()?;

    let art = run_train(rc, &data, |e, _| {
        let val = match (e.val_loss, e.val_acc) {
            (Some(l), Some(a)) => format!("  val_loss {l:.4}  val_acc {a:.4}"),
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "epoch {:>4}  loss {:.4}  acc {:.4}{val}",
            e.epoch, e.train_loss, e.train_acc
        );
    })?;
    let dir = &rc.out_dir;
    ensure_dir(dir)?;
    save_checkpoint(&art.checkpoint, dir.join(CHECKPOINT_FILE))?;
    emit_curves(&art.history, dir.join(HISTORY_FILE))?;
    write_report(dir, &art.confusion, &art.report)?;
    let _ = writeln!(
        out,
        "held-out report ({} train rows, {} test rows)\n{}",
        art.train_rows,
        art.test_rows,
        art.report.render()
    );
    let _ = writeln!(out, "wrote {}", dir.display());
    Ok(())
}

fn load_for_inference(ckpt_path: &Path, data_path: &Path) -> Result<(Checkpoint, Dataset)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let data = load_feature_csv(data_path)?;
    ckpt.ensure_input_width(data.width())?;
    let data = match &ckpt.normalization {
        Some(stats) => zscore_apply(stats, &data)?,
        None => data,
    };
    Ok((ckpt, data))
}

fn cmd_evaluate(rc: &RunConfig, ckpt_path: &Path, data_path: &Path, out: &mut dyn Write) -> Result<()> {
    let (ckpt, data) = load_for_inference(ckpt_path, data_path)?;
    labels_or_config_error(&data, "evaluate")?;
    let (cm, rep) = score(&ckpt, &data)?;
    ensure_dir(&rc.out_dir)?;
    write_report(&rc.out_dir, &cm, &rep)?;
    let _ = writeln!(out, "{}", rep.render());
    Ok(())
}

/// Header `row,predicted_class,p0..p{K-1}`.
pub fn predictions_csv(probs: &[crate::model::Prediction], num_classes: usize) -> String {
    let mut s = String::from("row,predicted_class");
    for k in 0..num_classes {
        s.push_str(&format!(",p{k}"));
    }
    s.push('\n');
    for (r, p) in probs.iter().enumerate() {
        s.push_str(&format!("{r},{}", p.class));
        for v in &p.probs {
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
    s
}

fn cmd_predict(
    rc: &RunConfig,
    ckpt_path: &Path,
    data_path: &Path,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let (ckpt, data) = load_for_inference(ckpt_path, data_path)?;
    let preds = predict_batch(&ckpt.params, &ckpt.config, &data.features)?;
    let text = predictions_csv(&preds, ckpt.config.num_classes);
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&rc.out_dir)?;
            rc.out_dir.join("predictions.csv")
        }
    };
    write_file(&path, text.as_bytes())?;
    let _ = writeln!(out, "wrote {} predictions to {}", preds.len(), path.display());
    Ok(())
}

fn cmd_gradcheck(
    flags: &GlobalArgs,
    inject_fault: bool,
    epsilon: f64,
    out: &mut dyn Write,
) -> Result<Vec<GradCheckReport>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
    }
    let modes = match &flags.attention_mode {
        Some(m) => vec![m.parse::<QueryMode>()?],
        None => vec![QueryMode::Final, QueryMode::All],
    };
    let opts = GradCheckOptions {
        epsilon,
        fault: inject_fault.then_some(Fault::ScaleConvGradient(2.0)),
        ..Default::default()
    };
    let mut reports = Vec::new();
    for mode in modes {
        let cfg = ModelConfig {
            seed: flags.seed.unwrap_or(0),
            ..ModelConfig::tiny(mode)
        };
        let (batch, labels) = random_batch(&cfg, 4, cfg.seed.wrapping_add(1));
        let rep = gradient_check(&cfg, &batch, &labels, &opts)?;
        let _ = writeln!(out, "attention mode {mode}\n{}", rep.render());
        reports.push(rep);
    }
    Ok(reports)
}

fn cmd_synth(
    rc: &RunConfig,
    n_per_class: usize,
    separation: f64,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let ds = synth_generate(n_per_class, separation, rc.train.seed).map_err(|e| match e {
        Error::Param(m) => Error::Config(m),
        other => other,
    })?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&rc.out_dir)?;
            rc.out_dir.join("synth.csv")
        }
    };
    write_feature_csv(&ds, &path)?;
    let _ = writeln!(out, "wrote {} rows to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_extract(
    rc: &RunConfig,
    files: &[PathBuf],
    output: Option<&Path>,
    width: usize,
    max_gap: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    if width == 0 {
        return Err(Error::Config("feature width must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut failures = 0usize;
    for f in files {
        match load_landmark_csv(f).and_then(|seq| data::extract_from_landmarks(&seq, width, max_gap)) {
            Ok(fv) => {
                let _ = writeln!(out, "row {}: {}", rows.len(), f.display());
                rows.push(fv.values);
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(err, "{}: {e}", f.display());
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::data(format!(
            "no features extracted from {} file(s)",
            files.len()
        )));
    }
    let n = rows.len();
    let ds = Dataset::new(Mat::new(n, width, rows.concat())?, None, "extract")?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&rc.out_dir)?;
            rc.out_dir.join("features.csv")
        }
    };
    write_feature_csv(&ds, &path)?;
    let _ = writeln!(
        out,
        "wrote {n} feature rows ({} columns: {}..{}) to {}; {failures} file(s) failed",
        width,
        feature_names(width)[0],
        feature_names(width)[width - 1],
        path.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let rc = RunConfig::from_flags(&cli.global)?;
    match &cli.command {
        Command::Train { data } => cmd_train(&rc, data, out)?,
        Command::Evaluate { checkpoint, data } => {
            echo_config(&rc, out);
            cmd_evaluate(&rc, checkpoint, data, out)?
        }
        Command::Predict {
            checkpoint,
            data,
            output,
        } => cmd_predict(&rc, checkpoint, data, output.as_deref(), out)?,
        Command::Gradcheck { inject_fault, epsilon } => {
            let reports = cmd_gradcheck(&cli.global, *inject_fault, *epsilon, out)?;
            if reports.iter().any(|r| !r.passed()) {
                let _ = writeln!(err, "gradient check FAILED");
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Synth {
            n_per_class,
            separation,
            output,
        } => cmd_synth(&rc, *n_per_class, *separation, output.as_deref(), out)?,
        Command::Extract {
            landmarks,
            output,
            width,
            max_gap,
        } => cmd_extract(&rc, landmarks, output.as_deref(), *width, *max_gap, out, err)?,
    }
    Ok(0)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig =
            toml::from_str("epochs = 7\nseed = 3\nattention_mode = \"all\"\ndense_units = 9\n").unwrap();
        let flags = GlobalArgs {
            epochs: Some(2),
            ..Default::default()
        };
        let rc = RunConfig::resolve(&file, &flags).unwrap();
        assert_eq!(rc.train.epochs, 2);
        assert_eq!((rc.train.seed, rc.model.seed), (3, 3));
        assert_eq!(rc.model.attention_mode, QueryMode::All);
        assert_eq!(rc.model.dense_units, 9);
        assert!(!rc.input_features_set);
    }

    #[test]
    fn effective_config_round_trips() {
        let flags = GlobalArgs {
            lr: Some(5e-4),
            attention_mode: Some("all".into()),
            ..Default::default()
        };
        let rc = RunConfig::resolve(&FileConfig::default(), &flags).unwrap();
        let back: FileConfig = toml::from_str(&rc.to_toml()).unwrap();
        let again = RunConfig::resolve(&back, &GlobalArgs::default()).unwrap();
        assert_eq!(again.model, rc.model);
        assert_eq!(again.train, rc.train);
    }

    #[test]
    fn unknown_key_and_bad_mode_are_config_errors() {
        assert!(toml::from_str::<FileConfig>("epoch = 3").is_err());
        let flags = GlobalArgs {
            attention_mode: Some("sideways".into()),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(&FileConfig::default(), &flags),
            Err(Error::Config(_))
        ));
        let rc = RunConfig {
            test_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(rc.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn predictions_csv_layout() {
        let p = vec![crate::model::Prediction {
            class: 1,
            probs: vec![0.25, 0.75],
        }];
        assert_eq!(predictions_csv(&p, 2), "row,predicted_class,p0,p1\n0,1,0.25,0.75\n");
    }
}
