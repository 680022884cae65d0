//! Batch command-line frontend.
//!
//! Machine-readable output goes to stdout, human-readable summaries to
//! stderr. Exit codes: 0 success, 2 input or validation error, 3 training or
//! evaluation error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::aggregate::{self, AggregateError, HyperGrid};
use crate::domain::{ClassLabel, PatientRecord, SplitPart};
use crate::eval::{self, EvalError};
use crate::features;
use crate::ingest::{self, IngestError, SplitRatios};
use crate::persist::{self, TrainedOn};
use crate::svm::KernelKind;
use crate::synth::{self, BetaParams};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn training(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_TRAINING,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::EmptyClass(_) => CliError::training(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<AggregateError> for CliError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::EmptyInput
            | AggregateError::UnlabeledRecord(_)
            | AggregateError::InvalidGrid(_)
            | AggregateError::BinMismatch { .. } => CliError::input(e.to_string()),
            other => CliError::training(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingClass(_) | EvalError::Aggregate(_) => CliError::training(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<persist::PersistError> for CliError {
    fn from(e: persist::PersistError) -> Self {
        CliError::input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mag", version, about = "Patient-level MSI aggregation from patch probabilities")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Histogram bin count.
    #[arg(long, global = true, default_value_t = features::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Train, validation, and test fractions.
    #[arg(long, global = true, value_name = "T,V,S", default_value = "0.5,0.2,0.3")]
    pub ratios: String,
    #[arg(long, global = true, default_value_t = aggregate::DEFAULT_PATCH_THRESHOLD)]
    pub patch_threshold: f64,
    #[arg(long, global = true, default_value_t = aggregate::DEFAULT_PATIENT_THRESHOLD)]
    pub patient_threshold: f64,
    #[arg(long, global = true, value_name = "C,...", default_value = "0.1,1,10,100")]
    pub grid_c: String,
    #[arg(long, global = true, value_name = "G,...", default_value = "0.1,1,10")]
    pub grid_gamma: String,
    /// Kernels to search: linear, rbf, or both.
    #[arg(long, global = true, value_name = "K,...", default_value = "linear,rbf")]
    pub kernel: String,
    /// Treat a patient without a label as an error.
    #[arg(long, global = true)]
    pub strict_labels: bool,
    /// Output path (file, or directory for `synth`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    EqualMean,
    Separable,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a predictions/labels pair and summarize it.
    Validate { predictions: PathBuf, labels: PathBuf },
    /// Export per-patient histogram features as CSV.
    Featurize {
        predictions: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write a synthetic predictions.csv and labels.csv into --out.
    Synth {
        #[arg(long, value_enum, default_value = "equal-mean")]
        scenario: Scenario,
        #[arg(long)]
        n_msi: Option<usize>,
        #[arg(long)]
        n_mss: Option<usize>,
        #[arg(long)]
        patches_min: Option<usize>,
        #[arg(long)]
        patches_max: Option<usize>,
        /// MSIMUT patch distribution as ALPHA,BETA.
        #[arg(long)]
        msi_beta: Option<String>,
        /// MSS patch distribution as ALPHA,BETA.
        #[arg(long)]
        mss_beta: Option<String>,
    },
    /// Split patients, grid-search the SVM, write model and split manifest.
    Train {
        predictions: PathBuf,
        labels: PathBuf,
        /// Split manifest path; defaults to the model path with a
        /// `.split.csv` extension.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score every patient with a trained model.
    Predict {
        predictions: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare counting, averaging, and MAg on the manifest's test split.
    Compare {
        predictions: PathBuf,
        labels: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Validated run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub bins: usize,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub patch_threshold: f64,
    pub patient_threshold: f64,
    pub grid: HyperGrid,
    pub strict_labels: bool,
}

fn parse_list(flag: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("--{flag}: cannot parse {s:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        if args.bins < 2 {
            return Err(CliError::input(format!("--bins must be at least 2, got {}", args.bins)));
        }
        for (flag, v) in [
            ("patch-threshold", args.patch_threshold),
            ("patient-threshold", args.patient_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::input(format!("--{flag} must be in [0, 1], got {v}")));
            }
        }
        let r = parse_list("ratios", &args.ratios)?;
        let [t, v, s] = r[..] else {
            return Err(CliError::input("--ratios expects three values T,V,S"));
        };
        let ratios = SplitRatios::new(t, v, s)?;
        let kernels = args
            .kernel
            .split(',')
            .map(|k| k.trim().parse::<KernelKind>().map_err(|e| CliError::input(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let grid = HyperGrid::new(
            parse_list("grid-c", &args.grid_c)?,
            parse_list("grid-gamma", &args.grid_gamma)?,
            kernels,
        )?;
        Ok(Self {
            bins: args.bins,
            seed: args.seed,
            ratios,
            patch_threshold: args.patch_threshold,
            patient_threshold: args.patient_threshold,
            grid,
            strict_labels: args.strict_labels,
        })
    }
}

/// Formats like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn ctx<E: Into<CliError>>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| {
        let mut err: CliError = e.into();
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }
}

fn load_predictions(path: &Path) -> Result<Vec<crate::domain::PatchPrediction>, CliError> {
    ingest::parse_predictions(read(path)?.as_slice()).map_err(ctx(path))
}

fn load_labels(path: &Path) -> Result<BTreeMap<String, ClassLabel>, CliError> {
    ingest::parse_labels(read(path)?.as_slice()).map_err(ctx(path))
}

fn load_records(
    predictions: &Path,
    labels: &Path,
    strict: bool,
) -> Result<Vec<PatientRecord>, CliError> {
    let preds = load_predictions(predictions)?;
    let labels = load_labels(labels)?;
    Ok(ingest::group_by_patient(&preds, &labels, strict)?)
}

fn json_line(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::input(format!("write failed: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return emit(stdout, &e.to_string());
        }
        Err(e) => {
            let text = e.to_string();
            return Err(CliError::input(text.strip_prefix("error: ").unwrap_or(&text).trim_end()));
        }
    };
    run(&cli, stdout, stderr)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let config = RunConfig::from_args(&cli.run)?;
    let out = cli.run.out.as_deref();
    match &cli.command {
        Command::Validate { predictions, labels } => cmd_validate(predictions, labels, &config, stdout, stderr),
        Command::Featurize { predictions, labels } => {
            cmd_featurize(predictions, labels.as_deref(), &config, out, stdout)
        }
        Command::Synth {
            scenario,
            n_msi,
            n_mss,
            patches_min,
            patches_max,
            msi_beta,
            mss_beta,
        } => {
            let mut spec = match scenario {
                Scenario::EqualMean => synth::equal_mean_scenario(config.seed),
                Scenario::Separable => synth::separable_scenario(config.seed),
            };
            spec.n_msi = n_msi.unwrap_or(spec.n_msi);
            spec.n_mss = n_mss.unwrap_or(spec.n_mss);
            spec.patches_min = patches_min.unwrap_or(spec.patches_min);
            spec.patches_max = patches_max.unwrap_or(spec.patches_max);
            if let Some(b) = msi_beta {
                spec.msi_dist = parse_beta("msi-beta", b)?;
            }
            if let Some(b) = mss_beta {
                spec.mss_dist = parse_beta("mss-beta", b)?;
            }
            let dir = out.ok_or_else(|| CliError::input("synth requires --out DIR"))?;
            cmd_synth(&spec, dir, stdout)
        }
        Command::Train {
            predictions,
            labels,
            manifest,
        } => {
            let model_out = out.ok_or_else(|| CliError::input("train requires --out MODEL"))?;
            let manifest_out = manifest
                .clone()
                .unwrap_or_else(|| model_out.with_extension("split.csv"));
            cmd_train(predictions, labels, &config, model_out, &manifest_out, stdout, stderr)
        }
        Command::Predict { predictions, model } => cmd_predict(predictions, model, &config, out, stdout),
        Command::Compare {
            predictions,
            labels,
            model,
            manifest,
        } => cmd_compare(predictions, labels, model, manifest, &config, out, stdout, stderr),
    }
}

fn parse_beta(flag: &str, text: &str) -> Result<BetaParams, CliError> {
    match parse_list(flag, text)?[..] {
        [a, b] => Ok(BetaParams::new(a, b)),
        _ => Err(CliError::input(format!("--{flag} expects ALPHA,BETA"))),
    }
}

#[derive(Serialize)]
struct ValidateSummary {
    patients: usize,
    patches: usize,
    per_class: BTreeMap<&'static str, usize>,
    patches_per_patient: PatchStats,
    labels_without_predictions: usize,
}

#[derive(Serialize)]
struct PatchStats {
    min: usize,
    median: f64,
    max: usize,
}

pub fn cmd_validate(
    predictions: &Path,
    labels: &Path,
    config: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let preds = load_predictions(predictions)?;
    let label_map = load_labels(labels)?;
    let records = ingest::group_by_patient(&preds, &label_map, config.strict_labels)?;

    let mut per_class = BTreeMap::from([("MSIMUT", 0), ("MSS", 0), ("unlabeled", 0)]);
    for r in &records {
        let key = r.label().map_or("unlabeled", |l| l.as_str());
        *per_class.get_mut(key).expect("known key") += 1;
    }
    let mut counts: Vec<usize> = records.iter().map(|r| r.patch_count()).collect();
    counts.sort_unstable();
    let stats = match counts.len() {
        0 => PatchStats {
            min: 0,
            median: 0.0,
            max: 0,
        },
        n => PatchStats {
            min: counts[0],
            median: if n % 2 == 1 {
                counts[n / 2] as f64
            } else {
                (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
            },
            max: counts[n - 1],
        },
    };
    let with_preds: std::collections::BTreeSet<&str> = records.iter().map(|r| r.patient_id()).collect();
    let summary = ValidateSummary {
        patients: records.len(),
        patches: preds.len(),
        labels_without_predictions: label_map.keys().filter(|k| !with_preds.contains(k.as_str())).count(),
        per_class,
        patches_per_patient: stats,
    };
    emit(stdout, &json_line(&summary))?;
    let text = format!(
        "{} patients, {} patches ({} MSIMUT, {} MSS, {} unlabeled); patches per patient min {} / median {} / max {}\n",
        summary.patients,
        summary.patches,
        summary.per_class["MSIMUT"],
        summary.per_class["MSS"],
        summary.per_class["unlabeled"],
        summary.patches_per_patient.min,
        summary.patches_per_patient.median,
        summary.patches_per_patient.max
    );
    emit(stderr, &text)
}

pub fn cmd_featurize(
    predictions: &Path,
    labels: Option<&Path>,
    config: &RunConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let preds = load_predictions(predictions)?;
    let label_map = match labels {
        Some(p) => load_labels(p)?,
        None => BTreeMap::new(),
    };
    let strict = config.strict_labels && labels.is_some();
    let records = ingest::group_by_patient(&preds, &label_map, strict)?;

    let mut csv = String::from("patient_id,label");
    for k in 0..config.bins {
        let _ = write!(csv, ",b{k}");
    }
    csv.push('\n');
    for r in &records {
        let f = features::featurize(r, config.bins).map_err(|e| CliError::input(e.to_string()))?;
        csv.push_str(r.patient_id());
        csv.push(',');
        if let Some(l) = r.label() {
            csv.push_str(l.as_str());
        }
        for &b in f.bins() {
            csv.push(',');
            csv.push_str(&format_sig9(b));
        }
        csv.push('\n');
    }
    match out {
        Some(path) => write_file(path, &csv),
        None => emit(stdout, &csv),
    }
}

pub fn cmd_synth(spec: &synth::CohortSpec, dir: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cohort = synth::generate_cohort(spec).map_err(|e| CliError::input(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let preds_path = dir.join("predictions.csv");
    let labels_path = dir.join("labels.csv");
    write_file(&preds_path, &synth::predictions_csv(&cohort))?;
    write_file(&labels_path, &synth::labels_csv(&cohort))?;
    let summary = json!({
        "predictions": preds_path.display().to_string(),
        "labels": labels_path.display().to_string(),
        "patients": cohort.len(),
        "patches": cohort.iter().map(|r| r.patch_count()).sum::<usize>(),
        "seed": spec.seed,
    });
    emit(stdout, &json_line(&summary))
}

fn labeled_only(records: Vec<PatientRecord>, stderr: &mut dyn Write) -> Result<Vec<PatientRecord>, CliError> {
    let (labeled, unlabeled): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.label().is_some());
    if !unlabeled.is_empty() {
        emit(
            stderr,
            &format!("warning: ignoring {} unlabeled patients\n", unlabeled.len()),
        )?;
    }
    Ok(labeled)
}

fn subset(records: &[PatientRecord], ids: &std::collections::BTreeSet<String>) -> Vec<PatientRecord> {
    records
        .iter()
        .filter(|r| ids.contains(r.patient_id()))
        .cloned()
        .collect()
}

pub fn cmd_train(
    predictions: &Path,
    labels: &Path,
    config: &RunConfig,
    model_out: &Path,
    manifest_out: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let records = load_records(predictions, labels, config.strict_labels)?;
    let records = labeled_only(records, stderr)?;
    let split = ingest::split_patients(&records, &config.ratios, config.seed)?;
    let train = subset(&records, split.train());
    let val = subset(&records, split.val());

    let (model, scores) = aggregate::grid_search(&train, &val, &config.grid, config.bins, config.seed)?;
    let trained_on = TrainedOn {
        n_train: train.len(),
        n_val: val.len(),
        seed: config.seed,
        ratios: [config.ratios.train(), config.ratios.val(), config.ratios.test()],
        patch_threshold: config.patch_threshold,
        candidates_evaluated: scores.len(),
    };
    write_file(model_out, &persist::model_to_json(&model, trained_on))?;
    write_file(manifest_out, &persist::manifest_csv(&split))?;

    let hp = model.selected_hyperparams();
    let summary = json!({
        "selected_hyperparams": hp,
        "validation_bacc": model.validation_bacc(),
        "support_vectors": model.svm().support_vectors().len(),
        "split": { "train": split.train().len(), "val": split.val().len(), "test": split.test().len() },
        "model": model_out.display().to_string(),
        "manifest": manifest_out.display().to_string(),
    });
    emit(stdout, &json_line(&summary))?;
    emit(
        stderr,
        &format!(
            "selected kernel={} C={} gamma={}; validation BACC {:.4}\n",
            hp.kernel.as_str(),
            hp.c,
            hp.gamma.map_or("-".to_string(), |g| g.to_string()),
            model.validation_bacc()
        ),
    )
}

fn load_model(path: &Path) -> Result<aggregate::MagModel, CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(persist::model_from_json(&text).map_err(ctx(path))?.0)
}

pub fn cmd_predict(
    predictions: &Path,
    model_path: &Path,
    config: &RunConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let preds = load_predictions(predictions)?;
    let records = ingest::group_by_patient(&preds, &BTreeMap::new(), false)?;
    let mut csv = String::from("patient_id,mag_decision,mag_label,counting_score,averaging_score\n");
    for r in &records {
        let (label, d) = aggregate::mag_predict(&model, r)?;
        let counting = aggregate::counting_score(r.probs(), config.patch_threshold)?;
        let averaging = aggregate::averaging_score(r.probs())?;
        let _ = writeln!(csv, "{},{d},{label},{counting},{averaging}", r.patient_id());
    }
    match out {
        Some(path) => write_file(path, &csv),
        None => emit(stdout, &csv),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_compare(
    predictions: &Path,
    labels: &Path,
    model_path: &Path,
    manifest_path: &Path,
    config: &RunConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let split = persist::parse_manifest(read(manifest_path)?.as_slice()).map_err(ctx(manifest_path))?;
    let records = load_records(predictions, labels, config.strict_labels)?;
    let by_id: BTreeMap<&str, &PatientRecord> = records.iter().map(|r| (r.patient_id(), r)).collect();

    let mut test = Vec::new();
    for id in split.part(SplitPart::Test) {
        let r = by_id.get(id.as_str()).ok_or_else(|| {
            CliError::input(format!("manifest references patient {id} absent from the predictions"))
        })?;
        if r.label().is_none() {
            return Err(CliError::input(format!("test patient {id} has no label")));
        }
        test.push((*r).clone());
    }
    let report = eval::compare(&test, &model, config.patch_threshold, config.patient_threshold)?;
    let text = json_line(&report);
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    emit(stdout, &text)?;
    emit(stderr, &report.render_table())
}
