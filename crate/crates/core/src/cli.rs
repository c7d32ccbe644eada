//! `adprog` command line.
//!
//! Settings come from an optional TOML config file (`--config`) and are
//! overridden by flags. The master seed is taken from `--seed`, then the
//! `ADPROG_SEED` environment variable, then the config file.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::allpairs::{transform_mode, Mode};
use crate::cohort::{FeatureGroup, GroupName, PatientRecord};
use crate::error::{Error, Result};
use crate::eval::{
    cross_validate, evaluate_forward, forecast_monthly, forward_targets, grid_search, random_splits, Experiment,
    Grid, GridProtocol, Grouping,
};
use crate::ingest::{impute, missingness, parse_csv, split_tadpole, DatasetSplit, ImputationPolicy, Schema};
use crate::metrics::summarize;
use crate::model::{deserialize, fit, serialize, MlpHyperparams};
use crate::report::{self, short, ReportBundle};
use crate::synth::{self, CohortSpec};

#[derive(Debug, Parser)]
#[command(name = "adprog", version, about = "Forecast cognitive diagnosis from longitudinal clinical records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic longitudinal cohort CSV.
    Synth(SynthArgs),
    /// Parse a cohort CSV and summarize it (or report missingness with --inspect).
    Ingest(IngestArgs),
    /// Write the all-pairs training matrix and its provenance sidecar.
    Transform(TransformArgs),
    /// Train a model and write the model file.
    Train(TrainArgs),
    /// k-fold cross-validation.
    Cv(CvArgs),
    /// Repeated random train/test splits.
    Splits(SplitsArgs),
    /// Hyperparameter grid search.
    Grid(GridArgs),
    /// Score a trained model on held-out patients' later visits.
    Evaluate(EvaluateArgs),
    /// Month-by-month forecasts for held-out patients.
    Forecast(ForecastArgs),
    /// Compute mAUC, per-class AUC and the confusion matrix from a predictions CSV.
    Score(ScoreArgs),
}

/// Options shared by the data-driven subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct DataOpts {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column-mapping TOML for the CSV.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Feature group: G8, G11 or G15.
    #[arg(long)]
    pub features: Option<String>,
    /// Row construction: pairs or triplets.
    #[arg(long)]
    pub mode: Option<String>,
    /// Missing-value policy: drop-row or forward-fill-then-drop.
    #[arg(long)]
    pub impute: Option<String>,
    /// Phase label of the early study period.
    #[arg(long)]
    pub early_phase: Option<String>,
    /// Comma-separated phase labels of the later study period.
    #[arg(long, value_delimiter = ',')]
    pub late_phases: Option<Vec<String>>,
    /// Train on `all` patients or only the `lb1` training cohort.
    #[arg(long)]
    pub cohort: Option<String>,
    /// Master seed (falls back to ADPROG_SEED).
    #[arg(long, env = "ADPROG_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for independent jobs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Hyperparameter TOML (fields of the [model] section).
    #[arg(long)]
    pub hp: Option<PathBuf>,
    /// Also emit SVG charts.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON cohort spec; defaults to the built-in separable cohort.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of patients (overrides the spec).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, env = "ADPROG_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataOpts,
    /// Print per-column missingness as CSV.
    #[arg(long)]
    pub inspect: bool,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub data: DataOpts,
    /// Matrix CSV; provenance goes to `<stem>.provenance.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataOpts,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataOpts,
    #[arg(long)]
    pub k: Option<usize>,
    /// Fold granularity: patient or row.
    #[arg(long)]
    pub grouping: Option<String>,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report directory (cv_report.json, cv_table.csv, manifest.json).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    #[command(flatten)]
    pub data: DataOpts,
    #[arg(long)]
    pub n: Option<usize>,
    /// Training fraction per split.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataOpts,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Scoring protocol: split, cv or forward.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub grouping: Option<String>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataOpts,
    /// Held-out patients' early visits as a separate CSV (skips the phase split).
    #[arg(long, requires = "lb4")]
    pub lb2: Option<PathBuf>,
    /// Held-out patients' later visits as a separate CSV.
    #[arg(long, requires = "lb2")]
    pub lb4: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub data: DataOpts,
    /// Held-out patients' early visits as a separate CSV (skips the phase split).
    #[arg(long, requires = "lb4")]
    pub lb2: Option<PathBuf>,
    /// Held-out patients' later visits as a separate CSV.
    #[arg(long, requires = "lb2")]
    pub lb4: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Months to forecast.
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with prob_NL, prob_MCI, prob_DEM and actual columns.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output format: csv or json.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub data: DataSection,
    pub features: FeatureSection,
    pub model: Option<MlpHyperparams>,
    pub grid: Option<Grid>,
    pub protocol: ProtocolSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub impute: Option<String>,
    pub early_phase: Option<String>,
    pub late_phases: Option<Vec<String>>,
    pub cohort: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub group: Option<String>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub k: Option<usize>,
    pub grouping: Option<String>,
    pub n_splits: Option<usize>,
    pub fraction: Option<f64>,
    pub horizon: Option<u32>,
    pub repeats: Option<usize>,
    pub grid_protocol: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub svg: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    pub input: Option<PathBuf>,
    pub schema: Schema,
    pub group: FeatureGroup,
    pub mode: Mode,
    pub impute: ImputationPolicy,
    pub early_phase: String,
    pub late_phases: BTreeSet<String>,
    pub lb1_only: bool,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub hp: MlpHyperparams,
    pub svg: bool,
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("input file {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn resolve(opts: &DataOpts) -> Result<Self> {
        let file = match &opts.config {
            Some(p) => {
                require_file(p)?;
                FileConfig::load(p)?
            }
            None => FileConfig::default(),
        };
        let input = opts.input.clone().or_else(|| file.data.input.clone());
        if let Some(p) = &input {
            require_file(p)?;
        }
        let schema = match opts.schema.as_ref().or(file.data.schema.as_ref()) {
            Some(p) => {
                require_file(p)?;
                Schema::load(p)?
            }
            None => Schema::default(),
        };
        let group_name = opts
            .features
            .clone()
            .or_else(|| file.features.group.clone())
            .unwrap_or_else(|| "G15".into());
        let mode = opts
            .mode
            .clone()
            .or_else(|| file.features.mode.clone())
            .unwrap_or_else(|| "pairs".into());
        let impute = opts
            .impute
            .clone()
            .or_else(|| file.data.impute.clone())
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or_default();
        let early_phase = opts
            .early_phase
            .clone()
            .or_else(|| file.data.early_phase.clone())
            .unwrap_or_else(|| "ADNI1".into());
        let late_phases = opts
            .late_phases
            .clone()
            .or_else(|| file.data.late_phases.clone())
            .unwrap_or_else(|| vec!["ADNIGO".into(), "ADNI2".into()])
            .into_iter()
            .collect();
        let lb1_only = match opts.cohort.as_deref().or(file.data.cohort.as_deref()).unwrap_or("all") {
            "all" => false,
            "lb1" => true,
            other => return Err(Error::invalid(format!("unknown cohort '{other}' (expected all or lb1)"))),
        };
        let mut hp = file.model.clone().unwrap_or_default();
        if let Some(p) = &opts.hp {
            require_file(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            hp = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        }
        hp.validate()?;
        let jobs = opts.jobs.or(file.jobs).unwrap_or(1).max(1);
        Ok(RunConfig {
            input,
            schema,
            group: FeatureGroup::registered(group_name.parse::<GroupName>()?),
            mode: mode.parse()?,
            impute,
            early_phase,
            late_phases,
            lb1_only,
            seed: opts.seed.or(file.seed),
            jobs,
            hp,
            svg: opts.svg || file.output.svg.unwrap_or(false),
            file,
        })
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::invalid("a seed is required (--seed, ADPROG_SEED or config)"))
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::invalid("an input CSV is required (--input or [data] input)"))
    }

    /// Parsed and imputed cohort.
    pub fn records(&self) -> Result<Vec<PatientRecord>> {
        let records = parse_csv(self.input()?, &self.schema)?;
        Ok(impute(&records, self.impute))
    }

    pub fn split(&self, records: &[PatientRecord]) -> DatasetSplit {
        split_tadpole(records, &self.early_phase, &self.late_phases)
    }

    /// Records used for training-style subcommands.
    pub fn training_records(&self) -> Result<Vec<PatientRecord>> {
        let records = self.records()?;
        Ok(if self.lb1_only { self.split(&records).lb1 } else { records })
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            group: self.group.clone(),
            mode: self.mode,
            hp: self.hp.clone(),
        }
    }

    fn grouping(&self, flag: &Option<String>) -> Result<Grouping> {
        flag.clone()
            .or_else(|| self.file.protocol.grouping.clone())
            .map(|g| g.parse())
            .transpose()
            .map(Option::unwrap_or_default)
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("adprog: {e}");
            e.exit_code()
        }
    }
}

fn stdout_line(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Train(a) => cmd_train(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Splits(a) => cmd_splits(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Score(a) => cmd_score(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            CohortSpec::from_json(&text)?
        }
        None => CohortSpec::default(),
    };
    if let Some(n) = a.n {
        spec.n_patients = n;
    }
    spec.seed = a
        .seed
        .ok_or_else(|| Error::invalid("a seed is required (--seed or ADPROG_SEED)"))?;
    let records = synth::generate(&spec)?;
    synth::write_csv_file(&records, &a.out)?;
    let exams: usize = records.iter().map(PatientRecord::len).sum();
    stdout_line(&format!("wrote {} patients, {exams} examinations to {}", records.len(), a.out.display()))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let path = cfg.input()?;
    if a.inspect {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let summary = missingness(file, &cfg.schema)?;
        let mut w = csv::Writer::from_writer(std::io::stdout().lock());
        w.write_record(["column", "rows", "missing", "fraction"])?;
        for c in summary {
            w.write_record([c.column.clone(), c.rows.to_string(), c.missing.to_string(), report::format_f64(c.fraction())])?;
        }
        w.flush().map_err(|e| Error::io("<stdout>", e))?;
        return Ok(());
    }
    let records = cfg.records()?;
    let split = cfg.split(&records);
    let exams: usize = records.iter().map(PatientRecord::len).sum();
    stdout_line(&format!(
        "patients={} examinations={} lb1={} lb2={} lb4={}",
        records.len(),
        exams,
        split.lb1.len(),
        split.lb2.len(),
        split.lb4.len()
    ))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    out.with_file_name(format!("{stem}.provenance.csv"))
}

fn cmd_transform(a: TransformArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let records = cfg.training_records()?;
    let matrix = transform_mode(&records, &cfg.group, cfg.mode)?;
    let create = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));
    matrix.write_csv(std::io::BufWriter::new(create(&a.out)?))?;
    let sidecar = sidecar_path(&a.out);
    matrix.write_provenance_csv(std::io::BufWriter::new(create(&sidecar)?))?;
    let r = matrix.report;
    stdout_line(&format!(
        "rows={} candidates={} missing_target={} unusable_source={}",
        r.emitted, r.candidates, r.missing_target, r.unusable_source
    ))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let seed = cfg.require_seed()?;
    let records = cfg.training_records()?;
    let matrix = transform_mode(&records, &cfg.group, cfg.mode)?;
    let hp = MlpHyperparams { seed, ..cfg.hp.clone() };
    let model = fit(&matrix, &hp)?;
    let bytes = serialize(&model)?;
    std::fs::write(&a.out, bytes).map_err(|e| Error::io(&a.out, e))?;
    stdout_line(&format!(
        "trained on {} rows for {} epochs; final loss {}",
        matrix.n_rows(),
        model.loss_curve.len(),
        short(model.loss_curve.last().copied())
    ))
}

fn cmd_cv(a: CvArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let seed = cfg.require_seed()?;
    let k = a.k.or(cfg.file.protocol.k).unwrap_or(7);
    let grouping = cfg.grouping(&a.grouping)?;
    let records = cfg.training_records()?;
    let report = cross_validate(&records, &cfg.experiment(), k, grouping, seed, cfg.jobs)?;
    if let Some(out) = &a.out {
        let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| Error::data(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
    }
    if let Some(dir) = &a.out_dir {
        let mut bundle = ReportBundle::create(dir, cfg.svg)?;
        bundle.write_json("cv_report.json", &report)?;
        report::emit_cv_table(&mut bundle, std::slice::from_ref(&report))?;
        bundle.finish()?;
    }
    stdout_line(&format!(
        "{}-fold {} CV: train mAUC {} test mAUC {} (sd {})",
        k,
        grouping,
        short(report.mean_train_mauc),
        short(report.mean_test_mauc),
        short(report.test_sd)
    ))
}

fn cmd_splits(a: SplitsArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let seed = cfg.require_seed()?;
    let n = a.n.or(cfg.file.protocol.n_splits).unwrap_or(100);
    let fraction = a.fraction.or(cfg.file.protocol.fraction).unwrap_or(0.7);
    let records = cfg.training_records()?;
    let results = random_splits(&records, &cfg.experiment(), n, fraction, seed, cfg.jobs)?;
    let mut bundle = ReportBundle::create(&a.out_dir, cfg.svg)?;
    report::emit_splits(&mut bundle, &results)?;
    bundle.write_json("splits.json", &results)?;
    bundle.finish()?;
    let test: Vec<f64> = results.iter().filter_map(|r| r.test_mauc).collect();
    stdout_line(&format!(
        "{} splits ({} scored): mean test mAUC {} (sd {})",
        results.len(),
        test.len(),
        short(crate::eval::mean(&test)),
        short(crate::eval::sample_sd(&test))
    ))
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let seed = cfg.require_seed()?;
    let repeats = a.repeats.or(cfg.file.protocol.repeats).unwrap_or(5);
    let grid = cfg.file.grid.clone().unwrap_or_default();
    let protocol_name = a
        .protocol
        .clone()
        .or_else(|| cfg.file.protocol.grid_protocol.clone())
        .unwrap_or_else(|| "split".into());
    let records = cfg.records()?;
    let (train, protocol) = match protocol_name.as_str() {
        "split" => {
            let fraction = a.fraction.or(cfg.file.protocol.fraction).unwrap_or(0.7);
            let train = if cfg.lb1_only { cfg.split(&records).lb1 } else { records };
            (train, GridProtocol::Split { train_fraction: fraction })
        }
        "cv" => {
            let k = a.k.or(cfg.file.protocol.k).unwrap_or(7);
            let grouping = cfg.grouping(&a.grouping)?;
            let train = if cfg.lb1_only { cfg.split(&records).lb1 } else { records };
            (train, GridProtocol::CrossValidation { k, grouping })
        }
        "forward" => {
            let split = cfg.split(&records);
            if split.lb2.is_empty() {
                return Err(Error::data("forward protocol needs held-out patients, but the split is empty"));
            }
            let targets = forward_targets(&split.lb4);
            (split.lb1, GridProtocol::Forward { lb2: split.lb2, targets })
        }
        other => return Err(Error::invalid(format!("unknown grid protocol '{other}'"))),
    };
    let report = grid_search(&train, &cfg.experiment(), &grid, repeats, &protocol, seed, cfg.jobs)?;
    let mut bundle = ReportBundle::create(&a.out_dir, cfg.svg)?;
    report::emit_grid(&mut bundle, &report)?;
    bundle.write_json("grid.json", &report)?;
    bundle.finish()?;
    let best = report.entries.first();
    stdout_line(&format!(
        "{} runs over {} configurations; best mean test mAUC {}",
        report.runs,
        report.entries.len(),
        short(best.and_then(|b| b.mean_test_mauc))
    ))
}

fn load_model(path: &Path) -> Result<crate::model::MlpModel> {
    require_file(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}

/// Held-out early and later visits, from separate files or the phase split.
fn held_out(cfg: &RunConfig, lb2: &Option<PathBuf>, lb4: &Option<PathBuf>) -> Result<DatasetSplit> {
    match (lb2, lb4) {
        (Some(lb2), Some(lb4)) => {
            require_file(lb2)?;
            require_file(lb4)?;
            Ok(DatasetSplit {
                lb1: Vec::new(),
                lb2: impute(&parse_csv(lb2, &cfg.schema)?, cfg.impute),
                lb4: parse_csv(lb4, &cfg.schema)?,
            })
        }
        _ => Ok(cfg.split(&cfg.records()?)),
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let model = load_model(&a.model)?;
    let split = held_out(&cfg, &a.lb2, &a.lb4)?;
    let targets = forward_targets(&split.lb4);
    let report = evaluate_forward(&model, &split.lb2, &targets)?;
    let samples = report.scored();
    let mut bundle = ReportBundle::create(&a.out_dir, cfg.svg)?;
    report::emit_predictions(&mut bundle, &report)?;
    report::emit_confusion(&mut bundle, &crate::metrics::confusion(&samples))?;
    report::emit_roc(&mut bundle, &samples)?;
    bundle.write_json("forward_report.json", &report)?;
    if let Ok(summary) = summarize(&samples) {
        bundle.write_json("scores.json", &summary)?;
    }
    bundle.finish()?;
    stdout_line(&format!(
        "{} held-out patients, {} scored visits ({} excluded): mAUC {}",
        split.lb2.len(),
        report.samples.len(),
        report.excluded.len(),
        short(report.mauc)
    ))
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.data)?;
    let model = load_model(&a.model)?;
    let horizon = a.horizon.or(cfg.file.protocol.horizon).unwrap_or(84);
    let split = held_out(&cfg, &a.lb2, &a.lb4)?;
    let table = forecast_monthly(&model, &split.lb2, horizon)?;
    let actuals = report::most_severe(
        forward_targets(&split.lb4)
            .into_iter()
            .map(|t| (t.patient_id, t.diagnosis)),
    );
    let mut bundle = ReportBundle::create(&a.out_dir, cfg.svg)?;
    report::emit_trajectories(&mut bundle, &table, Some(&actuals))?;
    bundle.finish()?;
    stdout_line(&format!(
        "{} patients x {} months ({} excluded)",
        table.patients().len(),
        horizon,
        table.excluded.len()
    ))
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    require_file(&a.predictions)?;
    let file = std::fs::File::open(&a.predictions).map_err(|e| Error::io(&a.predictions, e))?;
    let samples = report::read_predictions_csv(file)?;
    let summary = summarize(&samples)?;
    match a.format.as_str() {
        "json" => {
            let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::data(e.to_string()))?;
            stdout_line(&text)
        }
        "csv" => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            w.write_record(["metric", "value"])?;
            w.write_record(["n".to_string(), summary.n.to_string()])?;
            w.write_record(["mAUC".to_string(), report::format_f64(summary.mauc)])?;
            for (class, auc) in crate::cohort::Diagnosis::ALL.iter().zip(summary.per_class_auc) {
                w.write_record([format!("auc_{}", class.short()), auc.map(report::format_f64).unwrap_or_default()])?;
            }
            for (i, class) in crate::cohort::Diagnosis::ALL.iter().enumerate() {
                for (j, pred) in crate::cohort::Diagnosis::ALL.iter().enumerate() {
                    w.write_record([
                        format!("confusion_{}_{}", class.short(), pred.short()),
                        summary.confusion.counts[i][j].to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))
        }
        other => Err(Error::invalid(format!("unknown format '{other}' (expected csv or json)"))),
    }
}
