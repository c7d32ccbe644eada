//! Evaluation protocols: k-fold cross-validation, repeated random splits,
//! hyperparameter grid search, forward prediction of later visits from
//! early ones, and month-by-month forecasts.
//!
//! Every stochastic job seeds itself from `seed::derive(master, label)`, so
//! results do not depend on how many worker threads run the jobs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allpairs::{build_prediction_vector, transform_mode, Mode, TrainingMatrix};
use crate::cohort::{months_between, Diagnosis, FeatureGroup, PatientRecord};
use crate::error::{Error, Result};
use crate::metrics::{mauc, ScoredSample};
use crate::model::{fit, predict_proba, MlpHyperparams, MlpModel};
use crate::seed;

/// Fold granularity for cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// All rows of a patient share a fold.
    #[default]
    Patient,
    /// Rows are assigned independently; a patient may straddle train and test.
    Row,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patient" => Ok(Grouping::Patient),
            "row" => Ok(Grouping::Row),
            other => Err(Error::invalid(format!("unknown grouping '{other}' (expected patient or row)"))),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Patient => "patient",
            Grouping::Row => "row",
        })
    }
}

/// Feature group, row mode and model hyperparameters for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub group: FeatureGroup,
    pub mode: Mode,
    pub hp: MlpHyperparams,
}

impl Experiment {
    pub fn label(&self) -> String {
        let hidden: Vec<String> = self.hp.hidden_sizes.iter().map(|h| h.to_string()).collect();
        format!(
            "{} {} hidden={} alpha={} lr={}",
            self.group.name(),
            self.mode,
            hidden.join("x"),
            self.hp.alpha,
            self.hp.learning_rate
        )
    }

    fn with_seed(&self, seed: u64) -> MlpHyperparams {
        MlpHyperparams {
            seed,
            ..self.hp.clone()
        }
    }
}

/// Runs `n` independent jobs on up to `jobs` threads, returning results in
/// job order.
pub fn run_jobs<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Predicted probabilities for every row of `matrix`, paired with targets.
pub fn score_matrix(model: &MlpModel, matrix: &TrainingMatrix) -> Result<Vec<ScoredSample>> {
    if matrix.is_empty() {
        return Ok(Vec::new());
    }
    let probs = predict_proba(model, matrix.x.view())?;
    probs
        .rows()
        .into_iter()
        .zip(&matrix.y)
        .map(|(p, &dx)| ScoredSample::new([p[0], p[1], p[2]], dx))
        .collect()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mu = mean(xs)?;
    Some((xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Train/test matrices for one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub index: usize,
    pub train: TrainingMatrix,
    pub test: TrainingMatrix,
}

fn sorted_records(records: &[PatientRecord]) -> Vec<&PatientRecord> {
    let mut v: Vec<&PatientRecord> = records.iter().collect();
    v.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    v
}

/// Seeded fold assignment: entry `i` is the fold of item `i`.
fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(seed, "cv-assign"));
    let mut fold = vec![0; n];
    for (pos, &item) in order.iter().enumerate() {
        fold[item] = pos % k;
    }
    fold
}

/// Partitions the cohort into `k` folds and builds each fold's matrices.
pub fn make_folds(
    records: &[PatientRecord],
    group: &FeatureGroup,
    mode: Mode,
    k: usize,
    grouping: Grouping,
    seed: u64,
) -> Result<Vec<FoldData>> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    match grouping {
        Grouping::Patient => {
            let ordered = sorted_records(records);
            if ordered.len() < k {
                return Err(Error::data(format!("{} patients cannot fill {k} folds", ordered.len())));
            }
            let fold_of = assign_folds(ordered.len(), k, seed);
            (0..k)
                .map(|f| {
                    let (test, train): (Vec<_>, Vec<_>) = ordered
                        .iter()
                        .zip(&fold_of)
                        .partition(|(_, &fold)| fold == f);
                    let pick = |v: Vec<(&&PatientRecord, &usize)>| -> Vec<PatientRecord> {
                        v.into_iter().map(|(r, _)| (*r).clone()).collect()
                    };
                    Ok(FoldData {
                        index: f,
                        train: transform_mode(&pick(train), group, mode)?,
                        test: transform_mode(&pick(test), group, mode)?,
                    })
                })
                .collect()
        }
        Grouping::Row => {
            let full = transform_mode(records, group, mode)?;
            if full.n_rows() < k {
                return Err(Error::data(format!("{} rows cannot fill {k} folds", full.n_rows())));
            }
            let fold_of = assign_folds(full.n_rows(), k, seed);
            Ok((0..k)
                .map(|f| {
                    let test: Vec<usize> = (0..full.n_rows()).filter(|&r| fold_of[r] == f).collect();
                    let train: Vec<usize> = (0..full.n_rows()).filter(|&r| fold_of[r] != f).collect();
                    FoldData {
                        index: f,
                        train: full.select(&train),
                        test: full.select(&test),
                    }
                })
                .collect())
        }
    }
}

/// Scores from training on `train` and testing on `test`; `Err` carries
/// the reason the job was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTestScore {
    pub train_mauc: f64,
    pub test_mauc: f64,
}

fn train_and_score(
    train: &TrainingMatrix,
    test: &TrainingMatrix,
    hp: &MlpHyperparams,
) -> std::result::Result<TrainTestScore, String> {
    if test.classes_present().len() < 2 {
        return Err(format!("test side has {} class(es)", test.classes_present().len()));
    }
    if train.classes_present().len() < 2 {
        return Err(format!("train side has {} class(es)", train.classes_present().len()));
    }
    let model = fit(train, hp).map_err(|e| e.to_string())?;
    let score = |m: &TrainingMatrix| -> std::result::Result<f64, String> {
        let samples = score_matrix(&model, m).map_err(|e| e.to_string())?;
        mauc(&samples).map_err(|e| e.to_string())
    };
    Ok(TrainTestScore {
        train_mauc: score(train)?,
        test_mauc: score(test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_mauc: Option<f64>,
    pub test_mauc: Option<f64>,
    /// Why the fold was excluded from the aggregates.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: String,
    pub group: String,
    pub mode: Mode,
    pub hyperparams: MlpHyperparams,
    pub k: usize,
    pub grouping: Grouping,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_train_mauc: Option<f64>,
    pub mean_test_mauc: Option<f64>,
    /// Sample standard deviation of the fold test scores.
    pub test_sd: Option<f64>,
    pub notes: Vec<String>,
}

pub fn cross_validate(
    records: &[PatientRecord],
    experiment: &Experiment,
    k: usize,
    grouping: Grouping,
    seed: u64,
    jobs: usize,
) -> Result<CvReport> {
    experiment.hp.validate()?;
    let folds = make_folds(records, &experiment.group, experiment.mode, k, grouping, seed)?;
    let outcomes = run_jobs(jobs, folds.len(), |i| {
        let fold = &folds[i];
        let hp = experiment.with_seed(seed::derive(seed, &format!("cv-fold-{i}")));
        train_and_score(&fold.train, &fold.test, &hp)
    })?;

    let folds: Vec<FoldResult> = folds
        .iter()
        .zip(outcomes)
        .map(|(fold, outcome)| {
            let (train_mauc, test_mauc, skipped) = match outcome {
                Ok(s) => (Some(s.train_mauc), Some(s.test_mauc), None),
                Err(reason) => (None, None, Some(reason)),
            };
            FoldResult {
                index: fold.index,
                train_rows: fold.train.n_rows(),
                test_rows: fold.test.n_rows(),
                train_mauc,
                test_mauc,
                skipped,
            }
        })
        .collect();
    let train: Vec<f64> = folds.iter().filter_map(|f| f.train_mauc).collect();
    let test: Vec<f64> = folds.iter().filter_map(|f| f.test_mauc).collect();
    let mut notes = Vec::new();
    if grouping == Grouping::Row {
        notes.push("row-level folds: rows from one patient may appear in both train and test".into());
    }
    for f in folds.iter().filter(|f| f.skipped.is_some()) {
        notes.push(format!("fold {} skipped: {}", f.index, f.skipped.as_deref().unwrap_or("")));
    }
    Ok(CvReport {
        config: experiment.label(),
        group: experiment.group.name().to_string(),
        mode: experiment.mode,
        hyperparams: experiment.hp.clone(),
        k,
        grouping,
        seed,
        folds,
        mean_train_mauc: mean(&train),
        mean_test_mauc: mean(&test),
        test_sd: sample_sd(&test),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub index: usize,
    pub train_patients: usize,
    pub test_patients: usize,
    pub train_mauc: Option<f64>,
    pub test_mauc: Option<f64>,
    pub skipped: Option<String>,
}

/// Patient-level train/test partition for split `label`.
fn patient_split(
    ordered: &[&PatientRecord],
    train_fraction: f64,
    seed: u64,
    label: &str,
) -> (Vec<PatientRecord>, Vec<PatientRecord>) {
    let n = ordered.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(seed, label));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in ordered.iter().enumerate() {
        if in_train[i] {
            train.push((*r).clone());
        } else {
            test.push((*r).clone());
        }
    }
    (train, test)
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    Ok(())
}

fn one_split(
    ordered: &[&PatientRecord],
    experiment: &Experiment,
    train_fraction: f64,
    seed: u64,
    index: usize,
) -> Result<SplitResult> {
    let (train, test) = patient_split(ordered, train_fraction, seed, &format!("split-{index}"));
    let train_m = transform_mode(&train, &experiment.group, experiment.mode)?;
    let test_m = transform_mode(&test, &experiment.group, experiment.mode)?;
    let hp = experiment.with_seed(seed::derive(seed, &format!("split-fit-{index}")));
    let outcome = train_and_score(&train_m, &test_m, &hp);
    Ok(SplitResult {
        index,
        train_patients: train.len(),
        test_patients: test.len(),
        train_mauc: outcome.as_ref().ok().map(|s| s.train_mauc),
        test_mauc: outcome.as_ref().ok().map(|s| s.test_mauc),
        skipped: outcome.err(),
    })
}

/// `n_splits` independent seeded patient-level splits.
pub fn random_splits(
    records: &[PatientRecord],
    experiment: &Experiment,
    n_splits: usize,
    train_fraction: f64,
    seed: u64,
    jobs: usize,
) -> Result<Vec<SplitResult>> {
    if n_splits == 0 {
        return Err(Error::invalid("n_splits must be at least 1"));
    }
    check_fraction(train_fraction)?;
    experiment.hp.validate()?;
    let ordered = sorted_records(records);
    if ordered.len() < 2 {
        return Err(Error::data("random splits need at least two patients"));
    }
    run_jobs(jobs, n_splits, |i| one_split(&ordered, experiment, train_fraction, seed, i))?
        .into_iter()
        .collect()
}

/// Candidate values for the three tuned hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub alpha: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Width of the single hidden layer.
    pub hidden: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            alpha: vec![1e-4, 1e-3, 1e-2],
            learning_rate: vec![1e-4, 1e-3, 1e-2],
            hidden: vec![50, 100, 200],
        }
    }
}

impl Grid {
    /// All combinations, alpha outermost, hidden size innermost.
    pub fn points(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for &a in &self.alpha {
            for &lr in &self.learning_rate {
                for &h in &self.hidden {
                    out.push((a, lr, h));
                }
            }
        }
        out
    }
}

/// A held-out patient's later visit: date and diagnosis only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardTarget {
    pub patient_id: String,
    pub date: NaiveDate,
    pub diagnosis: Diagnosis,
}

/// Extracts the scoring targets from later-phase records. Biomarkers are
/// dropped here, so forward evaluation cannot read them.
pub fn forward_targets(lb4: &[PatientRecord]) -> Vec<ForwardTarget> {
    sorted_records(lb4)
        .into_iter()
        .flat_map(|r| {
            r.exams().iter().filter_map(move |e| {
                e.diagnosis.map(|dx| ForwardTarget {
                    patient_id: r.patient_id().to_string(),
                    date: e.date,
                    diagnosis: dx,
                })
            })
        })
        .collect()
}

/// How each grid configuration is scored.
#[derive(Debug, Clone)]
pub enum GridProtocol {
    /// One patient-level random split per repeat.
    Split { train_fraction: f64 },
    /// Mean test score of a full cross-validation per repeat.
    CrossValidation { k: usize, grouping: Grouping },
    /// Train on the full cohort, score forward predictions for held-out patients.
    Forward { lb2: Vec<PatientRecord>, targets: Vec<ForwardTarget> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub rank: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub hidden: usize,
    /// Test mAUC of each successful repeat, in repeat order.
    pub scores: Vec<f64>,
    pub mean_test_mauc: Option<f64>,
    pub test_sd: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Number of (configuration, repeat) evaluations performed.
    pub runs: usize,
    pub repeats: usize,
    pub entries: Vec<GridEntry>,
}

fn grid_run(
    records: &[PatientRecord],
    experiment: &Experiment,
    protocol: &GridProtocol,
    seed: u64,
) -> std::result::Result<f64, String> {
    match protocol {
        GridProtocol::Split { train_fraction } => {
            let ordered = sorted_records(records);
            let r = one_split(&ordered, experiment, *train_fraction, seed, 0).map_err(|e| e.to_string())?;
            r.test_mauc.ok_or_else(|| r.skipped.unwrap_or_default())
        }
        GridProtocol::CrossValidation { k, grouping } => {
            let report = cross_validate(records, experiment, *k, *grouping, seed, 1).map_err(|e| e.to_string())?;
            report.mean_test_mauc.ok_or_else(|| "every fold was skipped".to_string())
        }
        GridProtocol::Forward { lb2, targets } => {
            let matrix = transform_mode(records, &experiment.group, experiment.mode).map_err(|e| e.to_string())?;
            let model = fit(&matrix, &experiment.with_seed(seed)).map_err(|e| e.to_string())?;
            let report = evaluate_forward(&model, lb2, targets).map_err(|e| e.to_string())?;
            report.mauc.ok_or_else(|| "forward samples cover fewer than two classes".to_string())
        }
    }
}

/// Evaluates every grid point `repeats` times and ranks by mean test mAUC.
pub fn grid_search(
    records: &[PatientRecord],
    base: &Experiment,
    grid: &Grid,
    repeats: usize,
    protocol: &GridProtocol,
    seed: u64,
    jobs: usize,
) -> Result<GridReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("hyperparameter grid is empty"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    match protocol {
        GridProtocol::Split { train_fraction } => check_fraction(*train_fraction)?,
        GridProtocol::CrossValidation { k, .. } if *k < 2 => return Err(Error::invalid("k must be at least 2")),
        _ => {}
    }
    let experiments: Vec<Experiment> = points
        .iter()
        .map(|&(alpha, learning_rate, hidden)| Experiment {
            group: base.group.clone(),
            mode: base.mode,
            hp: MlpHyperparams {
                alpha,
                learning_rate,
                hidden_sizes: vec![hidden],
                ..base.hp.clone()
            },
        })
        .collect();
    for e in &experiments {
        e.hp.validate()?;
    }

    let runs = points.len() * repeats;
    let results = run_jobs(jobs, runs, |job| {
        let (c, r) = (job / repeats, job % repeats);
        grid_run(records, &experiments[c], protocol, seed::derive(seed, &format!("grid-{c}-{r}")))
    })?;

    let mut entries: Vec<GridEntry> = points
        .iter()
        .enumerate()
        .map(|(c, &(alpha, learning_rate, hidden))| {
            let mine = &results[c * repeats..(c + 1) * repeats];
            let scores: Vec<f64> = mine.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failures: Vec<String> = mine
                .iter()
                .enumerate()
                .filter_map(|(r, res)| res.as_ref().err().map(|e| format!("repeat {r}: {e}")))
                .collect();
            GridEntry {
                rank: 0,
                alpha,
                learning_rate,
                hidden,
                mean_test_mauc: mean(&scores),
                test_sd: sample_sd(&scores),
                scores,
                failures,
            }
        })
        .collect();
    // stable sort keeps grid order among equal scores; failed configs last
    entries.sort_by(|a, b| match (a.mean_test_mauc, b.mean_test_mauc) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(GridReport { runs, repeats, entries })
}

/// (exam, optional prior exam) index pairs used as prediction inputs: the
/// last three usable exams, each with its preceding usable exam in triplet
/// mode (an exam without one is not a triplet source).
pub fn prediction_sources(record: &PatientRecord, group: &FeatureGroup, mode: Mode) -> Vec<(usize, Option<usize>)> {
    let usable: Vec<usize> = (0..record.len())
        .filter(|&j| record.exams()[j].is_usable(group))
        .collect();
    let candidates: Vec<(usize, Option<usize>)> = match mode {
        Mode::Pairs => usable.iter().map(|&j| (j, None)).collect(),
        Mode::Triplets => usable.windows(2).map(|w| (w[1], Some(w[0]))).collect(),
    };
    let skip = candidates.len().saturating_sub(3);
    candidates[skip..].to_vec()
}

/// Mean probability triple over the input vectors built for horizon `t(exam)`.
fn averaged_probs<F>(
    model: &MlpModel,
    record: &PatientRecord,
    sources: &[(usize, Option<usize>)],
    horizon: F,
) -> Result<[f64; 3]>
where
    F: Fn(&crate::cohort::Examination) -> Result<f64>,
{
    let exams = record.exams();
    let mut rows = Vec::with_capacity(sources.len() * model.n_inputs());
    for &(j, prior) in sources {
        let t = horizon(&exams[j])?;
        rows.extend(build_prediction_vector(
            &exams[j],
            t,
            &model.group,
            model.mode,
            prior.map(|p| &exams[p]),
        )?);
    }
    let x = Array2::from_shape_vec((sources.len(), model.n_inputs()), rows)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let probs = predict_proba(model, x.view())?;
    let n = sources.len() as f64;
    let mut avg = [0.0; 3];
    for row in probs.rows() {
        for k in 0..3 {
            avg[k] += row[k];
        }
    }
    Ok(avg.map(|s| s / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSample {
    pub patient_id: String,
    pub target_date: NaiveDate,
    /// Number of input vectors averaged.
    pub n_vectors: usize,
    pub probs: [f64; 3],
    pub actual: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub samples: Vec<ForwardSample>,
    /// Absent when the samples cover fewer than two classes.
    pub mauc: Option<f64>,
    pub excluded: Vec<Exclusion>,
}

impl ForwardReport {
    pub fn scored(&self) -> Vec<ScoredSample> {
        self.samples
            .iter()
            .map(|s| ScoredSample {
                probs: s.probs,
                actual: s.actual,
            })
            .collect()
    }
}

/// Scores each later-visit diagnosis against the mean prediction from the
/// patient's last (up to) three usable early visits, with `t` the months
/// from each early visit to the target visit.
pub fn evaluate_forward(model: &MlpModel, lb2: &[PatientRecord], targets: &[ForwardTarget]) -> Result<ForwardReport> {
    let by_id: BTreeMap<&str, &PatientRecord> = lb2.iter().map(|r| (r.patient_id(), r)).collect();
    let mut per_patient: BTreeMap<&str, Vec<&ForwardTarget>> = BTreeMap::new();
    for t in targets {
        per_patient.entry(t.patient_id.as_str()).or_default().push(t);
    }

    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for (pid, mut patient_targets) in per_patient {
        patient_targets.sort_by_key(|t| t.date);
        let Some(record) = by_id.get(pid) else {
            excluded.push(Exclusion {
                patient_id: pid.to_string(),
                reason: "no early-phase record".into(),
            });
            continue;
        };
        let sources = prediction_sources(record, &model.group, model.mode);
        if sources.is_empty() {
            excluded.push(Exclusion {
                patient_id: pid.to_string(),
                reason: "no usable early-phase examination".into(),
            });
            continue;
        }
        let latest = record.exams()[sources.last().expect("non-empty").0].date;
        for target in patient_targets {
            if target.date <= latest {
                excluded.push(Exclusion {
                    patient_id: pid.to_string(),
                    reason: format!("target visit {} is not after the early-phase visits", target.date),
                });
                continue;
            }
            let probs = averaged_probs(model, record, &sources, |e| months_between(target.date, e.date))?;
            samples.push(ForwardSample {
                patient_id: pid.to_string(),
                target_date: target.date,
                n_vectors: sources.len(),
                probs,
                actual: target.diagnosis,
            });
        }
    }
    let report = ForwardReport {
        mauc: None,
        samples,
        excluded,
    };
    let m = mauc(&report.scored()).ok();
    Ok(ForwardReport { mauc: m, ..report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub patient_id: String,
    pub month: u32,
    pub probs: [f64; 3],
    pub predicted: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTable {
    pub horizon: u32,
    /// Patient-major, month-minor.
    pub rows: Vec<ForecastRow>,
    pub excluded: Vec<Exclusion>,
}

impl ForecastTable {
    pub fn patients(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.patient_id.as_str()).collect();
        ids.dedup();
        ids
    }
}

/// Month-by-month averaged predictions for `t = 1..=horizon`.
pub fn forecast_monthly(model: &MlpModel, lb2: &[PatientRecord], horizon: u32) -> Result<ForecastTable> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1 month"));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for record in sorted_records(lb2) {
        let sources = prediction_sources(record, &model.group, model.mode);
        if sources.is_empty() {
            excluded.push(Exclusion {
                patient_id: record.patient_id().to_string(),
                reason: "no usable early-phase examination".into(),
            });
            continue;
        }
        for month in 1..=horizon {
            let probs = averaged_probs(model, record, &sources, |_| Ok(month as f64))?;
            let predicted = ScoredSample {
                probs,
                actual: Diagnosis::Nl,
            }
            .predicted();
            rows.push(ForecastRow {
                patient_id: record.patient_id().to_string(),
                month,
                probs,
                predicted,
            });
        }
    }
    Ok(ForecastTable { horizon, rows, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{feature_group, Examination};

    fn patient(id: &str, n: usize, usable_from: usize) -> PatientRecord {
        let g = feature_group("G8").unwrap();
        let start = NaiveDate::from_ymd_opt(2006, 1, 1).unwrap();
        let exams = (0..n)
            .map(|j| {
                let mut e = Examination::new(start + chrono::Days::new(200 * j as u64), "ADNI1")
                    .with_diagnosis(Diagnosis::Mci);
                if j >= usable_from {
                    for b in g.biomarkers() {
                        e.biomarkers.insert(b.clone(), j as f64);
                    }
                }
                e
            })
            .collect();
        PatientRecord::new(id, exams).unwrap()
    }

    #[test]
    fn last_three_usable_exams() {
        let g = feature_group("G8").unwrap();
        let p = patient("p", 5, 0);
        assert_eq!(prediction_sources(&p, &g, Mode::Pairs), vec![(2, None), (3, None), (4, None)]);
        assert_eq!(
            prediction_sources(&p, &g, Mode::Triplets),
            vec![(2, Some(1)), (3, Some(2)), (4, Some(3))]
        );
        let single = patient("q", 1, 0);
        assert_eq!(prediction_sources(&single, &g, Mode::Pairs), vec![(0, None)]);
        assert!(prediction_sources(&single, &g, Mode::Triplets).is_empty());
        let partial = patient("r", 5, 3);
        assert_eq!(prediction_sources(&partial, &g, Mode::Pairs), vec![(3, None), (4, None)]);
    }

    #[test]
    fn patient_folds_partition_evenly() {
        let records: Vec<_> = (0..140).map(|i| patient(&format!("p{i:03}"), 3, 0)).collect();
        let g = feature_group("G8").unwrap();
        let folds = make_folds(&records, &g, Mode::Pairs, 7, Grouping::Patient, 11).unwrap();
        assert_eq!(folds.len(), 7);
        for f in &folds {
            let ids: std::collections::BTreeSet<_> = f.test.provenance.iter().map(|p| &p.patient_id).collect();
            assert_eq!(ids.len(), 20);
        }
        let again = make_folds(&records, &g, Mode::Pairs, 7, Grouping::Patient, 11).unwrap();
        for (a, b) in folds.iter().zip(&again) {
            assert_eq!(a.test.provenance, b.test.provenance);
        }
        assert!(make_folds(&records, &g, Mode::Pairs, 1, Grouping::Patient, 11).is_err());
    }

    #[test]
    fn row_folds_cover_all_rows_once() {
        let records: Vec<_> = (0..10).map(|i| patient(&format!("p{i}"), 4, 0)).collect();
        let g = feature_group("G8").unwrap();
        let folds = make_folds(&records, &g, Mode::Pairs, 4, Grouping::Row, 3).unwrap();
        let mut all: Vec<_> = folds.iter().flat_map(|f| f.test.provenance.clone()).collect();
        all.sort();
        assert_eq!(all.len(), 60);
        all.dedup();
        assert_eq!(all.len(), 60);
        for f in &folds {
            assert_eq!(f.train.n_rows() + f.test.n_rows(), 60);
        }
    }

    #[test]
    fn grid_points_and_statistics() {
        assert_eq!(Grid::default().points().len(), 27);
        assert_eq!(sample_sd(&[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(sample_sd(&[1.0]), None);
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn forward_targets_skip_undiagnosed_visits() {
        let mut exams = patient("p", 3, 0).into_exams();
        exams[1].diagnosis = None;
        let r = PatientRecord::new("p", exams).unwrap();
        let t = forward_targets(&[r]);
        assert_eq!(t.len(), 2);
    }
}
