//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use adprog::allpairs::{Mode, TrainingMatrix};
use adprog::cohort::{Diagnosis, Examination, FeatureGroup, PatientRecord};
use adprog::metrics::ScoredSample;
use adprog::model::{loss_gradient, MlpHyperparams, MlpModel, Scaler};
use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;

pub const G8_BIOMARKERS: [&str; 6] = ["ADAS13", "Ventricles", "AGE", "PTRACCAT", "Hippocampus", "APOE4"];

pub fn g8() -> FeatureGroup {
    adprog::cohort::feature_group("G8").unwrap()
}

/// Small cohort with random visit gaps and random missingness: each
/// biomarker is absent with probability `p_missing`, each diagnosis with
/// probability `p_missing / 2`.
pub fn random_cohort(rng: &mut impl Rng, max_patients: usize, max_visits: usize, p_missing: f64) -> Vec<PatientRecord> {
    let n = rng.random_range(1..=max_patients);
    (0..n)
        .map(|i| {
            let visits = rng.random_range(1..=max_visits);
            let mut date = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap() + chrono::Days::new(rng.random_range(0..400));
            let exams = (0..visits)
                .map(|_| {
                    date = date + chrono::Days::new(rng.random_range(1..400));
                    let mut e = Examination::new(date, "ADNI1");
                    if !rng.random_bool(p_missing / 2.0) {
                        e = e.with_diagnosis(Diagnosis::ALL[rng.random_range(0..3)]);
                    }
                    for b in G8_BIOMARKERS {
                        if !rng.random_bool(p_missing) {
                            e = e.with(b, rng.random_range(-100.0..100.0));
                        }
                    }
                    e
                })
                .collect();
            // ids deliberately out of order
            PatientRecord::new(format!("P{}", (i * 7919) % 1000), exams).unwrap()
        })
        .collect()
}

fn complete(e: &Examination) -> bool {
    e.diagnosis.is_some() && G8_BIOMARKERS.iter().all(|b| e.biomarkers.contains_key(*b))
}

fn months(later: NaiveDate, earlier: NaiveDate) -> f64 {
    (later - earlier).num_days() as f64 / 30.4375
}

fn features(e: &Examination) -> Vec<f64> {
    let mut v: Vec<f64> = G8_BIOMARKERS.iter().map(|b| e.biomarkers[*b]).collect();
    v.push(e.diagnosis.unwrap() as usize as f64);
    v
}

/// A row as comparable bits: feature bit patterns then the target ordinal.
pub type RowKey = (Vec<u64>, usize);

/// Nested-loop enumeration of G8 rows, sorted.
pub fn oracle_rows(records: &[PatientRecord], mode: Mode) -> Vec<RowKey> {
    let mut out = Vec::new();
    for r in records {
        let e = r.exams();
        for a in 0..e.len() {
            for b in a + 1..e.len() {
                match mode {
                    Mode::Pairs => {
                        if complete(&e[a]) && complete(&e[b]) {
                            let mut row = vec![months(e[b].date, e[a].date)];
                            row.extend(features(&e[a]));
                            out.push((row, e[b].diagnosis.unwrap()));
                        }
                    }
                    Mode::Triplets => {
                        for c in b + 1..e.len() {
                            if complete(&e[a]) && complete(&e[b]) && complete(&e[c]) {
                                let mut row = vec![months(e[c].date, e[b].date), months(e[b].date, e[a].date)];
                                row.extend(features(&e[b]));
                                row.extend(features(&e[a]));
                                out.push((row, e[c].diagnosis.unwrap()));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut keys: Vec<RowKey> = out
        .into_iter()
        .map(|(row, dx)| (row.iter().map(|v| v.to_bits()).collect(), dx as usize))
        .collect();
    keys.sort();
    keys
}

pub fn matrix_rows(m: &TrainingMatrix) -> Vec<RowKey> {
    let mut keys: Vec<RowKey> = m
        .x
        .rows()
        .into_iter()
        .zip(&m.y)
        .map(|(row, dx)| (row.iter().map(|v| v.to_bits()).collect(), dx.ordinal()))
        .collect();
    keys.sort();
    keys
}

pub fn choose(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Hand–Till mAUC by explicit comparison of every cross-class pair.
pub fn brute_mauc(samples: &[ScoredSample]) -> f64 {
    let present: Vec<usize> = (0..3).filter(|&c| samples.iter().any(|s| s.actual as usize == c)).collect();
    let a_given = |i: usize, j: usize| {
        let (mut wins, mut total) = (0.0, 0.0);
        for x in samples.iter().filter(|s| s.actual as usize == i) {
            for y in samples.iter().filter(|s| s.actual as usize == j) {
                total += 1.0;
                if x.probs[i] > y.probs[i] {
                    wins += 1.0;
                } else if x.probs[i] == y.probs[i] {
                    wins += 0.5;
                }
            }
        }
        wins / total
    };
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for (n, &i) in present.iter().enumerate() {
        for &j in &present[n + 1..] {
            sum += (a_given(i, j) + a_given(j, i)) / 2.0;
            pairs += 1.0;
        }
    }
    sum / pairs
}

/// Random probability triple on the simplex.
pub fn random_probs(rng: &mut impl Rng) -> [f64; 3] {
    let raw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let s: f64 = raw.iter().sum();
    let mut p = raw.map(|v| v / s);
    p[2] = 1.0 - p[0] - p[1];
    p
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every weight and bias.
pub fn max_gradient_error(model: &MlpModel, x: &Array2<f64>, y: &[Diagnosis], h: f64) -> f64 {
    let grad = loss_gradient(model, x.view(), y).unwrap().total();
    let mut probe = model.clone();
    let loss = |m: &MlpModel| m.loss(x.view(), y).unwrap();
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for l in 0..model.layers().len() {
        let (rows, cols) = model.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w = model.layers()[l].weights[[r, c]];
                probe.layers_mut()[l].weights[[r, c]] = w + h;
                let up = loss(&probe);
                probe.layers_mut()[l].weights[[r, c]] = w - h;
                let down = loss(&probe);
                probe.layers_mut()[l].weights[[r, c]] = w;
                worst = worst.max(rel(grad.weights[l][[r, c]], (up - down) / (2.0 * h)));
            }
        }
        for c in 0..model.layers()[l].bias.len() {
            let b = model.layers()[l].bias[c];
            probe.layers_mut()[l].bias[c] = b + h;
            let up = loss(&probe);
            probe.layers_mut()[l].bias[c] = b - h;
            let down = loss(&probe);
            probe.layers_mut()[l].bias[c] = b;
            worst = worst.max(rel(grad.biases[l][c], (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Untrained network with a random scaler.
pub fn random_model(rng: &mut impl Rng, n_in: usize, hidden: Vec<usize>, alpha: f64) -> MlpModel {
    let names: Vec<String> = (0..n_in).map(|i| format!("c{i}")).collect();
    let scaler = Scaler {
        mean: (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect(),
        sd: (0..n_in).map(|_| rng.random_range(0.5..3.0)).collect(),
    };
    let hp = MlpHyperparams {
        hidden_sizes: hidden,
        alpha,
        seed: rng.random(),
        ..MlpHyperparams::default()
    };
    MlpModel::initialize(names, FeatureGroup::custom("probe", Vec::new()), Mode::Pairs, scaler, &hp).unwrap()
}

pub fn random_batch(rng: &mut impl Rng, n: usize, width: usize) -> (Array2<f64>, Vec<Diagnosis>) {
    let x = Array2::from_shape_simple_fn((n, width), || rng.random_range(-4.0..4.0));
    let y = (0..n).map(|_| Diagnosis::ALL[rng.random_range(0..3)]).collect();
    (x, y)
}

/// Path of the `adprog` binary built for integration tests.
pub fn bin() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_BIN_EXE_adprog"))
}

/// Smallest |pre-activation| over every hidden unit and row; central
/// differences are only valid when this exceeds the step size.
pub fn min_hidden_margin(model: &MlpModel, x: &Array2<f64>) -> f64 {
    let mut a = model.scaler.transform(x.view());
    let mut margin = f64::INFINITY;
    let layers = model.layers();
    for layer in &layers[..layers.len() - 1] {
        let z = a.dot(&layer.weights) + &layer.bias;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    margin
}
