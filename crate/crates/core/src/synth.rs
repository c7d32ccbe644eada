//! Seeded generator of longitudinal cohorts shaped like the real data, so the
//! whole pipeline can run without restricted clinical records.
//!
//! Diagnosis follows a monthly Markov chain NL → MCI → DEMENTIA (dementia
//! absorbing). A latent per-patient risk score scales the transition hazards
//! and also shifts the biomarkers, which is what makes future diagnosis
//! predictable from present measurements. Biomarker offsets are expressed in
//! units of each marker's measurement noise and multiplied by
//! `separability`.

use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CategoryMap, Diagnosis, Examination, PatientRecord, AGE, FEATURE_UNIVERSE, RACE};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerTrend {
    pub name: String,
    /// Population mean and between-patient sd of the healthy baseline.
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Visit-to-visit measurement noise.
    pub noise_sd: f64,
    /// Offset per diagnosis state (NL, MCI, DEMENTIA), in noise-sd units.
    pub level: [f64; 3],
    /// Drift per year spent in each state, in noise-sd units.
    pub slope_per_year: [f64; 3],
    /// Offset per unit of latent risk, in noise-sd units.
    pub risk_loading: f64,
    /// Values are clamped into this range.
    pub min: f64,
    pub max: f64,
}

#[allow(clippy::too_many_arguments)]
fn trend(
    name: &str,
    baseline: (f64, f64),
    noise_sd: f64,
    level: [f64; 3],
    slope_per_year: [f64; 3],
    risk_loading: f64,
    range: (f64, f64),
) -> BiomarkerTrend {
    BiomarkerTrend {
        name: name.into(),
        baseline_mean: baseline.0,
        baseline_sd: baseline.1,
        noise_sd,
        level,
        slope_per_year,
        risk_loading,
        min: range.0,
        max: range.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub interval_mean_months: f64,
    pub interval_sd_months: f64,
    /// Baseline diagnosis probabilities (NL, MCI, DEMENTIA).
    pub initial: [f64; 3],
    /// Monthly transition probabilities before risk scaling.
    pub hazard_nl_mci: f64,
    pub hazard_mci_dem: f64,
    /// Monthly probability of stepping back one state (0 keeps trajectories monotone).
    pub reversion_prob: f64,
    /// Hazard multiplier per APOE4 allele.
    pub apoe4_hazard_ratio: f64,
    /// Sd of the log hazard multiplier driven by latent risk.
    pub risk_sd: f64,
    pub separability: f64,
    /// Biomarker drift is multiplied by the hazard multiplier raised to this
    /// power, so fast progressors also decline faster.
    pub drift_coupling: f64,
    /// Per-cell probability that a biomarker is missing.
    pub missing_rate: f64,
    pub start_date: NaiveDate,
    /// Visits before this many months after baseline get `early_phase`.
    pub phase_cutoff_months: f64,
    pub early_phase: String,
    pub late_phase: String,
    pub biomarkers: Vec<BiomarkerTrend>,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_patients: 200,
            visits_min: 3,
            visits_max: 10,
            interval_mean_months: 6.0,
            interval_sd_months: 1.5,
            initial: [0.4, 0.45, 0.15],
            hazard_nl_mci: 0.008,
            hazard_mci_dem: 0.02,
            reversion_prob: 0.0,
            apoe4_hazard_ratio: 1.5,
            risk_sd: 1.5,
            separability: 1.0,
            drift_coupling: 0.0,
            missing_rate: 0.0,
            start_date: NaiveDate::from_ymd_opt(2005, 9, 1).expect("valid date"),
            phase_cutoff_months: 36.0,
            early_phase: "ADNI1".into(),
            late_phase: "ADNI2".into(),
            biomarkers: default_trends(),
            seed: 0,
        }
    }
}

pub fn default_trends() -> Vec<BiomarkerTrend> {
    vec![
        trend("ADAS13", (10.0, 1.5), 2.5, [0.0, 2.5, 5.5], [0.0, 0.4, 0.8], 2.4, (0.0, 85.0)),
        trend("ADAS11", (6.0, 1.0), 2.0, [0.0, 2.2, 5.0], [0.0, 0.4, 0.8], 2.4, (0.0, 70.0)),
        trend("MMSE", (29.0, 0.4), 1.0, [0.0, -1.5, -4.0], [0.0, -0.3, -0.8], -1.8, (0.0, 30.0)),
        trend("FAQ", (0.5, 0.5), 1.5, [0.0, 1.5, 6.0], [0.0, 0.5, 1.0], 1.8, (0.0, 30.0)),
        trend("Ventricles", (35000.0, 5000.0), 2000.0, [0.0, 1.5, 3.0], [0.2, 0.4, 0.8], 1.5, (5000.0, 200000.0)),
        trend("Hippocampus", (7200.0, 300.0), 300.0, [0.0, -1.8, -3.5], [-0.1, -0.4, -0.8], -2.1, (2000.0, 12000.0)),
        trend("RAVLT_immediate", (44.0, 4.0), 5.0, [0.0, -1.8, -3.5], [0.0, -0.3, -0.6], -1.8, (0.0, 75.0)),
        trend("RAVLT_learning", (6.0, 1.0), 2.0, [0.0, -1.0, -2.0], [0.0, -0.2, -0.4], -1.2, (-5.0, 14.0)),
        trend("RAVLT_forgetting", (4.0, 1.0), 2.0, [0.0, 0.5, 0.5], [0.0, 0.1, 0.1], 0.6, (-5.0, 15.0)),
        trend("RAVLT_perc_forgetting", (40.0, 10.0), 15.0, [0.0, 1.5, 2.5], [0.0, 0.3, 0.4], 1.5, (-100.0, 100.0)),
    ]
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        prob("hazard_nl_mci", self.hazard_nl_mci)?;
        prob("hazard_mci_dem", self.hazard_mci_dem)?;
        prob("reversion_prob", self.reversion_prob)?;
        prob("missing_rate", self.missing_rate)?;
        for p in self.initial {
            prob("initial", p)?;
        }
        if (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("initial state probabilities must sum to 1"));
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return Err(Error::invalid("need 1 <= visits_min <= visits_max"));
        }
        if !(self.interval_mean_months > 0.0) || !(self.interval_sd_months >= 0.0) {
            return Err(Error::invalid("visit interval mean must be > 0 and sd >= 0"));
        }
        if !(self.risk_sd >= 0.0) || !(self.apoe4_hazard_ratio > 0.0) || !(self.separability >= 0.0) || !self.drift_coupling.is_finite() {
            return Err(Error::invalid("risk_sd, separability >= 0 and apoe4_hazard_ratio > 0 required"));
        }
        for b in &self.biomarkers {
            if !crate::cohort::is_registered_feature(&b.name) || b.name == AGE || b.name == RACE || b.name == "APOE4" {
                return Err(Error::invalid(format!("cannot simulate biomarker '{}'", b.name)));
            }
            if !(b.noise_sd >= 0.0) || !(b.baseline_sd >= 0.0) || b.min > b.max {
                return Err(Error::invalid(format!("biomarker {}: noise sd must be >= 0", b.name)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: CohortSpec = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

const RACE_WEIGHTS: [(&str, f64); 4] = [("White", 0.9), ("Black", 0.05), ("Asian", 0.03), ("More than one", 0.02)];
const APOE4_WEIGHTS: [f64; 3] = [0.55, 0.35, 0.10];

fn categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn step(state: Diagnosis, hazards: [f64; 2], reversion: f64, rng: &mut impl Rng) -> Diagnosis {
    let u: f64 = rng.random();
    match state {
        Diagnosis::Nl if u < hazards[0] => Diagnosis::Mci,
        Diagnosis::Mci if u < hazards[1] => Diagnosis::Dementia,
        Diagnosis::Mci if reversion > 0.0 && u > 1.0 - reversion => Diagnosis::Nl,
        Diagnosis::Dementia if reversion > 0.0 && u > 1.0 - reversion => Diagnosis::Mci,
        s => s,
    }
}

fn generate_patient(spec: &CohortSpec, index: usize, race_map: &CategoryMap) -> PatientRecord {
    let mut rng = seed::derived_rng(spec.seed, &format!("patient-{index}"));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let apoe4 = categorical(&mut rng, &APOE4_WEIGHTS);
    let race_names: Vec<f64> = RACE_WEIGHTS.iter().map(|r| r.1).collect();
    let race = RACE_WEIGHTS[categorical(&mut rng, &race_names)].0;
    let race_code = race_map.encode(race).0;
    let risk: f64 = std_normal.sample(&mut rng);
    let multiplier = (spec.risk_sd * risk).exp() * spec.apoe4_hazard_ratio.powi(apoe4 as i32);
    let hazards = [
        (spec.hazard_nl_mci * multiplier).min(1.0),
        (spec.hazard_mci_dem * multiplier).min(1.0),
    ];
    let drift = multiplier.powf(spec.drift_coupling);
    let baseline_age = 73.0 + 7.0 * std_normal.sample(&mut rng);
    let baselines: Vec<f64> = spec
        .biomarkers
        .iter()
        .map(|b| b.baseline_mean + b.baseline_sd * std_normal.sample(&mut rng))
        .collect();

    let mut state = Diagnosis::ALL[categorical(&mut rng, &spec.initial)];
    let n_visits = rng.random_range(spec.visits_min..=spec.visits_max);
    let start = spec.start_date + Days::new(rng.random_range(0..730));

    let mut months_since_start = 0.0f64;
    let mut months_in_state = 0.0f64;
    let mut last_day = None;
    let mut exams = Vec::with_capacity(n_visits);
    for visit in 0..n_visits {
        if visit > 0 {
            let gap = (spec.interval_mean_months + spec.interval_sd_months * std_normal.sample(&mut rng)).max(1.0);
            let steps = gap.round().max(1.0) as usize;
            for _ in 0..steps {
                let next = step(state, hazards, spec.reversion_prob, &mut rng);
                if next != state {
                    months_in_state = 0.0;
                }
                state = next;
                months_in_state += 1.0;
            }
            months_since_start += gap;
        }
        let mut day = (months_since_start * crate::cohort::DAYS_PER_MONTH).round() as u64;
        if let Some(prev) = last_day {
            day = day.max(prev + 1);
        }
        last_day = Some(day);
        let date = start + Days::new(day);
        let phase = if months_since_start < spec.phase_cutoff_months {
            &spec.early_phase
        } else {
            &spec.late_phase
        };

        let mut exam = Examination::new(date, phase.as_str()).with_diagnosis(state);
        let s = state.ordinal();
        for (b, base) in spec.biomarkers.iter().zip(&baselines) {
            let shift = b.level[s] + b.slope_per_year[s] * drift * months_in_state / 12.0 + b.risk_loading * risk;
            let noise: f64 = std_normal.sample(&mut rng);
            let value = (base + b.noise_sd * (spec.separability * shift + noise)).clamp(b.min, b.max);
            exam.biomarkers.insert(b.name.clone(), value);
        }
        exam.biomarkers.insert(AGE.into(), baseline_age + day as f64 / 365.25);
        exam.biomarkers.insert("APOE4".into(), apoe4 as f64);
        exam.biomarkers.insert(RACE.into(), race_code);
        if spec.missing_rate > 0.0 {
            let names: Vec<String> = exam.biomarkers.keys().cloned().collect();
            for name in names {
                if rng.random::<f64>() < spec.missing_rate {
                    exam.biomarkers.remove(&name);
                }
            }
        }
        exams.push(exam);
    }
    PatientRecord::new(format!("S{index:05}"), exams).expect("dates strictly increase")
}

/// Generates `spec.n_patients` records, ordered by patient id.
pub fn generate(spec: &CohortSpec) -> Result<Vec<PatientRecord>> {
    spec.validate()?;
    let race_map = CategoryMap::default();
    Ok((0..spec.n_patients)
        .map(|i| generate_patient(spec, i, &race_map))
        .collect())
}

fn diagnosis_label(dx: Diagnosis) -> &'static str {
    match dx {
        Diagnosis::Nl => "NL",
        Diagnosis::Mci => "MCI",
        Diagnosis::Dementia => "Dementia",
    }
}

/// Writes records in the default ingest layout (`RID, EXAMDATE, DX, COLPROT`
/// then one column per biomarker).
pub fn write_csv<W: Write>(records: &[PatientRecord], out: W) -> Result<()> {
    let race_map = CategoryMap::default();
    let features: Vec<&str> = FEATURE_UNIVERSE.iter().copied().filter(|f| *f != "Ventricles_ICV").collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["RID", "EXAMDATE", "DX", "COLPROT"];
    header.extend(&features);
    w.write_record(&header)?;
    for r in records {
        for e in r.exams() {
            let mut row = vec![
                r.patient_id().to_string(),
                e.date.format("%Y-%m-%d").to_string(),
                e.diagnosis.map(diagnosis_label).unwrap_or("").to_string(),
                e.phase.clone(),
            ];
            for f in &features {
                row.push(match e.value(f) {
                    None => String::new(),
                    Some(v) if *f == RACE => race_map.decode(v).unwrap_or("Unknown").to_string(),
                    Some(v) => format!("{v}"),
                });
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::data(e.to_string()))?;
    Ok(())
}

pub fn write_csv_file(records: &[PatientRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file))
}
