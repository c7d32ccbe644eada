//! Patients, examinations, diagnoses and the registered feature groups.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days per month used for every date difference (mean Gregorian month).
pub const DAYS_PER_MONTH: f64 = 30.4375;

/// Clinical diagnosis, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "DEMENTIA")]
    Dementia,
}

impl Diagnosis {
    /// All classes in canonical (NL, MCI, DEMENTIA) order.
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Nl, Diagnosis::Mci, Diagnosis::Dementia];

    pub fn ordinal(self) -> usize {
        match self {
            Diagnosis::Nl => 0,
            Diagnosis::Mci => 1,
            Diagnosis::Dementia => 2,
        }
    }

    pub fn from_ordinal(code: usize) -> Option<Diagnosis> {
        Diagnosis::ALL.get(code).copied()
    }

    /// Short label used in file headers (`NL`, `MCI`, `DEM`).
    pub fn short(self) -> &'static str {
        match self {
            Diagnosis::Nl => "NL",
            Diagnosis::Mci => "MCI",
            Diagnosis::Dementia => "DEM",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Nl => "NL",
            Diagnosis::Mci => "MCI",
            Diagnosis::Dementia => "DEMENTIA",
        })
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NL" | "0" => Ok(Diagnosis::Nl),
            "MCI" | "1" => Ok(Diagnosis::Mci),
            "DEMENTIA" | "DEM" | "2" => Ok(Diagnosis::Dementia),
            other => Err(Error::data(format!("unknown diagnosis '{other}'"))),
        }
    }
}

pub const DX: &str = "DX";
pub const TIME_DIFF: &str = "TimeDiff";
pub const AGE: &str = "AGE";
pub const RACE: &str = "PTRACCAT";

/// Every biomarker name an examination may carry.
pub const FEATURE_UNIVERSE: [&str; 14] = [
    "ADAS13",
    "Ventricles",
    AGE,
    RACE,
    "Hippocampus",
    "APOE4",
    "FAQ",
    "MMSE",
    "ADAS11",
    "RAVLT_immediate",
    "RAVLT_learning",
    "RAVLT_forgetting",
    "RAVLT_perc_forgetting",
    "Ventricles_ICV",
];

const G8_BIOMARKERS: [&str; 6] = ["ADAS13", "Ventricles", AGE, RACE, "Hippocampus", "APOE4"];
const G11_EXTRA: [&str; 3] = ["FAQ", "MMSE", "ADAS11"];
const G15_EXTRA: [&str; 4] = [
    "RAVLT_immediate",
    "RAVLT_learning",
    "RAVLT_forgetting",
    "RAVLT_perc_forgetting",
];

pub fn is_registered_feature(name: &str) -> bool {
    FEATURE_UNIVERSE.contains(&name)
}

/// One clinic visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Examination {
    pub date: NaiveDate,
    /// Present biomarker values; a missing value has no entry.
    pub biomarkers: BTreeMap<String, f64>,
    pub diagnosis: Option<Diagnosis>,
    /// Study-phase label (e.g. `ADNI1`).
    pub phase: String,
}

impl Examination {
    pub fn new(date: NaiveDate, phase: impl Into<String>) -> Self {
        Examination {
            date,
            biomarkers: BTreeMap::new(),
            diagnosis: None,
            phase: phase.into(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.biomarkers.insert(name.to_string(), value);
        self
    }

    pub fn with_diagnosis(mut self, dx: Diagnosis) -> Self {
        self.diagnosis = Some(dx);
        self
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.biomarkers.get(name).copied()
    }

    /// True when the diagnosis and every biomarker of `group` are present.
    pub fn is_usable(&self, group: &FeatureGroup) -> bool {
        self.diagnosis.is_some() && group.biomarkers().iter().all(|b| self.biomarkers.contains_key(b))
    }
}

/// A patient's examinations, strictly ascending by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    patient_id: String,
    exams: Vec<Examination>,
}

impl PatientRecord {
    /// Builds a record; exams must be non-empty with strictly increasing dates.
    pub fn new(patient_id: impl Into<String>, exams: Vec<Examination>) -> Result<Self> {
        let patient_id = patient_id.into();
        if exams.is_empty() {
            return Err(Error::data(format!("patient {patient_id} has no examinations")));
        }
        if let Some(w) = exams.windows(2).find(|w| w[0].date >= w[1].date) {
            return Err(Error::data(format!(
                "patient {patient_id}: examinations not strictly ascending ({} then {})",
                w[0].date, w[1].date
            )));
        }
        Ok(PatientRecord { patient_id, exams })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn exams(&self) -> &[Examination] {
        &self.exams
    }

    pub fn len(&self) -> usize {
        self.exams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exams.is_empty()
    }

    pub fn phase_tags(&self) -> impl Iterator<Item = &str> {
        self.exams.iter().map(|e| e.phase.as_str())
    }

    pub fn into_exams(self) -> Vec<Examination> {
        self.exams
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupName {
    G8,
    G11,
    G15,
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G8" | "8" => Ok(GroupName::G8),
            "G11" | "11" => Ok(GroupName::G11),
            "G15" | "15" => Ok(GroupName::G15),
            other => Err(Error::invalid(format!(
                "unknown feature group '{other}' (expected G8, G11 or G15)"
            ))),
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupName::G8 => "G8",
            GroupName::G11 => "G11",
            GroupName::G15 => "G15",
        })
    }
}

/// An ordered set of biomarkers fed to the model.
///
/// The full feature list is `DX`, the biomarkers, then `TimeDiff`; the
/// column layout of a training matrix is fixed separately by the transform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    name: String,
    biomarkers: Vec<String>,
}

impl FeatureGroup {
    pub fn registered(name: GroupName) -> Self {
        let mut biomarkers: Vec<&str> = G8_BIOMARKERS.to_vec();
        if matches!(name, GroupName::G11 | GroupName::G15) {
            biomarkers.extend(G11_EXTRA);
        }
        if name == GroupName::G15 {
            biomarkers.extend(G15_EXTRA);
        }
        FeatureGroup {
            name: name.to_string(),
            biomarkers: biomarkers.into_iter().map(String::from).collect(),
        }
    }

    /// An arbitrary group; names are checked against the feature universe
    /// when the group is used by a transform.
    pub fn custom(name: impl Into<String>, biomarkers: Vec<String>) -> Self {
        FeatureGroup {
            name: name.into(),
            biomarkers,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn biomarkers(&self) -> &[String] {
        &self.biomarkers
    }

    pub fn feature_names(&self) -> Vec<String> {
        std::iter::once(DX.to_string())
            .chain(self.biomarkers.iter().cloned())
            .chain(std::iter::once(TIME_DIFF.to_string()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.biomarkers.iter().enumerate() {
            if !is_registered_feature(b) {
                return Err(Error::invalid(format!(
                    "feature group {}: unregistered feature '{b}'",
                    self.name
                )));
            }
            if self.biomarkers[..i].contains(b) {
                return Err(Error::invalid(format!(
                    "feature group {}: duplicate feature '{b}'",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

pub fn feature_group(name: &str) -> Result<FeatureGroup> {
    Ok(FeatureGroup::registered(name.parse()?))
}

/// Months between two dates, `later - earlier`, as days / 30.4375.
pub fn months_between(later: NaiveDate, earlier: NaiveDate) -> Result<f64> {
    let days = (later - earlier).num_days();
    if days < 0 {
        return Err(Error::invalid(format!(
            "months_between: {later} is earlier than {earlier}"
        )));
    }
    Ok(days as f64 / DAYS_PER_MONTH)
}

/// Which age a pair row carries for the earlier examination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgePolicy {
    /// Use the AGE value exactly as recorded on each examination.
    AsRecorded,
    /// Anchor on the first recorded AGE and advance it by elapsed calendar time.
    #[default]
    BaselinePlusElapsed,
}

impl FromStr for AgePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_recorded" | "as-recorded" => Ok(AgePolicy::AsRecorded),
            "baseline_plus_elapsed" | "baseline-plus-elapsed" => Ok(AgePolicy::BaselinePlusElapsed),
            other => Err(Error::invalid(format!("unknown age policy '{other}'"))),
        }
    }
}

/// Rewrites AGE on each examination according to `policy`.
pub fn apply_age_policy(exams: &mut [Examination], policy: AgePolicy) {
    if policy == AgePolicy::AsRecorded {
        return;
    }
    let Some((anchor_date, anchor_age)) = exams
        .iter()
        .find_map(|e| e.value(AGE).map(|age| (e.date, age)))
    else {
        return;
    };
    for exam in exams.iter_mut() {
        let years = (exam.date - anchor_date).num_days() as f64 / 365.25;
        exam.biomarkers.insert(AGE.to_string(), anchor_age + years);
    }
}

/// String → code dictionary for a categorical column (race by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub codes: BTreeMap<String, f64>,
    /// Code given to categories not in `codes`.
    pub other: f64,
}

impl CategoryMap {
    pub fn encode(&self, value: &str) -> (f64, bool) {
        match self.codes.get(value.trim()) {
            Some(&code) => (code, true),
            None => (self.other, false),
        }
    }

    /// Reverse lookup used when exporting coded values back to strings.
    pub fn decode(&self, code: f64) -> Option<&str> {
        self.codes
            .iter()
            .find(|(_, &c)| c == code)
            .map(|(k, _)| k.as_str())
    }
}

impl Default for CategoryMap {
    fn default() -> Self {
        let codes = [
            ("White", 0.0),
            ("Black", 1.0),
            ("Asian", 2.0),
            ("More than one", 3.0),
            ("Am Indian/Alaskan", 4.0),
            ("Hawaiian/Other PI", 5.0),
            ("Unknown", 6.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        CategoryMap { codes, other: 7.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn g8_layout() {
        let g = feature_group("G8").unwrap();
        assert_eq!(
            g.feature_names(),
            ["DX", "ADAS13", "Ventricles", "AGE", "PTRACCAT", "Hippocampus", "APOE4", "TimeDiff"]
        );
    }

    #[test]
    fn groups_nest_and_have_expected_sizes() {
        let g8 = feature_group("G8").unwrap().feature_names();
        let g11 = feature_group("G11").unwrap().feature_names();
        let g15 = feature_group("G15").unwrap().feature_names();
        assert_eq!((g8.len(), g11.len(), g15.len()), (8, 11, 15));
        assert!(g8.iter().all(|f| g11.contains(f)));
        assert!(g11.iter().all(|f| g15.contains(f)));
        for name in [GroupName::G8, GroupName::G11, GroupName::G15] {
            let g = FeatureGroup::registered(name);
            g.validate().unwrap();
            let names = g.feature_names();
            let mut dedup = names.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), names.len());
        }
        let g15 = FeatureGroup::registered(GroupName::G15);
        assert_eq!(
            &g15.biomarkers()[9..],
            ["RAVLT_immediate", "RAVLT_learning", "RAVLT_forgetting", "RAVLT_perc_forgetting"]
        );
    }

    #[test]
    fn unknown_group_rejected() {
        assert!(feature_group("G9").is_err());
    }

    #[test]
    fn month_conversion() {
        assert_eq!(months_between(d("2011-03-01"), d("2011-03-01")).unwrap(), 0.0);
        let m = months_between(d("2011-03-01"), d("2010-03-01")).unwrap();
        assert_eq!(m, 365.0 / 30.4375);
        assert!((m - 11.99).abs() < 0.01);
        assert!(months_between(d("2010-01-01"), d("2010-01-31")).is_err());
    }

    #[test]
    fn month_additivity() {
        let a = d("2014-07-19");
        let b = d("2012-02-29");
        let c = d("2009-11-03");
        let lhs = months_between(a, b).unwrap() + months_between(b, c).unwrap();
        assert!((lhs - months_between(a, c).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn diagnosis_ordinals_round_trip() {
        for k in 0..3 {
            assert_eq!(Diagnosis::from_ordinal(k).unwrap().ordinal(), k);
        }
        assert!(Diagnosis::from_ordinal(3).is_none());
        assert!(Diagnosis::Nl < Diagnosis::Mci && Diagnosis::Mci < Diagnosis::Dementia);
    }

    #[test]
    fn record_rejects_ties_and_disorder() {
        let e1 = Examination::new(d("2010-01-01"), "ADNI1");
        let e2 = Examination::new(d("2010-01-01"), "ADNI1");
        assert!(PatientRecord::new("p", vec![e1.clone(), e2]).is_err());
        assert!(PatientRecord::new("p", vec![]).is_err());
        let e3 = Examination::new(d("2009-01-01"), "ADNI1");
        assert!(PatientRecord::new("p", vec![e1, e3]).is_err());
    }

    #[test]
    fn age_advances_from_first_recorded_value() {
        let mut exams = vec![
            Examination::new(d("2010-01-01"), "A"),
            Examination::new(d("2011-01-01"), "A").with(AGE, 70.0),
            Examination::new(d("2013-01-01"), "A").with(AGE, 70.0),
        ];
        apply_age_policy(&mut exams, AgePolicy::BaselinePlusElapsed);
        assert!((exams[0].value(AGE).unwrap() - (70.0 - 365.0 / 365.25)).abs() < 1e-12);
        assert!((exams[2].value(AGE).unwrap() - (70.0 + 731.0 / 365.25)).abs() < 1e-12);
    }

    #[test]
    fn unseen_race_gets_other_code() {
        let map = CategoryMap::default();
        assert_eq!(map.encode("White"), (0.0, true));
        assert_eq!(map.encode("Martian"), (7.0, false));
        assert_eq!(map.decode(2.0), Some("Asian"));
    }
}
