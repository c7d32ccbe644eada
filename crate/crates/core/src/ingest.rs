//! Reading longitudinal CSV exports into [`PatientRecord`]s, dataset splits
//! and missing-value handling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    apply_age_policy, is_registered_feature, AgePolicy, CategoryMap, Diagnosis, Examination,
    PatientRecord, FEATURE_UNIVERSE, RACE,
};
use crate::error::{Error, Result};

/// CSV headers for the four required column roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnRoles {
    pub patient_id: String,
    pub exam_date: String,
    pub diagnosis: String,
    pub phase: String,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            patient_id: "RID".into(),
            exam_date: "EXAMDATE".into(),
            diagnosis: "DX".into(),
            phase: "COLPROT".into(),
        }
    }
}

/// Column mapping and dictionaries for [`parse_csv`].
///
/// Loaded from TOML; every field has a TADPOLE-style default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub columns: ColumnRoles,
    /// Feature name → CSV header. Features whose header is absent from the
    /// file are skipped with a warning.
    pub features: BTreeMap<String, String>,
    /// Diagnosis string (matched case-insensitively) → class.
    pub diagnosis_labels: BTreeMap<String, Diagnosis>,
    pub race: CategoryMap,
    /// Cell contents treated as missing.
    pub missing: Vec<String>,
    pub date_formats: Vec<String>,
    pub age_policy: AgePolicy,
}

impl Default for Schema {
    fn default() -> Self {
        let features = FEATURE_UNIVERSE
            .iter()
            .filter(|f| **f != "Ventricles_ICV")
            .map(|f| (f.to_string(), f.to_string()))
            .collect();
        let diagnosis_labels = [
            ("NL", Diagnosis::Nl),
            ("CN", Diagnosis::Nl),
            ("SMC", Diagnosis::Nl),
            ("MCI to NL", Diagnosis::Nl),
            ("MCI", Diagnosis::Mci),
            ("EMCI", Diagnosis::Mci),
            ("LMCI", Diagnosis::Mci),
            ("NL to MCI", Diagnosis::Mci),
            ("Dementia to MCI", Diagnosis::Mci),
            ("Dementia", Diagnosis::Dementia),
            ("AD", Diagnosis::Dementia),
            ("MCI to Dementia", Diagnosis::Dementia),
            ("NL to Dementia", Diagnosis::Dementia),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Schema {
            columns: ColumnRoles::default(),
            features,
            diagnosis_labels,
            race: CategoryMap::default(),
            missing: ["", "NA", "NaN", "-4"].into_iter().map(String::from).collect(),
            date_formats: vec!["%Y-%m-%d".into(), "%m/%d/%Y".into()],
            age_policy: AgePolicy::default(),
        }
    }
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for name in schema.features.keys() {
            if !is_registered_feature(name) {
                return Err(Error::Config(format!("schema maps unregistered feature '{name}'")));
            }
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_toml(&text)
    }

    fn is_missing(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.missing.iter().any(|m| m == cell)
    }

    fn diagnosis(&self, cell: &str) -> Option<Diagnosis> {
        let cell = cell.trim();
        self.diagnosis_labels
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(cell))
            .map(|(_, v)| *v)
    }

    fn parse_date(&self, cell: &str) -> Option<NaiveDate> {
        self.date_formats
            .iter()
            .find_map(|fmt| NaiveDate::parse_from_str(cell.trim(), fmt).ok())
    }
}

struct Columns {
    patient_id: usize,
    exam_date: usize,
    diagnosis: usize,
    phase: usize,
    features: Vec<(String, usize)>,
}

fn locate_columns(headers: &csv::StringRecord, schema: &Schema) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |role: &str, name: &str| {
        find(name).ok_or_else(|| Error::data(format!("missing required column '{name}' ({role})")))
    };
    let roles = &schema.columns;
    let mut features = Vec::new();
    for (feature, header) in &schema.features {
        match find(header) {
            Some(idx) => features.push((feature.clone(), idx)),
            None => warn!("column '{header}' for feature {feature} not present; feature skipped"),
        }
    }
    Ok(Columns {
        patient_id: require("patient_id", &roles.patient_id)?,
        exam_date: require("exam_date", &roles.exam_date)?,
        diagnosis: require("diagnosis", &roles.diagnosis)?,
        phase: require("phase", &roles.phase)?,
        features,
    })
}

/// Parses a UTF-8 CSV (header row first) into one record per patient,
/// ordered by patient id, each with date-sorted examinations.
pub fn parse_csv(path: &Path, schema: &Schema) -> Result<Vec<PatientRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, schema)
}

pub fn parse_reader<R: Read>(reader: R, schema: &Schema) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = locate_columns(&headers, schema)?;

    // (patient, date) -> (row number, exam)
    let mut grouped: BTreeMap<String, BTreeMap<NaiveDate, (usize, Examination)>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let cell = |idx: usize| record.get(idx).unwrap_or("");

        let pid = cell(cols.patient_id).trim();
        if pid.is_empty() {
            return Err(Error::row(row, "empty patient id"));
        }
        let raw_date = cell(cols.exam_date);
        let date = schema
            .parse_date(raw_date)
            .ok_or_else(|| Error::row(row, format!("unparseable date '{raw_date}'")))?;

        let mut exam = Examination::new(date, cell(cols.phase).trim());
        let raw_dx = cell(cols.diagnosis);
        if !schema.is_missing(raw_dx) {
            exam.diagnosis = Some(
                schema
                    .diagnosis(raw_dx)
                    .ok_or_else(|| Error::row(row, format!("unknown diagnosis '{}'", raw_dx.trim())))?,
            );
        }
        for (feature, idx) in &cols.features {
            let raw = cell(*idx);
            if schema.is_missing(raw) {
                continue;
            }
            let value = if feature == RACE {
                let (code, known) = schema.race.encode(raw);
                if !known {
                    warn!("row {row}: unseen {RACE} category '{}' mapped to other", raw.trim());
                }
                code
            } else {
                let v = f64::from_str(raw.trim()).map_err(|_| {
                    Error::row(row, format!("{feature}: non-numeric value '{}'", raw.trim()))
                })?;
                if !v.is_finite() {
                    return Err(Error::row(row, format!("{feature}: non-finite value")));
                }
                v
            };
            exam.biomarkers.insert(feature.clone(), value);
        }

        let visits = grouped.entry(pid.to_string()).or_default();
        if let Some((first_row, _)) = visits.get(&date) {
            return Err(Error::row(
                row,
                format!("duplicate examination for patient {pid} on {date} (first seen at row {first_row})"),
            ));
        }
        visits.insert(date, (row, exam));
    }

    grouped
        .into_iter()
        .map(|(pid, visits)| {
            let mut exams: Vec<Examination> = visits.into_values().map(|(_, e)| e).collect();
            apply_age_policy(&mut exams, schema.age_policy);
            PatientRecord::new(pid, exams)
        })
        .collect()
}

/// Missing-cell count for one mapped column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnMissingness {
    pub column: String,
    pub rows: usize,
    pub missing: usize,
}

impl ColumnMissingness {
    pub fn fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.missing as f64 / self.rows as f64
        }
    }
}

/// Per-column missingness for every schema-mapped column present in the file.
pub fn missingness<R: Read>(reader: R, schema: &Schema) -> Result<Vec<ColumnMissingness>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = locate_columns(&headers, schema)?;
    let mut tracked: Vec<(String, usize)> = vec![
        (schema.columns.patient_id.clone(), cols.patient_id),
        (schema.columns.exam_date.clone(), cols.exam_date),
        (schema.columns.diagnosis.clone(), cols.diagnosis),
        (schema.columns.phase.clone(), cols.phase),
    ];
    tracked.extend(cols.features.iter().map(|(f, i)| (f.clone(), *i)));
    let mut counts = vec![0usize; tracked.len()];
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        rows += 1;
        for (k, (_, idx)) in tracked.iter().enumerate() {
            if schema.is_missing(record.get(*idx).unwrap_or("")) {
                counts[k] += 1;
            }
        }
    }
    Ok(tracked
        .into_iter()
        .zip(counts)
        .map(|((column, _), missing)| ColumnMissingness {
            column,
            rows,
            missing,
        })
        .collect())
}

/// Training cohort plus early/late observations of held-out patients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub lb1: Vec<PatientRecord>,
    pub lb2: Vec<PatientRecord>,
    pub lb4: Vec<PatientRecord>,
}

/// Holds out patients seen in `early_phase` who continue into `late_phases`
/// and whose last early-phase diagnosis is not dementia.
///
/// LB2 gets their early-phase exams; LB4 gets their late-phase exams dated
/// after the last early-phase exam. A held-out candidate whose early exams
/// carry no diagnosis at all stays in LB1. Everyone else goes to LB1 whole.
pub fn split_tadpole(
    records: &[PatientRecord],
    early_phase: &str,
    late_phases: &BTreeSet<String>,
) -> DatasetSplit {
    let mut split = DatasetSplit::default();
    for record in records {
        let early: Vec<Examination> = record
            .exams()
            .iter()
            .filter(|e| e.phase == early_phase)
            .cloned()
            .collect();
        let last_early_dx = early.iter().rev().find_map(|e| e.diagnosis);
        let last_early_date = early.last().map(|e| e.date);
        let late: Vec<Examination> = record
            .exams()
            .iter()
            .filter(|e| late_phases.contains(&e.phase))
            .filter(|e| last_early_date.is_some_and(|d| e.date > d))
            .cloned()
            .collect();

        let held_out = !early.is_empty()
            && !late.is_empty()
            && matches!(last_early_dx, Some(dx) if dx != Diagnosis::Dementia);
        if held_out {
            // Both subsets inherit strict date order from the source record.
            let id = record.patient_id();
            split.lb2.push(PatientRecord::new(id, early).expect("non-empty sorted subset"));
            split.lb4.push(PatientRecord::new(id, late).expect("non-empty sorted subset"));
        } else {
            split.lb1.push(record.clone());
        }
    }
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationPolicy {
    /// Leave absences in place; the transform drops any exam lacking a
    /// group feature.
    DropRow,
    /// Carry each biomarker forward from the patient's most recent earlier
    /// value, then drop what is still missing.
    #[default]
    ForwardFillThenDrop,
}

impl FromStr for ImputationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-row" => Ok(ImputationPolicy::DropRow),
            "forward-fill-then-drop" | "forward-fill" => Ok(ImputationPolicy::ForwardFillThenDrop),
            other => Err(Error::invalid(format!("unknown imputation policy '{other}'"))),
        }
    }
}

/// Applies `policy` per patient. Present values and diagnoses are never touched.
pub fn impute(records: &[PatientRecord], policy: ImputationPolicy) -> Vec<PatientRecord> {
    match policy {
        ImputationPolicy::DropRow => records.to_vec(),
        ImputationPolicy::ForwardFillThenDrop => records.iter().map(forward_fill).collect(),
    }
}

fn forward_fill(record: &PatientRecord) -> PatientRecord {
    let mut last: BTreeMap<String, f64> = BTreeMap::new();
    let exams = record
        .exams()
        .iter()
        .map(|exam| {
            let mut filled = exam.clone();
            for (name, value) in &last {
                filled.biomarkers.entry(name.clone()).or_insert(*value);
            }
            for (name, value) in &exam.biomarkers {
                last.insert(name.clone(), *value);
            }
            filled
        })
        .collect();
    PatientRecord::new(record.patient_id(), exams).expect("dates unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
RID,EXAMDATE,DX,COLPROT,ADAS13,Hippocampus,PTRACCAT
1,2006-01-10,NL,ADNI1,10.5,7000,White
1,2006-07-12,NL,ADNI1,,6950,White
1,2007-01-15,MCI,ADNI1,14,NA,White
2,2005-11-01,MCI,ADNI1,20,6000,Black
2,2006-05-01,Dementia,ADNI1,28,5800,Black
2,2006-11-03,Dementia,ADNI1,31,-4,Black
";

    fn parse(text: &str) -> Result<Vec<PatientRecord>> {
        parse_reader(text.as_bytes(), &Schema::default())
    }

    #[test]
    fn groups_rows_by_patient() {
        let recs = parse(FIXTURE).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.len() == 3));
        assert_eq!(recs[0].patient_id(), "1");
        assert_eq!(recs[1].exams()[1].diagnosis, Some(Diagnosis::Dementia));
        assert_eq!(recs[1].exams()[0].value(RACE), Some(1.0));
    }

    #[test]
    fn empty_and_sentinel_cells_are_absent() {
        let recs = parse(FIXTURE).unwrap();
        assert_eq!(recs[0].exams()[1].value("ADAS13"), None);
        assert_eq!(recs[0].exams()[2].value("Hippocampus"), None);
        assert_eq!(recs[1].exams()[2].value("Hippocampus"), None);
        assert_eq!(recs[0].exams()[0].value("ADAS13"), Some(10.5));
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut lines: Vec<&str> = FIXTURE.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        lines.swap(0, 3);
        let shuffled = std::iter::once(header).chain(lines).collect::<Vec<_>>().join("\n");
        assert_eq!(parse(&shuffled).unwrap(), parse(FIXTURE).unwrap());
    }

    #[test]
    fn duplicate_visit_is_an_error_with_row() {
        let text = format!("{FIXTURE}2,2006-05-01,Dementia,ADNI1,28,5800,Black\n");
        match parse(&text) {
            Err(Error::Row { row, message }) => {
                assert_eq!(row, 8);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn bad_date_and_missing_column() {
        let bad = "RID,EXAMDATE,DX,COLPROT\n1,not-a-date,NL,ADNI1\n";
        assert!(matches!(parse(bad), Err(Error::Row { row: 2, .. })));
        let no_dx = "RID,EXAMDATE,COLPROT\n1,2006-01-01,ADNI1\n";
        let err = parse(no_dx).unwrap_err();
        assert!(err.to_string().contains("DX"));
    }

    #[test]
    fn unknown_diagnosis_and_non_numeric_values_fail() {
        let text = "RID,EXAMDATE,DX,COLPROT,ADAS13\n1,2006-01-01,Confused,ADNI1,3\n";
        assert!(parse(text).is_err());
        let text = "RID,EXAMDATE,DX,COLPROT,ADAS13\n1,2006-01-01,NL,ADNI1,abc\n";
        assert!(matches!(parse(text), Err(Error::Row { row: 2, .. })));
    }

    #[test]
    fn missingness_summary() {
        let summary = missingness(FIXTURE.as_bytes(), &Schema::default()).unwrap();
        let adas = summary.iter().find(|c| c.column == "ADAS13").unwrap();
        assert_eq!((adas.rows, adas.missing), (6, 1));
        let hip = summary.iter().find(|c| c.column == "Hippocampus").unwrap();
        assert_eq!(hip.missing, 2);
    }

    fn exam(date: &str, phase: &str, dx: Diagnosis) -> Examination {
        Examination::new(date.parse().unwrap(), phase).with_diagnosis(dx)
    }

    #[test]
    fn split_rule_on_three_patients() {
        let late: BTreeSet<String> = ["ADNIGO".to_string(), "ADNI2".to_string()].into();
        let continuing = PatientRecord::new(
            "a",
            vec![
                exam("2006-01-01", "ADNI1", Diagnosis::Nl),
                exam("2007-01-01", "ADNI1", Diagnosis::Mci),
                exam("2011-01-01", "ADNI2", Diagnosis::Mci),
            ],
        )
        .unwrap();
        let early_only = PatientRecord::new("b", vec![exam("2006-01-01", "ADNI1", Diagnosis::Nl)]).unwrap();
        let demented = PatientRecord::new(
            "c",
            vec![
                exam("2006-01-01", "ADNI1", Diagnosis::Mci),
                exam("2007-01-01", "ADNI1", Diagnosis::Dementia),
                exam("2011-01-01", "ADNI2", Diagnosis::Dementia),
            ],
        )
        .unwrap();
        let split = split_tadpole(&[continuing, early_only, demented], "ADNI1", &late);
        let ids = |v: &[PatientRecord]| v.iter().map(|r| r.patient_id().to_string()).collect::<Vec<_>>();
        assert_eq!(ids(&split.lb1), ["b", "c"]);
        assert_eq!(ids(&split.lb2), ["a"]);
        assert_eq!(ids(&split.lb4), ["a"]);
        assert_eq!(split.lb2[0].len(), 2);
        assert_eq!(split.lb4[0].len(), 1);
    }

    #[test]
    fn forward_fill_carries_values() {
        let d = |s: &str| s.parse::<NaiveDate>().unwrap();
        let rec = PatientRecord::new(
            "p",
            vec![
                Examination::new(d("2006-01-01"), "A").with("ADAS13", 10.0),
                Examination::new(d("2006-06-01"), "A"),
                Examination::new(d("2007-01-01"), "A"),
            ],
        )
        .unwrap();
        let filled = impute(std::slice::from_ref(&rec), ImputationPolicy::ForwardFillThenDrop);
        let values: Vec<_> = filled[0].exams().iter().map(|e| e.value("ADAS13")).collect();
        assert_eq!(values, [Some(10.0); 3]);

        let late_start = PatientRecord::new(
            "q",
            vec![
                Examination::new(d("2006-01-01"), "A"),
                Examination::new(d("2006-06-01"), "A").with("ADAS13", 4.0),
            ],
        )
        .unwrap();
        let filled = impute(&[late_start], ImputationPolicy::ForwardFillThenDrop);
        assert_eq!(filled[0].exams()[0].value("ADAS13"), None);
        assert_eq!(filled[0].exams()[0].diagnosis, None);
        assert_eq!(impute(std::slice::from_ref(&rec), ImputationPolicy::DropRow), vec![rec]);
    }

    #[test]
    fn unknown_policy_rejected() {
        assert!("mean".parse::<ImputationPolicy>().is_err());
        assert_eq!("drop-row".parse::<ImputationPolicy>().unwrap(), ImputationPolicy::DropRow);
    }

    #[test]
    fn schema_toml_overrides() {
        let schema = Schema::from_toml(
            "missing = [\"\", \"?\"]\n[columns]\npatient_id = \"PTID\"\n[features]\nADAS13 = \"ADAS_13\"\n",
        )
        .unwrap();
        assert_eq!(schema.columns.patient_id, "PTID");
        assert_eq!(schema.columns.exam_date, "EXAMDATE");
        assert_eq!(schema.features.len(), 1);
        assert!(Schema::from_toml("[features]\nBOGUS = \"x\"\n").is_err());
    }
}
