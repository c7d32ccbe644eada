//! All-pairs transform: every ordered pair (or triplet) of a patient's
//! examinations becomes one supervised row, with the elapsed months as a
//! feature and the later examination's diagnosis as the target.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{months_between, Diagnosis, Examination, FeatureGroup, PatientRecord, DX, TIME_DIFF};
use crate::error::{Error, Result};
use crate::report::format_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pairs,
    Triplets,
}

impl Mode {
    /// Number of source examinations per row.
    pub fn arity(self) -> usize {
        match self {
            Mode::Pairs => 1,
            Mode::Triplets => 2,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pairs" => Ok(Mode::Pairs),
            "triplets" => Ok(Mode::Triplets),
            other => Err(Error::invalid(format!("unknown mode '{other}' (expected pairs or triplets)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pairs => "pairs",
            Mode::Triplets => "triplets",
        })
    }
}

/// Where a row came from: exam indices are 0-based within the patient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub patient_id: String,
    /// `[j_a]` for pairs, `[j_a, j_b]` for triplets.
    pub sources: Vec<usize>,
    pub target: usize,
}

/// Row accounting for one transform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformReport {
    /// Index tuples considered, i.e. sum of C(L_i, 2) or C(L_i, 3).
    pub candidates: usize,
    pub emitted: usize,
    /// Tuples dropped because the target exam has no diagnosis.
    pub missing_target: usize,
    /// Tuples dropped because a source exam lacks a feature or diagnosis.
    pub unusable_source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    pub x: Array2<f64>,
    pub y: Vec<Diagnosis>,
    pub column_names: Vec<String>,
    pub provenance: Vec<Provenance>,
    pub group: FeatureGroup,
    pub mode: Mode,
    pub report: TransformReport,
}

impl TrainingMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Row subset in the given order.
    pub fn select(&self, rows: &[usize]) -> TrainingMatrix {
        TrainingMatrix {
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            column_names: self.column_names.clone(),
            provenance: rows.iter().map(|&r| self.provenance[r].clone()).collect(),
            group: self.group.clone(),
            mode: self.mode,
            report: TransformReport {
                candidates: rows.len(),
                emitted: rows.len(),
                ..TransformReport::default()
            },
        }
    }

    /// Distinct target classes present.
    pub fn classes_present(&self) -> Vec<Diagnosis> {
        let mut seen = [false; 3];
        for dx in &self.y {
            seen[dx.ordinal()] = true;
        }
        Diagnosis::ALL.into_iter().filter(|d| seen[d.ordinal()]).collect()
    }

    /// Writes the matrix as CSV (`column_names` then `target`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.column_names.clone();
        header.push("target".into());
        w.write_record(&header)?;
        for (row, dx) in self.x.rows().into_iter().zip(&self.y) {
            let mut fields: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
            fields.push(dx.ordinal().to_string());
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }

    /// Writes the provenance sidecar CSV.
    pub fn write_provenance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["patient_id".to_string(), "j_a".to_string()];
        if self.mode == Mode::Triplets {
            header.push("j_b".into());
        }
        header.push("target_index".into());
        w.write_record(&header)?;
        for p in &self.provenance {
            let mut fields = vec![p.patient_id.clone()];
            fields.extend(p.sources.iter().map(|s| s.to_string()));
            fields.push(p.target.to_string());
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }
}

/// Column layout of a matrix built from `group` in `mode`.
pub fn column_names(group: &FeatureGroup, mode: Mode) -> Vec<String> {
    let mut names = vec![TIME_DIFF.to_string()];
    match mode {
        Mode::Pairs => {
            names.extend(group.biomarkers().iter().cloned());
            names.push(DX.into());
        }
        Mode::Triplets => {
            names.push(format!("{TIME_DIFF}_prior"));
            names.extend(group.biomarkers().iter().cloned());
            names.push(DX.into());
            names.extend(group.biomarkers().iter().map(|b| format!("{b}_prior")));
            names.push(format!("{DX}_prior"));
        }
    }
    names
}

fn push_exam_features(row: &mut Vec<f64>, exam: &Examination, group: &FeatureGroup) -> Result<()> {
    for b in group.biomarkers() {
        let v = exam
            .value(b)
            .ok_or_else(|| Error::data(format!("examination on {} lacks feature {b}", exam.date)))?;
        row.push(v);
    }
    let dx = exam
        .diagnosis
        .ok_or_else(|| Error::data(format!("examination on {} lacks feature {DX}", exam.date)))?;
    row.push(dx.ordinal() as f64);
    Ok(())
}

fn pair_row(exams: &[Examination], a: usize, b: usize, group: &FeatureGroup) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(group.biomarkers().len() + 2);
    row.push(months_between(exams[b].date, exams[a].date)?);
    push_exam_features(&mut row, &exams[a], group)?;
    Ok(row)
}

fn triplet_row(
    exams: &[Examination],
    a: usize,
    b: usize,
    c: usize,
    group: &FeatureGroup,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(2 * group.biomarkers().len() + 4);
    row.push(months_between(exams[c].date, exams[b].date)?);
    row.push(months_between(exams[b].date, exams[a].date)?);
    push_exam_features(&mut row, &exams[b], group)?;
    push_exam_features(&mut row, &exams[a], group)?;
    Ok(row)
}

struct Rows {
    data: Vec<f64>,
    y: Vec<Diagnosis>,
    provenance: Vec<Provenance>,
    report: TransformReport,
}

fn transform(records: &[PatientRecord], group: &FeatureGroup, mode: Mode) -> Result<TrainingMatrix> {
    group.validate()?;
    let column_names = column_names(group, mode);
    let width = column_names.len();

    let mut ordered: Vec<&PatientRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));

    let mut rows = Rows {
        data: Vec::new(),
        y: Vec::new(),
        provenance: Vec::new(),
        report: TransformReport::default(),
    };
    for record in ordered {
        let exams = record.exams();
        let usable: Vec<bool> = exams.iter().map(|e| e.is_usable(group)).collect();
        let n = exams.len();
        let emit = |sources: Vec<usize>, target: usize, row: Vec<f64>, rows: &mut Rows| {
            debug_assert_eq!(row.len(), width);
            rows.data.extend(row);
            rows.y.push(exams[target].diagnosis.expect("usable target"));
            rows.provenance.push(Provenance {
                patient_id: record.patient_id().to_string(),
                sources,
                target,
            });
            rows.report.emitted += 1;
        };
        let tally = |tuple: &[usize], target: usize, rows: &mut Rows| -> bool {
            rows.report.candidates += 1;
            if exams[target].diagnosis.is_none() {
                rows.report.missing_target += 1;
                false
            } else if !tuple.iter().all(|&j| usable[j]) {
                rows.report.unusable_source += 1;
                false
            } else {
                true
            }
        };
        match mode {
            Mode::Pairs => {
                for a in 0..n {
                    for b in a + 1..n {
                        if tally(&[a, b], b, &mut rows) {
                            let row = pair_row(exams, a, b, group)?;
                            emit(vec![a], b, row, &mut rows);
                        }
                    }
                }
            }
            Mode::Triplets => {
                for a in 0..n {
                    for b in a + 1..n {
                        for c in b + 1..n {
                            if tally(&[a, b, c], c, &mut rows) {
                                let row = triplet_row(exams, a, b, c, group)?;
                                emit(vec![a, b], c, row, &mut rows);
                            }
                        }
                    }
                }
            }
        }
    }

    let n_rows = rows.y.len();
    let x = Array2::from_shape_vec((n_rows, width), rows.data)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TrainingMatrix {
        x,
        y: rows.y,
        column_names,
        provenance: rows.provenance,
        group: group.clone(),
        mode,
        report: rows.report,
    })
}

/// One row per `j_a < j_b` whose exams are both usable for `group`.
///
/// Row layout: `[months(d_b - d_a), biomarkers of j_a, DX of j_a]`, target
/// the diagnosis at `j_b`. Rows are ordered by `(patient_id, j_a, j_b)`.
pub fn transform_pairs(records: &[PatientRecord], group: &FeatureGroup) -> Result<TrainingMatrix> {
    transform(records, group, Mode::Pairs)
}

/// One row per `j_a < j_b < j_c` with all three exams usable.
///
/// Row layout: `[months(d_c - d_b), months(d_b - d_a), biomarkers and DX of
/// j_b, biomarkers and DX of j_a]`, target the diagnosis at `j_c`.
pub fn transform_triplets(records: &[PatientRecord], group: &FeatureGroup) -> Result<TrainingMatrix> {
    transform(records, group, Mode::Triplets)
}

pub fn transform_mode(records: &[PatientRecord], group: &FeatureGroup, mode: Mode) -> Result<TrainingMatrix> {
    transform(records, group, mode)
}

/// Feature row for a forecast `t` months after `exam`.
///
/// In triplet mode `prior_exam` fills the `j_a` slot and the second time
/// column is the gap between the two exams.
pub fn build_prediction_vector(
    exam: &Examination,
    t: f64,
    group: &FeatureGroup,
    mode: Mode,
    prior_exam: Option<&Examination>,
) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("forecast horizon must be positive, got {t}")));
    }
    let mut row = vec![t];
    match mode {
        Mode::Pairs => push_exam_features(&mut row, exam, group)?,
        Mode::Triplets => {
            let prior = prior_exam
                .ok_or_else(|| Error::invalid("triplet mode needs a prior examination"))?;
            if prior.date >= exam.date {
                return Err(Error::invalid(format!(
                    "prior examination {} is not before {}",
                    prior.date, exam.date
                )));
            }
            row.push(months_between(exam.date, prior.date)?);
            push_exam_features(&mut row, exam, group)?;
            push_exam_features(&mut row, prior, group)?;
        }
    }
    Ok(row)
}
