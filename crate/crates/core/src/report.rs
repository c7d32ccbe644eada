//! Result files: CSV tables, JSON summaries, simple SVG charts and a
//! checksummed manifest.
//!
//! Numbers in CSV are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64` exactly. Absent values are empty cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::Diagnosis;
use crate::error::{Error, Result};
use crate::eval::{CvReport, ForecastRow, ForecastTable, ForwardReport, GridReport, SplitResult};
use crate::metrics::{one_vs_rest, roc_curve, ConfusionMatrix, ScoredSample};

pub const MANIFEST: &str = "manifest.json";

/// Lossless 17-significant-digit rendering.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// Four-digit rendering for human-facing summaries.
pub fn short(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory whose files are tracked in `manifest.json`.
///
/// The manifest is only written by [`ReportBundle::finish`], so a run that
/// fails midway leaves no manifest behind.
#[derive(Debug)]
pub struct ReportBundle {
    dir: PathBuf,
    pub svg: bool,
    entries: BTreeMap<String, ManifestEntry>,
}

impl ReportBundle {
    pub fn create(dir: impl Into<PathBuf>, svg: bool) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stale = dir.join(MANIFEST);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        Ok(ReportBundle {
            dir,
            svg,
            entries: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.entries.insert(
            name.to_string(),
            ManifestEntry {
                file: name.to_string(),
                bytes: bytes.len(),
                sha256: hex::encode(Sha256::digest(bytes)),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::data(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn files(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Writes the manifest and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let entries: Vec<&ManifestEntry> = self.entries.values().collect();
        let mut bytes = serde_json::to_vec_pretty(&entries).map_err(|e| Error::data(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(e.to_string()))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::data(e.to_string()))
}

/// `cv_table.csv`, best mean test mAUC first.
pub fn emit_cv_table(bundle: &mut ReportBundle, reports: &[CvReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("no cross-validation reports to tabulate"));
    }
    let mut sorted: Vec<&CvReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &CvReport| r.mean_test_mauc.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    let rows = sorted.iter().map(|r| {
        vec![
            r.config.clone(),
            opt(r.mean_train_mauc),
            opt(r.mean_test_mauc),
            opt(r.test_sd),
        ]
    });
    let bytes = csv_bytes(&["config", "train_mauc", "test_mauc", "test_sd"], rows)?;
    bundle.write("cv_table.csv", &bytes)
}

/// `splits.csv` (one row per split) and optionally `splits.svg` box plots.
pub fn emit_splits(bundle: &mut ReportBundle, splits: &[SplitResult]) -> Result<()> {
    let rows = splits.iter().map(|s| {
        vec![
            s.index.to_string(),
            s.train_patients.to_string(),
            s.test_patients.to_string(),
            opt(s.train_mauc),
            opt(s.test_mauc),
            s.skipped.clone().unwrap_or_default(),
        ]
    });
    let bytes = csv_bytes(
        &["split", "train_patients", "test_patients", "train_mauc", "test_mauc", "skipped"],
        rows,
    )?;
    bundle.write("splits.csv", &bytes)?;
    if bundle.svg {
        let train: Vec<f64> = splits.iter().filter_map(|s| s.train_mauc).collect();
        let test: Vec<f64> = splits.iter().filter_map(|s| s.test_mauc).collect();
        bundle.write("splits.svg", svg_boxplots(&[("train", &train), ("test", &test)]).as_bytes())?;
    }
    Ok(())
}

/// `grid.csv` in rank order and optionally `grid.svg` (score per repeat).
pub fn emit_grid(bundle: &mut ReportBundle, grid: &GridReport) -> Result<()> {
    let rows = grid.entries.iter().map(|e| {
        vec![
            e.rank.to_string(),
            format_f64(e.alpha),
            format_f64(e.learning_rate),
            e.hidden.to_string(),
            opt(e.mean_test_mauc),
            opt(e.test_sd),
            e.scores.len().to_string(),
            e.failures.join("; "),
        ]
    });
    let bytes = csv_bytes(
        &[
            "rank",
            "alpha",
            "learning_rate",
            "hidden",
            "mean_test_mauc",
            "test_sd",
            "successful_runs",
            "failures",
        ],
        rows,
    )?;
    bundle.write("grid.csv", &bytes)?;
    if bundle.svg {
        let series: Vec<(String, Vec<f64>)> = grid
            .entries
            .iter()
            .map(|e| (format!("#{} a={} lr={} h={}", e.rank, e.alpha, e.learning_rate, e.hidden), e.scores.clone()))
            .collect();
        bundle.write("grid.svg", svg_dotplot(&series).as_bytes())?;
    }
    Ok(())
}

pub fn emit_confusion(bundle: &mut ReportBundle, cm: &ConfusionMatrix) -> Result<()> {
    let rows = Diagnosis::ALL.iter().map(|actual| {
        let mut row = vec![actual.short().to_string()];
        row.extend(cm.counts[actual.ordinal()].iter().map(|c| c.to_string()));
        row
    });
    let bytes = csv_bytes(&["actual", "pred_NL", "pred_MCI", "pred_DEM"], rows)?;
    bundle.write("confusion.csv", &bytes)
}

/// One-vs-rest `roc_<class>.csv` for every class with both positives and
/// negatives, plus an optional combined `roc.svg`.
pub fn emit_roc(bundle: &mut ReportBundle, samples: &[ScoredSample]) -> Result<()> {
    let mut curves = Vec::new();
    for class in Diagnosis::ALL {
        let Ok(curve) = roc_curve(&one_vs_rest(samples, class)) else {
            continue;
        };
        let rows = curve.iter().map(|(f, t)| vec![format_f64(*f), format_f64(*t)]);
        bundle.write(&format!("roc_{}.csv", class.short()), &csv_bytes(&["fpr", "tpr"], rows)?)?;
        curves.push((class, curve));
    }
    if bundle.svg && !curves.is_empty() {
        bundle.write("roc.svg", svg_roc(&curves).as_bytes())?;
    }
    Ok(())
}

/// `predictions.csv` in the layout read by [`read_predictions_csv`].
pub fn emit_predictions(bundle: &mut ReportBundle, report: &ForwardReport) -> Result<()> {
    let rows = report.samples.iter().map(|s| {
        vec![
            s.patient_id.clone(),
            s.target_date.format("%Y-%m-%d").to_string(),
            s.n_vectors.to_string(),
            format_f64(s.probs[0]),
            format_f64(s.probs[1]),
            format_f64(s.probs[2]),
            s.actual.to_string(),
        ]
    });
    let bytes = csv_bytes(
        &["patient_id", "target_date", "n_vectors", "prob_NL", "prob_MCI", "prob_DEM", "actual"],
        rows,
    )?;
    bundle.write("predictions.csv", &bytes)
}

/// Reads `prob_NL, prob_MCI, prob_DEM, actual` columns (by header name).
pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<ScoredSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::data(format!("predictions file lacks column '{name}'")))
    };
    let idx = [col("prob_NL")?, col("prob_MCI")?, col("prob_DEM")?];
    let actual = col("actual")?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let mut probs = [0.0; 3];
        for k in 0..3 {
            let cell = rec.get(idx[k]).unwrap_or("").trim();
            probs[k] = cell
                .parse()
                .map_err(|_| Error::row(row, format!("bad probability '{cell}'")))?;
        }
        let dx: Diagnosis = rec
            .get(actual)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| Error::row(row, e.to_string()))?;
        out.push(ScoredSample::new(probs, dx).map_err(|e| Error::row(row, e.to_string()))?);
    }
    Ok(out)
}

/// Most severe diagnosis per patient.
pub fn most_severe(samples: impl IntoIterator<Item = (String, Diagnosis)>) -> BTreeMap<String, Diagnosis> {
    let mut out: BTreeMap<String, Diagnosis> = BTreeMap::new();
    for (pid, dx) in samples {
        let e = out.entry(pid).or_insert(dx);
        *e = (*e).max(dx);
    }
    out
}

/// Color for a most-severe actual diagnosis: green, yellow, red.
pub fn severity_color(dx: Option<Diagnosis>) -> &'static str {
    match dx {
        Some(Diagnosis::Nl) => "#2e8b57",
        Some(Diagnosis::Mci) => "#e6b800",
        Some(Diagnosis::Dementia) => "#c0392b",
        None => "#808080",
    }
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Long-format `forecast.csv`; with SVG enabled also `forecast_strip.svg`
/// (argmax per month, one strip per patient) and one
/// `trajectory_<patient>.svg` per patient.
pub fn emit_trajectories(
    bundle: &mut ReportBundle,
    table: &ForecastTable,
    actuals: Option<&BTreeMap<String, Diagnosis>>,
) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::invalid("forecast table is empty"));
    }
    let rows = table.rows.iter().map(|r| {
        vec![
            r.patient_id.clone(),
            r.month.to_string(),
            format_f64(r.probs[0]),
            format_f64(r.probs[1]),
            format_f64(r.probs[2]),
            r.predicted.short().to_string(),
        ]
    });
    let bytes = csv_bytes(&["patient_id", "month", "p_NL", "p_MCI", "p_DEM", "argmax"], rows)?;
    bundle.write("forecast.csv", &bytes)?;
    if bundle.svg {
        bundle.write("forecast_strip.svg", svg_strip(table).as_bytes())?;
        for pid in table.patients() {
            let rows: Vec<&ForecastRow> = table.rows.iter().filter(|r| r.patient_id == pid).collect();
            let color = severity_color(actuals.and_then(|a| a.get(pid).copied()));
            let svg = svg_trajectory(pid, &rows, color);
            bundle.write(&format!("trajectory_{}.svg", file_safe(pid)), svg.as_bytes())?;
        }
    }
    Ok(())
}

/// Parses `forecast.csv` back into rows.
pub fn read_forecast_csv<R: Read>(reader: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::row(i + 2, format!("bad {what}"));
        let num = |k: usize| -> Result<f64> { rec.get(k).unwrap_or("").parse().map_err(|_| bad("probability")) };
        out.push(ForecastRow {
            patient_id: rec.get(0).unwrap_or("").to_string(),
            month: rec.get(1).unwrap_or("").parse().map_err(|_| bad("month"))?,
            probs: [num(2)?, num(3)?, num(4)?],
            predicted: rec.get(5).unwrap_or("").parse()?,
        });
    }
    Ok(out)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn svg_open(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn axes(svg: &mut String, y_label: &str) {
    let _ = write!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"10\" y=\"{PAD}\" font-size=\"12\">{}</text>\n",
        xml_escape(y_label),
        b = H - PAD,
        r = W - PAD,
    );
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn svg_boxplots(series: &[(&str, &[f64])]) -> String {
    let mut svg = svg_open(W, H, "mAUC over random splits");
    axes(&mut svg, "mAUC");
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let slot = (W - 2.0 * PAD) / series.len().max(1) as f64;
    for (i, (name, values)) in series.iter().enumerate() {
        let cx = PAD + slot * (i as f64 + 0.5);
        let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>", cx - 15.0, H - PAD + 20.0, xml_escape(name));
        if values.is_empty() {
            continue;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, q2, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let _ = write!(
            svg,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <rect x=\"{:.2}\" y=\"{:.2}\" width=\"40\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            y(v[0]),
            y(v[v.len() - 1]),
            cx - 20.0,
            y(q3),
            (y(q1) - y(q3)).max(0.5),
            cx - 20.0,
            y(q2),
            cx + 20.0,
            y(q2),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_dotplot(series: &[(String, Vec<f64>)]) -> String {
    let height = PAD * 2.0 + 16.0 * series.len() as f64;
    let mut svg = svg_open(W, height, "test mAUC per grid configuration");
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let x = |v: f64| 260.0 + (v - lo) / (hi - lo) * (W - 300.0);
    for (i, (label, values)) in series.iter().enumerate() {
        let y = PAD + 16.0 * i as f64;
        let _ = writeln!(svg, "<text x=\"5\" y=\"{:.2}\" font-size=\"10\">{}</text>", y + 4.0, xml_escape(label));
        for v in values {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#3182bd\"/>", x(*v));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str, dash: &str) -> String {
    let pts: Vec<String> = points.map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\n",
        pts.join(" ")
    )
}

fn svg_roc(curves: &[(Diagnosis, Vec<(f64, f64)>)]) -> String {
    let mut svg = svg_open(W, H, "one-vs-rest ROC curves");
    axes(&mut svg, "TPR");
    let px = |f: f64| PAD + f * (W - 2.0 * PAD);
    let py = |t: f64| H - PAD - t * (H - 2.0 * PAD);
    svg.push_str(&polyline([(px(0.0), py(0.0)), (px(1.0), py(1.0))].into_iter(), "#bbbbbb", " stroke-dasharray=\"4 4\""));
    for (i, (class, curve)) in curves.iter().enumerate() {
        let color = severity_color(Some(*class));
        svg.push_str(&polyline(curve.iter().map(|&(f, t)| (px(f), py(t))), color, ""));
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            W - PAD - 60.0,
            H - PAD - 20.0 - 16.0 * i as f64,
            class.short()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_trajectory(pid: &str, rows: &[&ForecastRow], color: &str) -> String {
    let mut svg = svg_open(W, H, &format!("patient {pid}: predicted probabilities"));
    axes(&mut svg, "probability");
    let horizon = rows.iter().map(|r| r.month).max().unwrap_or(1).max(2) as f64;
    let px = |m: u32| PAD + (m as f64 - 1.0) / (horizon - 1.0) * (W - 2.0 * PAD);
    let py = |p: f64| H - PAD - p * (H - 2.0 * PAD);
    let dashes = ["", " stroke-dasharray=\"6 3\"", " stroke-dasharray=\"2 3\""];
    for class in Diagnosis::ALL {
        let k = class.ordinal();
        svg.push_str(&polyline(rows.iter().map(|r| (px(r.month), py(r.probs[k]))), color, dashes[k]));
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"30\" font-size=\"12\" fill=\"{color}\">{}: solid NL, dashed MCI, dotted DEM</text>",
        PAD,
        xml_escape(pid)
    );
    svg.push_str("</svg>\n");
    svg
}

fn svg_strip(table: &ForecastTable) -> String {
    let patients = table.patients();
    let cell_w = 6.0;
    let cell_h = 6.0;
    let width = 2.0 * PAD + cell_w * table.horizon as f64;
    let height = 2.0 * PAD + cell_h * patients.len() as f64;
    let mut svg = svg_open(width, height, "month-by-month predicted diagnosis");
    for (i, pid) in patients.iter().enumerate() {
        for r in table.rows.iter().filter(|r| r.patient_id == *pid) {
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell_w}\" height=\"{cell_h}\" fill=\"{}\"/>",
                PAD + cell_w * (r.month - 1) as f64,
                PAD + cell_h * i as f64,
                severity_color(Some(r.predicted))
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
