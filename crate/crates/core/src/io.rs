//! On-disk formats.
//!
//! A dataset directory holds
//!
//! ```text
//! manifest.toml          channels, sample rate, class set, window start, config echo
//! labels.csv             sample_id,class,meta   (meta = "key=value;key=value")
//! series/<id>.csv        header of channel names, then one row per time sample
//! traces/<id>.csv        optional full-length traces in the same layout
//! ```
//!
//! A metric file is plain text: `p=<int>`, `normalization=<yes|no>`, `p`
//! rows of `p` space-separated values, then `p` lines of `mean std` when
//! normalisation is present. Values are written with shortest round-trip
//! formatting, so reading a file back gives bit-identical numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::{EvaluationReport, Prediction};
use crate::error::{Error, Result};
use crate::mts::{Dataset, LabeledSample, MTSeries, MetricMatrix, NormalizationStats};

pub const DATASET_FORMAT: &str = "oscloc-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.csv";
pub const SERIES_DIR: &str = "series";
pub const TRACES_DIR: &str = "traces";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub channels: Vec<String>,
    pub sample_rate: f64,
    pub classes: Vec<String>,
    pub samples: usize,
    /// Rows per series when every series has the same length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_rows: Option<usize>,
    /// Time of the first series row relative to oscillation onset, seconds.
    #[serde(default)]
    pub window_start: f64,
    /// Whether `traces/` holds full-length traces for re-windowing.
    #[serde(default)]
    pub traces: bool,
    /// Resolved generating configuration and seeds, kept verbatim.
    #[serde(default)]
    pub echo: toml::Table,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("sample id {id:?} is not a safe file name")))
    }
}

pub fn series_to_csv(series: &MTSeries) -> String {
    let mut out = series.channel_names().join(",");
    out.push('\n');
    for i in 0..series.len() {
        for j in 0..series.channels() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", series.values()[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_series_csv(path: &Path, series: &MTSeries) -> Result<()> {
    write_atomic(path, series_to_csv(series))
}

/// Reads a series file; sample rate and start time are not stored in it.
pub fn read_series_csv(path: &Path, sample_rate: f64, start_time: f64) -> Result<MTSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, 0, e.to_string()))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| format_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| format_err(path, line, e.to_string()))?;
        if record.len() != names.len() {
            return Err(format_err(
                path,
                line,
                format!("{} fields, header has {}", record.len(), names.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(path, line, format!("not a number: {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    let values = DMatrix::from_row_slice(rows, names.len(), &data);
    MTSeries::new(values, sample_rate, names, start_time).map_err(|e| format_err(path, 0, e.to_string()))
}

fn meta_to_string(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn meta_from_str(s: &str) -> BTreeMap<String, String> {
    s.split(';')
        .filter(|kv| !kv.is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (kv.to_string(), String::new()),
        })
        .collect()
}

/// Writes a dataset directory. `traces`, when given, must align with the
/// samples and is stored under `traces/` for later re-windowing.
pub fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    echo: toml::Table,
    traces: Option<&[MTSeries]>,
) -> Result<Manifest> {
    let first = dataset
        .samples()
        .first()
        .ok_or_else(|| Error::invalid("refusing to write an empty dataset"))?;
    if let Some(t) = traces {
        if t.len() != dataset.len() {
            return Err(Error::invalid("trace count differs from sample count"));
        }
    }
    let h = first.series.len();
    let uniform = dataset.samples().iter().all(|s| s.series.len() == h);
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        channels: first.series.channel_names().to_vec(),
        sample_rate: first.series.sample_rate(),
        classes: dataset.class_set().to_vec(),
        samples: dataset.len(),
        series_rows: uniform.then_some(h),
        window_start: first.series.start_time(),
        traces: traces.is_some(),
        echo,
    };

    let mut labels = csv::Writer::from_writer(Vec::new());
    labels.write_record(["sample_id", "class", "meta"]).unwrap();
    for (i, s) in dataset.samples().iter().enumerate() {
        check_id(&s.id)?;
        write_series_csv(&dir.join(SERIES_DIR).join(format!("{}.csv", s.id)), &s.series)?;
        if let Some(t) = traces {
            write_series_csv(&dir.join(TRACES_DIR).join(format!("{}.csv", s.id)), &t[i])?;
        }
        labels
            .write_record([s.id.as_str(), s.label.as_str(), &meta_to_string(&s.meta)])
            .unwrap();
    }
    write_atomic(&dir.join(LABELS_FILE), labels.into_inner().unwrap())?;
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = toml::from_str(&read_text(&path)?).map_err(|e| format_err(&path, 0, e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(format_err(&path, 0, format!("unsupported format {:?}", manifest.format)));
    }
    Ok(manifest)
}

struct LabelRow {
    id: String,
    label: String,
    meta: BTreeMap<String, String>,
}

fn read_labels(dir: &Path) -> Result<Vec<LabelRow>> {
    let path = dir.join(LABELS_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| format_err(&path, 0, e.to_string()))?;
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| format_err(&path, line, e.to_string()))?;
        if record.len() < 2 {
            return Err(format_err(&path, line, "expected sample_id,class[,meta]"));
        }
        let id = record[0].to_string();
        check_id(&id).map_err(|e| format_err(&path, line, e.to_string()))?;
        out.push(LabelRow {
            id,
            label: record[1].to_string(),
            meta: meta_from_str(record.get(2).unwrap_or("")),
        });
    }
    Ok(out)
}

/// Loads a dataset directory and checks every series against the manifest.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest = read_manifest(dir)?;
    let rows = read_labels(dir)?;
    if rows.len() != manifest.samples {
        return Err(format_err(
            &dir.join(LABELS_FILE),
            0,
            format!("{} labels, manifest declares {}", rows.len(), manifest.samples),
        ));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let path = dir.join(SERIES_DIR).join(format!("{}.csv", row.id));
        let series = read_series_csv(&path, manifest.sample_rate, manifest.window_start)?;
        if series.channel_names() != manifest.channels.as_slice() {
            return Err(Error::ChannelMismatch {
                expected: manifest.channels.clone(),
                found: series.channel_names().to_vec(),
            });
        }
        samples.push(LabeledSample {
            id: row.id,
            series,
            label: row.label,
            meta: row.meta,
        });
    }
    let dataset = Dataset::new(samples, manifest.classes.clone())?;
    Ok((dataset, manifest))
}

/// Full-length traces of a dataset, in sample order.
pub fn read_traces(dir: &Path, dataset: &Dataset, manifest: &Manifest) -> Result<Vec<MTSeries>> {
    if !manifest.traces {
        return Err(Error::invalid(format!(
            "{} stores no full traces; re-windowing is impossible",
            dir.display()
        )));
    }
    dataset
        .samples()
        .iter()
        .map(|s| read_series_csv(&dir.join(TRACES_DIR).join(format!("{}.csv", s.id)), manifest.sample_rate, 0.0))
        .collect()
}

pub fn metric_to_string(metric: &MetricMatrix, stats: Option<&NormalizationStats>) -> String {
    let p = metric.dim();
    let mut out = format!("p={p}\nnormalization={}\n", if stats.is_some() { "yes" } else { "no" });
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| metric.matrix()[(i, j)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    if let Some(stats) = stats {
        for (m, s) in stats.mean.iter().zip(&stats.std) {
            writeln!(out, "{m} {s}").unwrap();
        }
    }
    out
}

pub fn write_metric(path: &Path, metric: &MetricMatrix, stats: Option<&NormalizationStats>) -> Result<()> {
    if let Some(s) = stats {
        if s.mean.len() != metric.dim() {
            return Err(Error::invalid("normalisation length differs from metric dimension"));
        }
    }
    write_atomic(path, metric_to_string(metric, stats))
}

pub fn parse_metric(text: &str, path: &Path) -> Result<(MetricMatrix, Option<NormalizationStats>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(n, l)| (n + 1, l.trim()))
            .ok_or_else(|| format_err(path, 0, format!("missing {what}")))
    };
    let (n, line) = next("p line")?;
    let p: usize = line
        .strip_prefix("p=")
        .and_then(|v| v.trim().parse().ok())
        .filter(|p| *p > 0)
        .ok_or_else(|| format_err(path, n, "expected p=<positive int>"))?;
    let (n, line) = next("normalization line")?;
    let normalized = match line.strip_prefix("normalization=").map(str::trim) {
        Some("yes") => true,
        Some("no") => false,
        _ => return Err(format_err(path, n, "expected normalization=<yes|no>")),
    };
    let parse_row = |n: usize, line: &str, width: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(path, n, "not a number"))?;
        if vals.len() != width {
            return Err(format_err(path, n, format!("expected {width} values, found {}", vals.len())));
        }
        Ok(vals)
    };
    let mut data = Vec::with_capacity(p * p);
    for _ in 0..p {
        let (n, line) = next("metric row")?;
        data.extend(parse_row(n, line, p)?);
    }
    let metric = MetricMatrix::new(DMatrix::from_row_slice(p, p, &data))
        .map_err(|e| format_err(path, 0, e.to_string()))?;
    let stats = if normalized {
        let mut mean = Vec::with_capacity(p);
        let mut std = Vec::with_capacity(p);
        for _ in 0..p {
            let (n, line) = next("mean/std row")?;
            let v = parse_row(n, line, 2)?;
            if !(v[1] > 0.0) {
                return Err(format_err(path, n, "std must be positive"));
            }
            mean.push(v[0]);
            std.push(v[1]);
        }
        Some(NormalizationStats {
            mean,
            std,
            flagged: Vec::new(),
        })
    } else {
        None
    };
    if let Some((n, _)) = lines.next() {
        return Err(format_err(path, n + 1, "unexpected trailing content"));
    }
    Ok((metric, stats))
}

pub fn read_metric(path: &Path) -> Result<(MetricMatrix, Option<NormalizationStats>)> {
    parse_metric(&read_text(path)?, path)
}

/// Per-class Correct / Error / Accuracy table followed by the overall line.
pub fn format_report_table(report: &EvaluationReport) -> String {
    let width = report
        .per_class
        .iter()
        .map(|c| c.label.len())
        .chain(["Overall".len(), "Source".len()])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>10}", "Source", "Correct", "Error", "Accuracy/%").unwrap();
    for c in &report.per_class {
        let flag = if c.unseen_in_training { "  (not in training)" } else { "" };
        writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>10.1}{flag}",
            c.label, c.correct, c.error, c.accuracy
        )
        .unwrap();
    }
    writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>10.1}",
        "Overall",
        report.correct(),
        report.total() - report.correct(),
        report.overall_accuracy
    )
    .unwrap();
    out
}

/// One CSV record per class plus an `overall` record.
pub fn report_to_csv(report: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "correct", "error", "accuracy_percent", "unseen_in_training"]).unwrap();
    for c in &report.per_class {
        w.write_record([
            c.label.clone(),
            c.correct.to_string(),
            c.error.to_string(),
            c.accuracy.to_string(),
            c.unseen_in_training.to_string(),
        ])
        .unwrap();
    }
    w.write_record([
        "overall".to_string(),
        report.correct().to_string(),
        (report.total() - report.correct()).to_string(),
        report.overall_accuracy.to_string(),
        "false".to_string(),
    ])
    .unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Confusion matrix as CSV with true classes as rows.
pub fn confusion_to_csv(report: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(report.classes.iter().cloned());
    w.write_record(&header).unwrap();
    for (label, row) in report.classes.iter().zip(&report.confusion) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// `input,predicted,true_label,neighbor_ids,neighbor_distances`; list columns
/// are `;`-separated and neighbour ids are training sample ids.
pub fn predictions_to_csv(
    rows: &[(String, Option<String>, Prediction)],
    training: &Dataset,
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["input", "predicted", "true_label", "neighbor_ids", "neighbor_distances"]).unwrap();
    for (input, truth, pred) in rows {
        let ids: Vec<&str> = pred.neighbor_ids.iter().map(|&i| training.samples()[i].id.as_str()).collect();
        let dists: Vec<String> = pred.neighbor_distances.iter().map(f64::to_string).collect();
        w.write_record([
            input.as_str(),
            pred.label.as_str(),
            truth.as_deref().unwrap_or(""),
            &ids.join(";"),
            &dists.join(";"),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Every `*.csv` file directly inside `dir`, sorted by name.
pub fn list_series_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}
