//! Subcommand bodies. Each takes a resolved [`RunConfig`], writes its
//! outputs under `out` and returns a summary for the caller to print.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use oscloc_core::classifier::{evaluate_with, EvaluationReport, KnnClassifier, Prediction};
use oscloc_core::io::{
    confusion_to_csv, format_report_table, list_series_files, predictions_to_csv, read_dataset, read_manifest,
    read_metric, read_series_csv, read_traces, report_to_csv, write_atomic, write_dataset, write_metric, Manifest,
    MANIFEST_FILE,
};
use oscloc_core::learning::{train, TrainedMetric};
use oscloc_core::mts::znormalize;
use oscloc_core::{Dataset, MTSeries, MetricMatrix, NormalizationStats};
use oscloc_powersim::scenario::rewindow;
use oscloc_powersim::{generate_dataset, GridModel};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const TRAINING_DIR: &str = "training";
pub const TESTING_DIR: &str = "testing";
pub const METRIC_FILE: &str = "metric.txt";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const DELAY_SWEEP_FILE: &str = "accuracy_vs_delay.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::input(format!("missing {flag} (flag or [inputs] entry)")))
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub training: usize,
    pub testing: usize,
    pub accepted: usize,
    pub rejected: usize,
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let grid = match &config.inputs.grid {
        Some(path) => GridModel::from_file(path)?,
        None => GridModel::kundur_two_area(),
    };
    let data = generate_dataset(&grid, &config.scenario)?;
    create_dir(out)?;
    let mut echo = config.to_table();
    echo.insert("accepted".into(), toml::Value::Integer(data.accepted as i64));
    echo.insert("rejected".into(), toml::Value::Integer(data.rejected as i64));
    write_dataset(&out.join(TRAINING_DIR), &data.training, echo.clone(), None)?;
    write_dataset(&out.join(TESTING_DIR), &data.testing, echo, Some(&data.testing_traces))?;
    config.write_echo(out)?;
    Ok(SimulateSummary {
        training: data.training.len(),
        testing: data.testing.len(),
        accepted: data.accepted,
        rejected: data.rejected,
    })
}

pub fn train_metric(config: &RunConfig, out: &Path) -> Result<TrainedMetric> {
    let dir = required(&config.inputs.dataset, "--dataset")?;
    let (raw, _) = read_dataset(dir)?;
    if raw.is_empty() {
        return Err(CliError::input(format!("{} holds no samples", dir.display())));
    }
    let training = znormalize(&raw)?;
    let trained = train(&training, &config.learning)?;
    create_dir(out)?;
    write_metric(&out.join(METRIC_FILE), &trained.metric, training.normalization())?;
    let mut trace = String::from("iteration,loss,logdet_divergence\n");
    for (i, (loss, div)) in trained.loss_trace.iter().zip(&trained.divergence_trace).enumerate() {
        writeln!(trace, "{},{loss},{div}", i + 1).unwrap();
    }
    write_atomic(&out.join(LOSS_TRACE_FILE), trace)?;
    config.write_echo(out)?;
    Ok(trained)
}

/// Metric plus the training set in the metric's normalisation.
pub struct Model {
    pub metric: MetricMatrix,
    pub stats: Option<NormalizationStats>,
    pub training: Dataset,
    pub manifest: Manifest,
}

impl Model {
    pub fn load(metric_path: &Path, training_dir: &Path) -> Result<Self> {
        let (metric, stats) = read_metric(metric_path)?;
        let (raw, manifest) = read_dataset(training_dir)?;
        if manifest.channels.len() != metric.dim() {
            return Err(CliError::input(format!(
                "metric is {0}x{0} but training data has {1} channels ({2})",
                metric.dim(),
                manifest.channels.len(),
                manifest.channels.join(", ")
            )));
        }
        let training = match &stats {
            Some(s) => raw.normalized_with(s)?,
            None => raw,
        };
        Ok(Self {
            metric,
            stats,
            training,
            manifest,
        })
    }

    pub fn prepare(&self, series: &MTSeries) -> Result<MTSeries> {
        if series.channel_names() != self.manifest.channels.as_slice() {
            return Err(channel_error(&self.manifest.channels, series.channel_names()));
        }
        Ok(match &self.stats {
            Some(s) => s.apply(series)?,
            None => series.clone(),
        })
    }

    pub fn prepare_dataset(&self, data: &Dataset) -> Result<Dataset> {
        if let Some(names) = data.channel_names() {
            if names != self.manifest.channels.as_slice() {
                return Err(channel_error(&self.manifest.channels, names));
            }
        }
        Ok(match &self.stats {
            Some(s) => data.normalized_with(s)?,
            None => data.clone(),
        })
    }

    pub fn classifier(&self, config: &RunConfig) -> Result<KnnClassifier<'_>> {
        Ok(KnnClassifier::with_options(
            &self.training,
            &self.metric,
            config.classifier.k,
            config.classifier.dtw_options(),
        )?)
    }
}

fn channel_error(expected: &[String], found: &[String]) -> CliError {
    let pairs: Vec<String> = expected
        .iter()
        .map(Some)
        .chain(std::iter::repeat(None))
        .zip(found.iter().map(Some).chain(std::iter::repeat(None)))
        .take(expected.len().max(found.len()))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            format!(
                "{} vs {}",
                a.map_or("<none>", String::as_str),
                b.map_or("<none>", String::as_str)
            )
        })
        .collect();
    CliError::input(format!("channel mismatch (training vs input): {}", pairs.join(", ")))
}

/// `(input name, true label if known, prediction)` for each classified input.
pub type PredictionRows = Vec<(String, Option<String>, Prediction)>;

pub fn classify(config: &RunConfig, out: &Path) -> Result<PredictionRows> {
    let model = Model::load(
        required(&config.inputs.metric, "--metric")?,
        required(&config.inputs.training, "--training")?,
    )?;
    let input = required(&config.inputs.input, "--input")?;
    let knn = model.classifier(config)?;
    let mut rows = PredictionRows::new();
    if input.join(MANIFEST_FILE).is_file() {
        let (data, _) = read_dataset(input)?;
        let data = model.prepare_dataset(&data)?;
        for s in data.samples() {
            rows.push((s.id.clone(), Some(s.label.clone()), knn.classify(&s.series)?));
        }
    } else {
        let files = if input.is_dir() { list_series_files(input)? } else { vec![input.to_path_buf()] };
        if files.is_empty() {
            return Err(CliError::input(format!("no .csv series found in {}", input.display())));
        }
        for f in files {
            let series = read_series_csv(&f, model.manifest.sample_rate, 0.0)?;
            let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            rows.push((name, None, knn.classify(&model.prepare(&series)?)?));
        }
    }
    create_dir(out)?;
    write_atomic(&out.join(PREDICTIONS_FILE), predictions_to_csv(&rows, &model.training))?;
    config.write_echo(out)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub delay: f64,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: EvaluationReport,
    pub sweep: Vec<SweepPoint>,
}

pub fn evaluate(config: &RunConfig, out: &Path) -> Result<EvaluateOutcome> {
    let model = Model::load(
        required(&config.inputs.metric, "--metric")?,
        required(&config.inputs.training, "--training")?,
    )?;
    let testing_dir = required(&config.inputs.testing, "--testing")?;
    let (raw_test, test_manifest) = read_dataset(testing_dir)?;
    if raw_test.is_empty() {
        return Err(CliError::input(format!("{} holds no samples", testing_dir.display())));
    }
    let knn = model.classifier(config)?;

    let delays = config.classifier.delay_sweep.clone().unwrap_or_default();
    let traces = if delays.is_empty() {
        Vec::new()
    } else {
        let traces = read_traces(testing_dir, &raw_test, &test_manifest)?;
        check_delays(&delays, &raw_test, &traces)?;
        traces
    };

    let report = evaluate_with(&model.prepare_dataset(&raw_test)?, &knn)?;
    let mut sweep = Vec::with_capacity(delays.len());
    for &delay in &delays {
        let window = raw_test.samples()[0].series.len() as f64 / test_manifest.sample_rate;
        let shifted = rewindow(&raw_test, &traces, delay, window)?;
        let report = evaluate_with(&model.prepare_dataset(&shifted)?, &knn)?;
        log::info!("delay {delay} s: accuracy {:.2}%", report.overall_accuracy);
        sweep.push(SweepPoint { delay, report });
    }

    create_dir(out)?;
    write_atomic(&out.join(REPORT_TABLE_FILE), format_report_table(&report))?;
    write_atomic(&out.join(REPORT_CSV_FILE), report_to_csv(&report))?;
    write_atomic(&out.join(CONFUSION_FILE), confusion_to_csv(&report))?;
    let rows: PredictionRows = raw_test
        .samples()
        .iter()
        .zip(&report.predictions)
        .map(|(s, p)| (s.id.clone(), Some(s.label.clone()), p.clone()))
        .collect();
    write_atomic(&out.join(PREDICTIONS_FILE), predictions_to_csv(&rows, &model.training))?;
    if !sweep.is_empty() {
        write_atomic(&out.join(DELAY_SWEEP_FILE), sweep_to_csv(&sweep))?;
    }
    config.write_echo(out)?;
    Ok(EvaluateOutcome { report, sweep })
}

fn check_delays(delays: &[f64], test: &Dataset, traces: &[MTSeries]) -> Result<()> {
    let (Some(sample), Some(trace)) = (test.samples().first(), traces.first()) else {
        return Ok(());
    };
    let rate = trace.sample_rate();
    let window = sample.series.len() as f64 / rate;
    let duration = trace.len() as f64 / rate;
    let latest = duration - window;
    for &d in delays {
        if d < 0.0 || d > latest + 1e-9 {
            return Err(CliError::input(format!(
                "delay {d} s is outside [0, {latest}] s (trace length {duration} s minus window {window} s)"
            )));
        }
    }
    Ok(())
}

/// `delay_s,overall_accuracy_percent,<class>…` with one row per delay.
pub fn sweep_to_csv(sweep: &[SweepPoint]) -> String {
    let mut out = String::from("delay_s,overall_accuracy_percent");
    if let Some(first) = sweep.first() {
        for c in &first.report.per_class {
            write!(out, ",{}", c.label).unwrap();
        }
    }
    out.push('\n');
    for p in sweep {
        write!(out, "{},{}", p.delay, p.report.overall_accuracy).unwrap();
        for c in &p.report.per_class {
            write!(out, ",{}", c.accuracy).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Human-readable summary of a dataset directory or a metric file.
pub fn inspect(path: &Path) -> Result<String> {
    let mut out = String::new();
    if path.is_dir() {
        let manifest = read_manifest(path)?;
        let (data, _) = read_dataset(path)?;
        writeln!(out, "dataset {}", path.display()).unwrap();
        writeln!(out, "format: {}", manifest.format).unwrap();
        writeln!(out, "samples: {}", manifest.samples).unwrap();
        writeln!(out, "channels ({}): {}", manifest.channels.len(), manifest.channels.join(", ")).unwrap();
        writeln!(out, "sample rate: {} Hz", manifest.sample_rate).unwrap();
        if let Some(rows) = manifest.series_rows {
            writeln!(out, "rows per series: {rows} starting at {} s", manifest.window_start).unwrap();
        }
        writeln!(out, "full traces stored: {}", if manifest.traces { "yes" } else { "no" }).unwrap();
        for class in data.class_set() {
            let n = data.samples().iter().filter(|s| &s.label == class).count();
            writeln!(out, "  {class}: {n}").unwrap();
        }
    } else {
        let (metric, stats) = read_metric(path)?;
        writeln!(out, "metric {}", path.display()).unwrap();
        writeln!(out, "dimension: {}", metric.dim()).unwrap();
        writeln!(out, "normalization: {}", if stats.is_some() { "yes" } else { "no" }).unwrap();
        writeln!(out, "min eigenvalue: {:e}", metric.min_eigenvalue()).unwrap();
        let diag: Vec<String> = metric.matrix().diagonal().iter().map(|v| format!("{v:.4}")).collect();
        writeln!(out, "diagonal: {}", diag.join(" ")).unwrap();
    }
    Ok(out)
}
