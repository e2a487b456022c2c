//! Multivariate time series, labelled datasets and the Mahalanobis distance.
//!
//! A series is an `h × p` matrix whose rows are time samples and whose
//! columns are measurement channels. Every distance in this crate treats a
//! row as one observation vector.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Negative distances above this are floating-point noise and are returned as 0.
pub const DISTANCE_CLAMP: f64 = 1e-12;
/// Largest tolerated `|m - mᵀ|` entry for a metric matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest tolerated eigenvalue for a metric matrix.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MTSeries {
    values: DMatrix<f64>,
    sample_rate: f64,
    channel_names: Vec<String>,
    start_time: f64,
}

impl MTSeries {
    pub fn new(
        values: DMatrix<f64>,
        sample_rate: f64,
        channel_names: Vec<String>,
        start_time: f64,
    ) -> Result<Self> {
        let (h, p) = values.shape();
        if h == 0 || p == 0 {
            return Err(Error::invalid(format!("series must be non-empty, got {h}x{p}")));
        }
        if channel_names.len() != p {
            return Err(Error::invalid(format!(
                "{} channel names for {p} columns",
                channel_names.len()
            )));
        }
        let unique: HashSet<&String> = channel_names.iter().collect();
        if unique.len() != p {
            return Err(Error::invalid("channel names must be unique"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos % h,
                pos / h
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(Self {
            values,
            sample_rate,
            channel_names,
            start_time,
        })
    }

    /// Builds a series from row vectors with generated channel names `c0, c1, …`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged rows"));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        let names = (0..p).map(|j| format!("c{j}")).collect();
        Self::new(values, 1.0, names, 0.0)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of time samples `h`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of channels `p`.
    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Row-major copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (h, p) = self.values.shape();
        let mut out = Vec::with_capacity(h * p);
        for i in 0..h {
            out.extend(self.values.row(i).iter());
        }
        out
    }

    /// Rows `[start, start + len)` as a new series with shifted start time.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside series of {} rows",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            values: self.values.rows(start, len).into_owned(),
            sample_rate: self.sample_rate,
            channel_names: self.channel_names.clone(),
            start_time: self.start_time + start as f64 / self.sample_rate,
        })
    }

    /// Every `stride`-th row starting from the first.
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        if stride == 1 {
            return self.clone();
        }
        let keep: Vec<usize> = (0..self.len()).step_by(stride).collect();
        Self {
            values: self.values.select_rows(keep.iter()),
            sample_rate: self.sample_rate / stride as f64,
            channel_names: self.channel_names.clone(),
            start_time: self.start_time,
        }
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        debug_assert_eq!(values.shape(), self.values.shape());
        Self {
            values,
            sample_rate: self.sample_rate,
            channel_names: self.channel_names.clone(),
            start_time: self.start_time,
        }
    }
}

/// One series with its class label (the id of the source generator).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub series: MTSeries,
    pub label: String,
    /// Free-form scenario record, e.g. load scale or disturbance frequency.
    pub meta: BTreeMap<String, String>,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, series: MTSeries, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            series,
            label: label.into(),
            meta: BTreeMap::new(),
        }
    }
}

/// Per-channel z-score statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std was replaced by 1.
    pub flagged: Vec<usize>,
}

impl NormalizationStats {
    /// Population mean and standard deviation over all rows of all series.
    pub fn fit<'a>(series: impl IntoIterator<Item = &'a MTSeries>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let all: Vec<&MTSeries> = series.into_iter().collect();
        for s in &all {
            if sum.is_empty() {
                sum = vec![0.0; s.channels()];
            }
            if s.channels() != sum.len() {
                return Err(Error::invalid("series disagree on channel count"));
            }
            for (j, acc) in sum.iter_mut().enumerate() {
                *acc += s.values().column(j).sum();
            }
            count += s.len();
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit normalisation on an empty dataset"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; mean.len()];
        for s in &all {
            for (j, acc) in sq.iter_mut().enumerate() {
                *acc += s.values().column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>();
            }
        }
        let mut flagged = Vec::new();
        let std = sq
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    flagged.push(j);
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std, flagged })
    }

    pub fn apply(&self, series: &MTSeries) -> Result<MTSeries> {
        if series.channels() != self.mean.len() {
            return Err(Error::invalid(format!(
                "normalisation has {} channels, series has {}",
                self.mean.len(),
                series.channels()
            )));
        }
        let mut values = series.values().clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(series.with_values(values))
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::invalid("normalisation mean/std length differ"));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("normalisation std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    class_set: Vec<String>,
    normalization: Option<NormalizationStats>,
}

impl Dataset {
    /// Checks that every sample shares the channel layout and carries a label
    /// from `class_set`.
    pub fn new(samples: Vec<LabeledSample>, class_set: Vec<String>) -> Result<Self> {
        let unique: HashSet<&String> = class_set.iter().collect();
        if unique.len() != class_set.len() {
            return Err(Error::invalid("duplicate class labels"));
        }
        if let Some(first) = samples.first() {
            let names = first.series.channel_names();
            for s in &samples[1..] {
                if s.series.channel_names() != names {
                    return Err(Error::ChannelMismatch {
                        expected: names.to_vec(),
                        found: s.series.channel_names().to_vec(),
                    });
                }
            }
        }
        if let Some(s) = samples.iter().find(|s| !unique.contains(&s.label)) {
            return Err(Error::invalid(format!(
                "sample {} has label {} outside the class set",
                s.id, s.label
            )));
        }
        Ok(Self {
            samples,
            class_set,
            normalization: None,
        })
    }

    /// Class set taken from the labels in order of first appearance.
    pub fn from_samples(samples: Vec<LabeledSample>) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        for s in &samples {
            if !classes.contains(&s.label) {
                classes.push(s.label.clone());
            }
        }
        Self::new(samples, classes)
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_set(&self) -> &[String] {
        &self.class_set
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_set.iter().position(|c| c == label)
    }

    pub fn channel_names(&self) -> Option<&[String]> {
        self.samples.first().map(|s| s.series.channel_names())
    }

    pub fn channels(&self) -> Option<usize> {
        self.samples.first().map(|s| s.series.channels())
    }

    pub fn normalization(&self) -> Option<&NormalizationStats> {
        self.normalization.as_ref()
    }

    /// Applies already-fitted statistics (e.g. training stats to a test set).
    pub fn normalized_with(&self, stats: &NormalizationStats) -> Result<Self> {
        stats.validate()?;
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(LabeledSample {
                    series: stats.apply(&s.series)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            class_set: self.class_set.clone(),
            normalization: Some(stats.clone()),
        })
    }
}

/// Z-scores every channel with statistics fitted on all rows of `dataset`
/// and records them in the returned dataset.
pub fn znormalize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot normalise an empty dataset"));
    }
    let stats = NormalizationStats::fit(dataset.samples().iter().map(|s| &s.series))?;
    for &j in &stats.flagged {
        log::warn!("channel {j} has zero variance; std replaced by 1");
    }
    dataset.normalized_with(&stats)
}

/// Symmetric positive semi-definite matrix defining `(x−y)ᵀ M (x−y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix(DMatrix<f64>);

impl MetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid(format!("metric must be square, got {:?}", m.shape())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("metric has non-finite entries"));
        }
        let asym = linalg::max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::invalid(format!("metric is not symmetric (max |m - mᵀ| = {asym:e})")));
        }
        let min_eig = linalg::min_eigenvalue(&m);
        if min_eig < PSD_TOL {
            return Err(Error::invalid(format!(
                "metric is not positive semi-definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.0)
    }

    /// `L` with `L Lᵀ = M`, so that `d_M(x, y) = ‖(x − y)ᵀ L‖²`.
    pub fn factor(&self) -> DMatrix<f64> {
        linalg::psd_factor(&self.0)
    }

    pub(crate) fn quad_form(&self, diff: &[f64]) -> f64 {
        let p = diff.len();
        let mut acc = 0.0;
        for i in 0..p {
            let mut row = 0.0;
            for j in 0..p {
                row += self.0[(i, j)] * diff[j];
            }
            acc += diff[i] * row;
        }
        clamp_distance(acc)
    }
}

pub(crate) fn clamp_distance(d: f64) -> f64 {
    if d < 0.0 && d >= -DISTANCE_CLAMP {
        0.0
    } else {
        d
    }
}

/// Squared Mahalanobis distance `(x−y)ᵀ M (x−y)` between two row vectors.
pub fn mahalanobis_dist(x: &[f64], y: &[f64], metric: &MetricMatrix) -> Result<f64> {
    if x.len() != y.len() || x.len() != metric.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: x has {}, y has {}, metric is {}x{}",
            x.len(),
            y.len(),
            metric.dim(),
            metric.dim()
        )));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(metric.quad_form(&diff))
}

fn check_pair(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix) -> Result<()> {
    if a.channels() != b.channels() || a.channels() != metric.dim() {
        return Err(Error::invalid(format!(
            "channel count mismatch: {} vs {} with a {}x{} metric",
            a.channels(),
            b.channels(),
            metric.dim(),
            metric.dim()
        )));
    }
    Ok(())
}

/// Sum of row-wise Mahalanobis distances between two equal-length series.
pub fn sync_series_dist(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix) -> Result<f64> {
    check_pair(a, b, metric)?;
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diff = a.values() - b.values();
    let mut row = vec![0.0; a.channels()];
    let mut total = 0.0;
    for i in 0..a.len() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = diff[(i, j)];
        }
        total += metric.quad_form(&row);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(rows: &[&[f64]]) -> MTSeries {
        MTSeries::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_psd(rng: &mut ChaCha8Rng, p: usize) -> MetricMatrix {
        let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        MetricMatrix::new(crate::linalg::symmetrize(&(&b * b.transpose()))).unwrap()
    }

    #[test]
    fn identity_unit_offset() {
        let d = mahalanobis_dist(&[1.0, 0.0], &[0.0, 0.0], &MetricMatrix::identity(2)).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn zero_difference_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_psd(&mut rng, 3);
        assert_eq!(mahalanobis_dist(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_metric_by_hand() {
        let m = MetricMatrix::diagonal(&[2.0, 1.0]).unwrap();
        let d = mahalanobis_dist(&[1.5, 3.0], &[0.5, 2.0], &m).unwrap();
        assert!((d - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = mahalanobis_dist(&[1.0, 2.0], &[1.0], &MetricMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(mahalanobis_dist(&[1.0], &[1.0], &MetricMatrix::identity(2)).is_err());
    }

    #[test]
    fn metric_validation() {
        assert!(MetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(MetricMatrix::diagonal(&[1.0, -0.1]).is_err());
        assert!(MetricMatrix::diagonal(&[1.0, 0.0]).is_ok());
        assert!(MetricMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn sync_dist_examples() {
        let a = series(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = series(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let m = MetricMatrix::identity(2);
        assert_eq!(sync_series_dist(&a, &b, &m).unwrap(), 2.0);
        assert_eq!(sync_series_dist(&a, &a, &m).unwrap(), 0.0);

        let one = series(&[&[1.0, -2.0]]);
        let other = series(&[&[0.5, 1.0]]);
        let m = MetricMatrix::diagonal(&[3.0, 0.5]).unwrap();
        assert_eq!(
            sync_series_dist(&one, &other, &m).unwrap(),
            mahalanobis_dist(&[1.0, -2.0], &[0.5, 1.0], &m).unwrap()
        );
    }

    #[test]
    fn sync_dist_errors() {
        let a = series(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let short = series(&[&[1.0, 0.0]]);
        let narrow = series(&[&[1.0], &[2.0]]);
        let m = MetricMatrix::identity(2);
        assert!(matches!(
            sync_series_dist(&a, &short, &m),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
        assert!(matches!(sync_series_dist(&a, &narrow, &m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn series_validation() {
        assert!(MTSeries::from_rows(&[]).is_err());
        assert!(MTSeries::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(MTSeries::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        let dup = MTSeries::new(DMatrix::zeros(1, 2), 1.0, vec!["a".into(), "a".into()], 0.0);
        assert!(dup.is_err());
    }

    #[test]
    fn window_shifts_start_time() {
        let s = MTSeries::new(
            DMatrix::from_fn(10, 1, |i, _| i as f64),
            5.0,
            vec!["x".into()],
            0.0,
        )
        .unwrap();
        let w = s.window(5, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.values()[(0, 0)], 5.0);
        assert!((w.start_time() - 1.0).abs() < 1e-15);
        assert!(s.window(8, 3).is_err());
        assert_eq!(s.subsample(3).len(), 4);
    }

    fn dataset_of(columns: &[&[f64]]) -> Dataset {
        let samples = columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rows: Vec<Vec<f64>> = c.iter().map(|v| vec![*v]).collect();
                LabeledSample::new(format!("s{i}"), MTSeries::from_rows(&rows).unwrap(), "A")
            })
            .collect();
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn znormalize_two_points() {
        let ds = znormalize(&dataset_of(&[&[0.0], &[2.0]])).unwrap();
        assert_eq!(ds.samples()[0].series.values()[(0, 0)], -1.0);
        assert_eq!(ds.samples()[1].series.values()[(0, 0)], 1.0);
        let stats = ds.normalization().unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert!(stats.flagged.is_empty());
    }

    #[test]
    fn znormalize_constant_channel_flagged() {
        let ds = znormalize(&dataset_of(&[&[3.0, 3.0], &[3.0]])).unwrap();
        assert!(ds.samples().iter().all(|s| s.series.values().iter().all(|v| *v == 0.0)));
        assert_eq!(ds.normalization().unwrap().flagged, vec![0]);
    }

    #[test]
    fn znormalize_idempotent_on_standardized() {
        let ds = znormalize(&dataset_of(&[&[-1.5, 0.5], &[1.0, 0.0, 0.7, -0.7]])).unwrap();
        let again = znormalize(&ds).unwrap();
        for (a, b) in ds.samples().iter().zip(again.samples()) {
            assert!((a.series.values() - b.series.values()).amax() < 1e-12);
        }
    }

    #[test]
    fn znormalize_empty_rejected() {
        let ds = Dataset::from_samples(vec![]).unwrap();
        assert!(znormalize(&ds).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_channels_and_unknown_labels() {
        let a = LabeledSample::new("a", MTSeries::from_rows(&[vec![1.0]]).unwrap(), "A");
        let b = LabeledSample::new("b", MTSeries::from_rows(&[vec![1.0, 2.0]]).unwrap(), "A");
        assert!(matches!(
            Dataset::from_samples(vec![a.clone(), b]),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(Dataset::new(vec![a], vec!["B".into()]).is_err());
    }

    #[test]
    fn random_draw_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut min_raw = f64::INFINITY;
        for _ in 0..1000 {
            let p = rng.random_range(1..=6);
            let m = random_psd(&mut rng, p);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dxy = mahalanobis_dist(&x, &y, &m).unwrap();
            let dyx = mahalanobis_dist(&y, &x, &m).unwrap();
            assert!((dxy - dyx).abs() <= 1e-12 * dxy.max(1.0));
            let diff = DMatrix::from_fn(p, 1, |i, _| x[i] - y[i]);
            min_raw = min_raw.min((diff.transpose() * m.matrix() * &diff)[(0, 0)]);
            let euclid: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            let eye = mahalanobis_dist(&x, &y, &MetricMatrix::identity(p)).unwrap();
            assert!((eye - euclid).abs() <= 1e-12 * euclid.max(1.0));
        }
        assert!(min_raw >= -1e-9);
    }
}
