//! Source location of forced oscillations by multivariate time-series
//! classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`mts`] holds the series, dataset and metric types together with the
//!   Mahalanobis distances between rows and between synchronised series.
//! * [`learning`] learns a Mahalanobis matrix from triplet constraints with
//!   LogDet-regularised closed-form updates.
//! * [`dtw`] aligns series of different lengths with the learned local
//!   distance.
//! * [`classifier`] runs k-nearest-neighbour matching and builds accuracy
//!   reports.
//! * [`io`] reads and writes the on-disk dataset, metric and report formats.

pub mod classifier;
pub mod dtw;
pub mod error;
pub mod io;
pub mod learning;
pub(crate) mod linalg;
pub mod mts;

pub use error::{Error, Result};
pub use mts::{Dataset, LabeledSample, MTSeries, MetricMatrix, NormalizationStats};
