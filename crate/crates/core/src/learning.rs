//! Mahalanobis metric learning from triplet constraints.
//!
//! Each violated triplet `(X, Y, Z)` moves the metric to the minimiser of
//! `div(M, M') + λ·l(M')`, where `div` is the LogDet divergence and
//! `l(M) = ρ + D_M(X,Y) − D_M(X,Z)`. The minimiser has the closed form
//! `M' = (M⁻¹ + λ(PPᵀ − QQᵀ))⁻¹` with `P = X − Y` and `Q = X − Z` taken as
//! `p × h` column stacks of row differences, and is evaluated with two
//! Woodbury steps. `λ` is kept inside the interval that keeps `M'` positive
//! semi-definite.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, compact_factor, spd_inverse, spd_log_det, symmetrize};
use crate::mts::{sync_series_dist, Dataset, LabeledSample, MetricMatrix, PSD_TOL};

/// Upper end of the `λ̄` search; returned when every `λ ≥ 0` is feasible.
pub const LAMBDA_SEARCH_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    /// Desired margin `ρ > 0` between same-class and cross-class distances.
    pub margin_rho: f64,
    /// Fraction of the feasible `λ̄` used for each update, in `(0, 1]`.
    pub lambda_scale: f64,
    /// Hard ceiling on the per-update step.
    pub lambda_cap: f64,
    pub max_outer: usize,
    /// Triplets visited per outer iteration; `None` visits every anchor.
    pub max_inner: Option<usize>,
    /// Early-stop threshold on the outer loss; `None` means `1e-3 · L₁`.
    pub loss_threshold: Option<f64>,
    /// Keep every `row_stride`-th row of each training series.
    pub row_stride: usize,
    pub rng_seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            margin_rho: 1.0,
            lambda_scale: 0.5,
            lambda_cap: 10.0,
            max_outer: 20,
            max_inner: None,
            loss_threshold: None,
            row_stride: 1,
            rng_seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_rho > 0.0 && self.margin_rho.is_finite()) {
            return Err(Error::invalid(format!("margin_rho must be > 0, got {}", self.margin_rho)));
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "lambda_scale must lie in (0, 1], got {}",
                self.lambda_scale
            )));
        }
        if !(self.lambda_cap > 0.0) {
            return Err(Error::invalid("lambda_cap must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == Some(0) {
            return Err(Error::invalid("max_outer and max_inner must be at least 1"));
        }
        if matches!(self.loss_threshold, Some(t) if !(t >= 0.0)) {
            return Err(Error::invalid("loss_threshold must be non-negative"));
        }
        if self.row_stride == 0 {
            return Err(Error::invalid("row_stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMetric {
    pub metric: MetricMatrix,
    /// Total loss of violated triplets per outer iteration.
    pub loss_trace: Vec<f64>,
    /// LogDet divergence between the metric before and after each outer iteration.
    pub divergence_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub updates_applied: usize,
    pub updates_skipped: usize,
}

fn sample<'a>(dataset: &'a Dataset, idx: usize) -> Result<&'a LabeledSample> {
    dataset.samples().get(idx).ok_or_else(|| {
        Error::invalid(format!("sample index {idx} out of range for {} samples", dataset.len()))
    })
}

/// `ρ + D_M(X,Y) − D_M(X,Z)`; positive means the triplet is violated.
pub fn triplet_loss(t: &Triplet, dataset: &Dataset, metric: &MetricMatrix, rho: f64) -> Result<f64> {
    let x = &sample(dataset, t.anchor)?.series;
    let y = &sample(dataset, t.positive)?.series;
    let z = &sample(dataset, t.negative)?.series;
    Ok(rho + sync_series_dist(x, y, metric)? - sync_series_dist(x, z, metric)?)
}

fn check_diffs(metric: &MetricMatrix, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    let dim = metric.dim();
    if p.ncols() != dim || q.ncols() != dim {
        return Err(Error::invalid(format!(
            "difference matrices have {} and {} columns, metric is {dim}x{dim}",
            p.ncols(),
            q.ncols()
        )));
    }
    Ok(())
}

/// Largest `λ ≥ 0` with `M⁻¹ + λ(PᵀP − QᵀQ) ⪰ 0`, where `P` and `Q` are
/// stacked row differences (`rows × p`). Found by doubling then bisecting on
/// the minimum eigenvalue, which is concave in `λ`.
pub fn max_feasible_lambda(metric: &MetricMatrix, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    check_diffs(metric, p, q)?;
    let inv = spd_inverse(metric.matrix())?;
    let pencil = p.transpose() * p - q.transpose() * q;
    Ok(feasible_lambda(&inv, &pencil))
}

fn feasible_lambda(inv: &DMatrix<f64>, pencil: &DMatrix<f64>) -> f64 {
    let min_eig = |lambda: f64| linalg::min_eigenvalue(&(inv + pencil * lambda));
    let mut lo = 0.0;
    let mut hi = 1.0;
    while min_eig(hi) >= 0.0 {
        if hi >= LAMBDA_SEARCH_CAP {
            return LAMBDA_SEARCH_CAP;
        }
        lo = hi;
        hi = (hi * 2.0).min(LAMBDA_SEARCH_CAP);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if min_eig(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `(M⁻¹ + λ(PᵀP − QᵀQ))⁻¹` through the two-stage Woodbury identity:
/// first `γ = (M⁻¹ + λPᵀP)⁻¹`, then `M' = (γ⁻¹ − λQᵀQ)⁻¹`. The result is
/// symmetrised and must be positive semi-definite.
pub fn update_metric(
    metric: &MetricMatrix,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    lambda: f64,
) -> Result<MetricMatrix> {
    check_diffs(metric, p, q)?;
    update_with_factors(metric, &compact_factor(p), &compact_factor(q), lambda)
}

fn inner_inverse(m: DMatrix<f64>, stage: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::numerical(format!("{stage} Woodbury factor is singular")))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{stage} Woodbury factor is numerically singular")));
    }
    Ok(inv)
}

/// Woodbury update with `P` and `Q` given as column factors (`p × r`).
fn update_with_factors(
    metric: &MetricMatrix,
    pf: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    lambda: f64,
) -> Result<MetricMatrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("step must be a finite non-negative number, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(metric.clone());
    }
    let m = metric.matrix();
    let gamma = if pf.ncols() == 0 {
        m.clone()
    } else {
        let mp = m * pf;
        let r = pf.ncols();
        let core = DMatrix::identity(r, r) + pf.transpose() * &mp * lambda;
        let core_inv = inner_inverse(core, "first")?;
        symmetrize(&(m - &mp * core_inv * mp.transpose() * lambda))
    };
    let next = if qf.ncols() == 0 {
        gamma
    } else {
        let gq = &gamma * qf;
        let r = qf.ncols();
        let core = DMatrix::identity(r, r) - qf.transpose() * &gq * lambda;
        let core_inv = inner_inverse(core, "second")?;
        &gamma + &gq * core_inv * gq.transpose() * lambda
    };
    MetricMatrix::new(symmetrize(&next)).map_err(|e| Error::numerical(format!("updated metric rejected: {e}")))
}

/// LogDet divergence `tr(AB⁻¹) − log det(AB⁻¹) − n`.
pub fn logdet_divergence(a: &MetricMatrix, b: &MetricMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let b_inv = spd_inverse(b.matrix())?;
    let trace = (a.matrix() * &b_inv).trace();
    let log_det = spd_log_det(a.matrix())? - spd_log_det(b.matrix())?;
    Ok(trace - log_det - a.dim() as f64)
}

fn check_equal_lengths(dataset: &Dataset) -> Result<()> {
    if let Some(first) = dataset.samples().first() {
        let h = first.series.len();
        if let Some(s) = dataset.samples().iter().find(|s| s.series.len() != h) {
            return Err(Error::LengthMismatch {
                left: h,
                right: s.series.len(),
            });
        }
    }
    Ok(())
}

/// One triplet per usable anchor: the nearest same-class sample as positive
/// and the nearest other-class sample as negative under the current metric,
/// ties to the lower index. Anchors come back in a seeded shuffled order.
pub fn select_triplets<R: Rng + ?Sized>(
    dataset: &Dataset,
    metric: &MetricMatrix,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    check_equal_lengths(dataset)?;
    if let Some(p) = dataset.channels() {
        if p != metric.dim() {
            return Err(Error::invalid(format!("dataset has {p} channels, metric is {}", metric.dim())));
        }
    }
    let labels: Vec<usize> = dataset
        .samples()
        .iter()
        .map(|s| dataset.class_index(&s.label).expect("dataset labels are validated"))
        .collect();
    let distinct = {
        let mut l = labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        log::warn!("triplet selection needs at least two classes; none produced");
        return Ok(Vec::new());
    }

    let factor = metric.factor();
    let projected: Vec<Vec<f64>> = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let z = s.series.values() * &factor;
            z.as_slice().to_vec()
        })
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        projected[a].iter().zip(&projected[b]).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut triplets: Vec<Triplet> = (0..dataset.len())
        .into_par_iter()
        .filter_map(|a| {
            let mut best_pos: Option<(f64, usize)> = None;
            let mut best_neg: Option<(f64, usize)> = None;
            for b in 0..projected.len() {
                if b == a {
                    continue;
                }
                let d = dist(a, b);
                let slot = if labels[b] == labels[a] { &mut best_pos } else { &mut best_neg };
                if slot.is_none_or(|(best, _)| d < best) {
                    *slot = Some((d, b));
                }
            }
            match (best_pos, best_neg) {
                (Some((_, positive)), Some((_, negative))) => Some(Triplet {
                    anchor: a,
                    positive,
                    negative,
                }),
                _ => {
                    log::debug!("sample {a} is alone in its class; skipped as anchor");
                    None
                }
            }
        })
        .collect();
    triplets.shuffle(rng);
    Ok(triplets)
}

fn row_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a - b
}

/// `tr(M F Fᵀ)`, i.e. the synchronised distance carried by a column factor.
fn factor_distance(metric: &DMatrix<f64>, factor: &DMatrix<f64>) -> f64 {
    if factor.ncols() == 0 {
        return 0.0;
    }
    (factor.transpose() * metric * factor).trace()
}

/// Learns a Mahalanobis matrix from a normalised dataset of equal-length
/// series, starting from the identity.
pub fn train(dataset: &Dataset, config: &LearnConfig) -> Result<TrainedMetric> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    check_equal_lengths(dataset)?;
    let p = dataset.channels().unwrap_or(0);

    let strided = if config.row_stride > 1 {
        let samples = dataset
            .samples()
            .iter()
            .map(|s| LabeledSample {
                series: s.series.subsample(config.row_stride),
                ..s.clone()
            })
            .collect();
        Dataset::new(samples, dataset.class_set().to_vec())?
    } else {
        dataset.clone()
    };
    let values: Vec<&DMatrix<f64>> = strided.samples().iter().map(|s| s.series.values()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut metric = MetricMatrix::identity(p);
    let mut loss_trace = Vec::new();
    let mut divergence_trace = Vec::new();
    let mut converged = false;
    let mut updates_applied = 0;
    let mut updates_skipped = 0;

    for outer in 0..config.max_outer {
        let start_metric = metric.clone();
        let triplets = select_triplets(&strided, &metric, &mut rng)?;
        let limit = config.max_inner.unwrap_or(triplets.len()).min(triplets.len());
        let mut total = 0.0;
        let mut violated = 0usize;
        let mut applied = 0usize;
        let mut failed = 0usize;

        for t in &triplets[..limit] {
            let pf = compact_factor(&row_diff(values[t.anchor], values[t.positive]));
            let qf = compact_factor(&row_diff(values[t.anchor], values[t.negative]));
            let loss = config.margin_rho + factor_distance(metric.matrix(), &pf)
                - factor_distance(metric.matrix(), &qf);
            if loss <= 0.0 {
                continue;
            }
            violated += 1;
            total += loss;

            let inv = spd_inverse(metric.matrix())?;
            let pencil = &pf * pf.transpose() - &qf * qf.transpose();
            let lambda_bar = feasible_lambda(&inv, &pencil);
            let lambda = (config.lambda_scale * lambda_bar).min(config.lambda_cap);
            match update_with_factors(&metric, &pf, &qf, lambda) {
                Ok(next) => {
                    let after = config.margin_rho + factor_distance(next.matrix(), &pf)
                        - factor_distance(next.matrix(), &qf);
                    if after > loss + 1e-9 * loss.abs().max(1.0) {
                        log::warn!(
                            "triplet {t:?}: loss rose from {loss} to {after} after step {lambda}"
                        );
                    }
                    metric = next;
                    applied += 1;
                }
                Err(e) => {
                    log::warn!("triplet {t:?} skipped: {e}");
                    failed += 1;
                }
            }
        }

        loss_trace.push(total);
        updates_applied += applied;
        updates_skipped += failed;
        let min_eig = metric.min_eigenvalue();
        if min_eig < PSD_TOL {
            return Err(Error::numerical(format!(
                "metric drifted out of the PSD cone (min eigenvalue {min_eig:e})"
            )));
        }
        if violated > 0 && applied == 0 && failed > 0 {
            return Err(Error::numerical(format!(
                "all {failed} updates failed in outer iteration {}",
                outer + 1
            )));
        }
        let divergence = logdet_divergence(&start_metric, &metric).unwrap_or(f64::NAN);
        divergence_trace.push(divergence);
        log::info!(
            "outer {}: {violated}/{limit} violated, loss {total:.6e}, divergence {divergence:.3e}",
            outer + 1
        );

        let threshold = config.loss_threshold.unwrap_or(1e-3 * loss_trace[0]);
        if violated == 0 || total < threshold {
            converged = true;
            break;
        }
    }

    Ok(TrainedMetric {
        metric,
        iterations_run: loss_trace.len(),
        loss_trace,
        divergence_trace,
        converged,
        updates_applied,
        updates_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mts::MTSeries;
    use crate::mts::mahalanobis_dist;
    use rand_distr::{Distribution, Normal};

    fn rows(h: usize, f: impl FnMut(usize) -> Vec<f64>) -> MTSeries {
        MTSeries::from_rows(&(0..h).map(f).collect::<Vec<_>>()).unwrap()
    }

    fn direct_update(m: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let inv = m.clone().try_inverse().unwrap();
        (inv + (p.transpose() * p - q.transpose() * q) * lambda).try_inverse().unwrap()
    }

    #[test]
    fn triplet_loss_examples() {
        let x = rows(2, |_| vec![0.0, 0.0]);
        let z = rows(2, |i| if i == 0 { vec![2.0, 1.0] } else { vec![0.0, 0.0] });
        let ds = Dataset::new(
            vec![
                LabeledSample::new("x", x.clone(), "A"),
                LabeledSample::new("y", x, "A"),
                LabeledSample::new("z", z, "B"),
            ],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let eye = MetricMatrix::identity(2);
        let t = Triplet { anchor: 0, positive: 1, negative: 2 };
        assert_eq!(triplet_loss(&t, &ds, &eye, 1.0).unwrap(), -4.0);
        let tie = Triplet { anchor: 2, positive: 2, negative: 2 };
        assert_eq!(triplet_loss(&tie, &ds, &eye, 1.0).unwrap(), 1.0);
        let bad = Triplet { anchor: 0, positive: 1, negative: 9 };
        assert!(triplet_loss(&bad, &ds, &eye, 1.0).is_err());
    }

    #[test]
    fn triplet_loss_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, p) = (5, 3);
        let mk = |rng: &mut ChaCha8Rng| rows(h, |_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect());
        let samples: Vec<MTSeries> = (0..3).map(|_| mk(&mut rng)).collect();
        let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let m = MetricMatrix::new(symmetrize(&(&b * b.transpose()))).unwrap();
        let ds = Dataset::new(
            vec![
                LabeledSample::new("a", samples[0].clone(), "A"),
                LabeledSample::new("b", samples[1].clone(), "A"),
                LabeledSample::new("c", samples[2].clone(), "B"),
            ],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let naive = |u: &MTSeries, v: &MTSeries| {
            let mut total = 0.0;
            for r in 0..h {
                for i in 0..p {
                    for j in 0..p {
                        total += (u.values()[(r, i)] - v.values()[(r, i)])
                            * m.matrix()[(i, j)]
                            * (u.values()[(r, j)] - v.values()[(r, j)]);
                    }
                }
            }
            total
        };
        let expected = 0.7 + naive(&samples[0], &samples[1]) - naive(&samples[0], &samples[2]);
        let t = Triplet { anchor: 0, positive: 1, negative: 2 };
        let got = triplet_loss(&t, &ds, &m, 0.7).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn lambda_cap_when_pencil_is_psd() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let q = DMatrix::zeros(1, 2);
        let lam = max_feasible_lambda(&MetricMatrix::identity(2), &p, &q).unwrap();
        assert_eq!(lam, LAMBDA_SEARCH_CAP);
    }

    #[test]
    fn lambda_unit_row() {
        let p = DMatrix::zeros(1, 3);
        let q = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let lam = max_feasible_lambda(&MetricMatrix::identity(3), &p, &q).unwrap();
        assert!((lam - 1.0).abs() < 1e-12);
        // I − λ q qᵀ has eigenvalue 1 − λ‖q‖².
        let direct = DMatrix::<f64>::identity(3, 3) - q.transpose() * &q * lam;
        assert!(linalg::min_eigenvalue(&direct).abs() < 1e-12);
    }

    #[test]
    fn update_zero_step_is_noop() {
        let m = MetricMatrix::diagonal(&[1.0, 2.0]).unwrap();
        let p = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(update_metric(&m, &p, &p, 0.0).unwrap(), m);
        assert!(update_metric(&m, &p, &p, -1.0).is_err());
    }

    #[test]
    fn update_unit_positive_row() {
        let p = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let q = DMatrix::zeros(1, 3);
        let next = update_metric(&MetricMatrix::identity(3), &p, &q, 1.0).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[0.5, 1.0, 1.0]));
        assert!((next.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dim = rng.random_range(1..=6);
            let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let m = MetricMatrix::new(symmetrize(&(&b * b.transpose() + DMatrix::identity(dim, dim) * 0.1))).unwrap();
            let rows_p = rng.random_range(1..=10);
            let rows_q = rng.random_range(1..=10);
            let p = DMatrix::from_fn(rows_p, dim, |_, _| rng.random_range(-1.0..1.0));
            let q = DMatrix::from_fn(rows_q, dim, |_, _| rng.random_range(-1.0..1.0));
            let bar = max_feasible_lambda(&m, &p, &q).unwrap().min(100.0);
            let lambda = rng.random_range(0.0..0.9) * bar;
            let fast = update_metric(&m, &p, &q, lambda).unwrap();
            let slow = direct_update(m.matrix(), &p, &q, lambda);
            let rel = (fast.matrix() - &slow).norm() / slow.norm();
            assert!(rel <= 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn logdet_examples() {
        let a = MetricMatrix::diagonal(&[2.0, 2.0]).unwrap();
        let b = MetricMatrix::identity(2);
        let d = logdet_divergence(&a, &b).unwrap();
        assert!((d - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-14);
        assert!((d - 0.613_705_638_880_109_4).abs() < 1e-12);
        assert!(logdet_divergence(&a, &a).unwrap().abs() < 1e-12);
        assert!(logdet_divergence(&a, &MetricMatrix::identity(3)).is_err());
        let singular = MetricMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert!(logdet_divergence(&b, &singular).unwrap() > 1e6);
    }

    fn twin_dataset() -> Dataset {
        let s = |v: f64| rows(3, |_| vec![v, 0.0]);
        Dataset::new(
            vec![
                LabeledSample::new("a0", s(0.0), "A"),
                LabeledSample::new("a1", s(0.0), "A"),
                LabeledSample::new("b0", s(1.0), "B"),
                LabeledSample::new("b1", s(1.0), "B"),
            ],
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn triplets_pair_twins() {
        let ds = twin_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = select_triplets(&ds, &MetricMatrix::identity(2), &mut rng).unwrap();
        t.sort_by_key(|t| t.anchor);
        let expected = [(0, 1, 2), (1, 0, 2), (2, 3, 0), (3, 2, 0)];
        for (t, (a, p, n)) in t.iter().zip(expected) {
            assert_eq!((t.anchor, t.positive, t.negative), (a, p, n));
        }
    }

    #[test]
    fn triplets_single_class_empty() {
        let s = rows(2, |_| vec![1.0]);
        let ds = Dataset::from_samples(vec![
            LabeledSample::new("a", s.clone(), "A"),
            LabeledSample::new("b", s, "A"),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_triplets(&ds, &MetricMatrix::identity(1), &mut rng).unwrap().is_empty());
    }

    #[test]
    fn triplets_skip_singleton_anchor() {
        let s = |v: f64| rows(2, |_| vec![v]);
        let ds = Dataset::from_samples(vec![
            LabeledSample::new("a", s(0.0), "A"),
            LabeledSample::new("b", s(0.1), "A"),
            LabeledSample::new("c", s(1.0), "B"),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = select_triplets(&ds, &MetricMatrix::identity(1), &mut rng).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|t| t.anchor != 2));
    }

    #[test]
    fn triplets_deterministic() {
        let ds = twin_dataset();
        let a = select_triplets(&ds, &MetricMatrix::identity(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = select_triplets(&ds, &MetricMatrix::identity(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separated_classes_need_no_updates() {
        let s = |v: f64| rows(3, |_| vec![v, 0.0]);
        let ds = Dataset::from_samples(vec![
            LabeledSample::new("a0", s(0.0), "A"),
            LabeledSample::new("a1", s(0.1), "A"),
            LabeledSample::new("b0", s(5.0), "B"),
            LabeledSample::new("b1", s(5.1), "B"),
        ])
        .unwrap();
        let out = train(&ds, &LearnConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations_run, 1);
        assert_eq!(out.loss_trace, vec![0.0]);
        assert_eq!(out.metric, MetricMatrix::identity(2));
    }

    fn toy_scaled(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let small = Normal::new(0.0, 0.05).unwrap();
        let mut samples = Vec::new();
        for i in 0..40 {
            let (label, level) = if i % 2 == 0 { ("A", 0.15) } else { ("B", -0.15) };
            let series = rows(6, |_| vec![level + small.sample(&mut rng), noise.sample(&mut rng)]);
            samples.push(LabeledSample::new(format!("s{i}"), series, label));
        }
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn learns_to_weight_informative_channel() {
        let ds = toy_scaled(21);
        let out = train(&ds, &LearnConfig { rng_seed: 4, ..LearnConfig::default() }).unwrap();
        let m = out.metric.matrix();
        assert!(out.updates_applied > 0);
        assert!(m[(0, 0)] / m[(1, 1)] > 1.0, "metric {m}");
        assert!(out.loss_trace.last().unwrap() <= out.loss_trace.first().unwrap());
        assert!(out.metric.min_eigenvalue() >= -1e-9);
        // Training points of the two classes become closer within class.
        let a = ds.samples()[0].series.row(0);
        let b = ds.samples()[1].series.row(0);
        assert!(mahalanobis_dist(&a, &b, &out.metric).unwrap() >= 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_scaled(8);
        let cfg = LearnConfig { rng_seed: 17, max_outer: 5, ..LearnConfig::default() };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.metric, b.metric);
    }

    #[test]
    fn config_validation() {
        let bad = [
            LearnConfig { margin_rho: 0.0, ..LearnConfig::default() },
            LearnConfig { lambda_scale: 1.5, ..LearnConfig::default() },
            LearnConfig { max_outer: 0, ..LearnConfig::default() },
            LearnConfig { max_inner: Some(0), ..LearnConfig::default() },
            LearnConfig { row_stride: 0, ..LearnConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        let ds = Dataset::from_samples(vec![]).unwrap();
        assert!(train(&ds, &LearnConfig::default()).is_err());
    }

    #[test]
    fn unequal_lengths_rejected() {
        let ds = Dataset::from_samples(vec![
            LabeledSample::new("a", rows(2, |_| vec![0.0]), "A"),
            LabeledSample::new("b", rows(3, |_| vec![0.0]), "B"),
        ])
        .unwrap();
        assert!(matches!(train(&ds, &LearnConfig::default()), Err(Error::LengthMismatch { .. })));
    }
}
