//! Dynamic time warping between multivariate series with a Mahalanobis
//! local distance.
//!
//! The accumulated cost follows the usual recurrence
//! `D(i,k) = d(i,k) + min(D(i−1,k−1), D(i−1,k), D(i,k−1))` with out-of-range
//! cells treated as `+∞`, so the first row and column accumulate along the
//! border. Distances are raw sums; no path-length normalisation is applied.
//!
//! [`DtwOptions::subsequence`] switches to open-ended alignment: the shorter
//! series is matched against the cheapest contiguous stretch of the longer
//! one instead of against all of it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mts::{clamp_distance, MTSeries, MetricMatrix};

/// Alignment between two series as 0-based `(i, k)` index pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPath(Vec<(usize, usize)>);

impl WarpPath {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self(pairs)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks boundary, continuity and monotonicity for series of lengths
    /// `m` and `n`, and that the length lies in `[max(m,n), m+n]`.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let pairs = &self.0;
        if pairs.first() != Some(&(0, 0)) {
            return Err(Error::invalid("warp path must start at (0, 0)"));
        }
        if m == 0 || n == 0 || pairs.last() != Some(&(m - 1, n - 1)) {
            return Err(Error::invalid(format!("warp path must end at ({}, {})", m.saturating_sub(1), n.saturating_sub(1))));
        }
        for w in pairs.windows(2) {
            let (di, dk) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if di > 1 || dk > 1 || (di == 0 && dk == 0) {
                return Err(Error::invalid(format!("invalid step {:?} -> {:?}", w[0], w[1])));
            }
        }
        if pairs.len() < m.max(n) || pairs.len() > m + n {
            return Err(Error::invalid(format!("warp path length {} out of range", pairs.len())));
        }
        Ok(())
    }
}

impl WarpPath {
    /// Like [`WarpPath::validate`] for a subsequence alignment: the shorter
    /// axis (`a` on ties) is covered end to end, the other may start and
    /// stop anywhere.
    pub fn validate_subsequence(&self, m: usize, n: usize) -> Result<()> {
        let (first, last) = match (self.0.first(), self.0.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::invalid("warp path is empty")),
        };
        let shifted: Vec<(usize, usize)> = if m <= n {
            self.0.iter().map(|&(i, k)| (i, k.wrapping_sub(first.1))).collect()
        } else {
            self.0.iter().map(|&(i, k)| (i.wrapping_sub(first.0), k)).collect()
        };
        let (sm, sn) = if m <= n {
            (m, last.1.wrapping_sub(first.1).wrapping_add(1))
        } else {
            (last.0.wrapping_sub(first.0).wrapping_add(1), n)
        };
        if last.0 >= m || last.1 >= n || sm > m || sn > n {
            return Err(Error::invalid("warp path leaves the table"));
        }
        WarpPath(shifted).validate(sm, sn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub distance: f64,
    pub path: WarpPath,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DtwOptions {
    /// Sakoe-Chiba band half-width. The effective band is widened to at least
    /// `|m − n|` so that the end cell stays reachable. `None` disables it.
    pub window: Option<usize>,
    /// Free start and end along the longer series (along `b` for equal
    /// lengths). Cannot be combined with `window`.
    pub subsequence: bool,
}

impl DtwOptions {
    pub fn validate(&self) -> Result<()> {
        if self.subsequence && self.window.is_some() {
            return Err(Error::invalid("a warping window cannot be combined with subsequence alignment"));
        }
        Ok(())
    }

    fn band(&self, m: usize, n: usize) -> usize {
        match self.window {
            Some(w) => w.max(m.abs_diff(n)),
            None => usize::MAX,
        }
    }
}

fn check(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix) -> Result<()> {
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

fn local_costs(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix) -> DMatrix<f64> {
    let p = a.channels();
    let ra = a.to_row_major();
    let rb = b.to_row_major();
    let mut diff = vec![0.0; p];
    DMatrix::from_fn(a.len(), b.len(), |i, k| {
        for (j, d) in diff.iter_mut().enumerate() {
            *d = ra[i * p + j] - rb[k * p + j];
        }
        metric.quad_form(&diff)
    })
}

/// DTW distance and optimal path with no warping window.
pub fn dtw_distance(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix) -> Result<DtwResult> {
    dtw_distance_with(a, b, metric, DtwOptions::default())
}

/// DTW distance and optimal path. The full `m × n` table is kept for
/// backtracking; ties prefer the diagonal predecessor, then the smaller
/// accumulated cost, then the vertical step.
pub fn dtw_distance_with(
    a: &MTSeries,
    b: &MTSeries,
    metric: &MetricMatrix,
    options: DtwOptions,
) -> Result<DtwResult> {
    check(a, b, metric)?;
    options.validate()?;
    if options.subsequence {
        return Ok(if a.len() <= b.len() {
            subsequence_table(&local_costs(a, b, metric))
        } else {
            let r = subsequence_table(&local_costs(b, a, metric));
            let pairs = r.path.pairs().iter().map(|&(k, i)| (i, k)).collect();
            DtwResult { distance: r.distance, path: WarpPath(pairs) }
        });
    }
    let (m, n) = (a.len(), b.len());
    let band = options.band(m, n);
    let cost = local_costs(a, b, metric);
    let mut acc = DMatrix::from_element(m, n, f64::INFINITY);
    for i in 0..m {
        for k in 0..n {
            if i.abs_diff(k) > band {
                continue;
            }
            let prev = if i == 0 && k == 0 {
                0.0
            } else {
                let diag = if i > 0 && k > 0 { acc[(i - 1, k - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1, k)] } else { f64::INFINITY };
                let left = if k > 0 { acc[(i, k - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[(i, k)] = cost[(i, k)] + prev;
        }
    }

    let mut pairs = vec![(m - 1, n - 1)];
    let (mut i, mut k) = (m - 1, n - 1);
    while i > 0 || k > 0 {
        (i, k) = if i == 0 {
            (0, k - 1)
        } else if k == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1, k - 1)];
            let up = acc[(i - 1, k)];
            let left = acc[(i, k - 1)];
            if diag <= up && diag <= left {
                (i - 1, k - 1)
            } else if up <= left {
                (i - 1, k)
            } else {
                (i, k - 1)
            }
        };
        pairs.push((i, k));
    }
    pairs.reverse();
    let path = WarpPath(pairs);
    debug_assert!(path.validate(m, n).is_ok());
    Ok(DtwResult {
        distance: clamp_distance(acc[(m - 1, n - 1)]),
        path,
    })
}

/// Open-ended table for `m ≤ n`: any column may start row 0 and the path
/// ends at the cheapest cell of the last row.
fn subsequence_table(cost: &DMatrix<f64>) -> DtwResult {
    let (m, n) = cost.shape();
    let mut acc = DMatrix::from_element(m, n, f64::INFINITY);
    for k in 0..n {
        acc[(0, k)] = cost[(0, k)];
    }
    for i in 1..m {
        for k in 0..n {
            let diag = if k > 0 { acc[(i - 1, k - 1)] } else { f64::INFINITY };
            let left = if k > 0 { acc[(i, k - 1)] } else { f64::INFINITY };
            acc[(i, k)] = cost[(i, k)] + diag.min(acc[(i - 1, k)]).min(left);
        }
    }
    let mut end = 0;
    for k in 1..n {
        if acc[(m - 1, k)] < acc[(m - 1, end)] {
            end = k;
        }
    }
    let mut pairs = vec![(m - 1, end)];
    let (mut i, mut k) = (m - 1, end);
    while i > 0 {
        (i, k) = if k == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1, k - 1)];
            let up = acc[(i - 1, k)];
            let left = acc[(i, k - 1)];
            if diag <= up && diag <= left {
                (i - 1, k - 1)
            } else if up <= left {
                (i - 1, k)
            } else {
                (i, k - 1)
            }
        };
        pairs.push((i, k));
    }
    pairs.reverse();
    DtwResult {
        distance: clamp_distance(acc[(m - 1, end)]),
        path: WarpPath(pairs),
    }
}

/// Cost of a given alignment: the sum of local distances over its pairs.
pub fn path_cost(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix, path: &WarpPath) -> Result<f64> {
    check(a, b, metric)?;
    path.validate(a.len(), b.len())
        .or_else(|_| path.validate_subsequence(a.len(), b.len()))?;
    path.pairs()
        .iter()
        .map(|&(i, k)| crate::mts::mahalanobis_dist(&a.row(i), &b.row(k), metric))
        .sum()
}

/// A series mapped through the metric factor `L` (`M = L Lᵀ`), stored row-major,
/// so that the local distance becomes a squared Euclidean distance.
#[derive(Debug, Clone)]
pub struct ProjectedSeries {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl ProjectedSeries {
    pub fn new(series: &MTSeries, metric: &MetricMatrix) -> Result<Self> {
        if series.channels() != metric.dim() {
            return Err(Error::invalid(format!(
                "series has {} channels, metric is {}x{}",
                series.channels(),
                metric.dim(),
                metric.dim()
            )));
        }
        Ok(Self::with_factor(series, &metric.factor()))
    }

    pub(crate) fn with_factor(series: &MTSeries, factor: &DMatrix<f64>) -> Self {
        let projected = series.values() * factor;
        let (rows, dim) = projected.shape();
        let mut data = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            data.extend(projected.row(i).iter());
        }
        Self { data, rows, dim }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DTW distance only, with two rolling rows instead of the full table.
pub fn dtw_cost_projected(a: &ProjectedSeries, b: &ProjectedSeries, options: DtwOptions) -> f64 {
    // Roll over the longer series so the buffers stay short.
    let (a, b) = if a.rows > b.rows || (a.rows == b.rows && !options.subsequence) {
        (a, b)
    } else {
        (b, a)
    };
    let (m, n) = (a.rows, b.rows);
    if options.subsequence {
        return subsequence_rolling(a, b);
    }
    let band = options.band(m, n);
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    for i in 0..m {
        let ra = a.row(i);
        let (lo, hi) = if band == usize::MAX {
            (0, n)
        } else {
            (i.saturating_sub(band), (i + band + 1).min(n))
        };
        cur.fill(f64::INFINITY);
        for k in lo..hi {
            let best = if i == 0 && k == 0 {
                0.0
            } else {
                let diag = if k > 0 { prev[k - 1] } else { f64::INFINITY };
                let left = if k > 0 { cur[k - 1] } else { f64::INFINITY };
                diag.min(prev[k]).min(left)
            };
            cur[k] = sq_dist(ra, b.row(k)) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    clamp_distance(prev[n - 1])
}

/// Rows of `long` are free to open and close the alignment of `short`.
fn subsequence_rolling(long: &ProjectedSeries, short: &ProjectedSeries) -> f64 {
    let n = short.rows;
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    let mut best_end = f64::INFINITY;
    for i in 0..long.rows {
        let ra = long.row(i);
        for k in 0..n {
            let best = if k == 0 {
                0.0
            } else {
                prev[k - 1].min(prev[k]).min(cur[k - 1])
            };
            cur[k] = sq_dist(ra, short.row(k)) + best;
        }
        best_end = best_end.min(cur[n - 1]);
        std::mem::swap(&mut prev, &mut cur);
    }
    clamp_distance(best_end)
}

/// DTW distance without the path.
pub fn dtw_cost(a: &MTSeries, b: &MTSeries, metric: &MetricMatrix, options: DtwOptions) -> Result<f64> {
    check(a, b, metric)?;
    let factor = metric.factor();
    Ok(dtw_cost_projected(
        &ProjectedSeries::with_factor(a, &factor),
        &ProjectedSeries::with_factor(b, &factor),
        options,
    ))
}

/// Exhaustive enumeration of warp paths, used as a test oracle for the DP.
pub mod oracle {
    use super::WarpPath;
    use crate::error::{Error, Result};

    /// Largest series length accepted by [`enumerate_paths_oracle`].
    pub const MAX_LEN: usize = 6;

    /// Every path from `(0,0)` to `(m−1,n−1)` made of unit right, down or
    /// diagonal steps.
    pub fn enumerate_paths_oracle(m: usize, n: usize) -> Result<Vec<WarpPath>> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("series lengths must be positive"));
        }
        if m > MAX_LEN || n > MAX_LEN {
            return Err(Error::invalid(format!(
                "path enumeration refused for {m}x{n}; limit is {MAX_LEN}x{MAX_LEN}"
            )));
        }
        let mut out = Vec::new();
        let mut stack = vec![(0, 0)];
        extend(m, n, &mut stack, &mut out);
        Ok(out)
    }

    fn extend(m: usize, n: usize, stack: &mut Vec<(usize, usize)>, out: &mut Vec<WarpPath>) {
        let (i, k) = *stack.last().unwrap();
        if (i, k) == (m - 1, n - 1) {
            out.push(WarpPath::new(stack.clone()));
            return;
        }
        for (di, dk) in [(1, 1), (1, 0), (0, 1)] {
            let next = (i + di, k + dk);
            if next.0 < m && next.1 < n {
                stack.push(next);
                extend(m, n, stack, out);
                stack.pop();
            }
        }
    }
}
