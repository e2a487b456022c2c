use nalgebra::DMatrix;
use oscloc_core::dtw::oracle::enumerate_paths_oracle;
use oscloc_core::dtw::{dtw_cost, dtw_distance, dtw_distance_with, path_cost, DtwOptions};
use oscloc_core::learning::{logdet_divergence, max_feasible_lambda, update_metric};
use oscloc_core::mts::{mahalanobis_dist, sync_series_dist};
use oscloc_core::{MTSeries, MetricMatrix};
use proptest::prelude::*;

fn series(p: usize, rows: Vec<f64>) -> MTSeries {
    let h = rows.len() / p;
    MTSeries::new(DMatrix::from_row_slice(h, p, &rows[..h * p]), 25.0, (0..p).map(|j| format!("c{j}")).collect(), 0.0).unwrap()
}

/// `B Bᵀ + εI` from a flat slice; PSD with a controlled floor.
fn psd(p: usize, entries: &[f64], floor: f64) -> MetricMatrix {
    let b = DMatrix::from_row_slice(p, p, &entries[..p * p]);
    let m = &b * b.transpose() + DMatrix::identity(p, p) * floor;
    MetricMatrix::new((&m + m.transpose()) * 0.5).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

fn pair_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=6, 1usize..=6).prop_flat_map(|(p, m, n)| {
        (Just(p), Just(m), Just(n), values(m * p), values(n * p), values(p * p))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dtw_matches_path_enumeration((p, m, n, a, b, l) in pair_strategy()) {
        let (a, b) = (series(p, a), series(p, b));
        let metric = psd(p, &l, 0.0);
        let exhaustive = enumerate_paths_oracle(m, n)
            .unwrap()
            .iter()
            .map(|path| {
                path.pairs()
                    .iter()
                    .map(|&(i, k)| mahalanobis_dist(&a.row(i), &b.row(k), &metric).unwrap())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let r = dtw_distance(&a, &b, &metric).unwrap();
        prop_assert!((r.distance - exhaustive).abs() <= 1e-10 * exhaustive.max(1.0));
        r.path.validate(m, n).unwrap();
        let along = path_cost(&a, &b, &metric, &r.path).unwrap();
        prop_assert!((along - r.distance).abs() <= 1e-10 * along.max(1.0));
        let rolled = dtw_cost(&a, &b, &metric, DtwOptions::default()).unwrap();
        prop_assert!((rolled - r.distance).abs() <= 1e-10 * rolled.max(1.0));
    }

    #[test]
    fn dtw_symmetric_and_zero_on_self((p, _m, _n, a, b, l) in pair_strategy()) {
        let (a, b) = (series(p, a), series(p, b));
        let metric = psd(p, &l, 1e-3);
        let ab = dtw_distance(&a, &b, &metric).unwrap().distance;
        let ba = dtw_distance(&b, &a, &metric).unwrap().distance;
        prop_assert!((ab - ba).abs() <= 1e-10 * ab.max(1.0));
        prop_assert_eq!(dtw_distance(&a, &a, &metric).unwrap().distance, 0.0);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn dtw_never_exceeds_lockstep(p in 1usize..=3, h in 1usize..=8, seed in values(64), l in values(9)) {
        let a = series(p, seed[..h * p].to_vec());
        let b = series(p, seed[32..32 + h * p].to_vec());
        let metric = psd(p, &l, 0.0);
        let lock = sync_series_dist(&a, &b, &metric).unwrap();
        let rows: f64 = (0..h).map(|i| mahalanobis_dist(&a.row(i), &b.row(i), &metric).unwrap()).sum();
        prop_assert!((lock - rows).abs() <= 1e-12 * lock.max(1.0));
        prop_assert!(dtw_distance(&a, &b, &metric).unwrap().distance <= lock + 1e-12);
    }

    #[test]
    fn subsequence_never_exceeds_full((p, _m, _n, a, b, l) in pair_strategy()) {
        let (a, b) = (series(p, a), series(p, b));
        let metric = psd(p, &l, 0.0);
        let opts = DtwOptions { subsequence: true, ..Default::default() };
        let open = dtw_distance_with(&a, &b, &metric, opts).unwrap();
        let full = dtw_distance(&a, &b, &metric).unwrap().distance;
        prop_assert!(open.distance <= full + 1e-12);
        open.path.validate_subsequence(a.len(), b.len()).unwrap();
        let rolled = dtw_cost(&a, &b, &metric, opts).unwrap();
        prop_assert!((rolled - open.distance).abs() <= 1e-10 * rolled.max(1.0));
    }

    #[test]
    fn woodbury_matches_direct_inverse(
        p in 1usize..=6,
        rows in 1usize..=5,
        m_entries in values(36),
        p_entries in values(30),
        q_entries in values(30),
        frac in 0.0..0.9f64,
    ) {
        let metric = psd(p, &m_entries, 0.5);
        let pd = DMatrix::from_row_slice(rows, p, &p_entries[..rows * p]);
        let qd = DMatrix::from_row_slice(rows, p, &q_entries[..rows * p]);
        let bar = max_feasible_lambda(&metric, &pd, &qd).unwrap();
        prop_assume!(bar < 1e5);
        let lambda = frac * bar;
        let inv = metric.matrix().clone().try_inverse().unwrap();
        let target = (inv + (pd.transpose() * &pd - qd.transpose() * &qd) * lambda).try_inverse().unwrap();
        let updated = update_metric(&metric, &pd, &qd, lambda).unwrap();
        let err = (updated.matrix() - &target).norm() / target.norm();
        prop_assert!(err <= 1e-8, "relative error {err:e}");
        prop_assert!(updated.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn logdet_is_nonnegative(p in 1usize..=6, a in values(36), b in values(36)) {
        let a = psd(p, &a, 0.1);
        let b = psd(p, &b, 0.1);
        prop_assert!(logdet_divergence(&a, &b).unwrap() >= -1e-10);
        prop_assert!(logdet_divergence(&a, &a).unwrap().abs() <= 1e-10);
    }
}
