//! Invariants that hold for every input, checked on random series.

use covcusum::cpe;
use covcusum::cusum::{self, WeightFunction};
use covcusum::dist;
use covcusum::io;
use covcusum::linproc::Series;
use covcusum::lrv::{self, KernelSpec};
use covcusum::projections::ProjectionPair;
use proptest::prelude::*;

fn series(max_n: usize, max_d: usize) -> impl Strategy<Value = Series> {
    (3..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| Series::new(n, d, v).unwrap())
    })
}

fn uniform_pair(d: usize) -> ProjectionPair {
    ProjectionPair::symmetric(vec![1.0 / d as f64; d]).unwrap()
}

fn reversed(s: &Series) -> Series {
    let mut rows: Vec<Vec<f64>> = s.rows().map(|r| r.to_vec()).collect();
    rows.reverse();
    Series::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn csv_roundtrip_is_exact(s in series(30, 4)) {
        let mut buf = Vec::new();
        io::write_series(&s, &mut buf).unwrap();
        prop_assert_eq!(io::read_series(&buf[..]).unwrap(), s);
    }

    #[test]
    fn statistic_is_invariant_under_time_reversal(s in series(40, 3), beta in 0.0..0.49f64) {
        let pair = uniform_pair(s.dim());
        let g = WeightFunction::power(beta).unwrap();
        let a = cusum::cusum(&s, &pair, &g, false).unwrap().statistic;
        let b = cusum::cusum(&reversed(&s), &pair, &g, false).unwrap().statistic;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn weighting_never_lowers_the_trajectory(s in series(40, 3), beta in 0.0..0.49f64) {
        let pair = uniform_pair(s.dim());
        let plain = cusum::cusum(&s, &pair, &WeightFunction::None, false).unwrap();
        let weighted = cusum::cusum(&s, &pair, &WeightFunction::power(beta).unwrap(), false).unwrap();
        for (p, w) in plain.trajectory.iter().zip(&weighted.trajectory) {
            prop_assert!(*w >= *p * (1.0 - 1e-12));
        }
    }

    #[test]
    fn argmax_attains_the_statistic(s in series(40, 3)) {
        let r = cusum::cusum(&s, &uniform_pair(s.dim()), &WeightFunction::None, false).unwrap();
        prop_assert_eq!(r.trajectory[r.argmax_k - 1], r.statistic);
        prop_assert!(r.trajectory[..r.argmax_k - 1].iter().all(|&x| x < r.statistic));
    }

    #[test]
    fn stopped_rule_bounds(n in 4usize..10_000, frac in 0.0..1.0f64) {
        let tau_hat = 1 + ((n - 2) as f64 * frac) as usize;
        let t = cpe::stopped_rule(tau_hat, n);
        prop_assert!(t <= n);
        prop_assert!(t >= n / 4);
        prop_assert!(t >= tau_hat);
    }

    #[test]
    fn bartlett_estimate_is_nonnegative(s in series(60, 3), m in 0usize..8) {
        prop_assume!(m < s.len());
        let est = lrv::alpha2_hat(&s, &uniform_pair(s.dim()), 1.0, &KernelSpec::bartlett(m)).unwrap();
        prop_assert!(est.raw >= -1e-9 * (1.0 + est.raw.abs()));
        prop_assert!(est.value >= lrv::VARIANCE_FLOOR);
    }

    #[test]
    fn kolmogorov_quantile_inverts_cdf(p in 0.01..0.999f64) {
        let z = dist::kolmogorov_quantile(p).unwrap();
        prop_assert!((dist::kolmogorov_cdf(z) - p).abs() < 1e-9);
    }

    #[test]
    fn empirical_quantile_is_a_sample_point(mut xs in prop::collection::vec(-10.0..10.0f64, 1..50), p in 0.001..0.999f64) {
        xs.sort_by(f64::total_cmp);
        let q = dist::empirical_quantile(&xs, p).unwrap();
        prop_assert!(xs.contains(&q));
        let below = xs.iter().filter(|&&x| x <= q).count() as f64;
        prop_assert!(below >= p * xs.len() as f64 - 1e-9);
    }
}
