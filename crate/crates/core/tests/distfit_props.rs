use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use surflink::distfit::{default_levels, ecdf, fit_line, histogram, quantile_map};

#[test]
fn normal_histogram_matches_bin_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2018);
    let n = 10_000;
    let values: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let h = histogram(&values, 50).unwrap();
    let phi = Normal::new(0.0, 1.0).unwrap();
    let bins = h.counts.len();
    for k in 0..bins {
        let p = phi.cdf(h.edges[k + 1]) - phi.cdf(h.edges[k]);
        let expected = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        // the end bins always hold the sample minimum or maximum
        let allowance = if k == 0 || k + 1 == bins { 1.0 } else { 0.0 };
        let diff = (h.counts[k] as f64 - expected).abs();
        assert!(
            diff <= 5.0 * sd + allowance,
            "bin {k}: {} vs {expected:.1}",
            h.counts[k]
        );
    }
}

#[test]
fn uniform_quantile_slope_is_ratio_of_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (2.0, 7.0);
    let x: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..a)).collect();
    let y: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..b)).collect();
    let fit = quantile_map(&ecdf(&x).unwrap(), &ecdf(&y).unwrap(), &default_levels())
        .unwrap()
        .linearity_score()
        .unwrap();
    assert!((fit.slope - b / a).abs() < 0.05 * b / a);
    assert!(fit.r_squared > 0.999);
}

#[test]
fn exponential_quantile_slope_is_rate_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lx, ly) = (3.0, 0.75);
    let x: Vec<f64> = Exp::new(lx)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let y: Vec<f64> = Exp::new(ly)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let fit = quantile_map(&ecdf(&x).unwrap(), &ecdf(&y).unwrap(), &default_levels())
        .unwrap()
        .linearity_score()
        .unwrap();
    let want = lx / ly;
    assert!((fit.slope - want).abs() < 0.05 * want, "slope {}", fit.slope);
}

#[test]
fn independent_scatter_has_low_r_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts: Vec<(f64, f64)> = (0..1000).map(|_| (rng.random(), rng.random())).collect();
    assert!(fit_line(&pts).unwrap().r_squared < 0.1);
}

proptest! {
    #[test]
    fn ecdf_is_monotone_in_unit_range(
        values in prop::collection::vec(-1e6f64..1e6, 1..200),
        probes in prop::collection::vec(-2e6f64..2e6, 1..50),
    ) {
        let f = ecdf(&values).unwrap();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for x in probes {
            let v = f.eval(x);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= prev);
            prev = v;
        }
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(f.eval(max), 1.0);
    }

    #[test]
    fn histogram_conserves_count(
        values in prop::collection::vec(-1e3f64..1e3, 1..500),
        bins in 1usize..64,
    ) {
        let h = histogram(&values, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
        prop_assert_eq!(h.total, values.len() as u64);
        prop_assert_eq!(h.edges.len(), bins + 1);
        for v in &values {
            let k = h.bin_of(*v).unwrap();
            prop_assert!(h.edges[k] <= *v);
            prop_assert!(*v < h.edges[k + 1] || k + 1 == bins);
        }
    }

    #[test]
    fn affine_copy_gives_affine_quantile_map(
        seed in any::<u64>(),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let fit = quantile_map(&ecdf(&x).unwrap(), &ecdf(&y).unwrap(), &default_levels())
            .unwrap()
            .linearity_score()
            .unwrap();
        prop_assert!((fit.slope - a).abs() <= 0.02 * a);
        prop_assert!((fit.intercept - b).abs() <= 0.02 * (1.0 + b.abs()));
        prop_assert!(fit.r_squared >= 0.98);
    }
}
