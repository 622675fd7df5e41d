mod common;

use statrs::distribution::{ContinuousCDF, Normal};
use tensorcast::calibration::{ratio_series, shapiro_lognormal_test, shapiro_wilk};

#[test]
fn shapiro_wilk_matches_frozen_reference() {
    for (index, n, w_ref, p_ref) in common::SHAPIRO_REFERENCE {
        let sample = common::shapiro_sample(index);
        assert_eq!(sample.len(), n);
        let (w, p) = shapiro_wilk(&sample).unwrap();
        assert!((w - w_ref).abs() <= 1e-3, "sample {index}: W {w} vs {w_ref}");
        assert!((p - p_ref).abs() <= 5e-3, "sample {index}: p {p} vs {p_ref}");
    }
}

#[test]
fn normal_quantile_grid_is_near_perfectly_normal() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 50;
    let grid: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64))
        .collect();
    let (w, p) = shapiro_wilk(&grid).unwrap();
    assert!((w - common::NORMAL_GRID_W).abs() <= 1e-3, "W {w}");
    assert!((p - common::NORMAL_GRID_P).abs() <= 5e-3, "p {p}");
}

#[test]
fn lognormal_test_runs_on_log_ratios() {
    // Ratios exp(z) for the normal grid: the log-ratios are the grid itself.
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut level = vec![1.0];
    for i in 1..=50 {
        let z = 0.1 * normal.inverse_cdf((i as f64 - 0.5) / 50.0);
        level.push(level.last().unwrap() * z.exp());
    }
    let ratios = ratio_series(&level, 1e-12).unwrap();
    let result = shapiro_lognormal_test(&ratios, 0.10).unwrap();
    assert_eq!(result.n, 50);
    assert!((result.w - common::NORMAL_GRID_W).abs() <= 1e-6);
    assert!(result.pass);
}

#[test]
fn standard_normal_fixture() {
    let phi = Normal::new(0.0, 1.0).unwrap().cdf(-0.1);
    assert!((phi - common::PHI_MINUS_0_1).abs() < 1e-12);
}
