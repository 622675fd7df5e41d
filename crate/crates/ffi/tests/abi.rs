use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use tensorcast::calibration::{calibrate_all, CalibrationConfig};
use tensorcast::stochastic::{simulate_coupled, SimConfig};
use tensorcast::{nncp_decompose, SolverConfig, Tensor3};
use tensorcast_ffi::*;

fn planted() -> (Vec<f64>, [usize; 3]) {
    let dims = [6, 5, 40];
    let t = Tensor3::from_fn(dims, |i, j, k| {
        let s = 1.0 + 0.3 * (k as f64 * 0.4).sin();
        (1.0 + i as f64) * (2.0 + j as f64) * s + if i < 3 && j < 2 { 4.0 } else { 0.0 }
    })
    .unwrap();
    (t.as_slice().to_vec(), dims)
}

#[test]
fn decompose_matches_the_core_solver() {
    let (data, [i, j, k]) = planted();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { tc_tensor_new(i, j, k, data.as_ptr(), data.len(), &mut t) }, TcStatus::Ok);

    let cfg = TcSolverConfig {
        rank: 2,
        epsilon: 0.0,
        max_iters: 300,
        seed: 4,
    };
    let mut f = ptr::null_mut();
    let mut summary = TcFitSummary::default();
    assert_eq!(unsafe { tc_decompose(t, cfg, &mut f, &mut summary) }, TcStatus::Ok);
    assert_eq!(summary.iterations, 300);

    let mut rank = 0;
    let mut dims = [0usize; 3];
    assert_eq!(unsafe { tc_factors_shape(f, &mut rank, dims.as_mut_ptr()) }, TcStatus::Ok);
    assert_eq!((rank, dims), (2, [i, j, k]));

    let core_cfg = SolverConfig {
        rank: 2,
        epsilon: 0.0,
        max_iters: 300,
        seed: 4,
        ..SolverConfig::default()
    };
    let tensor = Tensor3::new([i, j, k], data).unwrap();
    let (expected, trace) = nncp_decompose(&tensor, &core_cfg).unwrap();
    assert_eq!(summary.relative_error, trace.final_relative_error);

    let mut column = vec![0.0; k];
    for r in 1..=2 {
        assert_eq!(unsafe { tc_factors_time_factor(f, r, column.as_mut_ptr(), k) }, TcStatus::Ok);
        assert_eq!(column, expected.time_factor(r).unwrap());
    }
    assert_eq!(
        unsafe { tc_factors_time_factor(f, 1, column.as_mut_ptr(), k - 1) },
        TcStatus::Data
    );
    assert_eq!(
        unsafe { tc_factors_time_factor(f, 3, column.as_mut_ptr(), k) },
        TcStatus::Data
    );

    unsafe {
        tc_factors_free(f);
        tc_tensor_free(t);
        tc_tensor_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_maps_to_config_status() {
    let (data, [i, j, k]) = planted();
    let mut t = ptr::null_mut();
    unsafe { tc_tensor_new(i, j, k, data.as_ptr(), data.len(), &mut t) };
    let cfg = TcSolverConfig {
        rank: 0,
        ..tc_solver_config_default()
    };
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { tc_decompose(t, cfg, &mut f, ptr::null_mut()) }, TcStatus::Config);
    assert!(f.is_null());
    let msg = unsafe { CStr::from_ptr(tc_last_error_message()) }.to_str().unwrap();
    assert!(msg.contains("rank"), "{msg}");
    unsafe { tc_tensor_free(t) };
}

#[test]
fn negative_entries_are_rejected() {
    let data = [1.0, -1.0, 1.0, 1.0];
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { tc_tensor_new(2, 2, 1, data.as_ptr(), 4, &mut t) }, TcStatus::Data);
    assert!(t.is_null());
}

#[test]
fn calibrate_simulate_and_price_match_the_core() {
    let n = 60;
    let factor: Vec<f64> = (0..n).map(|k| 10.0 * (1.0 + 0.2 * (k as f64 * 0.7).sin())).collect();
    let rates: Vec<f64> = (0..n).map(|k| -0.001 + 0.002 * (k as f64 * 0.3).cos()).collect();

    let mut params = TcModelParams {
        sigma_s: 0.0,
        lambda: 0.0,
        kappa: 0.0,
        sigma_mu: 0.0,
        rho: 0.0,
        s0: 0.0,
        mu0: 0.0,
    };
    let s = unsafe { tc_calibrate(factor.as_ptr(), rates.as_ptr(), n, 1.0, &mut params) };
    assert_eq!(s, TcStatus::Ok);
    let core = calibrate_all(&factor, &rates, &CalibrationConfig::default()).unwrap();
    assert_eq!(params, core.into());

    let mut terminals = vec![0.0; 2000];
    let mut absorbed = usize::MAX;
    let s = unsafe { tc_simulate(params, 2000, 5, 1.0, 11, terminals.as_mut_ptr(), &mut absorbed) };
    assert_eq!(s, TcStatus::Ok);
    let cfg = SimConfig {
        n_paths: 2000,
        n_steps: 5,
        dt: 1.0,
        seed: 11,
        ..SimConfig::default()
    };
    let bundle = simulate_coupled(&core, &cfg).unwrap();
    assert_eq!(terminals, bundle.terminals);
    assert_eq!(absorbed, bundle.absorbed);

    let (mut value, mut se) = (f64::NAN, f64::NAN);
    let s = unsafe { tc_digital_value(terminals.as_ptr(), 2000, params.s0, &mut value, &mut se) };
    assert_eq!(s, TcStatus::Ok);
    let above = terminals.iter().filter(|&&v| v >= params.s0).count() as f64 / 2000.0;
    assert_eq!(value, above);
    assert!(se > 0.0 && se < 0.02);
}

#[test]
fn short_series_is_a_numerical_failure() {
    let factor = [1.0, 1.1];
    let rates = [0.0, 0.001];
    let mut p = std::mem::MaybeUninit::<TcModelParams>::uninit();
    let s = unsafe { tc_calibrate(factor.as_ptr(), rates.as_ptr(), 2, 1.0, p.as_mut_ptr()) };
    assert_ne!(s, TcStatus::Ok);
    assert!(!tc_last_error_message().is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tensorcast.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "tc_last_error_message",
        "tc_solver_config_default",
        "tc_tensor_new",
        "tc_tensor_free",
        "tc_decompose",
        "tc_factors_free",
        "tc_factors_shape",
        "tc_factors_time_factor",
        "tc_calibrate",
        "tc_simulate",
        "tc_digital_value",
    ] {
        assert!(text.contains(&format!("{symbol}(")), "{symbol} missing from header");
    }
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
