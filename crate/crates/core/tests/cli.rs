use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tensorcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorcast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small(dir: &Path) -> Vec<String> {
    [
        "--output",
        dir.to_str().unwrap(),
        "--set",
        "generator.senders=20",
        "--set",
        "generator.receivers=25",
        "--set",
        "generator.transactions=20000",
        "--set",
        "simulation.n_paths=2000",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run(sub: &str, extra: &[String]) -> Output {
    let mut args = vec![sub];
    args.extend(extra.iter().map(String::as_str));
    tensorcast(&args)
}

#[test]
fn config_prints_effective_json_with_overrides() {
    let out = tensorcast(&["config", "--seed", "9", "--set", "solver.rank=3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["solver"]["rank"], 3);
}

#[test]
fn config_errors_exit_2() {
    for args in [
        &["config", "--set", "solver.rank=0"][..],
        &["config", "--set", "solver.no_such_field=1"][..],
        &["config", "--set", "novalue"][..],
        &["config", "--config", "/nonexistent/tensorcast.json"][..],
    ] {
        let out = tensorcast(args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn malformed_transactions_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let tx = dir.path().join("tx.csv");
    fs::write(&tx, "tx_id,sender,receiver,amount,timestamp\nt1,a,b,notanumber,1440000000\n").unwrap();
    let out = tensorcast(&[
        "ingest",
        "--output",
        dir.path().to_str().unwrap(),
        "--set",
        &format!("paths.transactions=\"{}\"", tx.display()),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_stage_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("decompose", &small(dir.path()));
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flat_rate_series_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let args = small(dir.path());
    assert_eq!(code(&run("generate", &args)), 0);

    let rates = dir.path().join("flat_rates.csv");
    fs::write(&rates, "date,rate\n2015-08-01,0.01\n2016-03-01,0.01\n").unwrap();
    let mut args = args;
    args.push("--set".into());
    args.push(format!("paths.transactions=\"{}\"", dir.path().join("transactions.csv").display()));
    args.push("--set".into());
    args.push(format!("paths.rates=\"{}\"", rates.display()));
    let out = run("run", &args);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rates"));
}

#[test]
fn staged_commands_match_run() {
    let staged = tempfile::tempdir().unwrap();
    let whole = tempfile::tempdir().unwrap();
    for sub in ["generate", "ingest", "decompose", "normality", "calibrate", "simulate", "evaluate"] {
        let out = run(sub, &small(staged.path()));
        assert_eq!(code(&out), 0, "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run("run", &small(whole.path()));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    for name in ["digital.csv", "params.csv", "factors.json", "summary.json"] {
        let a = fs::read(staged.path().join(name)).unwrap();
        let b = fs::read(whole.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between staged and one-shot runs");
    }
    let digital = fs::read_to_string(whole.path().join("digital.csv")).unwrap();
    assert!(digital.starts_with("# config_hash="));
}
