use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
n_lat = 4
n_lon = 8
channels = 2
K = 2
S = 1
d_h = 4
d_e = 2
hidden = 6
n_train = 24
n_val = 4
n_test = 120
lr = 0.001
";

fn hiflow(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    full.extend([
        "--config".into(),
        cfg.display().to_string(),
        "--workdir".into(),
        dir.display().to_string(),
    ]);
    Command::new(env!("CARGO_BIN_EXE_hiflow"))
        .args(&full)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hiflow(d, &["generate"]));
    for f in ["train.hfg", "val.hfg", "test.hfg", "manifest.txt"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    ok(&hiflow(d, &["train"]));
    let curve = fs::read_to_string(d.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 23);
    assert!(d.join("checkpoint.hfw").exists());

    ok(&hiflow(d, &["rollout", "--steps", "4", "--every", "1"]));
    let report = ok(&hiflow(d, &["evaluate", "--lead", "1", "4"]));
    assert!(report.starts_with("lead,lead_hours,variable,metric,value"));
    assert!(report.lines().filter(|l| !l.starts_with('#')).count() > 1);
    let first = fs::read(d.join("report.csv")).unwrap();
    ok(&hiflow(d, &["evaluate", "--lead", "1", "4"]));
    assert_eq!(first, fs::read(d.join("report.csv")).unwrap());

    ok(&hiflow(d, &["spectra", "--lead", "2"]));
    assert!(d.join("spectra/forecast_lead2_ch0.csv").exists());
    assert!(d.join("spectra/truth_lead2_ch1.csv").exists());

    let ext = ok(&hiflow(
        d,
        &["extremes", "--q", "0.01", "0.99", "--lead", "1"],
    ));
    assert!(ext.contains("q,lead,variable,metric,value"));

    // Beyond the forecast horizon is a contract error.
    assert_eq!(
        hiflow(d, &["evaluate", "--lead", "9"]).status.code(),
        Some(1)
    );
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(&hiflow(d, &["generate"]));
        ok(&hiflow(d, &["train"]));
        ok(&hiflow(
            d,
            &["rollout", "--steps", "3", "--init-index", "0", "5"],
        ));
        ok(&hiflow(d, &["evaluate", "--lead", "1", "3"]));
    }
    for f in [
        "data/test.hfg",
        "checkpoint.hfw",
        "loss_curve.csv",
        "forecasts/init_33.hfg",
        "report.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_step_rollout_writes_empty_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hiflow(d, &["generate"]));
    ok(&hiflow(d, &["train"]));
    ok(&hiflow(d, &["rollout", "--steps", "0"]));
    let bytes = fs::read(d.join("forecasts/init_28.hfg")).unwrap();
    let (h, data) = hiflow_core::data::decode_grid(&bytes).unwrap();
    assert_eq!(h.n_steps, 0);
    assert_eq!(data.len(), 0);
}

#[test]
fn ensemble_rollout_writes_members() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.cfg"),
        format!("{SMALL}ensemble = true\nsigma = 0.5\nd_z = 2\n"),
    )
    .unwrap();
    ok(&hiflow(d, &["generate"]));
    ok(&hiflow(d, &["train"]));
    ok(&hiflow(
        d,
        &[
            "rollout",
            "--steps",
            "2",
            "--members",
            "3",
            "--write-members",
        ],
    ));
    for j in 0..3 {
        assert!(d.join(format!("forecasts/init_28_member_{j}.hfg")).exists());
    }
    let table = ok(&hiflow(d, &["evaluate", "--lead", "2"]));
    assert!(table.contains("crps"));
}

#[test]
fn evaluate_without_forecasts_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hiflow(d, &["generate"]));
    assert_eq!(
        hiflow(d, &["evaluate", "--lead", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_inputs_and_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // No dataset yet.
    assert_eq!(hiflow(d, &["train"]).status.code(), Some(2));
    assert_eq!(hiflow(d, &["generate", "--bogus"]).status.code(), Some(1));
    ok(&hiflow(d, &["generate"]));
    // Members without a latent branch.
    ok(&hiflow(d, &["train"]));
    assert_eq!(
        hiflow(d, &["rollout", "--steps", "1", "--members", "2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        hiflow(d, &["rollout", "--steps", "1", "--init-index", "500"])
            .status
            .code(),
        Some(1)
    );

    fs::write(d.join("bad.cfg"), "K = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hiflow"))
        .args(["generate", "--config"])
        .arg(d.join("bad.cfg"))
        .arg("--workdir")
        .arg(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let help = Command::new(env!("CARGO_BIN_EXE_hiflow"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn cost_report_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(&hiflow(dir.path(), &["cost-report", "--k", "2", "3"]));
    assert!(table.contains("sweep,K=2,"));
    assert!(table.contains("sweep,K=3,"));
    assert!(dir.path().join("cost_report.csv").exists());
}
