use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/toy.conf")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storage-arb"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_required_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "prices.dir = prices\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "stats",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("finance.countries"), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("finance.countries"));
}

#[test]
fn unknown_key_and_bad_flag_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "battery.colour = red\n").unwrap();
    assert_eq!(
        run(&["--config", conf.to_str().unwrap(), "report"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_upstream_output_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--config",
        toy().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "report",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("report stage"));
}

#[test]
fn pipeline_writes_outputs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let conf = toy();
    let o = run(&["--config", conf.to_str().unwrap(), "--out", out, "pipeline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "stats.csv",
        "capital_costs.csv",
        "finance.csv",
        "grid.csv",
        "regression.csv",
        "coefficients_npv.csv",
        "coefficients_irr.csv",
        "predictions_npv.csv",
        "lr_tests_irr.csv",
        "lmm_selfcheck.csv",
        "best_converter.csv",
        "activity.csv",
        "yearly/Ireland.json",
        "schedules/Spain.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let m = manifest(dir.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    assert!(m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["status"] == "ran"));

    let grid = fs::read(dir.path().join("grid.csv")).unwrap();
    fs::remove_file(dir.path().join("best_converter.csv")).unwrap();
    let o = run(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out,
        "pipeline",
        "--resume",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path());
    let status: Vec<&str> = m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["status"].as_str().unwrap())
        .collect();
    assert_eq!(
        status,
        ["resumed", "resumed", "resumed", "resumed", "resumed", "ran"]
    );
    assert_eq!(fs::read(dir.path().join("grid.csv")).unwrap(), grid);

    let o = run(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out,
        "--seed",
        "8",
        "pipeline",
        "--resume",
    ]);
    assert!(o.status.success());
    let m = manifest(dir.path());
    assert!(m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["status"] == "ran"));
}

#[test]
fn single_series_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let prices = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/prices/Spain.csv");
    let o = run(&[
        "--out",
        out,
        "stats",
        "--input",
        prices.to_str().unwrap(),
        "--zone",
        "Spain",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 2);
    assert!(stats.starts_with(
        "country,mean_price,sd_price,min_price,max_price,mean_gap,sd_gap,min_gap,max_gap"
    ));

    let conf = toy();
    let o = run(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out,
        "optimize",
        "--prices",
        prices.to_str().unwrap(),
        "--zone",
        "Spain",
        "--converter-mw",
        "2",
        "--mip-gap",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ledger = dir.path().join("yearly/Spain.json");
    let o = run(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out,
        "finance",
        "--ledger",
        ledger.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fin = fs::read_to_string(dir.path().join("finance.csv")).unwrap();
    assert_eq!(fin.lines().count(), 3);
    assert!(fin.lines().nth(1).unwrap().contains(",Spain,2,"));
}
