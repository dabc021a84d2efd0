use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tensortomo_cli::{validate_config, ConfigError};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tensortomo"))
}

fn run_with(dir: &Path, command: &str, config: &str, extra: &[&str]) -> (i32, PathBuf) {
    let cfg = dir.join("config.txt");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status =
        bin().arg(command).arg("--config").arg(&cfg).arg("--out").arg(&out).args(extra).output().unwrap().status;
    (status.code().unwrap(), out)
}

fn read_csv(out: &Path, prefix: &str) -> Vec<csv::StringRecord> {
    let path = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with(prefix) && name.ends_with(".csv")
        })
        .unwrap_or_else(|| panic!("no {prefix}*.csv in {}", out.display()));
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().clone();
    std::iter::once(header).chain(reader.records().map(Result::unwrap)).collect()
}

fn column(rows: &[csv::StringRecord], name: &str) -> Vec<String> {
    let idx = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[idx].to_string()).collect()
}

#[test]
fn certify_euclidean_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_with(dir.path(), "certify", "experiment = certify\nmetric.kind = euclidean\n", &[]);
    assert_eq!(code, 0);
    let rows = read_csv(&out, "certify_");
    assert_eq!(column(&rows, "conjugate_point_found"), ["false"]);
    assert_eq!(column(&rows, "simple"), ["true"]);
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn forward_of_metric_gives_chord_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let config = "experiment = forward\nfield.kind = metric\ngrid.h = 0.03125\nfan.points = 16\nfan.directions = 8\n";
    let (code, out) = run_with(dir.path(), "forward", config, &[]);
    assert_eq!(code, 0);
    let rows = read_csv(&out, "forward_");
    let num = |c: &str| column(&rows, c).iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>();
    let (x1, x2, o1, o2, value) = (num("x1"), num("x2"), num("omega1"), num("omega2"), num("value"));
    assert_eq!(value.len(), 16 * 8);
    for i in 0..value.len() {
        let chord = -2.0 * (x1[i] * o1[i] + x2[i] * o2[i]);
        assert!((value[i] - chord).abs() < 1e-4, "{} vs {chord}", value[i]);
    }
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = run_with(dir.path(), "certify", "experiment = certify\n", &[]);
    let rows = read_csv(&out, "certify_");
    let v = &column(&rows, "min_jacobi")[0];
    let mantissa = v.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{v}");
}

#[test]
fn golden_stability_config_round_trips() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples/stability.conf");
    let text = fs::read_to_string(path).unwrap();
    let config = validate_config(&text).unwrap();
    assert_eq!(config.ensemble_size, 50);
    assert_eq!(config.seed, 7);
    assert_eq!(config.h, 1.0 / 64.0);
    let again = validate_config(&config.to_text()).unwrap();
    assert_eq!(again, config);
    assert_eq!(again.to_text(), config.to_text());
}

#[test]
fn every_example_config_parses() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        validate_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_with(dir.path(), "certify", "experiment = certify\ngrid.hh = 0.1\n", &[]);
    assert_eq!(code, 2);
    let (code, _) = run_with(dir.path(), "certify", "experiment = certify\ngrid.h = -0.1\n", &[]);
    assert_eq!(code, 2);
    let (code, _) = run_with(dir.path(), "forward", "experiment = certify\n", &[]);
    assert_eq!(code, 2);
    assert!(matches!(validate_config("experiment = certify\ngrid.h = -0.1"), Err(ConfigError::Range { .. })));
}

#[test]
fn numerical_failures_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let config = "experiment = symbol\ngrid.h = 0.0625\nsymbol.probe_h = 0.0625\nsymbol.k_list = 4, 8\n";
    let out = bin()
        .args(["symbol", "--config"])
        .arg({
            let p = dir.path().join("c.txt");
            fs::write(&p, config).unwrap();
            p
        })
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnresolvedFrequency"));
}

#[test]
fn manifest_replays_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        "experiment = stability\ngrid.h = 0.0625\nensemble.size = 4\nnormal.directions = 64\nstability.levels = 1\n";
    let (code, out) = run_with(dir.path(), "stability", config, &["--seed", "3"]);
    assert_eq!(code, 0);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("ensemble.seed = 3"));
    let replay_dir = dir.path().join("replay");
    fs::create_dir_all(&replay_dir).unwrap();
    let (code, replay) = run_with(&replay_dir, "stability", &manifest, &[]);
    assert_eq!(code, 0);
    for entry in fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let twin = replay.join(path.file_name().unwrap());
            assert_eq!(fs::read(&path).unwrap(), fs::read(twin).unwrap(), "{}", path.display());
        }
    }
}
