// SPDX-License-Identifier: Apache-2.0

//! The `fopsim` binary end to end: exit status, output placement, formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fopsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fopsim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FOPSIM_OUT")
        .output()
        .expect("binary runs")
}

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/nat_rotation.toml")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn table4_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["table4"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("table4.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "table4");
    assert_eq!(report["passed"], true);
    assert!(stdout(&o).starts_with("PASS"));
}

#[test]
fn table5_csv_has_header_first() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["--format", "csv", "--trials", "100", "table5"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv = fs::read_to_string(dir.path().join("table5.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "kind,name,measured,reference,abs_delta,rel_delta,tolerance,pass,detail"
    );
    assert!(!dir.path().join("table5.json").exists());
}

#[test]
fn environment_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fopsim"))
        .current_dir(dir.path())
        .env("FOPSIM_OUT", dir.path().join("from-env"))
        .arg("table4")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("from-env/table4.json").exists());
}

#[test]
fn privacy_cell_writes_capture_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["privacy", "--cell", "fop:nat_rotation"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for ext in ["fopcap", "host.jsonl", "labels.json"] {
        assert!(dir.path().join(format!("privacy/fop-nat_rotation.{ext}")).exists(), "{ext}");
    }
}

#[test]
fn unknown_cell_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["privacy", "--cell", "fop:teleport"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("teleport"), "{}", stderr(&o));
}

#[test]
fn bundled_config_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["run", bundled().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "version = 1\nseed = 1\n\n[table5]\nrtt = 60\n").unwrap();
    let o = fopsim(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("table5.rtt") && err.contains("line 5"), "{err}");
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fopsim(dir.path(), &["run", "no-such-file.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled()).unwrap();
    let inverted = "check = \"issuance_chain\"\nvariant = \"tfo\"\npresent = false";
    let text = text.replace("check = \"issuance_chain\"\nvariant = \"tfo\"", inverted);
    assert!(text.contains(inverted));
    let path = dir.path().join("inverted.toml");
    fs::write(&path, text).unwrap();
    let o = fopsim(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("FAIL run.tfo.issuance_chain"), "{}", stdout(&o));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "9", "privacy", "--cell", "tfo:nat_rotation"];
    assert_eq!(fopsim(a.path(), &args).status.code(), Some(0));
    assert_eq!(fopsim(b.path(), &args).status.code(), Some(0));
    for name in ["privacy.json", "privacy/tfo-nat_rotation.fopcap", "privacy/tfo-nat_rotation.host.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
