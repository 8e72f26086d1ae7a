mod common;

use common::criteria::*;

#[test]
fn reports_match_golden_files() {
    println!("{}", c8_report_schema().unwrap());
}

#[test]
fn report_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(common::dirfuzz_bin())
        .args(["report", "--dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
