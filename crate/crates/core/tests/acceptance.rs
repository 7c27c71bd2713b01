//! One test per acceptance criterion; each prints a single pass/fail line.

use std::path::Path;
use std::process::Command;

use gwldp::verify::{self, data_files, write_determinism_inputs};

fn criterion(name: &str) {
    let r = verify::run_check(name).unwrap();
    println!(
        "criterion {:>2} {:<18} {} ({:.2}s) {}",
        r.criterion,
        r.name,
        if r.passed { "PASS" } else { "FAIL" },
        r.seconds,
        r.detail
    );
    assert!(r.passed, "criterion {} ({}) failed: {}", r.criterion, r.name, r.detail);
}

#[test]
fn criterion_01_geometric_closed_form() {
    criterion("ip");
}

#[test]
fn criterion_02_boundary_identity() {
    criterion("boundary");
}

#[test]
fn criterion_03_criticality_zero() {
    criterion("critical");
}

#[test]
fn criterion_04_corollary_equivalence() {
    criterion("corollary");
}

#[test]
fn criterion_05_empirical_identities() {
    criterion("empirical");
}

#[test]
fn criterion_06_conditional_law() {
    criterion("conditional");
}

#[test]
fn criterion_07_change_of_measure() {
    criterion("change-of-measure");
}

#[test]
fn criterion_08_infimum_identity() {
    criterion("infimum");
}

#[test]
fn criterion_09_decay_sanity() {
    criterion("decay");
}

#[test]
fn criterion_10_lln() {
    criterion("lln");
}

#[test]
fn criterion_11_repair() {
    criterion("repair");
}

fn run_binary(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_gwldp")).args(args).env("GWLDP_THREADS", threads).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn binary_outputs(dir: &Path, tag: &str, threads: &str) -> Vec<(String, Vec<u8>)> {
    let kernel = dir.join("kernel.json");
    let sim = dir.join(format!("sim_{tag}"));
    let est = dir.join(format!("est_{tag}"));
    let event = format!("ball:center={},radius=0.3", dir.join("center.csv").display());
    #[rustfmt::skip]
    run_binary(&["simulate", "--kernel", kernel.to_str().unwrap(), "--n", "30", "--samples", "40",
        "--seed", "1", "--out", sim.to_str().unwrap(), "--conditioned"], threads);
    #[rustfmt::skip]
    run_binary(&["estimate", "--kernel", kernel.to_str().unwrap(), "--event", &event, "--n-list", "3..6",
        "--samples", "5000", "--tilt", "auto", "--k", "3", "--seed", "2", "--out", est.to_str().unwrap()], threads);
    let mut files: Vec<_> = data_files(&sim).unwrap().into_iter().collect();
    files.extend(data_files(&est).unwrap().into_iter().map(|(k, v)| (format!("estimate/{k}"), v)));
    files
}

#[test]
fn criterion_12_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    write_determinism_inputs(tmp.path()).unwrap();
    let runs: Vec<_> = [("a1", "1"), ("a4", "4"), ("b1", "1"), ("b4", "4")]
        .iter()
        .map(|(tag, threads)| binary_outputs(tmp.path(), tag, threads))
        .collect();
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    println!(
        "criterion 12 determinism        {} {} data files, GWLDP_THREADS 1 and 4, two runs each",
        if identical { "PASS" } else { "FAIL" },
        runs[0].len()
    );
    assert!(identical);
    criterion("determinism");
}
