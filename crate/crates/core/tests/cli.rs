use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn kernel(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../kernels").join(name)
}

fn imitatio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imitatio")).args(args).output().unwrap()
}

fn with_kernel(sub: &str, name: &str, rest: &[&str]) -> Output {
    let k = kernel(name);
    let mut args = vec![sub, k.to_str().unwrap()];
    args.extend_from_slice(rest);
    imitatio(&args)
}

fn json(out: &[u8]) -> Value {
    serde_json::from_slice(out).unwrap()
}

#[test]
fn analyze_reports() {
    let out = with_kernel("analyze", "k_unique.json", &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out.stdout);
    assert_eq!(r["verdict"], "Unique");
    assert_eq!(r["invariant"]["law"][0]["weight"], 0.5);
    assert_eq!(r["invariant"]["law"][1]["weight"], 0.5);
    assert_eq!(r["doeblin_certificate"]["n0_bar"], 2);

    let r = json(&with_kernel("analyze", "k_periodic.json", &[]).stdout);
    assert_eq!(r["verdict"], "NonUniquePeriodic");
    assert_eq!(r["chain_period"], 2);
    assert_eq!(r["periodic_partition"], serde_json::json!([["1"], ["2"]]));
    assert!(r["doeblin_certificate"].is_null());

    let r = json(&with_kernel("analyze", "weather.json", &[]).stdout);
    assert_eq!(r["invariant"]["law"][2]["state"], "rain");

    let bad = with_kernel("analyze", "bad_rows.json", &[]);
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8(bad.stderr).unwrap();
    assert!(msg.contains("row 1 sums to 1.2") && msg.contains("θ sums to 0.9"), "{msg}");

    assert_eq!(imitatio(&["analyze", "/no/such/kernel.json"]).status.code(), Some(3));
}

#[test]
fn analyze_needs_weights_only_for_the_invariant_of_several_classes() {
    let r = json(&with_kernel("analyze", "all_identity.json", &[]).stdout);
    assert_eq!(r["verdict"], "NonUniqueMultipleClasses");
    assert!(r["invariant"].is_null());
    let r = json(&with_kernel("analyze", "all_identity.json", &["--invariant-weights", "0.25,0.75"]).stdout);
    assert_eq!(r["invariant"]["law"][1]["weight"], 0.75);
}

#[test]
fn sample_shape_and_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = with_kernel(
        "sample",
        "k_unique.json",
        &[
            "--window",
            "0..1",
            "--algorithm",
            "cftp",
            "--replicas",
            "100000",
            "--seed",
            "7",
            "--out",
            csv.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replica,site,state"));
    assert_eq!(lines.clone().count(), 200_000);
    assert!(lines.next().unwrap().starts_with("0,0,"));
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("99999,1,"));
    let diag = json(&std::fs::read(dir.path().join("s.csv.diag.json")).unwrap());
    assert_eq!(diag["algorithm"], "cftp");
    assert_eq!(diag["seed"], 7);

    let out = with_kernel("sample", "k_unique.json", &["--window", "0..1", "--algorithm", "eps"]);
    assert_eq!(out.status.code(), Some(3));

    let out =
        with_kernel("sample", "power_law_1_2.json", &["--window", "0..1", "--algorithm", "cftp", "--replicas", "5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("eps"));

    let out = with_kernel(
        "sample",
        "power_law_1_2.json",
        &["--window", "0..1", "--algorithm", "eps", "--threshold", "-200", "--replicas", "50"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 101);

    let out = with_kernel("sample", "k_periodic.json", &["--window", "0..1", "--algorithm", "doeblin"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sample_labels_and_step_cap() {
    let out = with_kernel("sample", "weather.json", &["--window", "-2..0", "--algorithm", "cftp", "--replicas", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| ["sun", "cloud", "rain"].contains(&l.rsplit(',').next().unwrap())));

    let k = kernel("weather.json");
    let out = Command::new(env!("CARGO_BIN_EXE_imitatio"))
        .args(["sample", k.to_str().unwrap(), "--window", "0..20", "--algorithm", "cftp", "--replicas", "20"])
        .env("IMITATIO_STEP_CAP", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("step budget"));
}

#[test]
fn validate_exit_codes() {
    let out = with_kernel("validate", "k_unique.json", &["--window", "0..1", "--replicas", "100000", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json(&out.stdout)["passed"], true);

    assert_eq!(with_kernel("validate", "k_periodic.json", &["--replicas", "100"]).status.code(), Some(3));

    let out = with_kernel("validate", "k_unique.json", &["--replicas", "1000"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out.stdout)["underpowered"], true);
}

#[test]
fn walks_hit_fractions() {
    let out = with_kernel("walks", "k_unique.json", &["--distance", "1", "--horizon", "100000", "--replicas", "10000"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("replica,start_distance,hit_step_or_-1"));
    let summary = json(&out.stderr);
    assert!(summary["hit_fraction"].as_f64().unwrap() > 0.999);

    let out = with_kernel("walks", "power_law_1_2.json", &["--horizon", "10000", "--replicas", "400"]);
    let summary = json(&out.stderr);
    let f = summary["hit_fraction"].as_f64().unwrap();
    assert!(f < 0.9, "{f}");
    assert!(summary.get("verdict").is_none());
    assert!(String::from_utf8(out.stdout).unwrap().lines().skip(1).any(|l| l.ends_with(",-1")));

    let out = with_kernel("walks", "weather.json", &["--window", "0..3", "--threshold", "-10", "--replicas", "200"]);
    let summary = json(&out.stderr);
    assert_eq!(summary["s_hat_tail"]["heuristic"], true);

    assert_eq!(with_kernel("walks", "k_unique.json", &["--replicas", "0"]).status.code(), Some(3));
}
