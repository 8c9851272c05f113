use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn beamopt(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamopt"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = beamopt(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut out = vec![r.headers().unwrap().iter().map(String::from).collect()];
    for rec in r.records() {
        out.push(rec.unwrap().iter().map(String::from).collect());
    }
    out
}

#[test]
fn zf_solve_writes_min_sinr_and_powers() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &[
            "solve", "--method", "zf", "--k", "4", "--nt", "4", "--snr-db", "10", "--seed", "7",
        ],
    );
    let t = rows(&dir.path().join("solve.csv"));
    assert_eq!(
        t[0],
        [
            "instance",
            "method",
            "min_sinr",
            "min_sinr_db",
            "p_0",
            "p_1",
            "p_2",
            "p_3"
        ]
    );
    assert_eq!(t.len(), 2);
    assert_eq!(t[1][1], "zf");
    let sinr: f64 = t[1][2].parse().unwrap();
    assert!(sinr > 0.0);
    for p in &t[1][4..] {
        let p: f64 = p.parse().unwrap();
        assert!((0.0..=10.0 * (1.0 + 1e-9)).contains(&p));
    }
    assert!(!dir.path().join("duals.csv").exists());
    assert!(dir.path().join("solve.manifest.json").exists());
}

#[test]
fn certify_after_subgradient_has_nonnegative_gap() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &[
            "--seed",
            "3",
            "solve",
            "--method",
            "subgradient",
            "--count",
            "3",
        ],
    );
    ok(dir.path(), &["certify"]);
    let t = rows(&dir.path().join("certify.csv"));
    let col = t[0].iter().position(|h| h == "gap_db").unwrap();
    assert_eq!(t.len(), 4);
    for r in &t[1..] {
        let gap: f64 = r[col].parse().unwrap();
        assert!((-1e-6..0.5).contains(&gap), "gap {gap}");
    }
}

#[test]
fn certify_reuses_the_solve_dimensions() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["--k", "2", "--nt", "3", "solve", "--method", "rzf"],
    );
    ok(dir.path(), &["certify"]);
    let t = rows(&dir.path().join("certify.csv"));
    let gap: f64 = t[1][3].parse().unwrap();
    assert!(gap >= -1e-6);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        ok(
            d.path(),
            &[
                "--seed",
                "11",
                "solve",
                "--method",
                "subgradient",
                "--count",
                "4",
            ],
        );
    }
    for f in ["solve.csv", "beamformers.csv", "duals.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        beamopt(dir.path(), &["solve", "--method", "bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(beamopt(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        beamopt(dir.path(), &["solve", "--method", "nn-mu"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn certify_without_solve_fails() {
    let dir = TempDir::new().unwrap();
    let o = beamopt(dir.path(), &["certify"]);
    assert!(!o.status.success());
}

#[test]
fn gen_channels_and_dataset() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["--k", "2", "--nt", "2", "gen-channels", "--count", "3"],
    );
    assert!(rows(&dir.path().join("channels.csv")).len() > 3);

    ok(
        dir.path(),
        &[
            "--k",
            "2",
            "--nt",
            "3",
            "gen-dataset",
            "--count",
            "5",
            "--name",
            "d",
        ],
    );
    let text = fs::read_to_string(dir.path().join("d.ndj")).unwrap();
    let recs = beamopt::dataset::parse_records(text.as_bytes()).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r.k_active == 2 && r.nt_active == 3));

    let input = dir.path().join("d.ndj");
    ok(
        dir.path(),
        &[
            "augment",
            "--kmax",
            "4",
            "--ntmax",
            "4",
            "--input",
            input.to_str().unwrap(),
        ],
    );
    let text = fs::read_to_string(dir.path().join("augmented.ndj")).unwrap();
    let padded = beamopt::dataset::parse_records(text.as_bytes()).unwrap();
    assert_eq!(padded.len(), 5);
    for (p, r) in padded.iter().zip(&recs) {
        assert_eq!(p.k_container(), 4);
        assert_eq!(p.nt_container(), 4);
        assert_eq!(p.gamma_label, r.gamma_label);
    }
}

#[test]
fn dataset_split_writes_both_files() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &["--k", "2", "--nt", "2", "gen-dataset", "--split", "3:2"],
    );
    for (f, n) in [("dataset.train.ndj", 3), ("dataset.test.ndj", 2)] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), n, "{f}");
    }
}

#[test]
fn eval_power_sweep_lists_every_method() {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &[
            "eval", "--sweep", "power", "--values", "0,20", "--count", "4",
        ],
    );
    let t = rows(&dir.path().join("eval_power.csv"));
    assert_eq!(
        t[0],
        [
            "sweep",
            "value",
            "method",
            "mean_min_sinr",
            "mean_min_sinr_db"
        ]
    );
    let methods: Vec<&str> = t[1..].iter().map(|r| r[2].as_str()).collect();
    for m in ["subgradient", "zf", "rzf", "dual_bound"] {
        assert_eq!(methods.iter().filter(|&&x| x == m).count(), 2, "{m}");
    }
}

#[test]
fn simulate_stale_with_small_scenario() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("s.json");
    fs::write(
        &scenario,
        r#"{
  "evolution": {"correlation": 0.999, "step_seconds": 0.001},
  "latencies": [{"method": "learned", "seconds": 0.005}, {"method": "zf", "seconds": 0.0002}],
  "packets": 20,
  "symbols_per_packet": 16,
  "tx_power_gains_db": [0.0, 10.0]
}"#,
    )
    .unwrap();
    ok(
        dir.path(),
        &["simulate-stale", "--scenario", scenario.to_str().unwrap()],
    );
    let t = rows(&dir.path().join("stale.csv"));
    assert_eq!(
        t[0],
        ["method", "latency_s", "power_gain_db", "user", "ber"]
    );
    assert_eq!(t.len() - 1, 2 * 2 * 4);
    for r in &t[1..] {
        let b: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&b));
    }
}
