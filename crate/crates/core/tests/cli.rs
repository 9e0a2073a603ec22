//! End-to-end runs of the `diverse-prefs` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 8] = [
    "gen",
    "fit-single",
    "fit-mixture",
    "align-single",
    "align-maxmin",
    "verify-bounds",
    "sweep",
    "gridworld",
];

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/two_arm.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diverse-prefs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

#[test]
fn every_subcommand_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in SUBCOMMANDS {
        let (a, b) = (tmp.path().join(format!("{cmd}-a")), tmp.path().join(format!("{cmd}-b")));
        for dir in [&a, &b] {
            let o = run_in(cmd, &config(), dir, &[]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let ma = json(a.join("manifest.json"));
        let mb = json(b.join("manifest.json"));
        assert_eq!(ma["config_hash"], mb["config_hash"]);
        assert_eq!(ma["outputs"], mb["outputs"]);
        for f in ma["outputs"].as_array().unwrap() {
            let f = f.as_str().unwrap();
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{cmd}: {f} differs");
        }
    }
}

#[test]
fn staged_pipeline_reuses_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for cmd in ["gen", "fit-single", "align-single"] {
        assert!(run_in(cmd, &config(), &out, &[]).status.success());
    }
    let fresh = tmp.path().join("fresh");
    assert!(run_in("align-single", &config(), &fresh, &[]).status.success());
    assert_eq!(
        fs::read(out.join("align_single.json")).unwrap(),
        fs::read(fresh.join("align_single.json")).unwrap()
    );
}

#[test]
fn verify_bounds_holds_on_two_arm() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_in("verify-bounds", &config(), tmp.path(), &[]).status.success());
    let b = json(tmp.path().join("bounds.json"));
    assert_eq!(b["lemma1"]["holds_proof"], true);
    assert_eq!(b["theorem1"]["holds_proof"], true);
    assert!((b["theorem1"]["lhs"].as_f64().unwrap() - 0.2977).abs() < 1e-3);
}

#[test]
fn sweep_csv_shows_minority_degradation() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_in("sweep", &config(), tmp.path(), &["--ratios", "1,2,6,10"]).status.success());
    let mut rdr = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["ratio", "seed", "acc_total", "acc_majority", "acc_minority", "util_min_single", "util_min_maxmin"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 40);
    let mean = |ratio: &str| {
        let sel: Vec<f64> = rows.iter().filter(|r| &r[0] == ratio).map(|r| r[4].parse().unwrap()).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    assert!(mean("1") > mean("10") + 0.05);
}

#[test]
fn gridworld_writes_three_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_in("gridworld", &config(), tmp.path(), &["--map", "default"]).status.success());
    for name in ["trajectory_A.json", "trajectory_B.json", "trajectory_maxmin.json"] {
        let t = json(tmp.path().join(name));
        let cells = t.as_array().unwrap();
        assert!(cells.len() > 1);
        assert_eq!(cells[0], serde_json::json!([5, 5]));
    }
}

#[test]
fn manifest_hash_tracks_config() {
    let tmp = tempfile::tempdir().unwrap();
    let hash = |dir: &str, extra: &[&str]| {
        let out = tmp.path().join(dir);
        assert!(run_in("align-single", &config(), &out, extra).status.success());
        json(out.join("manifest.json"))["config_hash"].as_str().unwrap().to_string()
    };
    let base = hash("a", &[]);
    assert_eq!(base, hash("b", &[]));
    assert_ne!(base, hash("c", &["--beta", "2.0"]));
    assert_ne!(base, hash("d", &["--seed", "1"]));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = run_in("gen", &tmp.path().join("missing.toml"), &out, &[]);
    assert_eq!(missing.status.code(), Some(2));

    let text = fs::read_to_string(config()).unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, text.replace("annotators = 10", "annotators = 0")).unwrap();
    let o = run_in("gen", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("population.groups[1].annotators"));

    assert_eq!(run_in("align-single", &config(), &out, &["--beta", "-1"]).status.code(), Some(2));

    let slow = tmp.path().join("slow.toml");
    fs::write(&slow, text.replace("[em]", "[fit]\nmax_iters = 1\ngrad_tol = 1e-14\n\n[em]")).unwrap();
    let o = run_in("fit-single", &slow, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fit-single"));

    assert_eq!(run(&["bogus"]).status.code(), Some(2));
}
