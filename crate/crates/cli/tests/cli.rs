use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn hgflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HGFLOW_TABLE_CACHE")
        .output()
        .expect("spawn hgflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generated() -> String {
    fixture("generated.json").to_string_lossy().into_owned()
}

#[test]
fn nda_on_two_pool_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("two_pools.json");
    let o = hgflow(&["run", "--alg", "nda", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.contains(" W=3 "), "{line}");
    assert!(line.contains("kkt_pass=true"), "{line}");
    assert!(line.contains("epochs=1"), "{line}");
    let csv = std::fs::read_to_string(dir.path().join("allocation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn zero_window_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgflow(&["run", "--alg", "online", "--window", "0", "--config", &generated()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgflow(&["run", "--alg", "greedy", "--config", &generated()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n": 2, "k": 1, "ts_seconds": 1, "gains": [[1, -1]], "arrivals": [{"access": 1, "joules": 1}], "constellations": ["bpsk"]}"#).unwrap();
    let o = hgflow(&["run", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("gains[0][1]"), "{err}");
    assert!(!dir.path().join("allocation.csv").exists());
}

#[test]
fn verify_accepts_optimum_and_rejects_online() {
    let dir = tempfile::tempdir().unwrap();
    let alloc = dir.path().join("allocation.csv");
    let common = ["--config", &generated(), "--table-points", "512"];

    let o = hgflow(&[&["run", "--alg", "fsa"][..], &common].concat(), dir.path());
    assert!(o.status.success());
    let o = hgflow(&[&["verify", "--allocation", alloc.to_str().unwrap()][..], &common].concat(), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let o = hgflow(&[&["run", "--alg", "online", "--window", "3"][..], &common].concat(), dir.path());
    assert!(o.status.success());
    let o = hgflow(&[&["verify", "--allocation", alloc.to_str().unwrap()][..], &common].concat(), dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn identical_flags_give_identical_files() {
    let run = |dir: &Path| {
        let cfg = generated();
        for args in [
            vec!["run", "--alg", "nda", "--config", &cfg, "--table-points", "256"],
            vec!["trace", "--alg", "online", "--config", &cfg, "--table-points", "256"],
            vec!["sweep", "--config", &cfg, "--seeds", "2", "--points", "2", "--table-points", "256", "--jobs", "2"],
            vec!["complexity", "--config", &cfg, "--j-grid", "3,5", "--runs", "3", "--table-points", "256"],
        ] {
            let o = hgflow(&args, dir);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for f in ["allocation.csv", "trace.csv", "sweep.csv", "complexity.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let cfg = generated();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, seed) in dirs.iter().zip(["1", "2"]) {
        let o = hgflow(&["run", "--config", &cfg, "--seed", seed, "--table-points", "256"], d.path());
        assert!(o.status.success());
    }
    let x = std::fs::read(dirs[0].path().join("allocation.csv")).unwrap();
    let y = std::fs::read(dirs[1].path().join("allocation.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn cached_tables_reproduce_fresh_results() {
    let cache = tempfile::tempdir().unwrap();
    let (fresh, cold, warm) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = generated();
    let args = ["run", "--config", &cfg, "--table-points", "300"];
    let with_cache = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_hgflow"))
            .args(args)
            .arg("--out")
            .arg(out)
            .env("HGFLOW_TABLE_CACHE", cache.path())
            .output()
            .unwrap()
    };
    assert!(hgflow(&args, fresh.path()).status.success());
    assert!(with_cache(cold.path()).status.success());
    assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 4);
    assert!(with_cache(warm.path()).status.success());
    let f = std::fs::read(fresh.path().join("allocation.csv")).unwrap();
    assert_eq!(f, std::fs::read(cold.path().join("allocation.csv")).unwrap());
    assert_eq!(f, std::fs::read(warm.path().join("allocation.csv")).unwrap());
}

#[test]
fn tables_writes_one_csv_per_constellation() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgflow(&["tables", "--constellations", "bpsk,4pam", "--table-points", "128"], dir.path());
    assert!(o.status.success());
    let t = std::fs::read_to_string(dir.path().join("table-bpsk.csv")).unwrap();
    assert_eq!(t.lines().next(), Some("snr,mmse,mi"));
    assert_eq!(t.lines().count(), 129);
    assert!(dir.path().join("table-4pam.csv").exists());
}

#[test]
fn custom_constellation_solves_and_nonzero_mean_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("custom_pam3.json");
    let o = hgflow(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("kkt_pass=true"), "{}", stdout(&o));

    let ook = dir.path().join("ook.json");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["constellations"] = serde_json::json!([{"label": "ook", "points": [0.0, std::f64::consts::SQRT_2], "probs": [0.5, 0.5]}]);
    std::fs::write(&ook, v.to_string()).unwrap();
    let o = hgflow(&["run", "--config", ook.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert!(err["message"].as_str().unwrap().contains("constellations[0]"), "{err}");
}

#[test]
fn thread_count_does_not_change_sweep() {
    let cfg = generated();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, jobs) in dirs.iter().zip(["1", "3"]) {
        let args = ["sweep", "--config", &cfg, "--seeds", "3", "--points", "2", "--table-points", "256", "--jobs", jobs];
        assert!(hgflow(&args, d.path()).status.success());
    }
    let x = std::fs::read(dirs[0].path().join("sweep.csv")).unwrap();
    assert_eq!(x, std::fs::read(dirs[1].path().join("sweep.csv")).unwrap());
}
