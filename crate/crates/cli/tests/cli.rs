use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_BOX: &str = "[box]\nmodes = 6\nnt = 6\nnx = 8\neps = 0.1\n";

fn cfs(dir: &Path, args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfs"));
    cmd.current_dir(dir).args(args).env_remove("CFS_SEED");
    if let Some(s) = seed {
        cmd.env("CFS_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_ok(dir: &Path, scenario: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![scenario, "--config", config.to_str().unwrap(), "--out", out];
    args.extend_from_slice(extra);
    let o = cfs(dir, &args, None);
    assert!(o.status.success(), "{scenario} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn causal_map_writes_one_row_per_lattice_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_BOX);
    let o = run_ok(tmp.path(), "causal-map", &cfg, "out", &[]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("causal_map.csv: 48 rows"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("out/causal_map.csv")).unwrap();
    assert!(csv.starts_with("# cfs "));
    assert!(csv.lines().any(|l| l.starts_with("# config-sha256: ") && l.len() == 17 + 64));
    assert_eq!(data_rows(&csv).len(), 48);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/agreement.json")).unwrap()).unwrap();
    assert_eq!(json["meta"]["scenario"], "causal-map");
    assert!(json["data"]["deep_timelike"].is_u64());
}

#[test]
fn stochastic_runs_are_byte_identical_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "e.toml",
        "seed = 5\n[filtration]\ndepth = 2\nsite_dim = 2\nsite_state = [0.4, 0.6]\nruns = 2000\n",
    );
    run_ok(tmp.path(), "eth-branch", &cfg, "a", &["--threads", "1"]);
    run_ok(tmp.path(), "eth-branch", &cfg, "b", &["--threads", "2"]);
    run_ok(tmp.path(), "eth-branch", &cfg, "c", &[]);
    let a = files(&tmp.path().join("a"));
    assert_eq!(a, files(&tmp.path().join("b")));
    assert_eq!(a, files(&tmp.path().join("c")));

    let cfg = write_config(
        tmp.path(),
        "m.toml",
        "seed = 3\n[minimize]\ninstance = \"random\"\nhilbert_dim = 3\natoms = 6\n\
         [minimize.schedule]\nrounds = 2\nweight_iters = 200\nrelocate_iters = 20\n",
    );
    run_ok(tmp.path(), "minimize", &cfg, "m1", &["--threads", "1"]);
    run_ok(tmp.path(), "minimize", &cfg, "m2", &["--threads", "3"]);
    assert_eq!(files(&tmp.path().join("m1")), files(&tmp.path().join("m2")));
}

#[test]
fn seed_override_changes_output_and_header() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "e.toml", "seed = 5\n[filtration]\ndepth = 2\nruns = 500\n");
    let args = |out: &'static str| ["eth-branch", "--config", "e.toml", "--out", out];
    assert!(cfs(tmp.path(), &args("a"), None).status.success());
    assert!(cfs(tmp.path(), &args("b"), Some("6")).status.success());
    let a = fs::read_to_string(tmp.path().join("a/leaves.csv")).unwrap();
    let b = fs::read_to_string(tmp.path().join("b/leaves.csv")).unwrap();
    assert!(a.contains("# seed: 5"));
    assert!(b.contains("# seed: 6"));
    assert_ne!(a, b);
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("missing_seed.toml", "eth-branch", "[filtration]\ndepth = 2\n"),
        ("unknown_key.toml", "causal-map", "[box]\nmodez = 3\n"),
        ("bad_box.toml", "causal-map", "[box]\nmodes = 4\nmass = -1.0\n"),
        ("wrong_scenario.toml", "causal-map", "scenario = \"minimize\"\nseed = 1\n"),
        ("bad_sweep.toml", "commutator-sweep", "[sweep]\neps = [0.1, -0.2]\n"),
        ("not_toml.toml", "causal-map", "this is = = not toml"),
    ];
    for (name, scenario, body) in cases {
        let p = write_config(tmp.path(), name, body);
        let o = cfs(tmp.path(), &[scenario, "--config", p.to_str().unwrap(), "--out", "x"], None);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    let o = cfs(tmp.path(), &["causal-map", "--config", "nope.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    let p = write_config(tmp.path(), "s.toml", "[filtration]\ndepth = 2\n");
    let o = cfs(tmp.path(), &["eth-branch", "--config", p.to_str().unwrap(), "--out", "x"], Some("abc"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reference_minimization_meets_the_spread_target() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", "seed = 42\n");
    run_ok(tmp.path(), "minimize", &cfg, "out", &[]);
    let el = fs::read_to_string(tmp.path().join("out/euler_lagrange.csv")).unwrap();
    let rows = data_rows(&el);
    assert_eq!(rows.len(), 20);
    let ells: Vec<f64> = rows
        .iter()
        .filter(|r| r.ends_with(",true"))
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let lo = ells.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(ells.len() < 20);
    assert!((hi - lo) / hi.abs().max(1e-300) <= 0.01);
    let trace = fs::read_to_string(tmp.path().join("out/trace.csv")).unwrap();
    let actions: Vec<f64> = data_rows(&trace).iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(actions.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn pdp_verify_reports_the_chain() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", "[filtration]\ndepth = 3\nsite_dim = 2\n");
    run_ok(tmp.path(), "pdp-verify", &cfg, "out", &[]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/pdp_verify.json")).unwrap()).unwrap();
    assert_eq!(json["data"]["dims"], serde_json::json!([64, 16, 4, 1]));
    let rel = fs::read_to_string(tmp.path().join("out/relative_commutants.csv")).unwrap();
    assert!(data_rows(&rel).iter().any(|r| r == &"0,1,4,false"));
}
