//! Command-line behaviour and run-level statistics.

use std::path::Path;
use std::process::Command;

use pnsim::combining::Scheme;
use pnsim::config::ExperimentConfig;
use pnsim::experiment::run_experiment;

const SIM: &str = env!("CARGO_BIN_EXE_sim");

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::reduced();
    c.layout.n_aps = 12;
    c.layout.n_ues = 3;
    c.layout.n_subcarriers = 48;
    c.layout.cp_length = 4;
    c.n_geometries = 2;
    c.n_trials = 10;
    c.schemes = vec![Scheme::Mr, Scheme::Mmse];
    c.channel_uses = vec![1, 13, 49, 60];
    c.output = out.to_path_buf();
    c
}

fn write_config(dir: &Path, name: &str, out: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, small_config(&dir.join(out)).echo()).unwrap();
    path
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", "unused.csv");
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let status = Command::new(SIM)
            .arg("run")
            .arg(&cfg)
            .arg("--deterministic")
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", "unused.csv");
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let st = Command::new(SIM)
            .args(["run", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read_to_string(out).unwrap()
    };
    assert_ne!(run("1", "s1.csv"), run("2", "s2.csv"));
}

#[test]
fn config_errors_exit_with_code_one_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n_ues = 4\nbogus_key = 3\n").unwrap();
    let out = Command::new(SIM).arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let missing = Command::new(SIM).args(["run", "/nonexistent/x.cfg"]).output().unwrap();
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn validate_passes_and_catches_injected_stride_fault() {
    let ok = Command::new(SIM).args(["validate", "--n", "16", "--trials", "500"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = Command::new(SIM)
        .args(["validate", "--n", "16", "--trials", "10", "--inject-stride-fault"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL kernel oracle"));
}

#[test]
fn dump_geometry_writes_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "geo.cfg", "unused.csv");
    let out = Command::new(SIM).arg("dump-geometry").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // header plus 12 APs and 3 UEs
    assert_eq!(text.lines().count(), 1 + 12 + 3, "{text}");
}

#[test]
fn standard_error_shrinks_with_trial_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("x.csv"));
    c.n_geometries = 1;
    c.schemes = vec![Scheme::Mmse];
    c.include_no_pn = false;
    let se_of = |trials: usize| {
        let mut c = c.clone();
        c.n_trials = trials;
        let s = run_experiment(&c).unwrap();
        let v: Vec<f64> = s.records.iter().filter(|r| r.metric == "channel_use").map(|r| r.standard_error).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ratio = se_of(400) / se_of(200);
    let want = std::f64::consts::FRAC_1_SQRT_2;
    assert!((ratio - want).abs() <= 0.2 * want, "ratio {ratio}");
}
