use collabrl::report::RunReport;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TABULAR: &str = r#"
mode = "tabular"
[tabular]
num_users = 32
num_states = 4
num_actions = 4
horizon = 2
rank = 1
seed = 0
[pipeline]
epsilon = 0.1
delta = 0.1
mask_rate = 0.5
seed = 0
[baseline]
epsilon = 0.1
"#;

fn collabrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collabrl"))
        .args(args)
        .env_remove("COLLABRL_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn runs_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", TABULAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = collabrl(&["run", "--config", s(&cfg), "--seeds", "3", "--out", s(out), "--no-timing"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for seed in 0..3 {
        for ext in ["csv", "json"] {
            let name = format!("report_tabular_seed{seed}.{ext}");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn generated_bundle_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", TABULAR);
    let o = collabrl(&["gen", "--config", s(&cfg), "--seed", "4", "--out", s(dir.path())]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("sha256="));
    let bundle = dir.path().join("bundle_tabular_seed4.json");
    let o = collabrl(&["run", "--config", s(&cfg), "--bundle", s(&bundle), "--seed", "4", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = RunReport::from_json(&std::fs::read_to_string(dir.path().join("report_tabular_seed4.json")).unwrap()).unwrap();
    let sum: u64 = r.phases.iter().map(|p| p.trajectories).sum();
    assert_eq!(r.total_trajectories(), sum);
    assert_eq!(r.user_subopt.len(), 32);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", TABULAR);
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_collabrl"))
        .args(["baseline", "--config", s(&cfg), "--seed", "1"])
        .env("COLLABRL_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report_baseline_seed1.csv").exists());
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", &TABULAR.replace("mask_rate = 0.5", "mask_rate = 0.9"));
    let o = collabrl(&["run", "--config", s(&cfg), "--seed", "0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "missing.toml", "mode = \"rowwise\"\n");
    assert_eq!(collabrl(&["rowwise", "--config", s(&cfg), "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn schema_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(collabrl(&["report", "--out", s(dir.path())]).status.code(), Some(3));
    let junk = write_config(dir.path(), "junk.json", "{\"mode\": 1}");
    assert_eq!(collabrl(&["report", s(&junk), "--out", s(dir.path())]).status.code(), Some(3));
    let cfg = write_config(dir.path(), "cfg.toml", TABULAR);
    let bundle = write_config(dir.path(), "bundle.json", "{\"version\": 1}");
    let o = collabrl(&["run", "--config", s(&cfg), "--bundle", s(&bundle), "--seed", "0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn phase_failure_exits_with_four_and_keeps_the_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
mode = "tabular"
[tabular]
num_users = 12
num_states = 3
num_actions = 2
horizon = 2
rank = 1
seed = 0
[pipeline]
epsilon = 0.05
delta = 0.1
mask_rate = 0.5
seed = 0
"#;
    let cfg = write_config(dir.path(), "cfg.toml", cfg);
    assert!(collabrl(&["gen", "--config", s(&cfg), "--seed", "3", "--out", s(dir.path())]).status.success());
    let bundle = dir.path().join("bundle_tabular_seed3.json");
    let o = collabrl(&["run", "--config", s(&cfg), "--bundle", s(&bundle), "--seed", "11", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("report_tabular_seed11.json")).unwrap();
    let r = RunReport::from_json(&text).unwrap();
    assert!(r.failure.is_some());
    assert_eq!(r.phase_trajectories("phase1"), Some(0));
    assert!(r.phase_trajectories("phase2").is_some());
}

#[test]
fn report_median_matches_a_hand_sorted_median() {
    let dir = tempfile::tempdir().unwrap();
    let counts: Vec<u64> = (0..20u64).map(|i| (i * 7919) % 101 + 3).collect();
    let mut files = Vec::new();
    for (seed, &c) in counts.iter().enumerate() {
        let mut r = RunReport::new("tabular", seed as u64, "h".into(), 2, 1);
        r.add_phase("phase1", 0);
        r.add_phase("phase2", c);
        r.user_subopt = vec![0.01 * seed as f64];
        let p = dir.path().join(format!("r{seed}.json"));
        std::fs::write(&p, r.to_json().unwrap()).unwrap();
        files.push(p);
    }
    let mut args = vec!["report".to_string()];
    args.extend(files.iter().map(|p| s(p).to_string()));
    args.extend(["--out".into(), s(dir.path()).into()]);
    let o = collabrl(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success());
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let expect = (sorted[9] + sorted[10]) as f64 / 2.0;
    let csv = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("phase2,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[1], "20");
    assert_eq!(cols[2].parse::<f64>().unwrap(), expect);

    // a single run aggregates to itself
    let o = collabrl(&["report", s(&files[0]), "--out", s(&dir.path().join("one"))]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("one/aggregate.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("phase2,")).unwrap();
    assert_eq!(row.split(',').nth(2).unwrap().parse::<f64>().unwrap(), counts[0] as f64);
}

#[test]
fn completion_curve_and_rowwise_modes_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "curve.toml",
        "mode = \"completion-curve\"\n[completion]\nrows = 12\ncols = 12\nrank = 1\nrates = [0.1, 0.5]\ntrials = 4\n",
    );
    assert!(collabrl(&["completion-curve", "--config", s(&cfg), "--seed", "0", "--out", s(dir.path())]).status.success());
    let csv = std::fs::read_to_string(dir.path().join("completion_curve_seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let cfg = write_config(
        dir.path(),
        "rw.json",
        r#"{"mode": "rowwise", "rowwise": {"num_rows": 20, "dim": 6, "rank": 1, "sampler": {"sphere": {"scale": 1.0}}, "dist_trials": 2000, "extra_dirs": 32}}"#,
    );
    let o = collabrl(&["rowwise", "--config", s(&cfg), "--seed", "2", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(dir.path().join("rowwise_seed2.csv")).unwrap().starts_with("t,unknown_rows,K_t"));
}
