use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fal"))
        .args(args)
        .output()
        .expect("spawn fal")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const HEADER: &str = "round,adv_loss,clean_loss,train_acc,test_acc,dist_init_2inf,delta_u_fro";

#[test]
fn zero_rounds_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["run", "--rounds", "0", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, format!("{HEADER}\n"));
    assert!(dir.path().join("curves.svg").exists());
    assert!(dir.path().join("resolved_config.json").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fal(&["run", "--rounds", "12", "--grad-audit-every", "3", "--out", path(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "curves.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with(&format!("{HEADER},fl_gap_21,coupling_gap_21,flip_count\n")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = fal(&["run", "--rounds", "5", "--seed", "7", "--rho", "0.1", "--out", path(&first)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = dir.path().join("second");
    let o = fal(&[
        "run",
        "--config",
        path(&first.join("resolved_config.json")),
        "--out",
        path(&second),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_file_keys_override_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            r#"{{
  "preset": "experiment6",
  "rounds": 3,
  "local_steps": 5,
  "eta_local": 0.001,
  "out": "{}",
  "data": {{ "kind": "clusters", "scale": 2.5, "per_class_train": 60, "per_class_test": 25 }}
}}"#,
            path(&out)
        ),
    )
    .unwrap();
    let o = fal(&["run", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    // the classification preset has a test split
    assert!(rows.iter().all(|r| !r.split(',').nth(4).unwrap().is_empty()));
    let resolved = fs::read_to_string(out.join("resolved_config.json")).unwrap();
    assert!(resolved.contains("\"per_class_train\": 60"));
    assert!(resolved.contains("\"batch_size\": 50"));
}

#[test]
fn unknown_config_key_is_a_line_numbered_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"rounds\": 3,\n  \"round_count\": 4\n}\n").unwrap();
    let o = fal(&["run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("round_count"), "{err}");
}

#[test]
fn malformed_json_is_a_line_numbered_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"rounds\": 3,\n  \"seed\": \n}\n").unwrap();
    let o = fal(&["run", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    for args in [
        &["run", "--rho", "0.7", "--out", out][..],
        &["run", "--scale", "2.0", "--out", out],
        &["run", "--local-steps", "0", "--out", out],
        &["run", "--preset", "nonsense", "--out", out],
    ] {
        assert_eq!(fal(args).status.code(), Some(1), "{args:?}");
    }
    let o = Command::new(env!("CARGO_BIN_EXE_fal"))
        .args(["run", "--rounds", "0", "--out", out])
        .env("FAL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_study_exits_one() {
    let o = fal(&["verify", "no-such-study"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = fal(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verify"));
}

#[test]
fn fl_gap_with_one_local_step_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["verify", "fl-gap", "--K", "1", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fl-gap.json")).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    assert!(json["details"]["identity_max_fro"].as_f64().unwrap() <= 1e-9);
    assert!(dir.path().join("fl-gap.csv").exists());
}

#[test]
fn finite_diff_summary_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["verify", "finite-diff", "--seeds", "3", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("finite-diff.json")).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    let check = json["checks"].as_array().unwrap().iter().find(|c| c["name"] == "max_rel_error").unwrap();
    assert!(check["value"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn coupling_summary_has_slopes_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["verify", "coupling", "--m-grid", "256,1024,4096", "--out", path(dir.path())]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("coupling.json")).unwrap()).unwrap();
    let series = json["details"]["study"]["series"].as_array().unwrap();
    assert!(!series.is_empty());
    for s in series {
        assert!(s["slope"].is_number() && s["ratio"].is_number(), "{s}");
    }
    let table = fs::read_to_string(dir.path().join("coupling.csv")).unwrap();
    // one row per (m, seed) cell
    assert_eq!(table.lines().count(), 1 + 3 * 5);
}

#[test]
fn gen_data_sphere_writes_points_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&[
        "gen-data", "sphere", "--N", "2", "--J", "4", "--d", "3", "--delta", "0.499", "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    let out = stdout(&o);
    let delta: f64 = out
        .split_whitespace()
        .find_map(|t| t.strip_prefix("delta_min="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(delta >= 0.499, "{out}");
}

#[test]
fn gen_data_rejects_half_separation() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["gen-data", "sphere", "--delta", "0.5", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_clusters_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["gen-data", "clusters", "--scale", "0.85", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("train.csv"), 800);
    assert_eq!(rows("test.csv"), 200);
    assert!(stdout(&o).starts_with("train=800 test=200"));
}

#[test]
fn csv_data_trains() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["gen-data", "sphere", "--N", "2", "--J", "3", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{ "rounds": 4, "data": {{ "kind": "csv", "train": "{}" }} }}"#,
            path(&dir.path().join("data.csv"))
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = fal(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 5);
}

#[test]
fn fedavg_subcommand_has_no_adversarial_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = fal(&["fedavg", "--rounds", "3", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], f[2], "adversarial and clean loss differ: {row}");
    }
}
