use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nessthermo"));
    c.arg("--quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const GOLDEN_HEADER: &str = "scenario,N,T,gamma2,Omega_cutoff,spacing,qfi,cfi_x,cfi_p,min_rel_error,log_negativity_halfcut,mutual_info_1_rest,quad_err_est,error_code";

#[test]
fn sweep_csv_header_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[sweep]\nn_probes = [1]\ntemperature = [0.01]\n");
    let out = run(&["sweep", "--config", &cfg]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(GOLDEN_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("a,1,1.0000000000000000e-2,"));
    assert!(rows[1].starts_with("b,1,"));
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
}

#[test]
fn config_errors_exit_with_one_and_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[sweep]\nn_probes = [1]\n\n[bath]\ncutoff = \"big\"\n");
    let out = run(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 5"), "{err}");

    let out = run(&["sweep", "--config", &dir.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn all_points_failing_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[sweep]\nn_probes = [1, 2]\ntemperature = [0.1]\n");
    let out = run(&["sweep", "--config", &cfg, "--no-renormalization"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",unstable_model")));
}

#[test]
fn scenario_flag_and_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[sweep]\nn_probes = [2]\ntemperature = [0.05, 0.5]\n");
    let out = run(&["sweep", "--config", &cfg, "--scenario", "b", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["scenario"], "b");
        assert_eq!(r["error_code"], "ok");
        assert!(r["wall_time_s"].as_f64().unwrap() >= 0.0);
        assert!(r["qfi"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn output_path_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_config.csv");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!(
            "[sweep]\nn_probes = [1]\n[output]\npath = {:?}\nquantities = [\"qfi\"]\n",
            target.to_str().unwrap()
        ),
    );
    assert!(run(&["sweep", "--config", &cfg]).status.success());
    let text = std::fs::read_to_string(&target).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_ne!(row[6], "NaN");
    assert_eq!(row[7], "NaN");
}

#[test]
fn fit_recovers_linear_scaling_for_independent_baths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[sweep]\nscenario = [\"a\", \"b\"]\nn_probes = [2, 4, 6, 8]\ntemperature = [0.01]\n",
    );
    let csv = dir.path().join("s.csv");
    assert!(run(&["sweep", "--config", &cfg, "--out", csv.to_str().unwrap()]).status.success());
    let out = run(&["fit", "--input", csv.to_str().unwrap(), "--window", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,T,gamma2,Omega_cutoff,spacing,points,exponent,intercept,r_squared"));
    let a: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(a[0], "a");
    assert!((a[6].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    let b: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(b[6].parse::<f64>().unwrap() > 1.5);
    assert!(text.contains("scenario,T,N_center,local_exponent"));
}

#[test]
fn ness_and_profile_dumps() {
    let out = run(&["ness", "-n", "3", "--temperature", "0.1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.starts_with("block,row,c0,c1,c2,c3,c4,c5\ngamma,0,"));

    let out = run(&["profile", "-n", "4", "--scenario", "a"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r[5].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn oracle_rejects_windows_past_the_recurrence() {
    let out = run(&["oracle", "-n", "1", "--grid", "uniform", "--t-final", "30", "--window", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("recurrence"));
}
