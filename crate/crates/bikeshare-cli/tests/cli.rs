//! End-to-end checks of the command-line driver: artifact schemas, flag
//! precedence, validation failures, and manifest verification.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bikeshare"))
}

fn write_config(dir: &Path, value: serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn base_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "station_count": 50,
        "fleet_size": 75,
        "capacity": 3,
        "demand": {"type": "stationary", "rate": 1.0},
        "y0": {"proportions": [0.0, 0.5, 0.5, 0.0]},
        "horizon": 5.0,
        "replications": 8,
        "master_seed": 9,
        "out_dir": out
    })
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary launches")
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Re-parse a CSV artifact: every data cell must be a float that formats back
/// to the identical byte string.
fn assert_csv_round_trips(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().expect("header row");
    let columns = header.split(',').count();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), columns, "ragged row in {}", path.display());
        for cell in cells {
            let value: f64 = cell.parse().expect("numeric cell");
            assert_eq!(format!("{value}"), cell, "lossy cell in {}", path.display());
        }
    }
}

#[test]
fn meanfield_artifacts_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), base_config(&out));
    assert_success(&run(&["meanfield", "--config", config.to_str().unwrap()]));

    let csv = std::fs::read_to_string(out.join("meanfield.csv")).unwrap();
    assert!(csv.starts_with("t,y0,y1,y2,y3\n"));
    assert_csv_round_trips(&out.join("meanfield.csv"));
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn diffusion_emits_upper_triangle_and_circulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), base_config(&out));
    assert_success(&run(&["diffusion", "--config", config.to_str().unwrap()]));

    let csv = std::fs::read_to_string(out.join("diffusion.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    // 4×4 symmetric matrix: 10 upper-triangle columns after t.
    assert_eq!(header.split(',').count(), 11);
    assert!(header.starts_with("t,sigma_0_0,sigma_0_1"));
    assert!(header.ends_with("sigma_3_3"));
    let circ = std::fs::read_to_string(out.join("circulation.csv")).unwrap();
    assert!(circ.starts_with("t,mean,var,lo,hi\n"));
    assert_csv_round_trips(&out.join("diffusion.csv"));
    assert_csv_round_trips(&out.join("circulation.csv"));
}

#[test]
fn simulate_and_compare_share_grid_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), base_config(&out));
    assert_success(&run(&["simulate", "--config", config.to_str().unwrap()]));
    let sim_csv = std::fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert!(sim_csv.starts_with("t,mean_k0,mean_k1,mean_k2,mean_k3,var_k0"));

    assert_success(&run(&["compare", "--config", config.to_str().unwrap()]));
    let cmp_csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(cmp_csv
        .starts_with("t,sim_mean_k0,sim_band_lo,sim_band_hi,mf_k0,diff_band_lo,diff_band_hi\n"));
    assert_eq!(sim_csv.lines().count(), cmp_csv.lines().count());
    assert_csv_round_trips(&out.join("compare.csv"));
}

#[test]
fn equilibrium_and_sweep_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config_value = base_config(&out);
    config_value["lambda_grid"] = serde_json::json!([0.5, 1.0, 2.0]);
    let config = write_config(dir.path(), config_value);

    assert_success(&run(&["equilibrium", "--config", config.to_str().unwrap()]));
    let eq_csv = std::fs::read_to_string(out.join("equilibrium.csv")).unwrap();
    assert!(eq_csv.starts_with("k,y\n"));
    assert_eq!(eq_csv.lines().count(), 5);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("equilibrium_stats.json")).unwrap())
            .unwrap();
    assert!(stats["drift_residual"].as_f64().unwrap() <= 1e-10);

    assert_success(&run(&["sweep", "--config", config.to_str().unwrap()]));
    let sweep_csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(sweep_csv.starts_with("lambda,avg_docked\n"));
    assert_eq!(sweep_csv.lines().count(), 4);
}

#[test]
fn lag_experiment_emits_per_extremum_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config_value = base_config(&out);
    config_value["demand"] = serde_json::json!({"type": "sinusoidal", "base": 1.0, "amplitude": 0.5, "angular_frequency": 0.5});
    config_value["horizon"] = serde_json::json!(45.0);
    config_value["mu_grid"] = serde_json::json!([1.0, 2.0]);
    let config = write_config(dir.path(), config_value);
    assert_success(&run(&["lag", "--config", config.to_str().unwrap()]));

    let csv = std::fs::read_to_string(out.join("lag.csv")).unwrap();
    assert!(csv.starts_with("mu,series_k,extremum_type,lambda_time,series_time,lag\n"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().any(|r| r.starts_with("1,")));
    assert!(rows.iter().any(|r| r.starts_with("2,")));
    assert!(rows.iter().any(|r| r.contains(",peak,")));
    assert!(rows.iter().any(|r| r.contains(",valley,")));
}

#[test]
fn ingest_experiment_builds_profile_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let trips = dir.path().join("trips.csv");
    std::fs::write(
        &trips,
        "tripduration,starttime,stoptime,start station id,end station id\n\
         600,6/1/2015 00:10:00,6/1/2015 00:20:00,72,79\n\
         300,6/1/2015 08:00:00,6/1/2015 08:05:00,79,72\n\
         900,6/2/2015 12:00:00,6/2/2015 12:15:00,72,72\n\
         100,6/2/2015 13:00:00,6/2/2015 12:00:00,72,72\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let mut config_value = base_config(&out);
    config_value["ingest"] = serde_json::json!({"path": trips, "bin_seconds": 300});
    let config = write_config(dir.path(), config_value);
    assert_success(&run(&["ingest", "--config", config.to_str().unwrap()]));

    let profile = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    assert!(profile.starts_with("bin_start_seconds,starts_per_bin,ends_per_bin\n"));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("duration_stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["trips"], 3);
    assert_eq!(stats["skipped"], 1);
    assert_eq!(stats["mean_secs"], 600.0);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    let config = write_config(dir.path(), base_config(&out_a));
    let cfg = config.to_str().unwrap();

    assert_success(&run(&["simulate", "--config", cfg]));
    assert_success(&run(&[
        "simulate",
        "--config",
        cfg,
        "--out",
        out_b.to_str().unwrap(),
    ]));
    assert_success(&run(&[
        "simulate",
        "--config",
        cfg,
        "--out",
        out_c.to_str().unwrap(),
        "--seed",
        "1234",
    ]));

    let a = std::fs::read(out_a.join("simulate.csv")).unwrap();
    let b = std::fs::read(out_b.join("simulate.csv")).unwrap();
    let c = std::fs::read(out_c.join("simulate.csv")).unwrap();
    assert_eq!(a, b, "same seed must reproduce bytes");
    assert_ne!(a, c, "seed flag must take precedence over the config");
}

#[test]
fn invalid_config_fails_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config_value = base_config(&out);
    // 0.505 × 50 stations is not an integer count.
    config_value["y0"] = serde_json::json!({"proportions": [0.0, 0.505, 0.495, 0.0]});
    let config = write_config(dir.path(), config_value);
    let output = run(&["simulate", "--config", config.to_str().unwrap()]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("y0"), "stderr: {stderr}");
}

#[test]
fn kind_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config_value = base_config(&out);
    config_value["kind"] = serde_json::json!("meanfield");
    let config = write_config(dir.path(), config_value);
    let output = run(&["sweep", "--config", config.to_str().unwrap()]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("kind"), "stderr: {stderr}");
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), base_config(&out));
    assert_success(&run(&["meanfield", "--config", config.to_str().unwrap()]));

    let manifest = out.join("run_manifest.json");
    assert_success(&run(&["verify", manifest.to_str().unwrap()]));

    // Flip one byte without changing the size.
    let target = out.join("meanfield.csv");
    let mut bytes = std::fs::read(&target).unwrap();
    let last = bytes.len() - 2;
    bytes[last] = if bytes[last] == b'1' { b'2' } else { b'1' };
    std::fs::write(&target, &bytes).unwrap();
    let output = run(&["verify", manifest.to_str().unwrap()]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("checksum mismatch"), "stderr: {stderr}");
}

#[test]
fn svg_flag_adds_charts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), base_config(&out));
    assert_success(&run(&[
        "meanfield",
        "--config",
        config.to_str().unwrap(),
        "--svg",
    ]));
    let svg = std::fs::read_to_string(out.join("meanfield.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("polyline"));
}
