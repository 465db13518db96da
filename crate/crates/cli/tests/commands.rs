use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_TRAINING: &str =
    "[dqn]\nepisodes = 12\nsteps_per_episode = 30\nepsilon_decay_episodes = 8\n";

fn turbidostat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turbidostat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

/// Train a small network into `dir/out` and return its path.
fn small_network(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "small.conf", SMALL_TRAINING);
    let o = turbidostat(dir, &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    dir.join("out/qnet.txt")
}

#[test]
fn invalid_config_fails_before_any_output() {
    let d = TempDir::new().unwrap();
    let bad = write_config(d.path(), "bad.conf", "[growth]\nmu = -1\n");
    let o = turbidostat(
        d.path(),
        &["--config", "bad.conf", "bench", "pi", "staircase"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!d.path().join("out").exists());

    fs::write(&bad, "[growth]\nmu_typo = 0.02\n").unwrap();
    let o = turbidostat(d.path(), &["--config", "bad.conf", "train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mu_typo"), "{}", stderr(&o));
    assert!(!d.path().join("out").exists());
}

#[test]
fn unknown_schedule_lists_the_valid_ones() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(d.path(), &["bench", "pi", "ramp"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("staircase") && e.contains("tempstep"), "{e}");
}

#[test]
fn dqn_without_a_network_is_a_missing_artifact() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(d.path(), &["bench", "dqn", "tempstep"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("qnet.txt"));
}

#[test]
fn bench_writes_replicates_and_metrics() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(d.path(), &["bench", "pi", "staircase"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        files(&d.path().join("out")),
        [
            "bench_pi_staircase_metrics.csv",
            "bench_pi_staircase_seed1.csv",
            "bench_pi_staircase_seed2.csv",
            "bench_pi_staircase_seed3.csv",
        ]
    );
    let metrics = fs::read_to_string(d.path().join("out/bench_pi_staircase_metrics.csv")).unwrap();
    assert!(metrics.starts_with("controller,segment,metric,mean,sd\n"));
    // three references and the whole run, two metrics each
    assert_eq!(metrics.lines().count(), 1 + 8);
}

#[test]
fn tempstep_switches_temperature_at_minute_thirty() {
    let d = TempDir::new().unwrap();
    let net = small_network(d.path());
    let o = turbidostat(
        d.path(),
        &["bench", "dqn", "tempstep", "--qnet", net.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("out/bench_dqn_tempstep_seed1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time_min,od_true,od_meas,setpoint,pump_rate,temp_c"
    );
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let expected = if f[0] < 30.0 { 37.0 } else { 30.0 };
        assert_eq!(f[5], expected, "{line}");
    }
}

#[test]
fn training_is_byte_reproducible() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "small.conf", SMALL_TRAINING);
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let o = turbidostat(d.path(), &["--config", cfg, "--out", out, "train"]);
        assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
        let dir = d.path().join(out);
        outputs.push((
            fs::read(dir.join("qnet.txt")).unwrap(),
            fs::read_to_string(dir.join("rewards.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let rewards = &outputs[0].1;
    assert_eq!(rewards.lines().count(), 1 + 12);
    assert!(String::from_utf8_lossy(&outputs[0].0).starts_with("qnet-v1\n"));
}

#[test]
fn default_training_writes_a_hundred_episode_curve() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(d.path(), &["--seed", "1", "train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rewards = fs::read_to_string(d.path().join("out/rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 101);
    assert!(d.path().join("out/qnet.txt").exists());
}

#[test]
fn frozen_optimizer_fails_the_convergence_check() {
    let d = TempDir::new().unwrap();
    write_config(d.path(), "frozen.conf", "[dqn]\nlr = 0\n");
    let o = turbidostat(d.path(), &["--config", "frozen.conf", "train"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("did not improve"), "{}", stderr(&o));
}

#[test]
fn calibrate_recovers_the_configured_model() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(d.path(), &["calibrate", "--synthesize", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = d.path().join("out");
    for f in [
        "open_loop_1.csv",
        "open_loop_2.csv",
        "open_loop_3.csv",
        "fit.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let fit = fs::read_to_string(out.join("fit.txt")).unwrap();
    let value = |key: &str| -> f64 {
        fit.lines()
            .find_map(|l| {
                l.strip_prefix(key)?
                    .trim()
                    .strip_prefix('=')?
                    .trim()
                    .parse()
                    .ok()
            })
            .unwrap_or_else(|| panic!("{key} in {fit}"))
    };
    assert!((value("mu_hat") / 0.0231 - 1.0).abs() < 0.05, "{fit}");
    assert!((value("tau_hat") / 0.3 - 1.0).abs() < 0.05, "{fit}");
    assert!(value("held_out_pmse_percent") >= 0.0);

    // the calibrated config is itself a valid config
    let o = turbidostat(
        d.path(),
        &[
            "--config",
            "out/calibrated.conf",
            "--out",
            "again",
            "bench",
            "pi",
            "tempstep",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn calibrate_rejects_bad_data() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("empty.csv"), "").unwrap();
    let o = turbidostat(d.path(), &["calibrate", "empty.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    fs::write(d.path().join("cols.csv"), "time_min,od\n0,0.2\n").unwrap();
    let o = turbidostat(d.path(), &["calibrate", "cols.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pump_rate"), "{}", stderr(&o));

    let o = turbidostat(d.path(), &["calibrate", "absent.csv"]);
    assert_eq!(code(&o), 4);
    assert!(!d.path().join("out").exists());
}

#[test]
fn compare_emits_the_full_grid_deterministically() {
    let d = TempDir::new().unwrap();
    let net = small_network(d.path());
    let net = net.to_str().unwrap();
    let mut texts = Vec::new();
    for out in ["c1", "c2"] {
        let o = turbidostat(d.path(), &["--out", out, "compare", "--qnet", net]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        texts.push((
            fs::read(d.path().join(out).join("compare.csv")).unwrap(),
            fs::read(d.path().join(out).join("compare.txt")).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);

    let csv = String::from_utf8(texts[0].0.clone()).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.ends_with("DQN,PI,MPC"), "{header}");
    let rows: Vec<&str> = lines.collect();
    // 3 references + 2 temperatures, ISE and ITAE each
    assert_eq!(rows.len(), 10, "{csv}");
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        for c in &cells[cells.len() - 3..] {
            let v: f64 = c.parse().unwrap();
            assert!(v.is_finite() && v >= 0.0, "{row}");
        }
    }
}

#[test]
fn simulate_writes_one_trajectory() {
    let d = TempDir::new().unwrap();
    let o = turbidostat(
        d.path(),
        &[
            "simulate",
            "--controller",
            "mpc",
            "--duration",
            "15",
            "--temp",
            "30",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("out/simulate_mpc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);

    let o = turbidostat(d.path(), &["simulate", "--temp", "25"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
