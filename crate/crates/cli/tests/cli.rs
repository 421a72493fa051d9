//! End-to-end checks of the command-line interface and its exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_horizon-calc"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const MARKET_CFG: &str = "\
[market]
s0 = 100.0
x0 = 1.0
mu_star = 0.08
sigma = 0.2
a = 1.0
exit_law = exponential(1.0)

[simulation]
paths = 50
steps_per_unit = 32
seed = 4

[verify]
scenarios = 40
n_steps = 16
sets = 3
";

#[test]
fn verify_passes_and_reruns_byte_identically() {
    let dir = tmp_dir("verify");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, MARKET_CFG).unwrap();
    for sub in ["a", "b"] {
        let out = dir.join(sub);
        let status = bin()
            .args(["verify", "--seed", "7"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "verify exited with {status}");
    }
    let a = std::fs::read(dir.join("a/verify.csv")).unwrap();
    let b = std::fs::read(dir.join("b/verify.csv")).unwrap();
    assert_eq!(a, b, "verify.csv differs between identical runs");
    let ga = std::fs::read(dir.join("a/gallery.csv")).unwrap();
    let gb = std::fs::read(dir.join("b/gallery.csv")).unwrap();
    assert_eq!(ga, gb, "gallery.csv differs between identical runs");
}

#[test]
fn simulate_writes_the_expected_files() {
    let dir = tmp_dir("simulate");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, MARKET_CFG).unwrap();
    let out = dir.join("out");
    let status = bin()
        .arg("simulate")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["stock.csv", "wealth.csv", "manifest.txt"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let stock = std::fs::read_to_string(out.join("stock.csv")).unwrap();
    assert!(stock.starts_with("path_id,node,time,price,in_set\n"));
}

#[test]
fn optimize_reports_the_closed_form_and_oracle() {
    let dir = tmp_dir("optimize");
    let cfg = dir.join("run.cfg");
    // small but honest sizes so the oracle lands near the closed form
    std::fs::write(&cfg, MARKET_CFG.replace("paths = 50", "paths = 4000")).unwrap();
    let out = dir.join("out");
    let output = bin()
        .arg("optimize")
        .arg("--config")
        .arg(&cfg)
        .arg("--steps")
        .arg("256")
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("optimize.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "period,closed_form_w,oracle_w,elu_at_closed_form,elu_at_oracle,stderr"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let closed: f64 = row[1].parse().unwrap();
    let oracle: f64 = row[2].parse().unwrap();
    assert!((closed - 2.0).abs() <= 1e-12, "closed form {closed}");
    assert!((oracle - 2.0).abs() <= 0.5, "oracle {oracle}");
}

#[test]
fn usage_errors_exit_with_code_2() {
    let status = bin().arg("explode").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().arg("simulate").status().unwrap(); // missing --config
    assert_eq!(status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tmp_dir("bad-config");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "[market]\ns0 = -1\n").unwrap();
    let output = bin()
        .arg("simulate")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("missing required key"), "{stderr}");
}

#[test]
fn gallery_runs_standalone() {
    let dir = tmp_dir("gallery");
    let status = bin()
        .arg("gallery")
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("out/gallery.csv").exists());
}
