use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn dmft(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmft"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DMFT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("simulate.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(dmft(&["simulate", "--config", cfg], &a).status.success());
    assert!(dmft(&["simulate", "--config", cfg, "--threads", "1"], &b)
        .status
        .success());
    for f in ["moments.csv", "moments_r000.csv", "moments_r003.csv", "trajectory.bin"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tmp.path().join("c");
    assert!(dmft(&["simulate", "--config", cfg, "--seed", "99"], &c)
        .status
        .success());
    assert_ne!(
        std::fs::read(a.join("moments.csv")).unwrap(),
        std::fs::read(c.join("moments.csv")).unwrap()
    );
    assert_eq!(manifest(&c)["seed"], 99);
}

#[test]
fn chaos_surface_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dmft(
        &[
            "chaos-surface",
            "--config",
            config("chaos_surface.toml").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("chaos_surface.csv")).unwrap();
    assert_eq!(text.lines().count(), 401);
    assert!(!text.contains('\r'));
    let m = manifest(tmp.path());
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["error"].is_null());
}

#[test]
fn compare_fails_loudly_beyond_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(config("compare.toml")).unwrap();
    let strict = write(
        tmp.path(),
        "strict.toml",
        &base.replace("tolerance = 0.05", "tolerance = 1e-9"),
    );
    let out = dmft(
        &["compare", "--config", strict.to_str().unwrap()],
        &tmp.path().join("strict"),
    );
    assert!(!out.status.success());
    let m = manifest(&tmp.path().join("strict"));
    assert!(m["error"].as_str().unwrap().contains("tolerance"));
    assert_eq!(m["summary"]["pass"], false);

    let out = dmft(
        &["compare", "--config", config("compare.toml").to_str().unwrap()],
        &tmp.path().join("ok"),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("ok/compare.csv")).unwrap();
    assert!(csv.starts_with("t,q_meanfield,q_sim_mean,q_sim_stderr"));
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn unknown_keys_are_rejected_with_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(config("meanfield.toml")).unwrap();
    let bad = write(
        tmp.path(),
        "bad.toml",
        &base.replace("noise = 0.1", "noise = 0.1\nnoize = 0.2"),
    );
    let out = dmft(
        &["meanfield", "--config", bad.to_str().unwrap()],
        &tmp.path().join("run"),
    );
    assert!(!out.status.success());
    let err = manifest(&tmp.path().join("run"))["error"].as_str().unwrap().to_string();
    assert!(err.contains("noize"), "{err}");

    let out = dmft(
        &["fp-rate", "--config", "/nonexistent.toml"],
        &tmp.path().join("missing"),
    );
    assert!(!out.status.success());
    assert!(manifest(&tmp.path().join("missing"))["config_sha256"].is_null());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dmft"))
        .args(["fp-rate", "--config", config("fp_rate.toml").to_str().unwrap()])
        .env("DMFT_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fp_rate.json")).unwrap()).unwrap();
    assert!(summary["residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn girsanov_verification_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dmft(
        &["girsanov-verify", "--config", config("girsanov.toml").to_str().unwrap()],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(manifest(tmp.path())["summary"]["pass"], true);
}
