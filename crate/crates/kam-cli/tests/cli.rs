use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kam-wave"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kam-wave-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_zero(out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(configs().join("zero.toml"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn zero_config_passes_and_writes_every_artifact() {
    let out = scratch("zero");
    let res = run_zero(&out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for name in [
        "config.toml",
        "report.json",
        "convergence.csv",
        "exclusion.csv",
        "residual.csv",
        "torus.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let report: String = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"all_pass\": true"));
    fs::remove_dir_all(&out).unwrap();
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    assert_eq!(run_zero(&a, &["--seed", "7"]).status.code(), Some(0));
    assert_eq!(run_zero(&b, &["--seed", "7"]).status.code(), Some(0));
    for name in [
        "convergence.csv",
        "exclusion.csv",
        "residual.csv",
        "torus.csv",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn overrides_are_echoed() {
    let out = scratch("echo");
    assert_eq!(
        run_zero(&out, &["--seed", "11", "--k-max", "2"])
            .status
            .code(),
        Some(0)
    );
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("seed = 11"));
    assert!(echo.contains("k_max = 2"));
    fs::remove_dir_all(&out).unwrap();
}

#[test]
fn unknown_field_is_named_and_exits_two() {
    let dir = scratch("bad");
    let path = dir.join("bad.toml");
    fs::write(&path, "[schedule]\nsigmaa = 1.0\n").unwrap();
    let res = bin()
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigmaa"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn invalid_value_and_missing_file_exit_two() {
    let dir = scratch("invalid");
    let path = dir.join("neg.toml");
    fs::write(&path, "[wave]\nepsilon = -1.0\n").unwrap();
    let res = bin().arg("--config").arg(&path).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epsilon"));
    let res = bin()
        .arg("--config")
        .arg(dir.join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let out = scratch("sweep");
    let res = run_zero(&out, &["--sweep", "kappa="]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = fs::read_to_string(out.join("sweep_kappa.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
    assert!(table.starts_with("kappa,"));
    let bad = run_zero(&out, &["--sweep", "tau=1"]);
    assert_eq!(bad.status.code(), Some(2));
    fs::remove_dir_all(&out).unwrap();
}

#[test]
fn kappa_sweep_has_one_row_per_value() {
    let out = scratch("sweep-kappa");
    let res = run_zero(&out, &["--sweep", "kappa=1e-4,2e-4"]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = fs::read_to_string(out.join("sweep_kappa.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    fs::remove_dir_all(&out).unwrap();
}
