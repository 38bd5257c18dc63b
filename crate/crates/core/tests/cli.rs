use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[grid]
dimension = 1
half_length = 1
cells_per_axis = 32

[time]
t_final = 0.05

[model]
nu = 0.01

[species1]
nbar = 1
slope = 1

[species2]
nbar = 1
slope = 1

[initial]
preset = gauss
center1 = -0.3
width1 = 0.2
amplitude1 = 0.4
center2 = 0.3
width2 = 0.2
amplitude2 = 0.4
";

fn bin(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brinkdarcy")).args(args).output().expect("spawn binary")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn validate_accepts_shipped_configs() {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let out = bin(&["validate".as_ref(), path.as_os_str()]);
        assert_eq!(code(&out), 0, "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["pass"], true);
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_key = write_cfg(dir.path(), "a.cfg", &SMALL.replace("nu = 0.01", "nu = 0.01\nviscosity = 2"));
    let negative_nu = write_cfg(dir.path(), "b.cfg", &SMALL.replace("nu = 0.01", "nu = -1"));
    let too_dense = write_cfg(dir.path(), "c.cfg", &SMALL.replace("amplitude1 = 0.4", "amplitude1 = 1.5"));
    let missing = dir.path().join("missing.cfg");
    for path in [&unknown_key, &negative_nu, &too_dense, &missing] {
        for sub in ["validate", "run"] {
            let out = bin(&[sub.as_ref(), path.as_os_str()]);
            assert_eq!(code(&out), 1, "{sub} {}", path.display());
            assert!(!out.stderr.is_empty());
        }
    }
}

#[test]
fn usage_errors_exit_with_one_and_help_with_zero() {
    assert_eq!(code(&bin(&["frobnicate".as_ref()])), 1);
    assert_eq!(code(&bin(&["sweep".as_ref(), "x.cfg".as_ref()])), 1);
    assert_eq!(code(&bin(&["--help".as_ref()])), 0);
    assert_eq!(code(&bin(&["--version".as_ref()])), 0);
}

#[test]
fn bad_sweep_and_refinement_requests_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "small.cfg", SMALL);
    let out = dir.path().join("out");
    let negative = bin(&[
        "sweep".as_ref(),
        cfg.as_os_str(),
        "--nu".as_ref(),
        "0.1,-0.01".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert_eq!(code(&negative), 1);
    let uneven = bin(&[
        "refine".as_ref(),
        cfg.as_os_str(),
        "--cells".as_ref(),
        "32,48".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert_eq!(code(&uneven), 1);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "small.cfg", SMALL);
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = bin(&["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), blocker.join("sub").as_os_str()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_sweep_and_refine_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "small.cfg", SMALL);

    let run_dir = dir.path().join("run");
    let out = bin(&["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), run_dir.as_os_str()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.cfg", "diagnostics.csv", "audit.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }

    let sweep_dir = dir.path().join("sweep");
    let out = bin(&[
        "sweep".as_ref(),
        cfg.as_os_str(),
        "--nu".as_ref(),
        "0.1,0.01".as_ref(),
        "--samples".as_ref(),
        "8".as_ref(),
        "--out".as_ref(),
        sweep_dir.as_os_str(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "header, two viscous rows, Darcy row");
    assert!(sweep_dir.join("darcy/diagnostics.csv").is_file());

    let refine_dir = dir.path().join("refine");
    let out = bin(&[
        "refine".as_ref(),
        cfg.as_os_str(),
        "--cells".as_ref(),
        "16,32".as_ref(),
        "--out".as_ref(),
        refine_dir.as_os_str(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(refine_dir.join("refinement.csv").is_file());
    assert!(refine_dir.join("cells_32/diagnostics.csv").is_file());
}
