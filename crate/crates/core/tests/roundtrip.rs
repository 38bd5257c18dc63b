use std::path::PathBuf;

use brinkdarcy::harness::io::{read_diagnostics_csv, read_raw};
use brinkdarcy::harness::{parse_config, run_single, run_single_to, SimConfig};

fn shipped() -> Vec<(PathBuf, SimConfig)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let cfg = parse_config(&std::fs::read_to_string(&path).unwrap()).unwrap();
            (path, cfg)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn canonical_config_reparses_to_itself() {
    for (path, cfg) in shipped() {
        let text = cfg.serialize();
        let again = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(again, cfg, "{}", path.display());
        assert_eq!(again.serialize(), text);
    }
}

#[test]
fn diagnostics_csv_reads_back_bit_for_bit() {
    let (_, cfg) = shipped().into_iter().find(|(p, _)| p.ends_with("default_1d.cfg")).unwrap();
    let cfg = cfg.with_cells(64);
    let dir = tempfile::tempdir().unwrap();
    let run = run_single_to(&cfg, Some(dir.path())).unwrap();
    let back = read_diagnostics_csv(&dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(back, run.records);
    let written = parse_config(&std::fs::read_to_string(dir.path().join("config.cfg")).unwrap()).unwrap();
    assert_eq!(written.serialize(), cfg.serialize());
}

#[test]
fn planar_snapshot_reads_back_bit_for_bit() {
    let (_, mut cfg) = shipped().into_iter().find(|(p, _)| p.ends_with("anisotropic_2d.cfg")).unwrap();
    cfg = cfg.with_cells(16);
    cfg.time.t_final = 0.01;
    let dir = tempfile::tempdir().unwrap();
    let run = run_single_to(&cfg, Some(dir.path())).unwrap();
    let grid = cfg.build_grid().unwrap();
    let last = format!("snapshot_{:06}", run.steps);
    for (name, field) in [("n1", &run.state.n1), ("n2", &run.state.n2), ("m", &run.state.m)] {
        let back = read_raw(&dir.path().join("snapshots").join(format!("{last}_{name}.bin")), &grid).unwrap();
        assert_eq!(back.values(), field.values(), "{name}");
        let meta: serde_json::Value = serde_json::from_slice(
            &std::fs::read(dir.path().join("snapshots").join(format!("{last}_{name}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(meta["grid"]["cells_per_axis"], 16);
    }
}

#[test]
fn repeated_runs_are_identical() {
    for (path, cfg) in shipped() {
        let cfg = cfg.with_cells(if cfg.grid.dimension == 2 { 16 } else { 64 });
        let a = run_single(&cfg).unwrap();
        let b = run_single(&cfg).unwrap();
        assert_eq!(a.records, b.records, "{}", path.display());
        assert_eq!(a.state.n1.values(), b.state.n1.values());
        assert_eq!(a.state.m.values(), b.state.m.values());
    }
}
