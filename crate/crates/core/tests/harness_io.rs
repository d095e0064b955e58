use std::fs;
use std::io::Cursor;

use botw_core::environments::instance_catalog;
use botw_core::harness::{
    self, cell_id, checkpoints, compare, digest_trace, read_summary, run_cell, ExperimentConfig, RunOverrides,
    TRACE_HEADER,
};
use botw_core::learner::{LearnerConfig, Mode};

fn config(dir: &std::path::Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "output_dir = {:?}\nseeds = [0, 1]\nhorizons = [64, 128]\ninstances = [\"hypercube-stoch(2, 0.3, 0.1)\", \"square-corrupted(5)\"]\n{extra}",
        dir.display().to_string()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

#[test]
fn run_writes_traces_and_summary_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = harness::run(&config(&tmp.path().join("a"), "")).unwrap();
    let b = harness::run(&config(&tmp.path().join("b"), "")).unwrap();
    assert_eq!(a.trace_paths.len(), 2 * 2 * 2 * 2);
    assert_eq!(a.rows.len(), 2 * 2 * 2);
    assert_eq!(a.failures(), 0);
    for (pa, pb) in a.trace_paths.iter().zip(&b.trace_paths) {
        assert_eq!(pa.file_name(), pb.file_name());
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    }
    let sa = fs::read_to_string(&a.summary_path).unwrap();
    assert_eq!(sa, fs::read_to_string(&b.summary_path).unwrap());
    assert_eq!(read_summary(&a.summary_path).unwrap(), a.rows);
}

#[test]
fn traces_alone_reproduce_the_cell_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = harness::run(&config(tmp.path(), "")).unwrap();
    for (result, path) in out.results.iter().zip(&out.trace_paths) {
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        let digest = digest_trace(Cursor::new(text), result.horizon).unwrap();
        assert_eq!(digest.rounds, result.rounds);
        assert_eq!(digest.final_regret, result.final_regret);
        assert_eq!(digest.checkpoints, result.checkpoints);
        assert!((digest.sum_ratio - result.sum_ratio).abs() < 1e-9 * result.sum_ratio.max(1.0));
        assert!((digest.corruption - result.corruption).abs() < 1e-9);
    }
}

#[test]
fn trace_has_one_row_per_round() {
    let (set, spec) = instance_catalog("square-adversarial-alternating").unwrap();
    let mut buf = Vec::new();
    let mut losses = Vec::new();
    let cfg = LearnerConfig::new(100, Mode::Baseline, 4);
    let r = run_cell("alt", &set, &spec, &cfg, true, &mut buf, Some(&mut losses)).unwrap();
    assert_eq!(r.rounds, 100);
    let text = String::from_utf8(buf).unwrap();
    // comment line + header + one row per round
    assert_eq!(text.lines().count(), 102);
    assert_eq!(String::from_utf8(losses).unwrap().lines().count(), 101);
    assert_eq!(r.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), checkpoints(100));
}

#[test]
fn comparing_a_summary_with_itself_gives_unit_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = harness::run(&config(tmp.path(), "modes = [\"baseline\"]")).unwrap();
    let rows = compare(&[out.summary_path.clone(), out.summary_path.clone()]).unwrap();
    assert_eq!(rows.len(), 2 * out.rows.len());
    for r in rows {
        assert!((r.ratio - 1.0).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn overrides_narrow_the_grid_and_move_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    let overrides = RunOverrides { seed: Some(7), horizon: Some(32), output_root: Some(tmp.path().to_path_buf()) };
    let cfg = config(std::path::Path::new("out/x"), "").with_overrides(&overrides).unwrap();
    assert_eq!(cfg.seeds, vec![7]);
    assert_eq!(cfg.horizons, vec![32]);
    assert_eq!(cfg.output_dir, tmp.path().join("out/x"));
    let out = harness::run(&cfg).unwrap();
    let expected = cell_id("square-corrupted(5)", Mode::ScaledUp, 32, 7);
    assert!(out.trace_paths.iter().any(|p| p.file_stem().unwrap().to_str() == Some(&expected)));
}

#[test]
fn bad_configs_are_rejected() {
    for bad in [
        "output_dir = \"x\"\nseeds = []\nhorizons = [10]\ninstances = [\"simplex-stoch\"]",
        "output_dir = \"x\"\nseeds = [0]\nhorizons = [10, 5]\ninstances = [\"simplex-stoch\"]",
        "output_dir = \"x\"\nseeds = [0]\nhorizons = [10]",
        "output_dir = \"x\"\nseeds = [0]\nhorizons = [10]\ninstances = [\"simplex-stoch\"]\neta = 0.5",
        "output_dir = \"x\"\nseeds = [0]\nhorizons = [10]\ninstances = [\"simplex-stoch\"]\ntypo = 1",
    ] {
        assert!(ExperimentConfig::from_toml_str(bad).is_err(), "{bad}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.resolve_instances().unwrap();
    }
}
