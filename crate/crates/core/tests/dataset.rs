use std::collections::HashSet;
use std::fs;
use std::path::Path;

use dualsmoke_core::dataset::{
    build_dataset, build_sample, read_manifest, run_scenario, scenario_seed, verify, DatasetOptions, SampleOutcome,
    ScenarioConfig, Split,
};
use dualsmoke_core::field::image;
use dualsmoke_core::GridSpec;

fn small() -> ScenarioConfig {
    ScenarioConfig { grid: GridSpec::square(64).unwrap(), frames: 150, ..Default::default() }
}

fn options(dir: &Path, n_train: usize, n_test: usize) -> DatasetOptions {
    DatasetOptions {
        scenario: small(),
        created_at: Some("2026-01-01T00:00:00Z".into()),
        ..DatasetOptions::new(dir, n_train, n_test, 11)
    }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn scenario_is_deterministic_and_keeps_the_window() {
    let cfg = ScenarioConfig { seed: 5, ..small() };
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.final_velocity, b.final_velocity);
    assert_eq!(a.sequence.frames().len(), 26);
    assert_eq!(cfg.window_frames(), 25);
    assert_eq!(a.sequence.frames().last().unwrap(), &a.final_velocity);
    assert!((a.sequence.span() - 2.5).abs() < 1e-12);
    let speed = a.final_velocity.max_speed();
    assert!(speed > 0.0 && speed <= 10.0, "{speed}");
    // random choices are drawn from the seed and recorded
    assert!(a.config.source_x.is_some() && a.config.square_angle.is_some());
    let other = run_scenario(&ScenarioConfig { seed: 6, ..small() }).unwrap();
    assert_ne!(other.config.source_x, a.config.source_x);
}

#[test]
fn still_square_without_buoyancy_stays_at_rest() {
    let cfg = ScenarioConfig { seed: 2, square_speed: 0.0, alpha: 0.0, ..small() };
    let run = run_scenario(&cfg).unwrap();
    assert!(run.final_velocity.max_speed() <= 1e-8);
}

#[test]
fn persistent_square_keeps_driving() {
    let cfg = ScenarioConfig { seed: 2, alpha: 0.0, persistent_square: true, ..small() };
    let once = ScenarioConfig { persistent_square: false, ..cfg.clone() };
    let a = run_scenario(&cfg).unwrap().final_velocity.max_speed();
    let b = run_scenario(&once).unwrap().final_velocity.max_speed();
    assert!(a > b, "{a} vs {b}");
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ScenarioConfig { frames: 24, ..small() }.validate().is_err());
    assert!(ScenarioConfig { square_fraction: 1.2, ..small() }.validate().is_err());
    assert!(ScenarioConfig { dt: 0.0, ..small() }.validate().is_err());
    assert!(ScenarioConfig { frames: 25, ..small() }.validate().is_ok());
    let d = ScenarioConfig::default();
    assert_eq!((d.grid.nx, d.grid.ny, d.frames, d.dt, d.alpha), (256, 256, 1000, 0.1, 0.025));
    assert_eq!(d.window_frames(), 25);
}

#[test]
fn sample_files_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = ScenarioConfig { seed: scenario_seed(3, Split::Train, 0), ..small() };
    let ra = build_sample(&cfg, Split::Train, "train-00000", a.path(), "t").unwrap();
    let rb = build_sample(&cfg, Split::Train, "train-00000", b.path(), "t").unwrap();
    match (ra, rb) {
        (SampleOutcome::Accepted(x), SampleOutcome::Accepted(y)) => {
            assert_eq!(x, y);
            let lcs = image::read_mask_png(a.path().join(&x.files.lcs), None).unwrap();
            let sketch = image::read_sketch_png(a.path().join(&x.files.sketch), None).unwrap();
            assert!(!sketch.is_empty() && sketch.is_subset_of(&lcs));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn most_seeds_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut accepted = 0;
    for k in 0..20 {
        let cfg = ScenarioConfig { seed: scenario_seed(1, Split::Train, k), ..small() };
        if let SampleOutcome::Accepted(row) = build_sample(&cfg, Split::Train, &format!("s{k}"), dir.path(), "t").unwrap()
        {
            accepted += 1;
            assert_eq!(row.grid, [64, 64]);
        }
    }
    assert!(accepted >= 16, "{accepted} of 20");
}

#[test]
fn one_plus_one_dataset_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(dir.path(), 1, 1);
    let summary = build_dataset(&opts).unwrap();
    assert_eq!(summary.accepted, 2);
    let rows = read_manifest(&opts.manifest_path()).unwrap();
    assert_eq!(rows.len(), 2);
    let ids: HashSet<_> = rows.iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), 2);
    assert_eq!(rows.iter().filter(|r| r.split == Split::Test).count(), 1);
    let report = verify(&opts.manifest_path()).unwrap();
    assert!(report.ok(), "{:?}", report.problems);
    assert_eq!(report.samples, 2);

    // manifest rows carry the documented keys
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(opts.manifest_path()).unwrap().lines().next().unwrap()).unwrap();
    for key in ["id", "split", "seed", "files", "grid", "created_at"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["created_at"], "2026-01-01T00:00:00Z");
}

#[test]
fn interrupted_build_resumes_to_the_same_manifest() {
    let full = tempfile::tempdir().unwrap();
    build_dataset(&options(full.path(), 2, 1)).unwrap();

    let part = tempfile::tempdir().unwrap();
    let opts = options(part.path(), 2, 1);
    build_dataset(&opts).unwrap();
    // drop the last row and its files as if the run had been killed
    let text = fs::read_to_string(opts.manifest_path()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let last: serde_json::Value = serde_json::from_str(lines.pop().unwrap()).unwrap();
    fs::remove_dir_all(part.path().join(last["id"].as_str().unwrap())).unwrap();
    fs::write(opts.manifest_path(), lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();

    let again = build_dataset(&opts).unwrap();
    assert_eq!(again.accepted, 1);
    assert_eq!(again.skipped, 2);
    assert_eq!(tree_bytes(full.path()), tree_bytes(part.path()));
    // a completed build is a no-op
    assert_eq!(build_dataset(&opts).unwrap().accepted, 0);
}

#[test]
fn verify_reports_broken_samples() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(dir.path(), 1, 1);
    build_dataset(&opts).unwrap();
    let rows = read_manifest(&opts.manifest_path()).unwrap();
    let lcs = image::read_mask_png(dir.path().join(&rows[0].files.lcs), None).unwrap();
    let mut bad = lcs.clone();
    let s = *lcs.spec();
    let outside = (0..s.cells()).find(|&c| !lcs.get(c % s.nx, c / s.nx)).unwrap();
    bad.set(outside % s.nx, outside / s.nx, true);
    image::write_sketch_png(dir.path().join(&rows[0].files.sketch), &bad).unwrap();
    fs::remove_file(dir.path().join(&rows[1].files.vf)).unwrap();
    let report = verify(&opts.manifest_path()).unwrap();
    assert!(!report.ok());
    assert!(report.problems.iter().any(|p| p.contains("sketch not inside LCS")), "{:?}", report.problems);
    assert!(report.problems.iter().any(|p| p.contains("vf")), "{:?}", report.problems);
}
