use std::fs;
use std::path::{Path, PathBuf};

use rvos_core::runner::{cmd_end_to_end, cmd_report, ExpertConfig, RunConfig, RunError};
use rvos_core::synthetic::{self, DatasetPaths, DEFAULT_SHAPE};

// Sampling ablation on the validation split: model, sampling, frames, J&F, J, F.
const ABLATION_ROWS: [(&str, f64, f64, f64); 7] = [
    ("8B first 5", 0.5160, 0.4819, 0.5501),
    ("26B first 5", 0.5211, 0.4835, 0.5588),
    ("26B uniform 5", 0.5569, 0.5193, 0.5944),
    ("26B uniform 10", 0.5745, 0.5386, 0.6103),
    ("26B uniform 15", 0.5786, 0.5432, 0.6140),
    ("26B uniform 20", 0.5806, 0.5461, 0.6152),
    ("26B uniform 25", 0.5798, 0.5473, 0.6123),
];

fn fixture(dir: &Path) -> DatasetPaths {
    let index = synthetic::fixture_index();
    let gt = synthetic::render_ground_truth(&index, DEFAULT_SHAPE);
    synthetic::write_dataset(dir.join("data"), &index, &gt).unwrap()
}

fn config(paths: &DatasetPaths, out: PathBuf, experts: &[&str]) -> RunConfig {
    RunConfig {
        meta: Some(paths.metadata.clone()),
        gt: Some(paths.ground_truth.clone()),
        out: Some(out),
        experts: experts.iter().map(|e| e.parse::<ExpertConfig>().unwrap()).collect(),
        seed: 17,
        ..RunConfig::default()
    }
}

#[test]
fn report_renders_published_ablation_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for (i, (label, jf, j, f)) in ABLATION_ROWS.iter().enumerate() {
        let p = dir.path().join(format!("row{i}.json"));
        fs::write(&p, format!(r#"{{"J&F": {jf:.4}, "J": {j:.4}, "F": {f:.4}}}"#)).unwrap();
        paths.push(p);
        labels.push(label.to_string());
    }
    let table = cmd_report(&paths, &labels).unwrap();
    let text = table.to_text();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "Run                 J&F        J        F");
    assert_eq!(lines[1], "8B first 5       51.60    48.19    55.01");
    assert_eq!(lines[6], "26B uniform 20   58.06*   54.61    61.52*");
    assert_eq!(lines[7], "26B uniform 25   57.98    54.73*   61.23");
    let csv = table.to_csv();
    assert!(
        csv.contains("26B uniform 20,58.06,54.61,61.52,true,false,true\n"),
        "{csv}"
    );
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn report_rejects_mismatched_labels_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    fs::write(&p, r#"{"J&F": 0.5, "J": 0.5, "F": 0.5}"#).unwrap();
    let err = cmd_report(std::slice::from_ref(&p), &[]).unwrap_err();
    assert!(err.is_validation());
    let err = cmd_report(&[dir.path().join("nope.json")], &["x".into()]).unwrap_err();
    assert!(matches!(err, RunError::MissingPath { .. }));
    assert!(cmd_report(&[], &[]).unwrap_err().is_validation());
}

#[test]
fn three_noisy_experts_give_four_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture(dir.path());
    let outcome = cmd_end_to_end(&config(
        &paths,
        dir.path().join("out"),
        &[
            "a,segmenter=gt-noise:0.15",
            "b,segmenter=gt-noise:0.15",
            "c,segmenter=gt-noise:0.15",
        ],
    ))
    .unwrap();
    let names: Vec<&str> = outcome.reports.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["a", "b", "c", "fused"]);
    assert_eq!(outcome.table.rows.len(), 4);
    // distinct derived seeds give distinct experts
    let jf: Vec<f64> = outcome.reports.iter().map(|(_, r)| r.summary.jf).collect();
    assert!(jf[0] != jf[1] && jf[1] != jf[2]);
    for name in names {
        let summary = dir.path().join("out/eval").join(name).join("summary.json");
        assert!(summary.is_file(), "{}", summary.display());
    }
}

#[test]
fn single_expert_fused_equals_it() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture(dir.path());
    let outcome = cmd_end_to_end(&config(
        &paths,
        dir.path().join("out"),
        &["solo,segmenter=gt-noise:0.2,propagator=decay-noise:0.05:0.02"],
    ))
    .unwrap();
    let solo = outcome.report("solo").unwrap();
    let fused = outcome.report("fused").unwrap();
    assert_eq!(solo.summary, fused.summary);
    assert_eq!(solo.records, fused.records);
    let read = |p: &str| fs::read(dir.path().join("out").join(p)).unwrap();
    assert_eq!(
        read("experts/solo/vid_walk/1/00003.png"),
        read("fused/vid_walk/1/00003.png")
    );
}

#[test]
fn missing_ground_truth_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture(dir.path());
    let mut c = config(&paths, dir.path().join("out"), &["a"]);
    c.gt = Some(dir.path().join("no_such_gt"));
    let err = cmd_end_to_end(&c).unwrap_err();
    assert!(matches!(err, RunError::MissingPath { .. }), "{err}");
    assert!(err.is_validation());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_expert_list_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture(dir.path());
    let c = config(&paths, dir.path().join("out"), &["a", "a"]);
    assert!(cmd_end_to_end(&c).unwrap_err().is_validation());
    let c = config(
        &paths,
        dir.path().join("out"),
        &["p,segmenter=precomputed:/definitely/not/here"],
    );
    assert!(cmd_end_to_end(&c).unwrap_err().is_validation());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture(dir.path());
    fs::remove_file(paths.ground_truth.join("vid_turn/0/00003.png")).unwrap();
    let err = cmd_end_to_end(&config(&paths, dir.path().join("out"), &["a"])).unwrap_err();
    match &err {
        RunError::Stage { stage, .. } => assert_eq!(*stage, "load"),
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("00003"), "{err}");
}

#[test]
fn uniform_beats_first_k_in_report() {
    let dir = tempfile::tempdir().unwrap();
    let index = synthetic::late_object_index(60);
    let gt = synthetic::late_object_ground_truth(DEFAULT_SHAPE, 60);
    let paths = synthetic::write_dataset(dir.path().join("late"), &index, &gt).unwrap();
    let outcome = cmd_end_to_end(&config(
        &paths,
        dir.path().join("out"),
        &["first5,strategy=first_k", "uniform5,strategy=uniform"],
    ))
    .unwrap();
    let row = |name: &str| outcome.table.rows.iter().find(|r| r.label == name).unwrap();
    assert!(row("uniform5").summary.jf > row("first5").summary.jf);
    assert!(row("uniform5").best[0] && !row("first5").best[0]);
    // an empty prediction only scores on the 40 frames before the object appears
    assert!((row("first5").summary.jf - 40.0 / 60.0).abs() < 1e-9);
}
