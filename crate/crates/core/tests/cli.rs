//! End-to-end CLI checks: exit codes, file outputs, stdout hygiene.

use std::path::{Path, PathBuf};
use std::process::Command;

use stonescan::dataprep::{Label, Manifest, ManifestRow, Split};
use stonescan::imaging::{save_png, ImageBuffer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stonescan"))
}

fn write_replay(path: &Path, stems: &[String]) {
    let mut out = String::new();
    for stem in stems {
        out.push_str(&format!(
            "{{\"image\": \"{stem}\", \"boxes\": [[60,70,130,170,0.91],[190,70,260,170,0.88]]}}\n"
        ));
    }
    std::fs::write(path, out).unwrap();
}

fn write_batch(dir: &Path, n: usize) -> (PathBuf, PathBuf, Vec<String>) {
    let mut rows = Vec::new();
    let mut stems = Vec::new();
    for i in 0..n {
        let stem = format!("img{i:03}");
        let path = dir.join(format!("{stem}.png"));
        save_png(&ImageBuffer::filled(320, 240, [60, 60, 60]), &path).unwrap();
        rows.push(ManifestRow {
            stem: stem.clone(),
            path,
            label: Label::Stone,
            subject: None,
            split: Split::Test,
        });
        stems.push(stem);
    }
    let manifest_path = dir.join("manifest.csv");
    Manifest::from_rows(rows).unwrap().write_csv(&manifest_path).unwrap();
    let replay_path = dir.join("replay.jsonl");
    write_replay(&replay_path, &stems);
    (manifest_path, replay_path, stems)
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_two() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_two() {
    let out = bin().args(["run", "--definitely-not-a-flag", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_source_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _, _) = write_batch(tmp.path(), 1);
    let out = bin()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detector source"));
}

#[test]
fn run_clean_batch_exits_zero_and_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, replay, _) = write_batch(tmp.path(), 5);
    let results = tmp.path().join("results.jsonl");
    let out = bin()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .args(["--detector-replay"])
        .arg(&replay)
        .args(["--classifier-stub-logit", "2.0", "--out"])
        .arg(&results)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // machine-readable output goes to the file, not stdout
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn run_with_corrupt_image_exits_one_but_writes_all_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, replay, stems) = write_batch(tmp.path(), 10);
    // corrupt one of the ten
    std::fs::write(tmp.path().join(format!("{}.png", stems[3])), b"junk").unwrap();
    let results = tmp.path().join("results.jsonl");
    let out = bin()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .args(["--detector-replay"])
        .arg(&replay)
        .args(["--classifier-stub-logit", "0.0", "--out"])
        .arg(&results)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = std::fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn config_file_merges_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, replay, _) = write_batch(tmp.path(), 2);
    let config = tmp.path().join("pipeline.conf");
    std::fs::write(
        &config,
        format!(
            "detector_replay = {}\nclassifier_stub_logit = -5.0\nworkers = 2\n",
            replay.display()
        ),
    )
    .unwrap();
    let results = tmp.path().join("results.jsonl");
    // flag overrides the config's always-negative stub with always-positive
    let out = bin()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .args(["--config"])
        .arg(&config)
        .args(["--classifier-stub-logit", "5.0", "--out"])
        .arg(&results)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&results).unwrap();
    assert!(text.lines().all(|l| l.contains("\"positive\":true")));
}

#[test]
fn bench_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, replay, _) = write_batch(tmp.path(), 2);
    let report = tmp.path().join("bench.json");
    let out = bin()
        .args(["bench", "--manifest"])
        .arg(&manifest)
        .args(["--detector-replay"])
        .arg(&replay)
        .args(["--classifier-stub-logit", "0.0", "--reps", "3", "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["repetitions"], 3);
    assert!(parsed["stages"]["end_to_end"]["mean_ms"].is_number());
}

#[test]
fn score_pipeline_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, replay, stems) = write_batch(tmp.path(), 4);
    let results = tmp.path().join("results.jsonl");
    bin()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .args(["--detector-replay"])
        .arg(&replay)
        .args(["--classifier-stub-logit", "5.0", "--out"])
        .arg(&results)
        .status()
        .unwrap();
    // all crops labeled stone, always-positive stub: perfect recall
    let labels = tmp.path().join("labels.csv");
    let mut text = String::from("crop_id,label\n");
    for stem in &stems {
        text.push_str(&format!("{stem}_kidney0,stone\n{stem}_kidney1,stone\n"));
    }
    std::fs::write(&labels, text).unwrap();
    let report = tmp.path().join("report.json");
    let out = bin()
        .args(["score", "--results"])
        .arg(&results)
        .args(["--labels"])
        .arg(&labels)
        .args(["--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["crop_matrix"]["tp"], 8);
    assert_eq!(parsed["crop_metrics"]["recall"], 1.0);
}

#[test]
fn manifest_and_augment_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    for (split, label, name) in [
        ("train", "stone", "s001_a.png"),
        ("train", "stone", "s001_b.png"),
        ("train", "normal", "s002_a.png"),
    ] {
        let dir = root.join(split).join(label);
        std::fs::create_dir_all(&dir).unwrap();
        save_png(&ImageBuffer::filled(10, 10, [44, 44, 44]), &dir.join(name)).unwrap();
    }
    let manifest = tmp.path().join("manifest.csv");
    let out = bin()
        .args(["manifest", "--root"])
        .arg(&root)
        .args(["--out"])
        .arg(&manifest)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let aug_dir = tmp.path().join("augmented");
    let out = bin()
        .args(["augment", "--manifest"])
        .arg(&manifest)
        .args(["--out"])
        .arg(&aug_dir)
        .args(["--seed", "7", "--filter", "split=train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // 3 inputs + 2 stone flips
    let m = Manifest::read_csv(&aug_dir.join("manifest.csv")).unwrap();
    assert_eq!(m.len(), 5);
}
