//! End-to-end tests of the binary: exit codes, file outputs, and the
//! train/classify replay contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use strokesig::eval::{synthesize_crossing_network, CanvasSpec};
use strokesig::pipeline::{read_manifest, write_image_png};
use strokesig::raster::DrawingImage;
use strokesig::Grid;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strokesig"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Render a small corpus through the synth subcommand; returns the manifest.
fn synth_corpus(dir: &Path, per_artist: usize, imitations: usize) -> PathBuf {
    let out = run(bin()
        .arg("synth")
        .arg("--out")
        .arg(dir)
        .args(["--profiles", "broad-arc,tight-curl"])
        .args(["--per-artist", &per_artist.to_string()])
        .args(["--imitations", &imitations.to_string()])
        .args(["--seed", "11"]));
    assert!(out.status.success(), "synth failed: {}", stderr_of(&out));
    dir.join("manifest.csv")
}

#[test]
fn blank_image_segments_to_an_empty_stroke_file() {
    let dir = tempfile::tempdir().unwrap();
    let blank = dir.path().join("blank.png");
    let image =
        DrawingImage::new("blank", Grid::filled(64, 48, 250u8), 40.0).unwrap();
    write_image_png(&blank, &image).unwrap();

    let out = run(bin()
        .arg("segment")
        .arg("--image")
        .arg(&blank)
        .args(["--px-per-cm", "40"])
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success(), "{}", stderr_of(&out));

    let text = std::fs::read_to_string(dir.path().join("blank.strokes.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["strokes"].as_array().unwrap().len(), 0);
    assert!(dir.path().join("blank.overlay.png").exists());
}

#[test]
fn crossing_network_recovers_the_generated_stroke_count() {
    let dir = tempfile::tempdir().unwrap();
    let canvas = CanvasSpec::default();
    let d = synthesize_crossing_network(3, &canvas, "net3", 21).unwrap();
    let png = dir.path().join("net3.png");
    write_image_png(&png, &d.image).unwrap();

    let out = run(bin()
        .arg("segment")
        .arg("--image")
        .arg(&png)
        .args(["--px-per-cm", &canvas.px_per_cm.to_string()])
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success(), "{}", stderr_of(&out));

    let text = std::fs::read_to_string(dir.path().join("net3.strokes.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(
        parsed["strokes"].as_array().unwrap().len(),
        d.owner_count(),
        "segmentation should recover the generator's stroke count"
    );
}

#[test]
fn missing_px_per_cm_is_a_usage_error() {
    let out = run(bin().arg("segment").args(["--image", "whatever.png"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_two_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "manifest = \"m.csv\"\nkernle = \"rbf\"\n").unwrap();
    let out = run(bin()
        .arg("evaluate")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("kernle"), "stderr: {}", stderr_of(&out));
}

#[test]
fn runtime_failures_exit_one() {
    let out = run(bin()
        .arg("classify")
        .args(["--model", "/nonexistent/model.json", "--manifest", "/nonexistent/m.csv"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_writes_one_image_and_manifest_row_per_drawing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 30, 0);
    let entries = read_manifest(&manifest).unwrap();
    assert_eq!(entries.len(), 60, "2 profiles x 30 drawings");
    let pngs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 60);
    assert!(entries.iter().all(|e| !e.is_fake));

    // Determinism: the same invocation produces byte-identical images.
    let again = tempfile::tempdir().unwrap();
    synth_corpus(again.path(), 30, 0);
    let probe = "broad-arc-017.png";
    let a = std::fs::read(dir.path().join(probe)).unwrap();
    let b = std::fs::read(again.path().join(probe)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synth_marks_imitations_as_fakes_claiming_the_shape_artist() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 2, 1);
    let entries = read_manifest(&manifest).unwrap();
    // 2 profiles x 2 genuine + 2 ordered pairs x 1 imitation.
    assert_eq!(entries.len(), 6);
    let fakes: Vec<_> = entries.iter().filter(|e| e.is_fake).collect();
    assert_eq!(fakes.len(), 2);
    for f in &fakes {
        // "X-after-Y" imitates Y's shapes, so it claims to be Y.
        assert!(f.id.ends_with("-000"));
        assert!(
            f.id.contains(&format!("after-{}", f.artist)),
            "fake {} should claim the shape artist, claims {}",
            f.id,
            f.artist
        );
    }
    let out = run(bin().arg("synth").arg("--out").arg(dir.path()).args([
        "--profiles",
        "no-such-hand",
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("no-such-hand"));
}

#[test]
fn features_tabulates_every_segmented_stroke() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 2, 0);
    let csv_path = dir.path().join("features.csv");
    let out = run(bin()
        .arg("features")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&csv_path));
    assert!(out.status.success(), "{}", stderr_of(&out));

    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 4 + strokesig::features::FEATURE_DIM);
    let n_rows = lines.count();
    assert!(n_rows > 4, "expected several stroke rows, got {n_rows}");
}

#[test]
fn train_then_classify_replays_the_training_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 4, 0);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "manifest = \"manifest.csv\"\nseed = 3\n").unwrap();
    let model_dir = dir.path().join("model");

    let out = run(bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&model_dir));
    assert!(out.status.success(), "train failed: {}", stderr_of(&out));
    assert!(model_dir.join("model.json").exists());
    assert!(model_dir.join("train_verdicts.csv").exists());

    let logged: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(model_dir.join("train_verdicts.json")).unwrap(),
    )
    .unwrap();
    assert!(!logged.is_empty());

    let out = run(bin()
        .arg("classify")
        .arg("--model")
        .arg(model_dir.join("model.json"))
        .arg("--manifest")
        .arg(&manifest));
    assert!(out.status.success(), "classify failed: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();

    // Every logged training verdict is reproduced exactly by a later
    // classify run over the same drawings with the saved model.
    let mut compared = 0;
    for row in &logged {
        let id = row["drawing_id"].as_str().unwrap();
        let strategy = row["strategy"].as_str().unwrap();
        let drawing = report["drawings"]
            .as_array()
            .unwrap()
            .iter()
            .find(|d| d["drawing_id"] == id)
            .unwrap_or_else(|| panic!("classify output misses drawing {id}"));
        let verdict = drawing["verdicts"]
            .as_array()
            .unwrap()
            .iter()
            .find(|v| v["strategy"] == strategy)
            .unwrap_or_else(|| panic!("classify output misses strategy {strategy}"));
        assert_eq!(verdict["winner"], row["winner"], "{id}/{strategy} winner");
        assert_eq!(verdict["scores"], row["scores"], "{id}/{strategy} scores");
        assert_eq!(
            verdict["n_strokes_counted"], row["n_strokes"],
            "{id}/{strategy} counted strokes"
        );
        compared += 1;
    }
    assert!(compared >= 8, "compared only {compared} verdicts");

    // Single-image mode with a strategy filter reports just that strategy.
    let probe = dir.path().join("broad-arc-001.png");
    let out = run(bin()
        .arg("classify")
        .arg("--model")
        .arg(model_dir.join("model.json"))
        .arg("--image")
        .arg(&probe)
        .args(["--px-per-cm", "40", "--strategy", "majority"]));
    assert!(out.status.success(), "{}", stderr_of(&out));
    let single: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let verdicts = single["drawings"][0]["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 1);
    assert_eq!(verdicts[0]["strategy"], "majority");
}

#[test]
fn evaluate_writes_reports_and_a_headline() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 4, 0);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "manifest = \"manifest.csv\"\nseed = 3\nfolds = 2\n").unwrap();
    let report_dir = dir.path().join("report");

    let out = run(bin()
        .arg("evaluate")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&report_dir));
    assert!(out.status.success(), "evaluate failed: {}", stderr_of(&out));
    for f in ["report.json", "report.csv", "verdicts.csv"] {
        assert!(report_dir.join(f).exists(), "missing {f}");
    }
    let text = stdout_of(&out);
    assert!(text.contains("stroke accuracy"), "stdout: {text}");
    assert!(text.contains("drawing accuracy"), "stdout: {text}");
}
