use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lumendet::data::{load_image, read_labels, save_image, Image, Manifest};
use lumendet::postprocess::{parse_records, DetectionRecord, Detection};
use lumendet_cli::overlay::annotate;
use lumendet_cli::{AblationRow, BenchReport, EvalOutput};
use tempfile::TempDir;

const TINY: &str = "epochs = 2\nbatch_size = 8\nimage_size = 64\nbase_channels = 4\nmax_channels = 16\nreg_branch_channels = 8\ncls_branch_channels = 8\n";

fn lumendet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumendet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lumendet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 40-image dataset and a tiny v8 checkpoint trained on it, shared by
/// every test in this file.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.dir.path().join("ds")
    }
    fn config(&self) -> PathBuf {
        self.dir.path().join("tiny.cfg")
    }
    fn checkpoint(&self) -> PathBuf {
        self.dir.path().join("v8").join("best.ckpt")
    }
    fn manifest(&self, split: &str) -> PathBuf {
        self.data().join(format!("{split}.tsv"))
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["generate", "--out", s(&f.data()), "--count", "40", "--seed", "3"]);
        std::fs::write(f.config(), TINY).unwrap();
        let out = f.dir.path().join("v8");
        ok(&["train", "--data", s(&f.data()), "--out", s(&out), "--config", s(&f.config())]);
        f
    })
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = PathBuf::from(p.file_name().unwrap());
        if p.is_dir() {
            files.extend(tree(&p).into_iter().map(|(k, v)| (name.join(k), v)));
        } else {
            files.insert(name, std::fs::read(&p).unwrap());
        }
    }
    files
}

#[test]
fn generate_writes_count_files_and_repeats_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let printed = ok(&["generate", "--out", s(out), "--count", "10", "--seed", "11", "--flat"]);
        assert!(printed.contains("all.tsv"));
    }
    let ta = tree(&a);
    assert_eq!(ta.keys().filter(|k| k.starts_with("images")).count(), 10);
    assert_eq!(ta.keys().filter(|k| k.starts_with("labels")).count(), 10);
    assert_eq!(Manifest::load(&a.join("all.tsv")).unwrap().len(), 10);
    assert_eq!(ta, tree(&b));
}

#[test]
fn invalid_spec_fails_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    std::fs::write(&spec, "size = 100\n").unwrap();
    let out = lumendet(&["generate", "--out", s(&dir.path().join("o")), "--count", "3", "--spec", s(&spec)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("size"));
}

#[test]
fn train_without_manifests_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumendet(&["train", "--data", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.tsv"));
}

#[test]
fn both_variants_run_the_same_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut params = Vec::new();
    for v in ["v8", "v12"] {
        let out = dir.path().join(v);
        let printed = ok(&["train", "--data", s(&f.data()), "--out", s(&out), "--config", s(&f.config()), "--variant", v, "--epochs", "1"]);
        assert!(printed.starts_with(v));
        for file in ["log.csv", "best.ckpt", "last.ckpt"] {
            assert!(out.join(file).exists());
        }
        params.push(printed.split('\t').nth(1).unwrap().to_string());
    }
    assert_ne!(params[0], params[1]);
}

#[test]
fn labels_as_predictions_score_perfectly() {
    let f = fixture();
    let manifest = f.manifest("test1");
    let mut lines = String::new();
    for sample in &Manifest::load(&manifest).unwrap().samples {
        let img = load_image(&sample.image).unwrap();
        let name = sample.image.file_name().unwrap().to_str().unwrap();
        for (class_id, bbox) in read_labels(&sample.label, img.width, img.height).unwrap() {
            let d = Detection { bbox, confidence: 1.0, class_id };
            lines.push_str(&DetectionRecord::new(name, &d).to_json_line());
            lines.push('\n');
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("oracle.jsonl");
    std::fs::write(&preds, lines).unwrap();
    let printed = ok(&["eval", "--predictions", s(&preds), "--manifest", s(&manifest), "--out", s(dir.path())]);
    let row = printed.lines().nth(1).unwrap();
    assert_eq!(row, "predictions\ttest1\t1.000\t1.000\t1.000");
    let report: EvalOutput = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.row(), row);
    assert!(dir.path().join("pr.csv").exists() && dir.path().join("pr.svg").exists());
}

#[test]
fn printed_row_equals_report_json() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(&["eval", "--checkpoint", s(&f.checkpoint()), "--manifest", s(&f.manifest("val")), "--out", s(dir.path()), "--conf", "0.01"]);
    let report: EvalOutput = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(printed.lines().nth(1).unwrap(), report.row());
    assert_eq!((report.model.as_str(), report.input_size), ("v8", Some(64)));
}

#[test]
fn eval_rejects_an_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let out = lumendet(&["eval", "--checkpoint", s(&fixture().checkpoint()), "--manifest", s(&empty), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

fn frames_dir(f: &Fixture, dir: &Path, count: usize) -> PathBuf {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let all = Manifest::load(&f.manifest("all")).unwrap();
    for sample in all.samples.iter().take(count) {
        std::fs::copy(&sample.image, frames.join(sample.image.file_name().unwrap())).unwrap();
    }
    frames
}

/// Redraws the overlay from `detections.jsonl` onto each original and
/// requires the saved frame to equal it, with every changed pixel inside
/// a drawn region.
fn check_overlays(frames: &Path, out: &Path) -> usize {
    let mut by_frame: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in parse_records(&std::fs::read_to_string(out.join("detections.jsonl")).unwrap()).unwrap() {
        by_frame.entry(r.frame.clone()).or_default().push(r.detection());
    }
    let mut checked = 0;
    for e in std::fs::read_dir(frames).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let original = load_image(&path).unwrap();
        let saved = load_image(&out.join(&name)).unwrap();
        let dets = by_frame.remove(&name).unwrap_or_default();
        for d in &dets {
            let b = d.bbox;
            assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= original.width as f32 && b.y2 <= original.height as f32, "{name}: {b:?}");
        }
        let mut redrawn = original.clone();
        let regions = annotate(&mut redrawn, &dets);
        if dets.is_empty() {
            assert_eq!(regions.len(), 1, "{name}: banner only");
        }
        for y in 0..saved.height {
            for x in 0..saved.width {
                assert_eq!(saved.pixel(y, x), redrawn.pixel(y, x));
                if !regions.iter().any(|r| r.contains(x, y)) {
                    assert_eq!(saved.pixel(y, x), original.pixel(y, x), "{name} ({x}, {y})");
                }
            }
        }
        checked += 1;
    }
    assert!(by_frame.is_empty());
    checked
}

#[test]
fn detect_changes_only_overlay_pixels() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let frames = frames_dir(f, dir.path(), 4);
    save_image(&Image::filled(96, 80, [0.45, 0.3, 0.3]), &frames.join("flat.ppm")).unwrap();
    std::fs::write(frames.join("broken.ppm"), "P6\n").unwrap();
    for (conf, sub) in [("0", "busy"), ("1", "empty")] {
        let out = dir.path().join(sub);
        ok(&["detect", "--checkpoint", s(&f.checkpoint()), "--frames", s(&frames), "--out", s(&out), "--conf", conf]);
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["frames_total"], 6);
        assert_eq!(summary["frames_processed"], 5);
        assert_eq!(summary["skipped"][0]["frame"], "broken.ppm");
        std::fs::remove_file(frames.join("broken.ppm")).unwrap();
        assert_eq!(check_overlays(&frames, &out), 5);
        std::fs::write(frames.join("broken.ppm"), "P6\n").unwrap();
        if sub == "busy" {
            assert!(summary["detections"].as_u64().unwrap() > 0);
        } else {
            assert_eq!(summary["detections"], 0);
        }
    }
}

fn bench(f: &Fixture, frames: &Path, size: &str) -> (BenchReport, serde_json::Value) {
    let out = frames.parent().unwrap().join(format!("bench{size}.json"));
    ok(&["bench", "--checkpoint", s(&f.checkpoint()), "--frames", s(frames), "--size", size, "--out", s(&out)]);
    let text = std::fs::read_to_string(out).unwrap();
    (serde_json::from_str(&text).unwrap(), serde_json::from_str(&text).unwrap())
}

#[test]
fn bench_arithmetic_and_size_trend() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let frames = frames_dir(f, dir.path(), 30);
    let (small, json) = bench(f, &frames, "160");
    assert_eq!(small.frames_processed, 30);
    assert_eq!(small.fps, small.frames_processed as f64 / small.wall_time_s);
    assert!(small.stage_latency_ms.sum() <= small.frame_latency_ms);
    assert!(!small.unstable);
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["fps", "frame_latency_ms", "frames_processed", "input_size", "stage_latency_ms", "unstable", "wall_time_s"]);
    let (large, _) = bench(f, &frames, "320");
    assert!(small.fps > large.fps, "{} vs {}", small.fps, large.fps);
}

#[test]
fn ablation_at_the_training_size_equals_eval() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let manifest = f.manifest("val");
    ok(&["eval", "--checkpoint", s(&f.checkpoint()), "--manifest", s(&manifest), "--out", s(dir.path()), "--conf", "0.01"]);
    let report: EvalOutput = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let csv = dir.path().join("ablate.csv");
    ok(&["ablate", "--checkpoint", s(&f.checkpoint()), "--manifest", s(&manifest), "--sizes", "64,48", "--out", s(&csv), "--conf", "0.01"]);
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<AblationRow> = text
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            AblationRow {
                size: v[0].parse().unwrap(),
                canvas: v[1].parse().unwrap(),
                map50: v[2].parse().unwrap(),
                map5095: v[3].parse().unwrap(),
                fps: v[4].parse().unwrap(),
            }
        })
        .collect();
    assert_eq!((rows[0].size, rows[0].canvas), (64, 64));
    assert_eq!((rows[0].map50, rows[0].map5095), (report.report.map50, report.report.map5095));
    assert_eq!((rows[1].size, rows[1].canvas), (48, 64));
}

#[test]
fn bad_thresholds_are_usage_errors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = lumendet(&["eval", "--checkpoint", s(&f.checkpoint()), "--manifest", s(&f.manifest("val")), "--out", s(dir.path()), "--iou", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}
