use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vesselbench::datasets::{Manifest, SamplePair, Split};
use vesselbench::imagegrid::{encode_mask_png, save_probability_map, BinaryMask, Grid, ProbabilityMap, RasterFormat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vesselbench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const W: usize = 16;
const H: usize = 12;

fn vessel_mask(k: usize) -> BinaryMask {
    BinaryMask::from_grid(Grid::from_fn(W, H, move |r, c| (r + c + k).is_multiple_of(5) || c == 3 + k))
}

fn write_gray_png(path: &Path, k: usize) {
    let img = image::GrayImage::from_fn(W as u32, H as u32, |x, y| image::Luma([((x * 13 + y * 7 + k as u32 * 29) % 256) as u8]));
    img.save(path).unwrap();
}

/// Two train and two test samples at 16x12 with a second annotation.
fn fixture(root: &Path) -> PathBuf {
    fixture_named(root, "toy")
}

fn fixture_named(root: &Path, dataset: &str) -> PathBuf {
    let mut samples = Vec::new();
    for (k, (id, split)) in [("tr1", Split::Train), ("tr2", Split::Train), ("te1", Split::Test), ("te2", Split::Test)]
        .into_iter()
        .enumerate()
    {
        let image = root.join(format!("{id}_img.png"));
        write_gray_png(&image, k);
        let gt = root.join(format!("{id}_gt.png"));
        std::fs::write(&gt, encode_mask_png(&vessel_mask(k)).unwrap()).unwrap();
        let gt2 = root.join(format!("{id}_gt2.png"));
        std::fs::write(&gt2, encode_mask_png(&vessel_mask(k + 1)).unwrap()).unwrap();
        samples.push(SamplePair { id: id.into(), split, image, gt, gt2: Some(gt2), mask: None });
    }
    let m = Manifest { dataset: dataset.into(), samples, split_rule: None };
    let path = root.join("manifest.json");
    std::fs::write(&path, m.to_json()).unwrap();
    path
}

fn write_predictions(dir: &Path, ids: &[(&str, usize)], exact: bool) {
    std::fs::create_dir_all(dir).unwrap();
    for &(id, k) in ids {
        let gt = vessel_mask(k);
        let p = if exact {
            gt.to_probability()
        } else {
            ProbabilityMap::from_grid(Grid::from_fn(W, H, |r, c| {
                let base = if gt.grid().get(r, c) { 0.7 } else { 0.2 };
                base + ((r * W + c) % 7) as f64 / 30.0
            }))
            .unwrap()
        };
        std::fs::write(dir.join(format!("{id}.pmap")), save_probability_map(&p, RasterFormat::Rawf32).unwrap()).unwrap();
    }
}

fn read_csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn evaluate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let preds = dir.path().join("preds");
    let train_preds = dir.path().join("train_preds");
    write_predictions(&preds, &[("te1", 2), ("te2", 3)], false);
    write_predictions(&train_preds, &[("tr1", 0), ("tr2", 1)], false);
    let out = dir.path().join("out");
    let o = run(&[
        "--out", arg(&out), "evaluate", "--manifest", arg(&manifest), "--predictions", arg(&preds),
        "--train-predictions", arg(&train_preds),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let agg = read_csv_rows(&out.join("aggregate.csv"));
    assert_eq!(agg.len(), 101);
    assert_eq!(read_csv_rows(&out.join("train_aggregate.csv")).len(), 101);
    assert_eq!(read_csv_rows(&out.join("per_image.csv")).len(), 2 * 101);

    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_images"], 2);
    assert!(summary["a_priori"].is_object());
    assert!(summary["annotator"]["mean_f1"].as_f64().unwrap() > 0.0);
    assert!(summary["failed"].as_array().unwrap().is_empty());

    let svg = std::fs::read_to_string(out.join("pr_curve.svg")).unwrap();
    assert!(svg.contains(r#"class="annotator""#) && svg.contains(r#"class="argmax""#));
    assert!(out.join("pr_curve.csv").is_file());
    assert_eq!(json(&out.join("run_config.json"))["command"], "evaluate");
}

#[test]
fn perfect_predictions_score_one_above_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let preds = dir.path().join("preds");
    write_predictions(&preds, &[("te1", 2), ("te2", 3)], true);
    let out = dir.path().join("out");
    let o = run(&["--out", arg(&out), "evaluate", "--manifest", arg(&manifest), "--predictions", arg(&preds)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("aggregate.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for r in rdr.records().map(|r| r.unwrap()) {
        let t: f64 = r[col("threshold")].parse().unwrap();
        if t > 0.0 {
            assert_eq!(r[col("f1_micro_mean")].parse::<f64>().unwrap(), 1.0, "t={t}");
            assert_eq!(r[col("f1_micro_std")].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn missing_prediction_is_reported_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let preds = dir.path().join("preds");
    write_predictions(&preds, &[("te1", 2)], false);
    let out = dir.path().join("out");
    let o = run(&["--out", arg(&out), "evaluate", "--manifest", arg(&manifest), "--predictions", arg(&preds)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("te2"));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_images"], 1);
    assert_eq!(summary["failed"][0]["id"], "te2");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok = run(&["--out", arg(&out), "loss-check", "--instances", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--out", arg(&out), "evaluate"]).status.code(), Some(1));
    let missing = dir.path().join("absent.json");
    let o = run(&["--out", arg(&out), "evaluate", "--manifest", arg(&missing), "--predictions", arg(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let first = dir.path().join("first");
    let o = run(&[
        "--seed", "5", "--out", arg(&first), "train-toy", "--manifest", arg(&manifest), "--epochs", "6",
        "--lambda-max", "0.5", "--predict", arg(&manifest),
    ]);
    // the toy set has no unlabeled images, so SSL must be refused
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = run(&[
        "--seed", "5", "--out", arg(&first), "train-toy", "--manifest", arg(&manifest), "--epochs", "6",
        "--predict", arg(&manifest),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = first.join("run_config.json");
    let second = dir.path().join("second");
    let o = run(&["--config", arg(&cfg), "--out", arg(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.json", "training_log.csv", "predictions/te1.pmap", "predictions/tr2.pmap"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
    let saved = json(&second.join("run_config.json"));
    assert_eq!(saved["seed"], 5);
    assert_eq!(saved["args"]["epochs"], 6);
}

#[test]
fn training_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let o = run(&["--out", arg(&dir.path().join("o")), "train-toy", "--manifest", arg(&manifest)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn config_command_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&["--out", arg(&out), "loss-check", "--instances", "1"]).status.success());
    let o = run(&["--config", arg(&out.join("run_config.json")), "compare"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identity_harmonize_copies_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_named(dir.path(), "DRIVE");
    let out = dir.path().join("out");
    let o = run(&["--out", arg(&out), "harmonize", "--manifest", arg(&manifest), "--target", "DRIVE"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let before = Manifest::load_subset(&manifest).unwrap();
    let after = Manifest::load_subset(&out.join("manifest.json")).unwrap();
    assert_eq!(before.samples.len(), after.samples.len());
    for (a, b) in before.samples.iter().zip(&after.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(std::fs::read(&a.image).unwrap(), std::fs::read(&b.image).unwrap());
        assert_eq!(std::fs::read(&a.gt).unwrap(), std::fs::read(&b.gt).unwrap());
    }
}

#[test]
fn harmonize_to_hrf_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (w, h) = (999u32, 960u32);
    let image = root.join("img.png");
    image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 90])).save(&image).unwrap();
    let gt = root.join("gt.png");
    let mask = BinaryMask::from_grid(Grid::from_fn(w as usize, h as usize, |r, c| (r / 9 + c / 7) % 3 == 0));
    std::fs::write(&gt, encode_mask_png(&mask).unwrap()).unwrap();
    let m = Manifest {
        dataset: "CHASE_DB1".into(),
        samples: vec![SamplePair { id: "Image_01L".into(), split: Split::Train, image, gt, gt2: None, mask: None }],
        split_rule: None,
    };
    let manifest = root.join("manifest.json");
    std::fs::write(&manifest, m.to_json()).unwrap();
    let out = root.join("out");
    let o = run(&["--out", arg(&out), "harmonize", "--manifest", arg(&manifest), "--target", "HRF"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let img = image::open(out.join("images/Image_01L.png")).unwrap();
    assert_eq!((img.width(), img.height()), (3504, 2336));
    let g = image::open(out.join("gt/Image_01L.png")).unwrap().to_luma8();
    assert_eq!(g.dimensions(), (3504, 2336));
    assert!(g.pixels().all(|p| p[0] == 0 || p[0] == 255));
    let ledger = json(&out.join("ledgers/Image_01L.json"));
    assert!(ledger.is_object() || ledger.is_array());
}

#[test]
fn compare_renders_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["--out", arg(&out), "compare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(text.contains("| 2nd human observer |  | 0.7931* |"));
    assert!(text.contains("0.8020 (0.0445)"));
    assert!(stderr(&o).contains("no computed results"));
    assert_eq!(std::fs::read_to_string(out.join("compare.md")).unwrap(), text);
}

#[test]
fn compare_appends_computed_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let preds = dir.path().join("preds");
    write_predictions(&preds, &[("te1", 2), ("te2", 3)], false);
    let eval = dir.path().join("eval");
    assert!(run(&["--out", arg(&eval), "evaluate", "--manifest", arg(&manifest), "--predictions", arg(&preds)])
        .status
        .success());
    let out = dir.path().join("out");
    let o = run(&[
        "--out", arg(&out), "compare", "--aggregate", arg(&eval.join("aggregate.csv")), "--label", "toy",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let best = json(&eval.join("summary.json"))["a_posteriori"]["f1_micro_mean"].as_f64().unwrap();
    let row = text.lines().find(|l| l.starts_with("| toy (computed) |")).expect("computed row");
    assert!(row.contains(&format!("{best:.4}")), "{row}");
}

#[test]
fn plot_from_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let preds = dir.path().join("preds");
    write_predictions(&preds, &[("te1", 2), ("te2", 3)], false);
    let eval = dir.path().join("eval");
    assert!(run(&["--out", arg(&eval), "evaluate", "--manifest", arg(&manifest), "--predictions", arg(&preds)])
        .status
        .success());
    let out = dir.path().join("plot");
    let agg = eval.join("aggregate.csv");
    let o = run(&[
        "--out", arg(&out), "plot", arg(&agg), arg(&agg), "--labels", "a,b", "--annotator",
        arg(&eval.join("summary.json")), "--iso-levels", "0.5,0.8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("pr_curve.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="argmax""#).count(), 2);
    assert_eq!(svg.matches(r#"class="iso-f""#).count(), 2);
    let o = run(&["--out", arg(&out), "plot", arg(&agg), "--labels", "a,b"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn manifest_from_synthetic_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("DRIVE");
    let spec = vesselbench::datasets::lookup("DRIVE").unwrap();
    for rel in vesselbench::datasets::synthetic_layout(spec) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"").unwrap();
    }
    let out = dir.path().join("out");
    let o = run(&["--out", arg(&out), "manifest", "--dataset", "DRIVE", "--root", arg(&root)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(&out.join("DRIVE.manifest.json")).unwrap();
    assert_eq!((m.count(Split::Train), m.count(Split::Test)), (20, 20));
}
