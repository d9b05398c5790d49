use std::fs;
use std::path::Path;
use std::process::Command;

use dced_cli::checkpoint;
use dced_cli::commands::load_dataset;
use dced_cli::config::ConfigFile;
use dced_core::image::{encode_pnm, Mask};
use dced_core::tensor::Shape;

const SMOKE: &str = "\
[network]
base_size = 32
width = 0.25
thresholds = 0.5
[train]
learning_rate = 1e-3
max_epochs_per_level = 5
iterations_per_epoch = 4
split_fraction = 0.75
seed = 11
[synthgen]
width = 48
height = 48
cells_per_image = 3
cell_radius = 7
";

fn dced(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dced"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str], cwd: &Path) {
    let (code, err) = dced(args, cwd);
    assert_eq!(code, 0, "dced {args:?}: {err}");
}

fn workspace(images: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMOKE).unwrap();
    ok(
        &[
            "generate",
            "--config",
            "c.cfg",
            "--out",
            "raw",
            "--images",
            &images.to_string(),
            "--seed",
            "5",
        ],
        dir.path(),
    );
    ok(
        &["preprocess", "--in", "raw", "--out", "pre", "--config", "c.cfg"],
        dir.path(),
    );
    dir
}

#[test]
fn generate_writes_pairs_and_manifest() {
    let dir = workspace(3);
    let mut names: Vec<String> = fs::read_dir(dir.path().join("raw"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "img_0000.ppm",
            "img_0001.ppm",
            "img_0002.ppm",
            "manifest.csv",
            "mask_0000.pgm",
            "mask_0001.pgm",
            "mask_0002.pgm"
        ]
    );
}

#[test]
fn usage_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = dced(&["generate", "--out", "x"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("--images"), "{err}");

    fs::write(dir.path().join("bad.cfg"), "[train]\nlearning_rat = 1\n").unwrap();
    let (code, err) = dced(
        &["generate", "--config", "bad.cfg", "--out", "x", "--images", "1"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");

    fs::write(dir.path().join("blocker"), b"").unwrap();
    let (code, _) = dced(&["generate", "--out", "blocker/sub", "--images", "1"], dir.path());
    assert_eq!(code, 3);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn preprocess_round_trip_and_rerun() {
    let dir = workspace(2);
    let cfg = ConfigFile::parse(SMOKE).unwrap();
    let data = load_dataset(&dir.path().join("pre"), &cfg).unwrap();
    assert_eq!(data.len(), 2);
    for d in &data {
        assert_eq!(d.image.shape(), Shape::new(1, 3, 32, 32).unwrap());
        assert_eq!((d.mask.width(), d.mask.height()), (32, 32));
    }
    let first = fs::read(dir.path().join("pre/img_0001.pgm")).unwrap();
    ok(
        &["preprocess", "--in", "raw", "--out", "pre", "--config", "c.cfg"],
        dir.path(),
    );
    assert_eq!(fs::read(dir.path().join("pre/img_0001.pgm")).unwrap(), first);
}

#[test]
fn missing_mask_is_named() {
    let dir = workspace(2);
    fs::remove_file(dir.path().join("raw/mask_0001.pgm")).unwrap();
    let (code, err) = dced(
        &["preprocess", "--in", "raw", "--out", "pre2", "--config", "c.cfg"],
        dir.path(),
    );
    assert_eq!(code, 4);
    assert!(err.contains("mask_0001.pgm"), "{err}");
    assert!(!dir.path().join("pre2").exists());
}

#[test]
fn train_segment_are_deterministic() {
    let dir = workspace(8);
    let p = dir.path();
    ok(
        &["train", "--data", "pre", "--config", "c.cfg", "--checkpoint", "a.ckpt"],
        p,
    );
    ok(
        &["train", "--data", "pre", "--config", "c.cfg", "--checkpoint", "b.ckpt"],
        p,
    );
    for suffix in ["", ".history.csv", ".report.txt", ".report.json"] {
        let a = fs::read(p.join(format!("a.ckpt{suffix}"))).unwrap();
        let b = fs::read(p.join(format!("b.ckpt{suffix}"))).unwrap();
        assert_eq!(a, b, "a.ckpt{suffix} differs");
    }
    let ckpt = checkpoint::load(&p.join("a.ckpt"), None).unwrap();
    assert_eq!(ckpt.net.levels.len(), 1);
    assert_eq!(
        fs::read(p.join("a.ckpt.history.csv"))
            .unwrap()
            .split(|&b| b == b'\n')
            .next()
            .unwrap(),
        b"fold,epoch,level,round,level_epoch,loss,c_o,decision"
    );

    ok(
        &[
            "segment",
            "--checkpoint",
            "a.ckpt",
            "--in",
            "raw/img_0002.ppm",
            "--out",
            "m1.pgm",
        ],
        p,
    );
    ok(
        &[
            "segment",
            "--checkpoint",
            "a.ckpt",
            "--in",
            "raw/img_0002.ppm",
            "--out",
            "m2.pgm",
        ],
        p,
    );
    let m1 = fs::read(p.join("m1.pgm")).unwrap();
    assert_eq!(m1, fs::read(p.join("m2.pgm")).unwrap());
    let img = dced_core::image::read_pnm(&p.join("m1.pgm")).unwrap();
    assert_eq!((img.width(), img.height()), (48, 48));
    assert!(img.data().iter().all(|&v| v == 0 || v == 255));

    let mut bytes = fs::read(p.join("a.ckpt")).unwrap();
    bytes[0] = b'X';
    fs::write(p.join("bad.ckpt"), &bytes).unwrap();
    let (code, _) = dced(
        &[
            "segment",
            "--checkpoint",
            "bad.ckpt",
            "--in",
            "raw/img_0002.ppm",
            "--out",
            "m3.pgm",
        ],
        p,
    );
    assert_eq!(code, 6);
    assert!(!p.join("m3.pgm").exists());
}

#[test]
fn kfold_writes_fold_reports() {
    let dir = workspace(6);
    let p = dir.path();
    ok(
        &[
            "train",
            "--data",
            "pre",
            "--config",
            "c.cfg",
            "--checkpoint",
            "k.ckpt",
            "--folds",
            "3",
        ],
        p,
    );
    let json: serde_json::Value = serde_json::from_slice(&fs::read(p.join("k.ckpt.report.json")).unwrap()).unwrap();
    assert_eq!(json["folds"].as_array().unwrap().len(), 3);
    let history = fs::read_to_string(p.join("k.ckpt.history.csv")).unwrap();
    for fold in 1..=3 {
        assert!(history.lines().any(|l| l.starts_with(&format!("{fold},"))));
    }
}

#[test]
fn evaluate_self_disjoint_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let side = 16;
    let roi = Mask::new(side, side, (0..side * side).map(|i| (i % side >= 8) as u8).collect()).unwrap();
    let inverse = Mask::new(side, side, roi.data().iter().map(|&v| 1 - v).collect()).unwrap();
    for sub in ["truth", "pred", "other"] {
        fs::create_dir(p.join(sub)).unwrap();
    }
    fs::write(p.join("truth/a.pgm"), encode_pnm(&roi.render())).unwrap();
    fs::write(p.join("pred/a.pgm"), encode_pnm(&inverse.render())).unwrap();
    fs::write(p.join("other/b.pgm"), encode_pnm(&roi.render())).unwrap();

    ok(
        &[
            "evaluate", "--pred", "truth", "--truth", "truth", "--report", "self.txt",
        ],
        p,
    );
    let json: serde_json::Value = serde_json::from_slice(&fs::read(p.join("self.txt.json")).unwrap()).unwrap();
    let g = &json["columns"]["global"];
    for key in ["test_accuracy", "iou", "bfscore"] {
        assert_eq!(g[key].as_f64(), Some(1.0), "{key}");
    }

    ok(
        &["evaluate", "--pred", "pred", "--truth", "truth", "--report", "dis.txt"],
        p,
    );
    let json: serde_json::Value = serde_json::from_slice(&fs::read(p.join("dis.txt.json")).unwrap()).unwrap();
    assert_eq!(json["columns"]["global"]["roi_iou"].as_f64(), Some(0.0));
    let text = fs::read_to_string(p.join("dis.txt")).unwrap();
    for row in dced_core::metrics::ROWS.iter().take(8) {
        assert!(text.contains(row.0), "missing row {}", row.0);
    }

    let (code, err) = dced(
        &["evaluate", "--pred", "other", "--truth", "truth", "--report", "mm.txt"],
        p,
    );
    assert_eq!(code, 7);
    assert!(err.contains("a.pgm") && err.contains("b.pgm"), "{err}");
    assert!(!p.join("mm.txt").exists());
}
