//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use dced_core::dataset::DatasetTag;
use dced_core::gradcheck::{check, GradKind};
use dced_core::image::Mask;
use dced_core::layers::Mode;
use dced_core::metrics::{self, ROWS};
use dced_core::net::{gate_decision, GateDecision, Level, MultiLevelNet, NetConfig};
use dced_core::preprocess::{preprocess_pipeline, PreprocessConfig};
use dced_core::synthgen::{render_scene, SceneConfig};
use dced_core::train::{kfold_split, mse, run_gated_epochs, run_kfold, train_network, EpochOutcome, TrainConfig};
use dced_core::{Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for kind in GradKind::ALL {
        for seed in 0..20 {
            let r = check(kind, seed).map_err(|e| e.to_string())?;
            ensure(r.passed(), || {
                format!("{kind:?} seed {seed}: error/tolerance {:.3}", r.worst_ratio)
            })?;
            worst = worst.max(r.worst_ratio);
            compared += r.compared;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} layer kinds x 20 seeds, {compared} entries, worst error/tolerance {worst:.3}, {secs:.1}s",
        GradKind::ALL.len()
    ))
}

fn shape_chain() -> Outcome {
    let config = NetConfig::default();
    let level = Level::new(&mut Rng::seeded(0), &config, 0, 0.5).map_err(|e| e.to_string())?;
    let x = Tensor::filled((1, 3, 320, 320), 0.5).map_err(|e| e.to_string())?;
    let enc = level
        .encoder_forward(&x, Mode::Inference, &mut Rng::seeded(1))
        .map_err(|e| e.to_string())?;
    let got: Vec<(usize, usize, usize)> = enc
        .skips
        .iter()
        .map(|t| (t.shape().c, t.shape().h, t.shape().w))
        .collect();
    let want = vec![
        (32, 160, 160),
        (64, 80, 80),
        (128, 40, 40),
        (256, 20, 20),
        (512, 10, 10),
    ];
    ensure(got == want, || format!("encoder chain {got:?}"))?;
    let y = level.infer(&x).map_err(|e| e.to_string())?;
    let s = y.shape();
    ensure((s.n, s.c, s.h, s.w) == (1, 1, 320, 320), || {
        format!("decoder output {s:?}")
    })?;
    Ok(format!("encoder {want:?}, decoder (1,320,320)"))
}

// brute-force reference metrics, written against the definitions directly
fn edge(m: &[u8], side: usize) -> Vec<(f64, f64)> {
    let at = |x: isize, y: isize| {
        (x >= 0 && y >= 0 && (x as usize) < side && (y as usize) < side).then(|| m[y as usize * side + x as usize])
    };
    let mut pts = Vec::new();
    for y in 0..side as isize {
        for x in 0..side as isize {
            if at(x, y) == Some(0)
                && [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .iter()
                    .any(|&(a, b)| at(a, b) != Some(0))
            {
                pts.push((x as f64, y as f64));
            }
        }
    }
    pts
}

fn brute_bf(p: &[u8], t: &[u8], side: usize, theta: f64) -> f64 {
    let (pb, tb) = (edge(p, side), edge(t, side));
    if pb.is_empty() || tb.is_empty() {
        return if pb.is_empty() && tb.is_empty() { 1.0 } else { 0.0 };
    }
    let frac = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.iter()
            .filter(|p| b.iter().any(|q| (p.0 - q.0).hypot(p.1 - q.1) <= theta))
            .count() as f64
            / a.len() as f64
    };
    let (pr, rc) = (frac(&pb, &tb), frac(&tb, &pb));
    if pr + rc == 0.0 {
        0.0
    } else {
        2.0 * pr * rc / (pr + rc)
    }
}

fn brute_iou(p: &[u8], t: &[u8], class: u8) -> f64 {
    let inter = p.iter().zip(t).filter(|(a, b)| **a == class && **b == class).count();
    let union = p.iter().zip(t).filter(|(a, b)| **a == class || **b == class).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn random_mask(rng: &mut Rng, side: usize) -> Vec<u8> {
    let style = rng.below(3);
    let (cx, cy, r) = (
        rng.below(side) as f64,
        rng.below(side) as f64,
        1.0 + rng.below(side) as f64,
    );
    (0..side * side)
        .map(|i| {
            let inside = ((i % side) as f64 - cx).hypot((i / side) as f64 - cy) <= r;
            let speckle = rng.below(2) == 1;
            match style {
                0 => u8::from(speckle),
                1 => u8::from(!inside),
                _ => u8::from(!inside && speckle),
            }
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    const SIDE: usize = 16;
    let mut rng = Rng::seeded(2024);
    let mut worst = 0.0f64;
    for pair in 0..200 {
        let (p, t) = (random_mask(&mut rng, SIDE), random_mask(&mut rng, SIDE));
        let pm = Mask::new(SIDE, SIDE, p.clone()).map_err(|e| e.to_string())?;
        let tm = Mask::new(SIDE, SIDE, t.clone()).map_err(|e| e.to_string())?;
        let c = metrics::confusion(&pm, &tm).map_err(|e| e.to_string())?;
        let ious = metrics::iou_summary(&c).map_err(|e| e.to_string())?;
        let n = (SIDE * SIDE) as f64;
        let roi_share = t.iter().filter(|&&v| v == 0).count() as f64 / n;
        let (roi, bg) = (brute_iou(&p, &t, 0), brute_iou(&p, &t, 1));
        let pairs = [
            (
                "accuracy",
                metrics::pixel_accuracy(&c).unwrap(),
                p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / n,
            ),
            ("roi iou", ious.roi, roi),
            ("background iou", ious.background, bg),
            ("mean iou", ious.mean, (roi + bg) / 2.0),
            ("weighted iou", ious.weighted, roi_share * roi + (1.0 - roi_share) * bg),
            (
                "bfscore",
                metrics::bfscore(&pm, &tm, 2.0).unwrap(),
                brute_bf(&p, &t, SIDE, 2.0),
            ),
        ];
        for (name, got, want) in pairs {
            let err = (got - want).abs();
            ensure(err <= 1e-9, || format!("pair {pair}: {name} {got} vs {want}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("200 pairs of 16x16 masks, max deviation {worst:.1e}"))
}

fn gate_semantics() -> Outcome {
    let thresholds = NetConfig::default().thresholds;
    ensure(thresholds == [0.5, 0.8, 0.95], || {
        format!("default thresholds {thresholds:?}")
    })?;
    let script: [&[f64]; 3] = [&[0.2, 0.49999, 0.5], &[0.79, 0.8], &[0.9, 0.949, 0.95]];
    let mut lines = Vec::new();
    for (i, (&t, seq)) in thresholds.iter().zip(script).enumerate() {
        let run = run_gated_epochs(t, 10, |e| {
            Ok(EpochOutcome {
                loss: 0.0,
                c_o: seq[e - 1],
            })
        })
        .map_err(|e| e.to_string())?;
        let got: Vec<GateDecision> = run.epochs.iter().map(|(_, d)| *d).collect();
        let mut want = vec![GateDecision::Repeat; seq.len() - 1];
        want.push(GateDecision::Advance);
        ensure(got == want && run.reached, || format!("level {}: {got:?}", i + 1))?;
        lines.push(format!("L{}:{}", i + 1, seq.len()));
    }
    ensure(gate_decision(0.95, 0.95) == GateDecision::Advance, || {
        "C_o == T_o did not advance".into()
    })?;
    ensure(gate_decision(0.5 - 1e-12, 0.5) == GateDecision::Repeat, || {
        "just below T_o advanced".into()
    })?;
    let stuck = run_gated_epochs(0.8, 3, |_| Ok(EpochOutcome { loss: 0.0, c_o: 0.7 })).map_err(|e| e.to_string())?;
    ensure(!stuck.reached && stuck.epochs.len() == 3, || "cap not honoured".into())?;
    Ok(format!(
        "scripted sequences advance at the boundary ({}), cap honoured",
        lines.join(" ")
    ))
}

fn overfit() -> Outcome {
    let scene = SceneConfig::preset(DatasetTag::Anaemic);
    let pre = PreprocessConfig {
        size: 64,
        ..Default::default()
    };
    let data = (0..8)
        .map(|i| {
            let s = render_scene(&mut Rng::seeded(100 + i), &scene)?;
            preprocess_pipeline(&s.image, &s.mask.render(), &pre, DatasetTag::Anaemic, s.counts)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let config = NetConfig {
        base_size: 64,
        channels: NetConfig::channels_for_width(0.25).map_err(|e| e.to_string())?,
        thresholds: vec![0.98],
        final_threshold: 0.98,
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        max_epochs_per_level: 200,
        max_global_rounds: 0,
        ..Default::default()
    };
    let refs: Vec<_> = data.iter().collect();
    let start = Instant::now();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut net = MultiLevelNet::new(config.clone(), 1).map_err(|e| e.to_string())?;
        let history = train_network(&mut net, &refs, &refs, &train).map_err(|e| e.to_string())?;
        runs.push((net, history));
    }
    let secs = start.elapsed().as_secs_f64() / 2.0;
    let (net, history) = &runs[0];
    ensure(runs[0].0 == runs[1].0 && runs[0].1.records == runs[1].1.records, || {
        "reruns differ".into()
    })?;
    let mut c = metrics::ConfusionCounts::default();
    for d in &data {
        let y = net.forward(&d.image).map_err(|e| e.to_string())?;
        let m = Mask::from_probabilities(64, 64, y.data()).map_err(|e| e.to_string())?;
        c.merge(&metrics::confusion(&m, &d.mask).map_err(|e| e.to_string())?);
    }
    let acc = metrics::pixel_accuracy(&c).map_err(|e| e.to_string())?;
    let epochs = history.records.len();
    ensure(acc >= 0.98 && epochs <= 200 && secs < 600.0, || {
        format!("accuracy {acc:.4} after {epochs} epochs in {secs:.1}s")
    })?;
    Ok(format!(
        "pixel accuracy {acc:.4} after {epochs} epochs, {secs:.1}s per run, reruns identical"
    ))
}

const E2E_CONFIG: &str = "\
[network]
base_size = 64
width = 0.25
thresholds = 0.5, 0.8, 0.95

[train]
learning_rate = 1e-3
max_epochs_per_level = 150
split_fraction = 1.0
seed = 7

[synthgen]
tag = anaemic
";

fn dced(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dced"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "dced {} exited {:?}: {}",
            args[0],
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

/// Runs the whole pipeline through the binary in `dir`; returns the global
/// report column of the held-out evaluation.
fn pipeline(dir: &Path) -> Result<serde_json::Value, String> {
    fs::write(dir.join("e2e.cfg"), E2E_CONFIG).map_err(|e| e.to_string())?;
    dced(
        &[
            "generate",
            "--config",
            "e2e.cfg",
            "--out",
            "train_raw",
            "--images",
            "24",
            "--seed",
            "1",
        ],
        dir,
    )?;
    dced(
        &[
            "generate", "--config", "e2e.cfg", "--out", "test_raw", "--images", "8", "--seed", "2",
        ],
        dir,
    )?;
    dced(
        &[
            "preprocess",
            "--in",
            "train_raw",
            "--out",
            "train_pre",
            "--config",
            "e2e.cfg",
        ],
        dir,
    )?;
    dced(
        &[
            "train",
            "--data",
            "train_pre",
            "--config",
            "e2e.cfg",
            "--checkpoint",
            "model.dced",
        ],
        dir,
    )?;
    for i in 0..8 {
        let img = format!("test_raw/img_{i:04}.ppm");
        let out = format!("pred/mask_{i:04}.pgm");
        dced(
            &["segment", "--checkpoint", "model.dced", "--in", &img, "--out", &out],
            dir,
        )?;
    }
    dced(
        &[
            "evaluate", "--pred", "pred", "--truth", "test_raw", "--report", "eval.txt",
        ],
        dir,
    )?;
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("eval.txt.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    Ok(json["columns"]["global"].clone())
}

struct E2e {
    dirs: Vec<tempfile::TempDir>,
}

fn end_to_end(state: &mut E2e) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let global = pipeline(dir.path());
    let secs = start.elapsed().as_secs_f64();
    state.dirs.push(dir);
    let global = global?;
    let (iou, bf) = (
        global["roi_iou"].as_f64().unwrap_or(f64::NAN),
        global["bfscore"].as_f64().unwrap_or(f64::NAN),
    );
    ensure(iou >= 0.85 && bf >= 0.80 && secs < 1800.0, || {
        format!("ROI IoU {iou:.4}, BFScore {bf:.4} in {secs:.0}s")
    })?;
    Ok(format!("held-out ROI IoU {iou:.4}, BFScore {bf:.4}, {secs:.0}s"))
}

fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut files = vec![
        PathBuf::from("model.dced"),
        PathBuf::from("model.dced.history.csv"),
        PathBuf::from("model.dced.report.txt"),
        PathBuf::from("model.dced.report.json"),
        PathBuf::from("eval.txt"),
        PathBuf::from("eval.txt.json"),
    ];
    let mut masks: Vec<PathBuf> = fs::read_dir(dir.join("pred"))
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| Path::new("pred").join(e.file_name()))
                .collect()
        })
        .unwrap_or_default();
    masks.sort();
    files.extend(masks);
    files
}

fn determinism(state: &mut E2e) -> Outcome {
    if state.dirs.is_empty() {
        end_to_end(state).ok();
    }
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(second.path())?;
    let first = state.dirs[0].path();
    let files = artifacts(first);
    ensure(files.len() == 6 + 8, || {
        format!("first run produced {} artifacts", files.len())
    })?;
    ensure(artifacts(second.path()) == files, || "artifact sets differ".into())?;
    for f in &files {
        let a = fs::read(first.join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(second.path().join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{} differs between runs", f.display()))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", files.len()))
}

fn mse_loss() -> Outcome {
    let (zero, _) = mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    let (two_thirds, _) = mse(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(zero.abs() <= 1e-12 && (two_thirds - 2.0 / 3.0).abs() <= 1e-12, || {
        format!("hand values {zero}, {two_thirds}")
    })?;
    let mut rng = Rng::seeded(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 1 + rng.below(32);
        let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
        let (_, grad) = mse(&p, &g).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for i in 0..n {
            let mut up = p.clone();
            up[i] += h;
            let mut down = p.clone();
            down[i] -= h;
            let fd = (mse(&up, &g).unwrap().0 - mse(&down, &g).unwrap().0) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    ensure(worst <= 1e-8, || format!("gradient deviates by {worst:.2e}"))?;
    Ok(format!(
        "loss 0 and 2/3 exact, gradient within {worst:.1e} of central differences"
    ))
}

fn kfold_harness() -> Outcome {
    let mut scene = SceneConfig::preset(DatasetTag::Healthy);
    scene.width = 48;
    scene.height = 48;
    scene.cells_per_image = 3;
    scene.cell_radius = 7.0;
    let pre = PreprocessConfig {
        size: 32,
        ..Default::default()
    };
    let data = (0..14)
        .map(|i| {
            let tag = if i % 2 == 0 {
                DatasetTag::Healthy
            } else {
                DatasetTag::Anaemic
            };
            scene.set_tag(tag);
            let s = render_scene(&mut Rng::seeded(300 + i), &scene)?;
            preprocess_pipeline(&s.image, &s.mask.render(), &pre, tag, s.counts)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let net = NetConfig {
        base_size: 32,
        channels: NetConfig::channels_for_width(0.125).map_err(|e| e.to_string())?,
        thresholds: vec![0.5],
        final_threshold: 0.5,
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        max_epochs_per_level: 3,
        iterations_per_epoch: 4,
        max_global_rounds: 0,
        split_fraction: 0.8,
        folds: 5,
        seed: 9,
        ..Default::default()
    };
    let outcome = run_kfold(&data, &net, &train).map_err(|e| e.to_string())?;
    let splits = kfold_split(data.len(), 5, 0.8, 9).map_err(|e| e.to_string())?;
    ensure(outcome.folds.len() == 5, || format!("{} folds", outcome.folds.len()))?;

    let test = &splits[0].test;
    let mut seen: Vec<usize> = Vec::new();
    for (run, split) in outcome.folds.iter().zip(&splits) {
        ensure(&run.split == split && &split.test == test, || {
            "fold splits disagree".into()
        })?;
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        ensure(all == (0..data.len()).collect::<Vec<_>>(), || {
            "a fold does not cover the dataset exactly once".into()
        })?;
        seen.extend(&split.validation);
    }
    seen.extend(test);
    seen.sort_unstable();
    ensure(seen == (0..data.len()).collect::<Vec<_>>(), || {
        "validation folds do not partition the non-test set".into()
    })?;

    let report = &outcome.report;
    ensure(report.folds.len() == 5, || "missing per-fold reports".into())?;
    let mut worst = 0.0f64;
    for column in metrics::COLUMNS {
        let mean = report
            .column(column)
            .ok_or_else(|| format!("aggregate lacks {column}"))?;
        for (row, (label, get)) in ROWS.iter().enumerate() {
            let mut values = Vec::new();
            for (i, fold) in report.folds.iter().enumerate() {
                let col = fold
                    .column(column)
                    .ok_or_else(|| format!("fold {} lacks column {column}", i + 1))?;
                // a tag absent from a fold's split leaves that cell empty
                match get(col) {
                    Some(v) => values.push(v),
                    None if column == metrics::GLOBAL => return Err(format!("fold {} lacks {column}/{label}", i + 1)),
                    None => {}
                }
            }
            if values.is_empty() {
                ensure(get(mean).is_none(), || format!("aggregate invents {column}/{label}"))?;
                continue;
            }
            let arithmetic = values.iter().sum::<f64>() / values.len() as f64;
            let got = get(mean).ok_or_else(|| format!("aggregate lacks {column}/{label}"))?;
            worst = worst.max((got - arithmetic).abs());
            ensure((got - arithmetic).abs() <= 1e-9, || {
                format!("row {row} {column}/{label}: {got} vs {arithmetic}")
            })?;
        }
    }
    Ok(format!(
        "5 folds partition {} non-test items, {} rows x {} columns per fold, mean deviation {worst:.1e}",
        data.len() - test.len(),
        ROWS.len(),
        metrics::COLUMNS.len()
    ))
}

fn main() -> ExitCode {
    let mut e2e = E2e { dirs: Vec::new() };
    let mut failed = 0;
    let mut criterion = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail} [{secs:.1}s]");
            }
        }
    };
    criterion(1, "gradient fidelity", &mut gradient_fidelity);
    criterion(2, "shape chain", &mut shape_chain);
    criterion(3, "metric oracles", &mut metric_oracles);
    criterion(4, "gate semantics", &mut gate_semantics);
    criterion(5, "overfit convergence", &mut overfit);
    criterion(6, "end-to-end", &mut || end_to_end(&mut e2e));
    criterion(7, "determinism", &mut || determinism(&mut e2e));
    criterion(8, "mse loss", &mut mse_loss);
    criterion(9, "k-fold harness", &mut kfold_harness);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
