//! The five subcommands. Each returns a [`CliError`] carrying its exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dced_core::dataset::{encode_manifest, read_manifest, DatasetTag, ManifestRow, MANIFEST_NAME};
use dced_core::image::{encode_pnm, read_pnm, Mask};
use dced_core::metrics::{self, FoldResult, MetricsReport};
use dced_core::preprocess::{gray_to_tensor, prepare_gray, prepare_mask, resize_plane, unity_mask, LabeledImage};
use dced_core::synthgen::render_dataset;
use dced_core::train::{run_kfold, run_single, FoldRun, HISTORY_HEADER};
use dced_core::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::config::{config_hash, ConfigError, ConfigFile};
use crate::output::Outputs;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_UNREADABLE_PAIR: u8 = 4;
pub const EXIT_NON_FINITE: u8 = 5;
pub const EXIT_CHECKPOINT: u8 = 6;
pub const EXIT_NAME_MISMATCH: u8 = 7;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        CliError::new(code, format!("config: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let code = match e {
            CheckpointError::Io { .. } => EXIT_IO,
            _ => EXIT_CHECKPOINT,
        };
        CliError::new(code, e.to_string())
    }
}

/// Default mapping of library errors onto exit codes.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::Format { .. } | Error::Ingestion(_) => EXIT_UNREADABLE_PAIR,
            Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            Error::InvalidArgument(_) | Error::EmptyDataset(_) => EXIT_USAGE,
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

fn commit(out: Outputs) -> Result<(), CliError> {
    out.commit()
        .map_err(|(path, e)| CliError::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A data file that must decode; any failure is reported as an unreadable
/// pair naming the file.
fn read_pair_file(path: &Path) -> Result<dced_core::image::RawImage, CliError> {
    read_pnm(path).map_err(|e| CliError::new(EXIT_UNREADABLE_PAIR, format!("unreadable pair: {e}")))
}

pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub images: usize,
    pub seed: Option<u64>,
    pub tag: Option<DatasetTag>,
}

pub fn generate(args: &GenerateArgs) -> Result<String, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let mut scene = cfg.synthgen;
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    if let Some(tag) = args.tag {
        scene.set_tag(tag);
    }
    let files = render_dataset(&scene, args.images)?;
    let mut out = Outputs::new();
    for (name, bytes) in files {
        out.add(args.out.join(name), bytes);
    }
    commit(out)?;
    Ok(format!(
        "wrote {} {} image/mask pairs to {}",
        args.images,
        scene.tag,
        args.out.display()
    ))
}

pub struct PreprocessArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

fn manifest(dir: &Path) -> Result<Vec<ManifestRow>, CliError> {
    read_manifest(dir).map_err(|e| match e {
        Error::Io { .. } => CliError::new(EXIT_IO, e.to_string()),
        other => CliError::new(EXIT_UNREADABLE_PAIR, other.to_string()),
    })
}

fn gray_name(image: &str) -> String {
    let stem = Path::new(image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{stem}.pgm")
}

pub fn preprocess(args: &PreprocessArgs) -> Result<String, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let rows = manifest(&args.input)?;
    let mut out = Outputs::new();
    let mut new_rows = Vec::with_capacity(rows.len());
    for row in &rows {
        let raw = read_pair_file(&args.input.join(&row.image))?;
        let truth = read_pair_file(&args.input.join(&row.mask))?;
        if (raw.width(), raw.height()) != (truth.width(), truth.height()) {
            return Err(CliError::new(
                EXIT_UNREADABLE_PAIR,
                format!(
                    "unreadable pair: {} is {}x{} but {} is {}x{}",
                    row.image,
                    raw.width(),
                    raw.height(),
                    row.mask,
                    truth.width(),
                    truth.height()
                ),
            ));
        }
        let wrap = |e: Error| CliError::new(EXIT_UNREADABLE_PAIR, format!("unreadable pair {}: {e}", row.image));
        let gray = prepare_gray(&raw, &cfg.preprocess).map_err(wrap)?;
        let mask = prepare_mask(&truth, &cfg.preprocess).map_err(wrap)?;
        let image = gray_name(&row.image);
        out.add(args.out.join(&image), encode_pnm(&gray));
        out.add(args.out.join(&row.mask), encode_pnm(&mask.render()));
        new_rows.push(ManifestRow { image, ..row.clone() });
    }
    out.add(args.out.join(MANIFEST_NAME), encode_manifest(&new_rows)?);
    commit(out)?;
    Ok(format!("preprocessed {} pairs into {}", rows.len(), args.out.display()))
}

/// Loads a preprocessed dataset; every image must already be a gray
/// `size x size` raster.
pub fn load_dataset(dir: &Path, cfg: &ConfigFile) -> Result<Vec<LabeledImage>, CliError> {
    let rows = manifest(dir)?;
    let size = cfg.preprocess.size;
    let mut data = Vec::with_capacity(rows.len());
    for row in rows {
        let img = read_pair_file(&dir.join(&row.image))?;
        let truth = read_pair_file(&dir.join(&row.mask))?;
        for (name, r) in [(&row.image, &img), (&row.mask, &truth)] {
            if r.channels() != 1 || r.width() != size || r.height() != size {
                return Err(CliError::new(
                    EXIT_UNREADABLE_PAIR,
                    format!(
                        "unreadable pair: {name} is not a preprocessed {size}x{size} gray image (run preprocess first)"
                    ),
                ));
            }
        }
        data.push(LabeledImage {
            image: gray_to_tensor(&img)?,
            mask: unity_mask(&truth, cfg.preprocess.mask_threshold)?,
            tag: row.tag,
            counts: row.counts(),
        });
    }
    Ok(data)
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub folds: Option<usize>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn report_json(report: &MetricsReport) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::new(EXIT_INTERNAL, format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn train(args: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = load_config(Some(&args.config))?;
    if let Some(k) = args.folds {
        cfg.train.folds = k;
        cfg.validate()?;
    }
    let data = load_dataset(&args.data, &cfg)?;
    let (runs, report): (Vec<FoldRun>, MetricsReport) = if args.folds.is_some() {
        let outcome = run_kfold(&data, &cfg.network, &cfg.train)?;
        (outcome.folds, outcome.report)
    } else {
        let run = run_single(&data, &cfg.network, &cfg.train)?;
        let counts = dced_core::train::dataset_pixel_counts(&data);
        let report = metrics::build_report(std::slice::from_ref(&run.result), counts)?;
        (vec![run], report)
    };

    // keep the fold whose network scored best on its validation split
    let best = runs.iter().enumerate().fold(0, |b, (i, r)| {
        if r.history.final_c_o.unwrap_or(0.0) > runs[b].history.final_c_o.unwrap_or(0.0) {
            i
        } else {
            b
        }
    });
    let mut net = runs[best].net.clone();
    net.provenance.config_hash = config_hash(&cfg.network, &cfg.preprocess);
    let ckpt = Checkpoint {
        net,
        preprocess: cfg.preprocess.clone(),
    };

    let mut history = String::from(HISTORY_HEADER);
    for (i, r) in runs.iter().enumerate() {
        history.push_str(&r.history.csv_rows(i + 1));
    }
    let mut out = Outputs::new();
    out.add(&args.checkpoint, checkpoint::encode(&ckpt));
    out.add(sibling(&args.checkpoint, ".history.csv"), history);
    out.add(sibling(&args.checkpoint, ".report.txt"), report.to_text());
    out.add(sibling(&args.checkpoint, ".report.json"), report_json(&report)?);
    commit(out)?;

    let seconds: f64 = runs.iter().map(|r| r.history.wall_seconds).sum();
    let epochs: usize = runs.iter().map(|r| r.history.records.len()).sum();
    Ok(format!(
        "trained {} fold(s), {epochs} epochs in {seconds:.1}s; kept fold {} (validation C_o {:.4})",
        runs.len(),
        best + 1,
        runs[best].history.final_c_o.unwrap_or(f64::NAN)
    ))
}

pub struct SegmentArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
}

/// Segments one raw image with a loaded checkpoint; the mask has the
/// input's resolution.
pub fn segment_image(ckpt: &Checkpoint, raw: &dced_core::image::RawImage) -> Result<Mask, Error> {
    let gray = prepare_gray(raw, &ckpt.preprocess)?;
    let probs = ckpt.net.forward(&gray_to_tensor(&gray)?)?;
    let s = probs.shape();
    let full = resize_plane(probs.data(), s.w, s.h, raw.width(), raw.height())?;
    Mask::from_probabilities(raw.width(), raw.height(), &full)
}

pub fn segment(args: &SegmentArgs) -> Result<String, CliError> {
    let ckpt = checkpoint::load(&args.checkpoint, None)?;
    let raw = read_pnm(&args.input).map_err(|e| match e {
        Error::Io { .. } => CliError::from(e),
        other => CliError::new(EXIT_UNREADABLE_PAIR, other.to_string()),
    })?;
    let mask = segment_image(&ckpt, &raw)?;
    let mut out = Outputs::new();
    out.add(&args.out, encode_pnm(&mask.render()));
    commit(out)?;
    Ok(format!(
        "wrote {} ({} of {} pixels in the region of interest)",
        args.out.display(),
        mask.roi_count(),
        mask.len()
    ))
}

pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub report: PathBuf,
}

/// Mask files of a directory with their tags: the manifest's mask column
/// when a manifest exists, otherwise every PGM file.
fn mask_set(dir: &Path) -> Result<BTreeMap<String, Option<DatasetTag>>, CliError> {
    if dir.join(MANIFEST_NAME).exists() {
        return Ok(manifest(dir)?.into_iter().map(|r| (r.mask, Some(r.tag))).collect());
    }
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::new(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::new(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") && !name.starts_with('.') {
            out.insert(name, None);
        }
    }
    Ok(out)
}

fn load_mask(path: &Path, threshold: u8) -> Result<Mask, CliError> {
    let img = read_pair_file(path)?;
    unity_mask(&img, threshold).map_err(|e| CliError::new(EXIT_UNREADABLE_PAIR, format!("{}: {e}", path.display())))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let truth = mask_set(&args.truth)?;
    let pred = mask_set(&args.pred)?;
    let t: BTreeSet<&String> = truth.keys().collect();
    let p: BTreeSet<&String> = pred.keys().collect();
    if t != p {
        let list = |s: Vec<&&String>| s.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(", ");
        return Err(CliError::new(
            EXIT_NAME_MISMATCH,
            format!(
                "prediction and truth file sets differ; only in prediction: [{}]; only in truth: [{}]",
                list(p.difference(&t).collect()),
                list(t.difference(&p).collect())
            ),
        ));
    }
    if truth.is_empty() {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("no masks found in {}", args.truth.display()),
        ));
    }
    let threshold = dced_core::preprocess::PreprocessConfig::default().mask_threshold;
    let mut fold = FoldResult::default();
    let mut truths = Vec::with_capacity(truth.len());
    for (name, tag) in &truth {
        let tm = load_mask(&args.truth.join(name), threshold)?;
        let pm = load_mask(&args.pred.join(name), threshold)?;
        if (tm.width(), tm.height()) != (pm.width(), pm.height()) {
            return Err(CliError::new(
                EXIT_UNREADABLE_PAIR,
                format!(
                    "unreadable pair: {name} is {}x{} in the prediction but {}x{} in the truth",
                    pm.width(),
                    pm.height(),
                    tm.width(),
                    tm.height()
                ),
            ));
        }
        let theta = metrics::default_theta(tm.width(), tm.height());
        fold.test.entry_for(*tag).add(&pm, &tm, None, theta)?;
        truths.push((tm, *tag));
    }
    let counts = metrics::pixel_count(truths.iter().map(|(m, t)| (m, *t)));
    let report = metrics::fold_report(&fold, counts);
    let mut out = Outputs::new();
    out.add(&args.report, report.to_text());
    out.add(sibling(&args.report, ".json"), report_json(&report)?);
    commit(out)?;
    let global = report.column(metrics::GLOBAL).cloned().unwrap_or_default();
    Ok(format!(
        "evaluated {} masks: accuracy {:.4}, ROI IoU {:.4}, BFScore {:.4}",
        truth.len(),
        global.test_accuracy.unwrap_or(f64::NAN),
        global.roi_iou.unwrap_or(f64::NAN),
        global.bfscore.unwrap_or(f64::NAN)
    ))
}
