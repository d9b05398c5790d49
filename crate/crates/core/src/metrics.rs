//! Pixel-level segmentation metrics and the summary report.
//!
//! The region of interest (mask label 0) is the positive class throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::DatasetTag;
use crate::error::{Error, Result};
use crate::image::{Mask, ROI};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn same_shape(pred: &Mask, truth: &Mask) -> Result<()> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    same_shape(pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p == ROI, t == ROI) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(tp + tn) / (tp + tn + fp + fn)`.
pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::EmptyDataset("no pixels compared".into()));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Mean of the per-class recalls; a class absent from the truth is skipped.
pub fn mean_class_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let mut rates = Vec::with_capacity(2);
    if c.tp + c.fn_ > 0 {
        rates.push(c.tp as f64 / (c.tp + c.fn_) as f64);
    }
    if c.tn + c.fp > 0 {
        rates.push(c.tn as f64 / (c.tn + c.fp) as f64);
    }
    if rates.is_empty() {
        return Err(Error::EmptyDataset("no pixels compared".into()));
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Roi,
    Background,
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Intersection over union of one class; an empty union scores 1.
pub fn class_iou(c: &ConfusionCounts, class: Class) -> f64 {
    match class {
        Class::Roi => ratio_or_one(c.tp, c.tp + c.fp + c.fn_),
        Class::Background => ratio_or_one(c.tn, c.tn + c.fp + c.fn_),
    }
}

pub fn iou(pred: &Mask, truth: &Mask, class: Class) -> Result<f64> {
    Ok(class_iou(&confusion(pred, truth)?, class))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IouSummary {
    pub roi: f64,
    pub background: f64,
    pub mean: f64,
    /// Class IoUs weighted by each class's share of truth pixels.
    pub weighted: f64,
}

pub fn iou_summary(c: &ConfusionCounts) -> Result<IouSummary> {
    let n = c.total();
    if n == 0 {
        return Err(Error::EmptyDataset("no pixels compared".into()));
    }
    let roi = class_iou(c, Class::Roi);
    let background = class_iou(c, Class::Background);
    let w_roi = (c.tp + c.fn_) as f64 / n as f64;
    let w_bg = (c.tn + c.fp) as f64 / n as f64;
    Ok(IouSummary {
        roi,
        background,
        mean: (roi + background) / 2.0,
        weighted: w_roi * roi + w_bg * background,
    })
}

/// ROI pixels with a 4-neighbour that is background or outside the image.
pub fn boundary_extract(mask: &Mask) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.is_roi(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.is_roi(x - 1, y)
                || !mask.is_roi(x + 1, y)
                || !mask.is_roi(x, y - 1)
                || !mask.is_roi(x, y + 1);
            out[y * w + x] = edge;
        }
    }
    out
}

/// `ceil(0.0075 * diagonal)`, at least one pixel.
pub fn default_theta(width: usize, height: usize) -> f64 {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.0075 * diag).ceil().max(1.0)
}

fn matched_fraction(from: &[bool], to: &[bool], w: usize, h: usize, offsets: &[(isize, isize)]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for y in 0..h {
        for x in 0..w {
            if !from[y * w + x] {
                continue;
            }
            total += 1;
            let found = offsets.iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && to[ny as usize * w + nx as usize]
            });
            hits += found as usize;
        }
    }
    (hits, total)
}

/// Boundary F1 score with a Euclidean matching tolerance of `theta` pixels.
pub fn bfscore(pred: &Mask, truth: &Mask, theta: f64) -> Result<f64> {
    same_shape(pred, truth)?;
    if !(theta >= 1.0) {
        return Err(Error::invalid(format!(
            "boundary tolerance must be at least 1 pixel, got {theta}"
        )));
    }
    let (w, h) = (pred.width(), pred.height());
    let pb = boundary_extract(pred);
    let tb = boundary_extract(truth);
    let r = theta.floor() as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= theta * theta {
                offsets.push((dx, dy));
            }
        }
    }
    let (p_hits, p_total) = matched_fraction(&pb, &tb, w, h, &offsets);
    let (r_hits, r_total) = matched_fraction(&tb, &pb, w, h, &offsets);
    Ok(match (p_total, r_total) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let precision = p_hits as f64 / p_total as f64;
            let recall = r_hits as f64 / r_total as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    })
}

/// ROI and background pixel totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PixelCounts {
    pub roi: u64,
    pub background: u64,
}

impl PixelCounts {
    pub fn of(mask: &Mask) -> Self {
        let roi = mask.roi_count() as u64;
        PixelCounts {
            roi,
            background: mask.len() as u64 - roi,
        }
    }

    pub fn merge(&mut self, other: &PixelCounts) {
        self.roi += other.roi;
        self.background += other.background;
    }
}

/// Per-tag pixel totals plus the global sum.
pub fn pixel_count<'a, T: Into<Option<DatasetTag>>>(
    masks: impl IntoIterator<Item = (&'a Mask, T)>,
) -> BTreeMap<String, PixelCounts> {
    let mut out: BTreeMap<String, PixelCounts> = BTreeMap::new();
    let mut global = PixelCounts::default();
    for (mask, tag) in masks {
        let c = PixelCounts::of(mask);
        if let Some(tag) = tag.into() {
            out.entry(tag.to_string()).or_default().merge(&c);
        }
        global.merge(&c);
    }
    out.insert(GLOBAL.to_string(), global);
    out
}

/// Scientific notation with a signed two-digit exponent, e.g. `3.2657e+09`.
pub fn format_scientific(v: f64) -> String {
    let s = format!("{v:.4e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let e: i32 = exp.parse().unwrap_or(0);
            let sign = if e < 0 { '-' } else { '+' };
            format!("{mantissa}e{sign}{:02}", e.abs())
        }
        None => s,
    }
}

/// Running totals for one group of evaluated images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Accumulator {
    pub confusion: ConfusionCounts,
    pub images: usize,
    pub loss_sum: f64,
    pub loss_count: usize,
    pub bf_sum: f64,
}

impl Accumulator {
    pub fn add(&mut self, pred: &Mask, truth: &Mask, loss: Option<f64>, theta: f64) -> Result<()> {
        self.confusion.merge(&confusion(pred, truth)?);
        self.bf_sum += bfscore(pred, truth, theta)?;
        self.images += 1;
        if let Some(l) = loss {
            self.loss_sum += l;
            self.loss_count += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.confusion.merge(&other.confusion);
        self.images += other.images;
        self.loss_sum += other.loss_sum;
        self.loss_count += other.loss_count;
        self.bf_sum += other.bf_sum;
    }

    pub fn accuracy(&self) -> Option<f64> {
        pixel_accuracy(&self.confusion).ok()
    }

    pub fn loss(&self) -> Option<f64> {
        (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64)
    }

    pub fn mean_bfscore(&self) -> Option<f64> {
        (self.images > 0).then(|| self.bf_sum / self.images as f64)
    }
}

/// Accumulators per dataset tag for one data split. Images without a tag
/// only count toward the global column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitStats {
    pub by_tag: BTreeMap<DatasetTag, Accumulator>,
    pub untagged: Accumulator,
}

impl SplitStats {
    pub fn entry(&mut self, tag: DatasetTag) -> &mut Accumulator {
        self.by_tag.entry(tag).or_default()
    }

    pub fn entry_for(&mut self, tag: Option<DatasetTag>) -> &mut Accumulator {
        match tag {
            Some(t) => self.entry(t),
            None => &mut self.untagged,
        }
    }

    pub fn column(&self, column: &str) -> Accumulator {
        let mut acc = Accumulator::default();
        for (tag, a) in &self.by_tag {
            if column == GLOBAL || column == tag.as_str() {
                acc.merge(a);
            }
        }
        if column == GLOBAL {
            acc.merge(&self.untagged);
        }
        acc
    }
}

/// Train, validation and test statistics of one trained model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldResult {
    pub train: SplitStats,
    pub validation: SplitStats,
    pub test: SplitStats,
}

pub const GLOBAL: &str = "global";
pub const COLUMNS: [&str; 3] = ["healthy", "anaemic", GLOBAL];

/// One column of the summary table; absent values print as `n/a`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportColumn {
    pub training_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub training_loss: Option<f64>,
    pub validation_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub bfscore: Option<f64>,
    pub iou: Option<f64>,
    pub roi_iou: Option<f64>,
    pub background_iou: Option<f64>,
    pub weighted_iou: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

/// Row labels and accessors, in print order. The first eight are the
/// headline rows.
pub const ROWS: [(&str, fn(&ReportColumn) -> Option<f64>); 12] = [
    ("training accuracy", |c| c.training_accuracy),
    ("validation accuracy", |c| c.validation_accuracy),
    ("test accuracy", |c| c.test_accuracy),
    ("training loss", |c| c.training_loss),
    ("validation loss", |c| c.validation_loss),
    ("test loss", |c| c.test_loss),
    ("BFScore", |c| c.bfscore),
    ("IoU", |c| c.iou),
    ("ROI IoU", |c| c.roi_iou),
    ("background IoU", |c| c.background_iou),
    ("weighted IoU", |c| c.weighted_iou),
    ("mean accuracy", |c| c.mean_accuracy),
];

impl ReportColumn {
    fn fields_mut(&mut self) -> [&mut Option<f64>; 12] {
        [
            &mut self.training_accuracy,
            &mut self.validation_accuracy,
            &mut self.test_accuracy,
            &mut self.training_loss,
            &mut self.validation_loss,
            &mut self.test_loss,
            &mut self.bfscore,
            &mut self.iou,
            &mut self.roi_iou,
            &mut self.background_iou,
            &mut self.weighted_iou,
            &mut self.mean_accuracy,
        ]
    }

    pub fn values(&self) -> [Option<f64>; 12] {
        ROWS.map(|(_, get)| get(self))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub columns: BTreeMap<String, ReportColumn>,
    pub pixel_counts: BTreeMap<String, PixelCounts>,
    /// Per-fold reports when this one aggregates several folds.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<MetricsReport>,
}

fn column_for(fold: &FoldResult, name: &str) -> ReportColumn {
    let train = fold.train.column(name);
    let val = fold.validation.column(name);
    let test = fold.test.column(name);
    let ious = iou_summary(&test.confusion).ok();
    ReportColumn {
        training_accuracy: train.accuracy(),
        validation_accuracy: val.accuracy(),
        test_accuracy: test.accuracy(),
        training_loss: train.loss(),
        validation_loss: val.loss(),
        test_loss: test.loss(),
        bfscore: test.mean_bfscore(),
        iou: ious.map(|s| s.mean),
        roi_iou: ious.map(|s| s.roi),
        background_iou: ious.map(|s| s.background),
        weighted_iou: ious.map(|s| s.weighted),
        mean_accuracy: mean_class_accuracy(&test.confusion).ok(),
    }
}

/// Report of one fold. Accuracies and IoUs come from pooled confusion
/// counts; the boundary score is the mean over images. Segmentation-quality
/// rows describe the test split.
pub fn fold_report(fold: &FoldResult, pixel_counts: BTreeMap<String, PixelCounts>) -> MetricsReport {
    let columns = COLUMNS
        .iter()
        .map(|&name| (name.to_string(), column_for(fold, name)))
        .collect();
    MetricsReport {
        columns,
        pixel_counts,
        folds: Vec::new(),
    }
}

/// A single fold's report, or the field-wise arithmetic mean of several
/// fold reports (a value present in only some folds is averaged over those).
pub fn build_report(folds: &[FoldResult], pixel_counts: BTreeMap<String, PixelCounts>) -> Result<MetricsReport> {
    match folds {
        [] => Err(Error::EmptyDataset("no fold results to report".into())),
        [one] => Ok(fold_report(one, pixel_counts)),
        many => {
            let reports: Vec<MetricsReport> = many.iter().map(|f| fold_report(f, pixel_counts.clone())).collect();
            let mut mean = mean_report(&reports);
            mean.pixel_counts = pixel_counts;
            mean.folds = reports;
            Ok(mean)
        }
    }
}

pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let mut columns = BTreeMap::new();
    for &name in &COLUMNS {
        let mut out = ReportColumn::default();
        for (i, slot) in out.fields_mut().into_iter().enumerate() {
            let vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.columns.get(name).and_then(|c| c.values()[i]))
                .collect();
            if !vals.is_empty() {
                *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        columns.insert(name.to_string(), out);
    }
    MetricsReport {
        columns,
        pixel_counts: BTreeMap::new(),
        folds: Vec::new(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    pub fn column(&self, name: &str) -> Option<&ReportColumn> {
        self.columns.get(name)
    }

    /// Fixed-width text table, one labelled row per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_table(&mut out);
        for (i, fold) in self.folds.iter().enumerate() {
            let _ = writeln!(out, "\nfold {}", i + 1);
            fold.write_table(&mut out);
        }
        out
    }

    fn write_table(&self, out: &mut String) {
        let _ = write!(out, "{:<22}", "metric");
        for name in COLUMNS {
            let _ = write!(out, "{name:>12}");
        }
        out.push('\n');
        for (i, (label, _)) in ROWS.iter().enumerate() {
            let _ = write!(out, "{label:<22}");
            for name in COLUMNS {
                let v = self.columns.get(name).and_then(|c| c.values()[i]);
                let _ = write!(out, "{:>12}", cell(v));
            }
            out.push('\n');
        }
        if !self.pixel_counts.is_empty() {
            let _ = write!(out, "\n{:<22}", "pixel count");
            for name in COLUMNS {
                let _ = write!(out, "{name:>12}");
            }
            out.push('\n');
            type Get = fn(&PixelCounts) -> u64;
            let rows: [(&str, Get); 2] = [("ROI", |p| p.roi), ("background", |p| p.background)];
            for (label, get) in rows {
                let _ = write!(out, "{label:<22}");
                for name in COLUMNS {
                    let v = self
                        .pixel_counts
                        .get(name)
                        .map_or_else(|| "n/a".to_string(), |p| format_scientific(get(p) as f64));
                    let _ = write!(out, "{v:>12}");
                }
                out.push('\n');
            }
        }
    }
}
