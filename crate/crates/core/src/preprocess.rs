//! Image preparation: grayscale, Wiener denoising, Laplacian sharpening,
//! percentile contrast stretch and resizing, plus ground-truth binarization.

use crate::dataset::{ClassCounts, DatasetTag};
use crate::error::{Error, Result};
use crate::image::{Mask, RawImage, BACKGROUND, ROI};
use crate::tensor::{Shape, Tensor};

pub const MIN_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub size: usize,
    pub wiener_window: usize,
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub mask_threshold: u8,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: 320,
            wiener_window: 5,
            low_percentile: 1.0,
            high_percentile: 99.0,
            mask_threshold: 128,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIDE {
            return Err(Error::invalid(format!(
                "target size must be at least {MIN_SIDE}, got {}",
                self.size
            )));
        }
        if self.wiener_window < 3 || self.wiener_window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "wiener window must be odd and at least 3, got {}",
                self.wiener_window
            )));
        }
        let (lo, hi) = (self.low_percentile, self.high_percentile);
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::invalid(format!(
                "percentiles must satisfy 0 <= low < high <= 100, got {lo}, {hi}"
            )));
        }
        Ok(())
    }
}

/// A network-ready sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `(1, 3, S, S)` with values in `[0, 1]`.
    pub image: Tensor,
    pub mask: Mask,
    pub tag: DatasetTag,
    pub counts: ClassCounts,
}

impl LabeledImage {
    /// The mask as a `(1, 1, S, S)` tensor of 0/1 targets.
    pub fn target(&self) -> Tensor {
        mask_tensor(&self.mask)
    }
}

pub fn mask_tensor(mask: &Mask) -> Tensor {
    let shape = Shape::new(1, 1, mask.height(), mask.width()).expect("nonzero mask");
    Tensor::from_vec(shape, mask.data().iter().map(|&v| v as f32).collect()).expect("sized")
}

fn require_gray(img: &RawImage, op: &str) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!(
            "{op} needs a single-channel image, got {}",
            img.channels()
        )));
    }
    Ok(())
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`, rounded; gray input passes through.
pub fn to_grayscale(img: &RawImage) -> Result<RawImage> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data()
                .chunks_exact(3)
                .map(|p| clamp_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
                .collect();
            RawImage::gray(img.width(), img.height(), data)
        }
        c => Err(Error::invalid(format!("unsupported channel count {c}"))),
    }
}

fn replicate_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Per-pixel mean and variance over a `window x window` neighbourhood with
/// edge replication.
fn local_moments(img: &RawImage, window: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let px = img.data();
    let count = (window * window) as f64;
    let mut mean = vec![0.0; w * h];
    let mut var = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut sq) = (0.0f64, 0.0f64);
            for dy in -r..=r {
                let sy = replicate_index(y as isize + dy, h);
                for dx in -r..=r {
                    let v = px[sy * w + replicate_index(x as isize + dx, w)] as f64;
                    s += v;
                    sq += v * v;
                }
            }
            let m = s / count;
            mean[y * w + x] = m;
            var[y * w + x] = (sq / count - m * m).max(0.0);
        }
    }
    (mean, var)
}

/// Adaptive Wiener denoising with the noise power estimated as the mean of
/// all local variances.
pub fn wiener_filter(img: &RawImage, window: usize) -> Result<RawImage> {
    require_gray(img, "wiener filter")?;
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "wiener window must be odd and at least 3, got {window}"
        )));
    }
    let (mean, var) = local_moments(img, window);
    let noise = var.iter().sum::<f64>() / var.len() as f64;
    let data = img
        .data()
        .iter()
        .zip(mean.iter().zip(&var))
        .map(|(&x, (&m, &v))| {
            let denom = v.max(noise);
            if denom == 0.0 {
                return x;
            }
            clamp_u8(m + (v - noise).max(0.0) / denom * (x as f64 - m))
        })
        .collect();
    RawImage::gray(img.width(), img.height(), data)
}

/// `x - laplacian(x)` with the 4-neighbour kernel and edge replication.
pub fn laplacian_sharpen(img: &RawImage) -> Result<RawImage> {
    require_gray(img, "laplacian sharpen")?;
    let (w, h) = (img.width(), img.height());
    let px = img.data();
    let at = |x: isize, y: isize| px[replicate_index(y, h) * w + replicate_index(x, w)] as f64;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(x, y);
            let lap = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * c;
            data.push(clamp_u8(c - lap));
        }
    }
    RawImage::gray(w, h, data)
}

/// Nearest-rank percentile: the sorted value at `round(p / 100 * (N - 1))`.
pub fn percentile(img: &RawImage, p: f64) -> u8 {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let rank = (p / 100.0 * (img.data().len() - 1) as f64).round() as usize;
    let mut seen = 0;
    for (v, &n) in hist.iter().enumerate() {
        seen += n;
        if seen > rank {
            return v as u8;
        }
    }
    255
}

/// Linear stretch of the `[low, high]` percentile range onto `[0, 255]`.
pub fn contrast_normalize(img: &RawImage, low: f64, high: f64) -> Result<RawImage> {
    require_gray(img, "contrast normalization")?;
    let lo = percentile(img, low) as f64;
    let hi = percentile(img, high) as f64;
    if hi <= lo {
        return Ok(img.clone());
    }
    let scale = 255.0 / (hi - lo);
    let data = img.data().iter().map(|&v| clamp_u8((v as f64 - lo) * scale)).collect();
    RawImage::gray(img.width(), img.height(), data)
}

fn bilinear_coords(dst_len: usize, src_len: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|d| {
            let s = if dst_len == 1 {
                0.0
            } else {
                d as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
            };
            let i0 = (s.floor() as usize).min(src_len - 1);
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with corner-aligned coordinates:
/// `src = dst * (src_len - 1) / (dst_len - 1)`.
pub fn resize_bilinear(img: &RawImage, width: usize, height: usize) -> Result<RawImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize target must be nonzero"));
    }
    if (width, height) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let c = img.channels();
    let xs = bilinear_coords(width, img.width());
    let ys = bilinear_coords(height, img.height());
    let mut data = Vec::with_capacity(width * height * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |x: usize, y: usize| img.pixel(x, y)[ch] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                data.push(clamp_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    RawImage::new(width, height, c, data)
}

/// Same sampling as [`resize_bilinear`] on a single `f32` plane, without
/// rounding. Used to bring probability maps back to the source resolution.
pub fn resize_plane(src: &[f32], src_w: usize, src_h: usize, width: usize, height: usize) -> Result<Vec<f32>> {
    if src_w == 0 || src_h == 0 || width == 0 || height == 0 {
        return Err(Error::invalid("resize dimensions must be nonzero"));
    }
    if src.len() != src_w * src_h {
        return Err(Error::shape(format!(
            "{src_w}x{src_h} plane needs {} values, got {}",
            src_w * src_h,
            src.len()
        )));
    }
    let xs = bilinear_coords(width, src_w);
    let ys = bilinear_coords(height, src_h);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x: usize, y: usize| src[y * src_w + x] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(out)
}

/// Binarizes a truth image: `pixel < threshold` is ROI (0), otherwise
/// background (1). RGB truth images are converted to gray first.
pub fn unity_mask(truth: &RawImage, threshold: u8) -> Result<Mask> {
    let gray = to_grayscale(truth)?;
    let data = gray
        .data()
        .iter()
        .map(|&v| if v < threshold { ROI } else { BACKGROUND })
        .collect();
    Mask::new(gray.width(), gray.height(), data)
}

/// The filter chain up to and including contrast normalization.
pub fn enhance(raw: &RawImage, config: &PreprocessConfig) -> Result<RawImage> {
    let gray = to_grayscale(raw)?;
    let denoised = wiener_filter(&gray, config.wiener_window)?;
    let sharp = laplacian_sharpen(&denoised)?;
    contrast_normalize(&sharp, config.low_percentile, config.high_percentile)
}

/// Enhances and resizes a raw image to the configured square size.
pub fn prepare_gray(raw: &RawImage, config: &PreprocessConfig) -> Result<RawImage> {
    config.validate()?;
    if raw.width() < MIN_SIDE || raw.height() < MIN_SIDE {
        return Err(Error::Ingestion(format!(
            "images must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            raw.width(),
            raw.height()
        )));
    }
    resize_bilinear(&enhance(raw, config)?, config.size, config.size)
}

/// Replicates a gray image into a `(1, 3, H, W)` tensor scaled to `[0, 1]`.
pub fn gray_to_tensor(gray: &RawImage) -> Result<Tensor> {
    require_gray(gray, "network input")?;
    let plane: Vec<f32> = gray.data().iter().map(|&v| v as f32 / 255.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(Shape::new(1, 3, gray.height(), gray.width())?, data)
}

pub fn prepare_mask(truth: &RawImage, config: &PreprocessConfig) -> Result<Mask> {
    unity_mask(truth, config.mask_threshold)?.resize_nearest(config.size, config.size)
}

pub fn preprocess_pipeline(
    raw: &RawImage,
    truth: &RawImage,
    config: &PreprocessConfig,
    tag: DatasetTag,
    counts: ClassCounts,
) -> Result<LabeledImage> {
    if (raw.width(), raw.height()) != (truth.width(), truth.height()) {
        return Err(Error::Ingestion(format!(
            "image is {}x{} but its mask is {}x{}",
            raw.width(),
            raw.height(),
            truth.width(),
            truth.height()
        )));
    }
    let gray = prepare_gray(raw, config)?;
    Ok(LabeledImage {
        image: gray_to_tensor(&gray)?,
        mask: prepare_mask(truth, config)?,
        tag,
        counts,
    })
}
