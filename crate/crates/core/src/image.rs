//! 8-bit raster images, binary masks, and binary PGM/PPM codecs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit raster with one (gray) or three (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Binary label map: 0 marks region-of-interest pixels, 1 background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub const ROI: u8 = 0;
pub const BACKGROUND: u8 = 1;

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "mask dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask values must be 0 or 1, found {v}")));
        }
        Ok(Mask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_roi(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == ROI
    }

    pub fn roi_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == ROI).count()
    }

    /// Binarizes a probability-of-background map at 0.5.
    pub fn from_probabilities(width: usize, height: usize, probs: &[f32]) -> Result<Self> {
        Self::new(
            width,
            height,
            probs.iter().map(|&p| if p >= 0.5 { BACKGROUND } else { ROI }).collect(),
        )
    }

    /// Grayscale rendering: ROI black, background white.
    pub fn render(&self) -> RawImage {
        let data = self.data.iter().map(|&v| if v == ROI { 0 } else { 255 }).collect();
        RawImage::gray(self.width, self.height, data).expect("valid dims")
    }

    /// Nearest-neighbour resampling using pixel-centre alignment.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Mask> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be nonzero"));
        }
        let xs: Vec<usize> = (0..width).map(|x| nearest_source(x, width, self.width)).collect();
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = nearest_source(y, height, self.height);
            data.extend(xs.iter().map(|&sx| self.get(sx, sy)));
        }
        Mask::new(width, height, data)
    }
}

// Same corner-aligned coordinates as the bilinear image resize, so a
// resized mask stays registered with its resized image.
fn nearest_source(dst: usize, dst_len: usize, src_len: usize) -> usize {
    if dst_len == 1 {
        return 0;
    }
    ((dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64).round() as usize).min(src_len - 1)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) with maxval 255.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<RawImage> {
    let mut pos = 0;
    let mut fields: Vec<String> = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "truncated header"));
    }
    pos += 1;

    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format_err(path, format!("unsupported magic {other:?}"))),
    };
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| format_err(path, format!("bad {what} {s:?}")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(format_err(
            path,
            format!("only 8-bit images are supported, maxval {maxval}"),
        ));
    }
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format_err(
            path,
            format!("raster truncated: expected {need} bytes, found {}", raster.len()),
        ));
    }
    RawImage::new(width, height, channels, raster[..need].to_vec()).map_err(|e| format_err(path, e.to_string()))
}

pub fn encode_pnm(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn read_pnm(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn write_pnm(path: &Path, img: &RawImage) -> Result<()> {
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}
