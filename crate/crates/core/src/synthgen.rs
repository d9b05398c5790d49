//! Synthetic blood-smear scenes with exact ground-truth masks.
//!
//! Cells are filled rotated ellipses over a lightly graded background. The
//! mask is computed from geometry alone, so it never depends on noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::dataset::{encode_manifest, ClassCounts, DatasetTag, ManifestRow, Morphology, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::image::{encode_pnm, Mask, RawImage, BACKGROUND, ROI};
use crate::tensor::Rng;

/// Equivalent-radius bands as fractions of the nominal radius.
pub const MICROCYTE_BAND: (f64, f64) = (0.55, 0.75);
pub const NORMAL_BAND: (f64, f64) = (0.9, 1.1);
pub const MACROCYTE_BAND: (f64, f64) = (1.25, 1.5);
/// Elliptocyte minor semi-axis band and aspect-ratio band.
pub const ELLIPTOCYTE_MINOR: (f64, f64) = (0.5, 0.65);
pub const ELLIPTOCYTE_ASPECT: (f64, f64) = (2.0, 2.6);
/// Radius of a target cell's inner disc relative to the cell.
pub const TARGET_DISC: (f64, f64) = (0.35, 0.45);

const CELL_LEVEL: f64 = 0.45;
const DISC_LEVEL: f64 = 0.85;
/// RGB tint of a fully lit pixel.
const TINT: [f64; 3] = [235.0, 215.0, 220.0];
const PLACEMENT_ATTEMPTS: usize = 64;

pub const HEALTHY_WEIGHTS: [f64; 5] = [0.9, 0.025, 0.025, 0.025, 0.025];
pub const ANAEMIC_WEIGHTS: [f64; 5] = [0.2, 0.25, 0.15, 0.2, 0.2];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub cells_per_image: usize,
    /// Nominal normal-cell radius in pixels.
    pub cell_radius: f64,
    /// Morphology weights in `Morphology::ALL` order.
    pub weights: [f64; 5],
    /// Fraction of the summed radii two cell centres may encroach.
    pub overlap: f64,
    /// Peak-to-peak relative brightness change across the image.
    pub illumination: f64,
    /// Gaussian pixel noise, in 8-bit gray levels.
    pub noise_std: f64,
    pub seed: u64,
    pub tag: DatasetTag,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 128,
            cells_per_image: 12,
            cell_radius: 14.0,
            weights: HEALTHY_WEIGHTS,
            overlap: 0.25,
            illumination: 0.1,
            noise_std: 4.0,
            seed: 0,
            tag: DatasetTag::Healthy,
        }
    }
}

impl SceneConfig {
    /// Default scene with the weight preset for `tag`.
    pub fn preset(tag: DatasetTag) -> Self {
        let mut c = SceneConfig::default();
        c.set_tag(tag);
        c
    }

    pub fn set_tag(&mut self, tag: DatasetTag) {
        self.tag = tag;
        self.weights = match tag {
            DatasetTag::Healthy => HEALTHY_WEIGHTS,
            DatasetTag::Anaemic => ANAEMIC_WEIGHTS,
        };
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene dimensions must be nonzero"));
        }
        if !(self.cell_radius > 0.0) {
            return Err(Error::invalid(format!(
                "cell radius must be positive, got {}",
                self.cell_radius
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("morphology weights must be finite and non-negative"));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("morphology weights sum to zero"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if !(0.0..1.0).contains(&self.illumination) {
            return Err(Error::invalid(format!(
                "illumination must lie in [0, 1), got {}",
                self.illumination
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid(format!(
                "noise std must be non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec {
    pub morphology: Morphology,
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes, `a >= b`.
    pub a: f64,
    pub b: f64,
    pub rotation: f64,
    /// Brightening at the cell centre.
    pub pallor: f64,
    /// Inner disc radius as a fraction of the cell, for target cells.
    pub disc: Option<f64>,
}

impl CellSpec {
    pub fn equivalent_radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    /// Squared normalized elliptical radius of a point; inside when <= 1.
    pub fn rho2(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Unlit intensity at normalized radius^2 `r2`, or `None` outside.
    pub fn intensity(&self, r2: f64) -> Option<f64> {
        if r2 > 1.0 {
            return None;
        }
        match self.disc {
            Some(f) if r2 <= f * f => Some(DISC_LEVEL),
            Some(_) => Some(CELL_LEVEL),
            None => Some(CELL_LEVEL + self.pallor * (1.0 - r2).powi(2)),
        }
    }
}

fn pick_morphology(rng: &mut Rng, weights: &[f64; 5]) -> Morphology {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (m, &w) in Morphology::ALL.iter().zip(weights) {
        if u < w {
            return *m;
        }
        u -= w;
    }
    // rounding can leave u at the top edge; fall back to the last positive weight
    *Morphology::ALL
        .iter()
        .zip(weights)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map(|(m, _)| m)
        .expect("validated weights")
}

/// Draws one cell; its centre is uniform over the image.
pub fn sample_cell(rng: &mut Rng, config: &SceneConfig) -> Result<CellSpec> {
    config.validate()?;
    let morphology = pick_morphology(rng, &config.weights);
    let r0 = config.cell_radius;
    let band = |rng: &mut Rng, (lo, hi): (f64, f64)| rng.uniform_in(lo, hi) * r0;
    let (a, b, disc) = match morphology {
        Morphology::Elliptocyte => {
            let b = band(rng, ELLIPTOCYTE_MINOR);
            (b * rng.uniform_in(ELLIPTOCYTE_ASPECT.0, ELLIPTOCYTE_ASPECT.1), b, None)
        }
        m => {
            let r = match m {
                Morphology::Microcyte => band(rng, MICROCYTE_BAND),
                Morphology::Macrocyte => band(rng, MACROCYTE_BAND),
                _ => band(rng, NORMAL_BAND),
            };
            // slight ellipticity at constant area
            let s = rng.uniform_in(1.0, 1.08).sqrt();
            let disc = (m == Morphology::Target).then(|| rng.uniform_in(TARGET_DISC.0, TARGET_DISC.1));
            (r * s, r / s, disc)
        }
    };
    Ok(CellSpec {
        morphology,
        cx: rng.uniform() * config.width as f64,
        cy: rng.uniform() * config.height as f64,
        a,
        b,
        rotation: rng.uniform() * PI,
        pallor: rng.uniform_in(0.08, 0.18),
        disc,
    })
}

fn too_close(cell: &CellSpec, placed: &[CellSpec], overlap: f64) -> bool {
    placed.iter().any(|p| {
        let d = ((cell.cx - p.cx).powi(2) + (cell.cy - p.cy).powi(2)).sqrt();
        d < (1.0 - overlap) * (cell.a + p.a)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: RawImage,
    pub mask: Mask,
    pub counts: ClassCounts,
    pub cells: Vec<CellSpec>,
}

/// Renders a full scene. Cells are placed by rejection sampling against the
/// overlap allowance; a cell that never fits keeps its last draw, so the
/// cell count is always exact.
pub fn render_scene(rng: &mut Rng, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut cells: Vec<CellSpec> = Vec::with_capacity(config.cells_per_image);
    let mut counts = ClassCounts::default();
    for _ in 0..config.cells_per_image {
        let mut cell = sample_cell(rng, config)?;
        for _ in 1..PLACEMENT_ATTEMPTS {
            if !too_close(&cell, &cells, config.overlap) {
                break;
            }
            cell.cx = rng.uniform() * w as f64;
            cell.cy = rng.uniform() * h as f64;
        }
        counts.add(cell.morphology);
        cells.push(cell);
    }

    let angle = rng.uniform() * 2.0 * PI;
    let (gx, gy) = (angle.cos(), angle.sin());
    let half_span = 0.5 * (gx.abs() * w as f64 + gy.abs() * h as f64);
    let (mx, my) = (w as f64 / 2.0, h as f64 / 2.0);

    let mut level = vec![1.0f64; w * h];
    let mut mask = vec![BACKGROUND; w * h];
    for cell in &cells {
        let reach = cell.a.ceil() + 1.0;
        let x0 = (cell.cx - reach).floor().max(0.0) as usize;
        let y0 = (cell.cy - reach).floor().max(0.0) as usize;
        let x1 = ((cell.cx + reach).ceil().max(0.0) as usize).min(w);
        let y1 = ((cell.cy + reach).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if let Some(v) = cell.intensity(cell.rho2(x as f64, y as f64)) {
                    let i = y * w + x;
                    level[i] = level[i].min(v);
                    mask[i] = ROI;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 - mx) * gx + (y as f64 - my) * gy) / half_span.max(1.0);
            let lit = level[y * w + x] * (1.0 + 0.5 * config.illumination * t);
            for tint in TINT {
                let noise = if config.noise_std > 0.0 {
                    rng.normal() * config.noise_std
                } else {
                    0.0
                };
                data.push((lit * tint + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Scene {
        image: RawImage::new(w, h, 3, data)?,
        mask: Mask::new(w, h, mask)?,
        counts,
        cells,
    })
}

/// SplitMix64 step; used to derive independent per-image seeds.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn image_name(i: usize) -> String {
    format!("img_{i:04}.ppm")
}

pub fn mask_name(i: usize) -> String {
    format!("mask_{i:04}.pgm")
}

/// Renders `n` scenes in memory: file name and bytes for every output,
/// manifest last.
pub fn render_dataset(config: &SceneConfig, n: usize) -> Result<Vec<(String, Vec<u8>)>> {
    config.validate()?;
    let mut state = config.seed;
    let mut files = Vec::with_capacity(2 * n + 1);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let seed = splitmix64(&mut state);
        let scene = render_scene(&mut Rng::seeded(seed), config)?;
        files.push((image_name(i), encode_pnm(&scene.image)));
        files.push((mask_name(i), encode_pnm(&scene.mask.render())));
        rows.push(ManifestRow::new(
            image_name(i),
            mask_name(i),
            seed,
            config.tag,
            scene.counts,
        ));
    }
    files.push((MANIFEST_NAME.to_string(), encode_manifest(&rows)?));
    Ok(files)
}

/// Writes `n` image/mask pairs and the manifest into `out_dir`.
pub fn generate_dataset(config: &SceneConfig, n: usize, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = render_dataset(config, n)?;
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    crate::dataset::read_manifest(out_dir)
}
