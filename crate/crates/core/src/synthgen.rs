//! Deterministic synthetic IR/VIS pairs with ground-truth target boxes.
//!
//! Generation uses `ChaCha8Rng::seed_from_u64(seed)`. Stream 0 feeds the IR
//! image: for each target, centre x, centre y, radius and amplitude, then one
//! noise sample per pixel in row-major order. Stream 1 feeds the VIS image:
//! three phase offsets, then one noise sample per channel and pixel in
//! channel-major, row-major order. Every draw is uniform. VIS therefore does
//! not depend on the targets at all.
//!
//! A target of radius `r` is an isotropic Gaussian with `sigma = r / 2`, so
//! its box spans `centre ± 2 sigma`. Blobs combine by maximum, then the image
//! is clamped to `[0, 1]`; amplitudes above one saturate the blob core.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_manifest, save_image, write_annotations, AnnotationSet, BoundingBox, DatasetManifest, ImagePair, ANN_DIR,
    IR_DIR, VIS_DIR,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TARGET_LABEL: &str = "target";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_targets: usize,
    /// Inclusive range of target half-extents in pixels.
    pub radius: (f64, f64),
    /// Peak blob amplitude range above the background, before clamping.
    pub amplitude: (f64, f64),
    pub ir_background: f64,
    /// Texture cycles across the VIS image.
    pub vis_frequency: f64,
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            height: 64,
            width: 64,
            n_targets: 3,
            radius: (6.0, 10.0),
            amplitude: (1.2, 1.6),
            ir_background: 0.1,
            vis_frequency: 4.0,
            noise: 0.02,
        }
    }
}

impl SynthSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    /// Resizes the image and scales the target radii by the change in the
    /// shorter side.
    pub fn scaled_to(mut self, height: usize, width: usize) -> Self {
        let factor = height.min(width) as f64 / self.height.min(self.width).max(1) as f64;
        self.radius = (self.radius.0 * factor, self.radius.1 * factor);
        self.with_size(height, width)
    }

    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.radius;
        let half = self.height.min(self.width) as f64 / 2.0;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Spec("image size must be positive".into()));
        }
        if self.n_targets > 0 {
            if !(r0 > 0.0 && r0 <= r1) {
                return Err(Error::Spec(format!("invalid radius range {r0}..{r1}")));
            }
            if r1 >= half {
                return Err(Error::Spec(format!(
                    "radius {r1} cannot fit a {}x{} image",
                    self.height, self.width
                )));
            }
            if !(self.amplitude.0 >= 0.85 - self.ir_background && self.amplitude.0 <= self.amplitude.1) {
                return Err(Error::Spec(format!("amplitude range {:?} gives peaks below 0.85", self.amplitude)));
            }
        }
        let finite = [self.ir_background, self.vis_frequency, self.noise, r0, r1, self.amplitude.0, self.amplitude.1];
        if finite.iter().any(|v| !v.is_finite()) || self.noise < 0.0 || !(0.0..1.0).contains(&self.ir_background) {
            return Err(Error::Spec("background, frequency and noise must be finite and in range".into()));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Generates one pair and its boxes. The id is `synth_<seed>`.
pub fn gen_pair(spec: &SynthSpec) -> Result<(ImagePair<f32>, AnnotationSet)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let id = format!("synth_{}", spec.seed);

    let mut blobs = Vec::with_capacity(spec.n_targets);
    let mut annotations = AnnotationSet::empty(id.clone());
    annotations.image_size = Some((h, w));
    for _ in 0..spec.n_targets {
        let r_hi = spec.radius.1;
        let cx = uniform(&mut rng, r_hi, w as f64 - r_hi);
        let cy = uniform(&mut rng, r_hi, h as f64 - r_hi);
        let r = uniform(&mut rng, spec.radius.0, spec.radius.1);
        let amplitude = uniform(&mut rng, spec.amplitude.0, spec.amplitude.1);
        let lo = |c: f64| (c - r).floor().max(0.0) as usize;
        let hi = |c: f64, n: usize| ((c + r).ceil() as usize).min(n);
        annotations.boxes.push(BoundingBox::new(TARGET_LABEL, lo(cx), lo(cy), hi(cx, w), hi(cy, h)));
        blobs.push(Blob { cx, cy, sigma: r / 2.0, amplitude });
    }
    annotations.clip_to(h, w);

    let mut ir = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            // Pixel centres sit at +0.5 so a box [x0, x1) covers centres in [x0, x1).
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hot = blobs
                .iter()
                .map(|b| {
                    let d2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
                    b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                })
                .fold(0.0, f64::max);
            let n = uniform(&mut rng, -spec.noise, spec.noise);
            ir[y * w + x] = (spec.ir_background + hot + n).clamp(0.0, 1.0) as f32;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let phases: Vec<f64> = (0..3).map(|_| uniform(&mut rng, 0.0, std::f64::consts::TAU)).collect();
    let mut vis = vec![0f32; 3 * h * w];
    let f = spec.vis_frequency * std::f64::consts::TAU;
    for (c, phase) in phases.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let texture = 0.2 * (f * u + phase).sin() * (f * v + 0.5 * phase).cos();
                let gradient = 0.25 * (u + v);
                let n = uniform(&mut rng, -spec.noise, spec.noise);
                vis[(c * h + y) * w + x] = (0.3 + texture + gradient + n).clamp(0.0, 1.0) as f32;
            }
        }
    }

    let pair = ImagePair::new(id, Tensor::new(vec![1, h, w], ir)?, Tensor::new(vec![3, h, w], vis)?)?;
    Ok((pair, annotations))
}

/// Dataset id of the `index`-th generated pair.
pub fn sample_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Writes `count` pairs under `root/{ir,vis,ann}`. Pair `i` uses seed
/// `spec.seed + i` and id [`sample_id`]`(i)`.
pub fn write_dataset(spec: &SynthSpec, root: impl AsRef<Path>, count: usize) -> Result<DatasetManifest> {
    let root = root.as_ref();
    for dir in [IR_DIR, VIS_DIR, ANN_DIR] {
        let path = root.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    for i in 0..count {
        let item = SynthSpec { seed: spec.seed.wrapping_add(i as u64), ..spec.clone() };
        let (pair, mut ann) = gen_pair(&item)?;
        let id = sample_id(i);
        ann.image_id = id.clone();
        save_image(&pair.ir, root.join(IR_DIR).join(format!("{id}.png")))?;
        save_image(&pair.vis, root.join(VIS_DIR).join(format!("{id}.png")))?;
        let xml_path = root.join(ANN_DIR).join(format!("{id}.xml"));
        fs::write(&xml_path, write_annotations(&ann, spec.height, spec.width)).map_err(|e| Error::io(&xml_path, e))?;
    }
    build_manifest(root)
}
