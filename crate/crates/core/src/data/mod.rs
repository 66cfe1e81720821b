//! Image pairs, ROI annotations and the on-disk dataset layout.
//!
//! A dataset root holds `ir/<id>.png` (8-bit grayscale), `vis/<id>.png`
//! (8-bit RGB or grayscale) and optionally `ann/<id>.xml` (Pascal-VOC style
//! boxes).

mod annotations;
mod image_io;
mod manifest;

pub use annotations::{parse_annotations, scale_boxes, write_annotations, AnnotationSet, BoundingBox};
pub use image_io::{load_image, resize_bilinear, rgb_to_luminance, save_image, LUMA_WEIGHTS};
pub use manifest::{build_manifest, DatasetManifest, Sample, ANN_DIR, IR_DIR, VIS_DIR};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Default preprocessing size `(height, width)`.
pub const DEFAULT_SIZE: (usize, usize) = (512, 640);

/// A registered infrared / visible pair with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T = f32> {
    pub id: String,
    /// `[1,H,W]`
    pub ir: Tensor<T>,
    /// `[3,H,W]`
    pub vis: Tensor<T>,
    /// `[1,H,W]` luminance of `vis`.
    pub vis_y: Tensor<T>,
}

impl<T: Real> ImagePair<T> {
    /// Builds a pair, deriving the visible luminance. A single-channel
    /// visible image is replicated to three channels.
    pub fn new(id: impl Into<String>, ir: Tensor<T>, vis: Tensor<T>) -> Result<Self> {
        let (ic, ih, iw) = ir.chw()?;
        if ic != 1 {
            return Err(Error::dim("image_pair", format!("IR must have 1 channel, got {ic}")));
        }
        let vis = match vis.chw()? {
            (3, _, _) => vis,
            (1, h, w) => {
                let plane = vis.into_data();
                Tensor::new([3, h, w], plane.repeat(3))?
            }
            (c, _, _) => {
                return Err(Error::dim("image_pair", format!("VIS must have 1 or 3 channels, got {c}")))
            }
        };
        let (_, vh, vw) = vis.chw()?;
        if (ih, iw) != (vh, vw) {
            return Err(Error::dim(
                "image_pair",
                format!("IR is {ih}x{iw} but VIS is {vh}x{vw}"),
            ));
        }
        let vis_y = rgb_to_luminance(&vis)?;
        Ok(ImagePair {
            id: id.into(),
            ir,
            vis,
            vis_y,
        })
    }

    pub fn height(&self) -> usize {
        self.ir.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.ir.shape()[2]
    }

    pub fn cast<U: Real>(&self) -> ImagePair<U> {
        ImagePair {
            id: self.id.clone(),
            ir: self.ir.cast(),
            vis: self.vis.cast(),
            vis_y: self.vis_y.cast(),
        }
    }

    /// Resizes both modalities to `(height, width)`; a no-op at the same size.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if (self.height(), self.width()) == (height, width) {
            return Ok(self.clone());
        }
        ImagePair::new(
            self.id.clone(),
            resize_bilinear(&self.ir, height, width)?,
            resize_bilinear(&self.vis, height, width)?,
        )
    }
}
