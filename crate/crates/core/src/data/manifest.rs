use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::{load_image, parse_annotations, rgb_to_luminance, scale_boxes, AnnotationSet, ImagePair};
use crate::error::{Error, Result};

pub const IR_DIR: &str = "ir";
pub const VIS_DIR: &str = "vis";
pub const ANN_DIR: &str = "ann";

/// One preprocessed training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pair: ImagePair<f32>,
    pub annotations: AnnotationSet,
}

/// Ids present in both `ir/` and `vis/` under a dataset root, in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub ids: Vec<String>,
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

/// Scans `root/ir` and `root/vis` for PNGs with matching stems.
pub fn build_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    for dir in [IR_DIR, VIS_DIR] {
        if !root.join(dir).is_dir() {
            return Err(Error::Config(format!(
                "dataset root {} has no {dir}/ directory",
                root.display()
            )));
        }
    }
    let ir = png_stems(&root.join(IR_DIR))?;
    let vis = png_stems(&root.join(VIS_DIR))?;
    let ids: Vec<String> = ir.intersection(&vis).cloned().collect();
    if ids.is_empty() {
        warn!("no matching IR/VIS pairs under {}", root.display());
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        ids,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ir_path(&self, id: &str) -> PathBuf {
        self.root.join(IR_DIR).join(format!("{id}.png"))
    }

    pub fn vis_path(&self, id: &str) -> PathBuf {
        self.root.join(VIS_DIR).join(format!("{id}.png"))
    }

    pub fn annotation_path(&self, id: &str) -> PathBuf {
        self.root.join(ANN_DIR).join(format!("{id}.xml"))
    }

    /// Keeps only the ids listed (one per line) in a split file.
    pub fn restrict_to_split(&self, split: impl AsRef<Path>) -> Result<Self> {
        let split = split.as_ref();
        let text = fs::read_to_string(split).map_err(|e| Error::io(split, e))?;
        let wanted: BTreeSet<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if let Some(missing) = wanted.iter().find(|id| !self.ids.iter().any(|i| i == *id)) {
            return Err(Error::Config(format!(
                "split {} lists {missing:?}, which has no IR/VIS pair",
                split.display()
            )));
        }
        Ok(DatasetManifest {
            root: self.root.clone(),
            ids: self.ids.iter().filter(|i| wanted.contains(i.as_str())).cloned().collect(),
        })
    }

    /// Writes the id list, one per line.
    pub fn write_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.ids.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads one pair and its boxes. With `size = Some((h, w))` both images
    /// are resized and the boxes rescaled to match.
    pub fn load_sample(&self, id: &str, size: Option<(usize, usize)>) -> Result<Sample> {
        let mut ir = load_image(self.ir_path(id))?;
        if ir.chw()?.0 == 3 {
            ir = rgb_to_luminance(&ir)?;
        }
        let vis = load_image(self.vis_path(id))?;
        let (_, h, w) = ir.chw()?;
        let (_, vh, vw) = vis.chw()?;
        let (ir, vis) = match size {
            Some((th, tw)) => (
                super::resize_bilinear(&ir, th, tw)?,
                super::resize_bilinear(&vis, th, tw)?,
            ),
            None if (h, w) != (vh, vw) => {
                return Err(Error::dim(
                    "load_sample",
                    format!("{id}: IR is {h}x{w} but VIS is {vh}x{vw}"),
                ))
            }
            None => (ir, vis),
        };
        let pair = ImagePair::new(id, ir, vis)?;

        let ann_path = self.annotation_path(id);
        let mut annotations = if ann_path.is_file() {
            let xml = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
            parse_annotations(&xml)?
        } else {
            AnnotationSet::default()
        };
        annotations.image_id = id.to_string();
        annotations.clip_to(h, w);
        if (pair.height(), pair.width()) != (h, w) {
            annotations = scale_boxes(&annotations, (h, w), (pair.height(), pair.width()))?;
        }
        Ok(Sample { pair, annotations })
    }
}
