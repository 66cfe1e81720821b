//! Pascal-VOC style bounding boxes.
//!
//! Files store 1-based inclusive pixel coordinates; in memory a box is the
//! 0-based half-open range `[xmin, xmax) × [ymin, ymax)`.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
    pub label: String,
}

impl BoundingBox {
    pub fn new(label: impl Into<String>, xmin: usize, ymin: usize, xmax: usize, ymax: usize) -> Self {
        BoundingBox {
            xmin,
            ymin,
            xmax,
            ymax,
            label: label.into(),
        }
    }

    pub fn width(&self) -> usize {
        self.xmax.saturating_sub(self.xmin)
    }

    pub fn height(&self) -> usize {
        self.ymax.saturating_sub(self.ymin)
    }

    /// Clips signed half-open coordinates to `[0,w] × [0,h]`; `None` if the
    /// result is empty.
    fn clipped(label: &str, x0: i64, y0: i64, x1: i64, y1: i64, bounds: Option<(usize, usize)>) -> Option<Self> {
        let (x0, y0) = (x0.max(0), y0.max(0));
        let (x1, y1) = match bounds {
            Some((h, w)) => (x1.min(w as i64), y1.min(h as i64)),
            None => (x1, y1),
        };
        (x1 > x0 && y1 > y0).then(|| BoundingBox::new(label, x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// The ROI boxes of one image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    /// Boxes dropped because they were empty or inverted after clipping.
    pub skipped: usize,
    /// `(height, width)` declared by the annotation file, if any.
    pub image_size: Option<(usize, usize)>,
}

impl AnnotationSet {
    pub fn empty(image_id: impl Into<String>) -> Self {
        AnnotationSet {
            image_id: image_id.into(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Clips every box to an `h × w` image, dropping (and counting) boxes
    /// that become empty.
    pub fn clip_to(&mut self, h: usize, w: usize) {
        let before = self.boxes.len();
        self.boxes = self
            .boxes
            .iter()
            .filter_map(|b| {
                BoundingBox::clipped(
                    &b.label,
                    b.xmin as i64,
                    b.ymin as i64,
                    b.xmax as i64,
                    b.ymax as i64,
                    Some((h, w)),
                )
            })
            .collect();
        self.skipped += before - self.boxes.len();
        self.image_size = Some((h, w));
    }

    /// Row-major `h × w` mask of the union of all boxes.
    pub fn roi_mask(&self, h: usize, w: usize) -> Vec<bool> {
        let mut mask = vec![false; h * w];
        for b in &self.boxes {
            for y in b.ymin.min(h)..b.ymax.min(h) {
                mask[y * w + b.xmin.min(w)..y * w + b.xmax.min(w)].fill(true);
            }
        }
        mask
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn number(node: Node, name: &str) -> Result<f64> {
    let element = child(node, name).ok_or_else(|| Error::Annotation {
        element: name.into(),
        detail: format!("missing inside <{}>", node.tag_name().name()),
    })?;
    let text = element.text().unwrap_or("").trim();
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Annotation {
            element: name.into(),
            detail: format!("expected a number, found {text:?}"),
        })
}

/// Parses a Pascal-VOC style annotation document.
///
/// Each `<object>` needs a `<name>` and a `<bndbox>` with `xmin`, `ymin`,
/// `xmax`, `ymax`. When the document declares `<size>`, boxes are clipped to
/// it. Unknown elements are ignored.
pub fn parse_annotations(xml: &str) -> Result<AnnotationSet> {
    let doc = Document::parse(xml).map_err(|e| Error::Annotation {
        element: "document".into(),
        detail: e.to_string(),
    })?;
    let root = doc.root_element();
    let mut set = AnnotationSet::default();
    if let Some(name) = child(root, "filename").and_then(|n| n.text()) {
        let name = name.trim();
        set.image_id = name.rsplit_once('.').map_or(name, |(stem, _)| stem).to_string();
    }
    if let Some(size) = child(root, "size") {
        let (w, h) = (number(size, "width")?, number(size, "height")?);
        if w >= 1.0 && h >= 1.0 {
            set.image_size = Some((h as usize, w as usize));
        }
    }
    for object in root.children().filter(|c| c.has_tag_name("object")) {
        let label = child(object, "name")
            .and_then(|n| n.text())
            .ok_or_else(|| Error::Annotation {
                element: "name".into(),
                detail: "missing inside <object>".into(),
            })?
            .trim()
            .to_string();
        let bndbox = child(object, "bndbox").ok_or_else(|| Error::Annotation {
            element: "bndbox".into(),
            detail: format!("missing for object {label:?}"),
        })?;
        let xmin = number(bndbox, "xmin")?.round() as i64;
        let ymin = number(bndbox, "ymin")?.round() as i64;
        let xmax = number(bndbox, "xmax")?.round() as i64;
        let ymax = number(bndbox, "ymax")?.round() as i64;
        match BoundingBox::clipped(&label, xmin - 1, ymin - 1, xmax, ymax, set.image_size) {
            Some(b) => set.boxes.push(b),
            None => set.skipped += 1,
        }
    }
    Ok(set)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Serialises boxes as a VOC document for an `h × w` image; the inverse of
/// [`parse_annotations`].
pub fn write_annotations(set: &AnnotationSet, h: usize, w: usize) -> String {
    let mut xml = String::from("<annotation>\n");
    let _ = writeln!(xml, "  <filename>{}.png</filename>", escape(&set.image_id));
    let _ = writeln!(
        xml,
        "  <size>\n    <width>{w}</width>\n    <height>{h}</height>\n    <depth>3</depth>\n  </size>"
    );
    for b in &set.boxes {
        let _ = writeln!(
            xml,
            "  <object>\n    <name>{}</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            escape(&b.label),
            b.xmin + 1,
            b.ymin + 1,
            b.xmax,
            b.ymax
        );
    }
    xml.push_str("</annotation>\n");
    xml
}

/// Rescales boxes from a `from = (h, w)` image to a `to = (h, w)` image.
/// Minimum corners round down and maximum corners round up, so a non-empty
/// box never collapses; boxes that are empty after clipping are dropped.
pub fn scale_boxes(set: &AnnotationSet, from: (usize, usize), to: (usize, usize)) -> Result<AnnotationSet> {
    let (fh, fw) = from;
    let (th, tw) = to;
    if fh == 0 || fw == 0 || th == 0 || tw == 0 {
        return Err(Error::Contract(format!(
            "scale_boxes needs positive sizes, got {from:?} -> {to:?}"
        )));
    }
    let down = |v: usize, t: usize, f: usize| (v * t / f) as i64;
    let up = |v: usize, t: usize, f: usize| v.saturating_mul(t).div_ceil(f) as i64;
    let mut out = AnnotationSet {
        image_id: set.image_id.clone(),
        boxes: Vec::with_capacity(set.boxes.len()),
        skipped: set.skipped,
        image_size: Some(to),
    };
    for b in &set.boxes {
        let scaled = BoundingBox::clipped(
            &b.label,
            down(b.xmin, tw, fw),
            down(b.ymin, th, fh),
            up(b.xmax, tw, fw),
            up(b.ymax, th, fh),
            Some(to),
        );
        match scaled {
            Some(s) => out.boxes.push(s),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}
