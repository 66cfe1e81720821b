use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Loads an 8-bit grayscale or RGB PNG as `[C,H,W]` with byte `b` mapped to `b/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img_err = |detail: String| Error::Image {
        path: path.to_path_buf(),
        detail,
    };
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| img_err(e.to_string()))?;
    let (channels, width, height, bytes) = match decoded {
        DynamicImage::ImageLuma8(img) => (1, img.width(), img.height(), img.into_raw()),
        DynamicImage::ImageRgb8(img) => (3, img.width(), img.height(), img.into_raw()),
        other => {
            return Err(img_err(format!(
                "unsupported pixel format {:?}; expected 8-bit grayscale or RGB",
                other.color()
            )))
        }
    };
    let (h, w) = (height as usize, width as usize);
    let plane = h * w;
    let mut data = vec![0.0f32; channels * plane];
    for (i, px) in bytes.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * plane + i] = b as f32 / 255.0;
        }
    }
    Tensor::new([channels, h, w], data)
}

fn quantize<T: Real>(v: T) -> u8 {
    let v = v.as_f64();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Writes a `[1,H,W]` or `[3,H,W]` tensor as an 8-bit PNG, clamping to
/// `[0,1]` and storing `round(v * 255)`.
pub fn save_image<T: Real>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = tensor.chw()?;
    let plane = h * w;
    let d = tensor.data();
    let result = match c {
        1 => {
            let bytes = d.iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized from shape")
                .save(path)
        }
        3 => {
            let mut bytes = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                for ch in 0..3 {
                    bytes.push(quantize(d[ch * plane + i]));
                }
            }
            RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized from shape")
                .save(path)
        }
        _ => {
            return Err(Error::dim(
                "save_image",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })
}

/// `Y = 0.299 R + 0.587 G + 0.114 B` for a `[3,H,W]` tensor.
pub fn rgb_to_luminance<T: Real>(vis: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = vis.chw()?;
    if c != 3 {
        return Err(Error::dim(
            "rgb_to_luminance",
            format!("expected 3 channels, got {c}"),
        ));
    }
    let plane = h * w;
    let [wr, wg, wb] = LUMA_WEIGHTS.map(T::from_f64);
    let d = vis.data();
    let data = (0..plane)
        .map(|i| wr * d[i] + wg * d[plane + i] + wb * d[2 * plane + i])
        .collect();
    Tensor::new([1, h, w], data)
}

/// Corner-aligned bilinear resize of a `[C,H,W]` tensor: output corners
/// sample input corners exactly.
pub fn resize_bilinear<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Contract("cannot resize an empty image".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let axis = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let pos = if out == 1 {
                    0.0
                } else {
                    i as f64 * (src - 1) as f64 / (out - 1) as f64
                };
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let d = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let p = |y: usize, x: usize| plane[y * w + x].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(T::from_f64(v.clamp(0.0, 1.0)));
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}
