//! Evaluation metrics, computed in double precision outside the graph.

use std::fmt::Write as _;

use crate::data::AnnotationSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DATA_RANGE: f64 = 1.0;
pub const ENTROPY_LEVELS: usize = 256;

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// A single-channel image as `(height, width, f64 pixels)`.
fn plane<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, Vec<f64>)> {
    match *t.shape() {
        [1, h, w] => Ok((h, w, t.data().iter().map(|v| v.as_f64()).collect())),
        _ => Err(Error::dim(op, format!("expected a [1,H,W] image, got {:?}", t.shape()))),
    }
}

fn plane_pair<T: Real>(x: &Tensor<T>, y: &Tensor<T>, op: &'static str) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let (h, w, a) = plane(x, op)?;
    let (h2, w2, b) = plane(y, op)?;
    if (h, w) != (h2, w2) {
        return Err(Error::dim(op, format!("{h}x{w} vs {h2}x{w2}")));
    }
    Ok((h, w, a, b))
}

/// Separable "valid" Gaussian filtering of one map.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(h: usize, w: usize, a: &[f64], b: &[f64]) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}; \
             ROI-SSIM skips boxes smaller than the window"
        )));
    }
    let taps = gaussian_taps();
    let product = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&product(a, a), h, w, &taps);
    let e_bb = filter_valid(&product(b, b), h, w, &taps);
    let e_ab = filter_valid(&product(a, b), h, w, &taps);
    let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * DATA_RANGE).powi(2);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// Mean single-scale SSIM over all valid 11×11 Gaussian-window positions.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let (h, w, a, b) = plane_pair(x, y, "ssim")?;
    ssim_plane(h, w, &a, &b)
}

pub fn mse_metric<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let (h, w, a, b) = plane_pair(x, y, "mse_metric")?;
    if h * w == 0 {
        return Err(Error::Contract("MSE of an empty image".into()));
    }
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (h * w) as f64)
}

/// Quantisation level of a `[0,1]` pixel for [`entropy_metric`].
pub fn entropy_level(v: f64) -> usize {
    let v = v.clamp(0.0, 1.0 - 1e-9);
    (v * ENTROPY_LEVELS as f64).floor() as usize
}

/// Shannon entropy in bits of the 256-level intensity histogram.
pub fn entropy_metric<T: Real>(x: &Tensor<T>) -> Result<f64> {
    let (h, w, a) = plane(x, "entropy_metric")?;
    if h * w == 0 {
        return Err(Error::Contract("entropy of an empty image".into()));
    }
    let mut counts = [0usize; ENTROPY_LEVELS];
    for &v in &a {
        counts[entropy_level(v)] += 1;
    }
    let n = a.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>())
}

/// Box-averaged SSIM inside the ROI boxes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoiSsim {
    /// `None` when no box is at least as large as the SSIM window.
    pub value: Option<f64>,
    pub evaluated: usize,
    /// Boxes skipped for being smaller than the window.
    pub skipped_small: usize,
}

fn crop(a: &[f64], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<f64> {
    (y0..y1).flat_map(|y| a[y * w + x0..y * w + x1].iter().copied()).collect()
}

/// SSIM of `fused` against `reference` on each box crop, averaged over boxes
/// whose sides are both at least [`SSIM_WINDOW`].
pub fn roi_ssim<T: Real>(fused: &Tensor<T>, reference: &Tensor<T>, boxes: &AnnotationSet) -> Result<RoiSsim> {
    let (h, w, a, b) = plane_pair(fused, reference, "roi_ssim")?;
    let mut result = RoiSsim::default();
    let mut total = 0.0;
    for bx in &boxes.boxes {
        let (x0, y0) = (bx.xmin.min(w), bx.ymin.min(h));
        let (x1, y1) = (bx.xmax.min(w), bx.ymax.min(h));
        if x1.saturating_sub(x0) < SSIM_WINDOW || y1.saturating_sub(y0) < SSIM_WINDOW {
            result.skipped_small += 1;
            continue;
        }
        let ca = crop(&a, w, x0, y0, x1, y1);
        let cb = crop(&b, w, x0, y0, x1, y1);
        total += ssim_plane(y1 - y0, x1 - x0, &ca, &cb)?;
        result.evaluated += 1;
    }
    if result.evaluated > 0 {
        result.value = Some(total / result.evaluated as f64);
    }
    Ok(result)
}

/// Metrics of one fused image against its IR input.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub ssim: f64,
    pub mse: f64,
    pub entropy: f64,
    pub roi_ssim: Option<f64>,
    pub roi_boxes_skipped: usize,
}

impl MetricRow {
    pub fn compute<T: Real>(id: &str, fused: &Tensor<T>, ir: &Tensor<T>, boxes: &AnnotationSet) -> Result<Self> {
        let roi = roi_ssim(fused, ir, boxes)?;
        Ok(MetricRow {
            id: id.to_string(),
            ssim: ssim(fused, ir)?,
            mse: mse_metric(fused, ir)?,
            entropy: entropy_metric(fused)?,
            roi_ssim: roi.value,
            roi_boxes_skipped: roi.skipped_small,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricMeans {
    pub ssim: f64,
    pub mse: f64,
    pub entropy: f64,
    /// Mean over images that have a ROI-SSIM value.
    pub roi_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricMeans,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("metric report needs at least one image".into()));
        }
        let mean = MetricMeans {
            ssim: mean(rows.iter().map(|r| r.ssim)).unwrap_or_default(),
            mse: mean(rows.iter().map(|r| r.mse)).unwrap_or_default(),
            entropy: mean(rows.iter().map(|r| r.entropy)).unwrap_or_default(),
            roi_ssim: mean(rows.iter().filter_map(|r| r.roi_ssim)),
        };
        Ok(MetricReport { rows, mean })
    }

    pub fn csv_header() -> &'static str {
        "id,ssim,mse,entropy,roi_ssim"
    }

    pub fn mean_row(&self) -> String {
        format!(
            "mean,{},{},{},{}",
            self.mean.ssim,
            self.mean.mse,
            self.mean.entropy,
            field(self.mean.roi_ssim)
        )
    }

    /// Header, one row per image, then the mean row. Missing ROI-SSIM values
    /// are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::csv_header());
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.id, r.ssim, r.mse, r.entropy, field(r.roi_ssim));
        }
        let _ = writeln!(out, "{}", self.mean_row());
        out
    }
}
