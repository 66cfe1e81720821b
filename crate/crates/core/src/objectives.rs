//! The composite training objective
//! `total = mse + λ1·grad + λ2·entropy + λ3·roi`, built on the graph so that
//! every term is differentiable with respect to the fused image.

use serde::{Deserialize, Serialize};

use crate::data::AnnotationSet;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const DEFAULT_ENTROPY_BINS: usize = 64;

/// Keeps the Sobel magnitude differentiable where both derivatives vanish.
pub const SOBEL_EPS: f64 = 1e-8;

/// Horizontal derivative kernel (cross-correlation, x grows rightwards).
pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
/// Vertical derivative kernel (y grows downwards).
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.1,
            lambda3: 0.2,
        }
    }
}

/// What the fused image's edge map is pulled towards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    /// Elementwise max of the IR and visible-luminance Sobel magnitudes.
    #[default]
    Max,
    /// The IR Sobel magnitude alone.
    Ir,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub grad: f64,
    pub entropy: f64,
    pub roi: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted total of already-computed terms.
    pub fn combine(mse: f64, grad: f64, entropy: f64, roi: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            mse,
            grad,
            entropy,
            roi,
            total: mse + w.lambda1 * grad + w.lambda2 * entropy + w.lambda3 * roi,
        }
    }
}

fn check_pair<T: Real>(g: &Graph<T>, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::dim(op, format!("shapes {sa:?} and {sb:?} differ")));
    }
    match sa {
        [1, _, _] => Ok(sa.to_vec()),
        _ => Err(Error::dim(op, format!("expected a [1,H,W] image, got {sa:?}"))),
    }
}

fn squared_error<T: Real>(g: &mut Graph<T>, fused: Var, ir: Var) -> Result<Var> {
    let diff = g.sub(fused, ir)?;
    g.mul(diff, diff)
}

/// Mean of squared pixel differences.
pub fn loss_mse<T: Real>(g: &mut Graph<T>, fused: Var, ir: Var) -> Result<Var> {
    let shape = check_pair(g, fused, ir, "loss_mse")?;
    let n: usize = shape.iter().product();
    let sq = squared_error(g, fused, ir)?;
    let total = g.sum(sq)?;
    g.scale(total, T::from_f64(1.0 / n as f64))
}

fn sobel_kernel<T: Real>(taps: &[f64; 9]) -> Tensor<T> {
    Tensor::new([1, 1, 3, 3], taps.iter().map(|&v| T::from_f64(v)).collect()).expect("3x3 kernel")
}

/// `sqrt(Gx² + Gy² + ε²)` with zero-padded 3×3 Sobel kernels.
pub fn sobel_magnitude<T: Real>(g: &mut Graph<T>, img: Var) -> Result<Var> {
    match g.shape(img) {
        [1, _, _] => {}
        s => return Err(Error::dim("sobel_magnitude", format!("expected [1,H,W], got {s:?}"))),
    }
    let kx = g.constant(sobel_kernel(&SOBEL_X));
    let ky = g.constant(sobel_kernel(&SOBEL_Y));
    let zero = g.constant(Tensor::zeros([1]));
    let gx = g.conv2d(img, kx, zero)?;
    let gy = g.conv2d(img, ky, zero)?;
    let gx2 = g.mul(gx, gx)?;
    let gy2 = g.mul(gy, gy)?;
    let sum = g.add(gx2, gy2)?;
    let shifted = g.affine(sum, T::one(), T::from_f64(SOBEL_EPS * SOBEL_EPS))?;
    g.sqrt(shifted)
}

/// [`sobel_magnitude`] evaluated outside any caller graph.
pub fn sobel_magnitude_of<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(img.clone());
    let m = sobel_magnitude(&mut g, x)?;
    Ok(g.value(m).clone())
}

/// Edge map the fused image is compared against; a constant of the graph.
pub fn gradient_target<T: Real>(ir: &Tensor<T>, vis_y: &Tensor<T>, target: GradTarget) -> Result<Tensor<T>> {
    ir.ensure_same_shape(vis_y, "gradient_target")?;
    let ir_edges = sobel_magnitude_of(ir)?;
    Ok(match target {
        GradTarget::Ir => ir_edges,
        GradTarget::Max => {
            let vis_edges = sobel_magnitude_of(vis_y)?;
            let data = ir_edges
                .data()
                .iter()
                .zip(vis_edges.data())
                .map(|(&a, &b)| a.max(b))
                .collect();
            Tensor::new(ir_edges.shape().to_vec(), data)?
        }
    })
}

/// `mean((sobel(fused) − target)²)` where the target is built by [`gradient_target`].
pub fn loss_grad<T: Real>(
    g: &mut Graph<T>,
    fused: Var,
    ir: Var,
    vis_y: Var,
    target: GradTarget,
) -> Result<Var> {
    check_pair(g, fused, ir, "loss_grad")?;
    check_pair(g, fused, vis_y, "loss_grad")?;
    let reference = gradient_target(g.value(ir), g.value(vis_y), target)?;
    let reference = g.constant(reference);
    let edges = sobel_magnitude(g, fused)?;
    let diff = g.sub(edges, reference)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// Negative soft-histogram entropy in bits, in `[−log2(bins), 0]`.
/// Minimising it spreads the fused intensities over more levels.
pub fn loss_entropy<T: Real>(g: &mut Graph<T>, fused: Var, bins: usize) -> Result<Var> {
    let p = g.soft_histogram(fused, bins)?;
    let terms = g.xlog2x(p)?;
    g.sum(terms)
}

/// Mean squared fused-vs-IR difference over the union of the ROI boxes;
/// zero when there are no ROI pixels.
pub fn loss_roi<T: Real>(g: &mut Graph<T>, fused: Var, ir: Var, boxes: &AnnotationSet) -> Result<Var> {
    let shape = check_pair(g, fused, ir, "loss_roi")?;
    let (h, w) = (shape[1], shape[2]);
    let mask = boxes.roi_mask(h, w);
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let mask = g.constant(Tensor::new(
        shape,
        mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
    )?);
    let sq = squared_error(g, fused, ir)?;
    let masked = g.mul(sq, mask)?;
    let total = g.sum(masked)?;
    g.scale(total, T::from_f64(1.0 / count as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub entropy_bins: usize,
    pub grad_target: GradTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            entropy_bins: DEFAULT_ENTROPY_BINS,
            grad_target: GradTarget::Max,
        }
    }
}

/// Graph handles of the four terms and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub mse: Var,
    pub grad: Var,
    pub entropy: Var,
    pub roi: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        let v = |var| g.value(var).data()[0].as_f64();
        LossBreakdown {
            mse: v(self.mse),
            grad: v(self.grad),
            entropy: v(self.entropy),
            roi: v(self.roi),
            total: v(self.total),
        }
    }
}

pub fn loss_total<T: Real>(
    g: &mut Graph<T>,
    fused: Var,
    ir: Var,
    vis_y: Var,
    boxes: &AnnotationSet,
    config: &LossConfig,
) -> Result<LossVars> {
    let w = &config.weights;
    for (name, l) in [("lambda1", w.lambda1), ("lambda2", w.lambda2), ("lambda3", w.lambda3)] {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("{name} must be a non-negative number, got {l}")));
        }
    }
    let mse = loss_mse(g, fused, ir)?;
    let grad = loss_grad(g, fused, ir, vis_y, config.grad_target)?;
    let entropy = loss_entropy(g, fused, config.entropy_bins)?;
    let roi = loss_roi(g, fused, ir, boxes)?;
    let mut total = mse;
    for (term, lambda) in [(grad, w.lambda1), (entropy, w.lambda2), (roi, w.lambda3)] {
        let weighted = g.scale(term, T::from_f64(lambda))?;
        total = g.add(total, weighted)?;
    }
    Ok(LossVars {
        mse,
        grad,
        entropy,
        roi,
        total,
    })
}
