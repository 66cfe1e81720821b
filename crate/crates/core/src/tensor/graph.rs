//! Reverse-mode differentiation over a recorded computation graph.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] simply walks it in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::conv::{self, ConvGeometry};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Local-gradient rule of a node.
#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Activation(Var, Activation),
    Sqrt(Var),
    Elementwise(Var, Var, Elementwise),
    /// `scale * x + shift`; only the scale matters for the gradient.
    Affine(Var, T),
    Reduce(Var, Reduction),
    Concat(Var, Var),
    /// `w * a + (1 - w) * b`.
    Lerp { weight: Var, a: Var, b: Var },
    SoftHistogram {
        input: Var,
        bins: usize,
    },
    XLog2X(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::Activation(x, _)
            | Op::Sqrt(x)
            | Op::Affine(x, _)
            | Op::Reduce(x, _)
            | Op::XLog2X(x)
            | Op::SoftHistogram { input: x, .. } => vec![x],
            Op::Elementwise(a, b, _) | Op::Concat(a, b) => vec![a, b],
            Op::Lerp { weight, a, b } => vec![weight, a, b],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Smallest argument used inside `x * log2(x)`.
pub const XLOGX_FLOOR: f64 = 1e-12;

/// How far outside `[0, 1]` a soft-histogram input may stray through
/// rounding before it is rejected.
pub const UNIT_RANGE_SLACK: f64 = 1e-5;

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }
}

/// A single-threaded recording of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

fn check_finite<T: Real>(t: Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Logistic function clamped to the open interval `(0, 1)`: saturated
/// outputs stop one rounding step short of the bounds.
fn sigmoid<T: Real>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(below_one)
}

/// Locates `x ∈ [0,1]` between bin centres `k` and `k+1` of a `bins`-centre
/// grid spanning `[0,1]`; returns `(k, t)` with `x = (k + t) / (bins - 1)`.
pub(crate) fn soft_bin<T: Real>(x: T, bins: usize) -> (usize, T) {
    let top = T::from_f64((bins - 1) as f64);
    let pos = x.max(T::zero()).min(T::one()) * top;
    let k = pos.floor().as_f64() as usize;
    let k = k.min(bins - 2);
    (k, pos - T::from_f64(k as f64))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// A leaf that never receives gradients (inputs, fixed kernels, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Stride-1 cross-correlation with zero padding `(k-1)/2`, preserving
    /// spatial size. `input` is `[N,Cin,H,W]` or `[Cin,H,W]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        let (batch, cin, h, w) = match xs[..] {
            [n, c, h, w] => (n, c, h, w),
            [c, h, w] => (1, c, h, w),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("input must be rank 3 or 4, got {xs:?}"),
                ))
            }
        };
        let [cout, wcin, kh, kw] = ws[..] else {
            return Err(Error::dim(
                "conv2d",
                format!("weight must be [Cout,Cin,k,k], got {ws:?}"),
            ));
        };
        if wcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(
                "conv2d",
                format!("kernel must be square and odd, got {kh}x{kw}"),
            ));
        }
        if bs != [cout] {
            return Err(Error::dim(
                "conv2d",
                format!("bias must be [{cout}], got {bs:?}"),
            ));
        }
        let geom = ConvGeometry {
            batch,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel: kh,
            padding: (kh - 1) / 2,
        };
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let shape = if xs.len() == 4 {
            vec![batch, cout, h, w]
        } else {
            vec![cout, h, w]
        };
        let value = check_finite(Tensor::new(shape, out)?, "conv2d")?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        let name = match kind {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        };
        let value = check_finite(value, name)?;
        Ok(self.push(value, Op::Activation(x, kind)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let value = check_finite(self.value(x).map(T::sqrt), "sqrt")?;
        Ok(self.push(value, Op::Sqrt(x)))
    }

    /// Same-shape elementwise arithmetic; a one-element operand broadcasts.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match kind {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            Elementwise::Mul => x * y,
        };
        let value = if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else if av.is_scalar() {
            let s = av.data()[0];
            bv.map(|y| f(s, y))
        } else if bv.is_scalar() {
            let s = bv.data()[0];
            av.map(|x| f(x, s))
        } else {
            return Err(Error::dim(
                "elementwise",
                format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        };
        let value = check_finite(value, "elementwise")?;
        Ok(self.push(value, Op::Elementwise(a, b, kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let value = check_finite(self.value(x).map(|v| scale * v + shift), "affine")?;
        Ok(self.push(value, Op::Affine(x, scale)))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::one())
    }

    pub fn reduce(&mut self, x: Var, kind: Reduction) -> Result<Var> {
        let v = self.value(x);
        let sum: T = v.data().iter().copied().sum();
        let out = match kind {
            Reduction::Sum => sum,
            Reduction::Mean => {
                if v.is_empty() {
                    return Err(Error::Contract("mean of an empty tensor".into()));
                }
                sum / T::from_f64(v.len() as f64)
            }
        };
        let value = check_finite(Tensor::scalar(out), "reduce")?;
        Ok(self.push(value, Op::Reduce(x, kind)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Mean)
    }

    /// Concatenates along the channel axis (`[C,H,W]`, or axis 1 of `[N,C,H,W]`).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let axis = match sa.len() {
            3 => 0,
            4 => 1,
            _ => {
                return Err(Error::dim(
                    "concat_channels",
                    format!("expected rank 3 or 4, got {sa:?}"),
                ))
            }
        };
        let same_outer =
            sa.len() == sb.len() && sa[..axis] == sb[..axis] && sa[axis + 1..] == sb[axis + 1..];
        if !same_outer {
            return Err(Error::dim(
                "concat_channels",
                format!("spatial shapes {sa:?} and {sb:?} differ"),
            ));
        }
        let outer: usize = sa[..axis].iter().product();
        let (block_a, block_b) = (av.len() / outer.max(1), bv.len() / outer.max(1));
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for n in 0..outer {
            data.extend_from_slice(&av.data()[n * block_a..(n + 1) * block_a]);
            data.extend_from_slice(&bv.data()[n * block_b..(n + 1) * block_b]);
        }
        let mut shape = sa.to_vec();
        shape[axis] += sb[axis];
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// Per-element convex combination `weight * a + (1 - weight) * b`.
    ///
    /// The result is clamped to `[min(a, b), max(a, b)]`, which only removes
    /// rounding excursions; the gradient is that of the unclamped blend.
    pub fn lerp(&mut self, weight: Var, a: Var, b: Var) -> Result<Var> {
        let (wv, av, bv) = (self.value(weight), self.value(a), self.value(b));
        wv.ensure_same_shape(av, "lerp")?;
        av.ensure_same_shape(bv, "lerp")?;
        let data = wv
            .data()
            .iter()
            .zip(av.data())
            .zip(bv.data())
            .map(|((&w, &x), &y)| {
                let v = w * x + (T::one() - w) * y;
                v.max(x.min(y)).min(x.max(y))
            })
            .collect();
        let value = check_finite(Tensor::new(av.shape().to_vec(), data)?, "lerp")?;
        Ok(self.push(value, Op::Lerp { weight, a, b }))
    }

    /// Normalised soft histogram of values in `[0,1]` over `bins` centres
    /// `b/(bins-1)`; each value splits a unit of mass between its two
    /// neighbouring centres with triangular weights.
    pub fn soft_histogram(&mut self, x: Var, bins: usize) -> Result<Var> {
        if bins < 2 {
            return Err(Error::Contract(format!(
                "soft histogram needs at least 2 bins, got {bins}"
            )));
        }
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::Contract("soft histogram of an empty tensor".into()));
        }
        let slack = T::from_f64(UNIT_RANGE_SLACK);
        if let Some(bad) = v
            .data()
            .iter()
            .find(|&&p| !(p >= -slack && p <= T::one() + slack))
        {
            return Err(Error::Contract(format!(
                "soft histogram input {bad} lies outside [0, 1]"
            )));
        }
        let mut hist = vec![T::zero(); bins];
        for &p in v.data() {
            let (k, t) = soft_bin(p, bins);
            hist[k] = hist[k] + (T::one() - t);
            hist[k + 1] = hist[k + 1] + t;
        }
        let n = T::from_f64(v.len() as f64);
        let value = Tensor::new([bins], hist.into_iter().map(|h| h / n).collect())?;
        let value = check_finite(value, "soft_histogram")?;
        Ok(self.push(value, Op::SoftHistogram { input: x, bins }))
    }

    /// `x * log2(max(x, XLOGX_FLOOR))` elementwise.
    pub fn xlog2x(&mut self, x: Var) -> Result<Var> {
        let floor = T::from_f64(XLOGX_FLOOR);
        let value = check_finite(self.value(x).map(|v| v * v.max(floor).log2()), "xlog2x")?;
        Ok(self.push(value, Op::XLog2X(x)))
    }

    /// Fingerprint of every piecewise branch taken during the forward pass:
    /// ReLU input signs, soft-histogram bin indices and the `xlog2x` floor.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match node.op {
                Op::Activation(x, Activation::Relu) => {
                    for &v in self.value(x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::SoftHistogram { input, bins } => {
                    for &v in self.value(input).data() {
                        soft_bin(v, bins).0.hash(&mut h);
                    }
                }
                Op::XLog2X(x) => {
                    let floor = T::from_f64(XLOGX_FLOOR);
                    for &v in self.value(x).data() {
                        (v > floor).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Accumulates d(root)/d(leaf) for every trainable leaf. Intermediate
    /// gradients are released as soon as they have been propagated.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if !upstream.all_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.propagate(node, &upstream, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        node: &Node<T>,
        up: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (gx, gw, gb) = conv::backward(
                    &geom,
                    self.value(input).data(),
                    self.value(weight).data(),
                    up.data(),
                );
                self.accumulate(grads, input, Tensor::new(self.shape(input).to_vec(), gx)?);
                self.accumulate(grads, weight, Tensor::new(self.shape(weight).to_vec(), gw)?);
                self.accumulate(grads, bias, Tensor::new(self.shape(bias).to_vec(), gb)?);
            }
            Op::Activation(x, Activation::Relu) => {
                let xv = self.value(x);
                let data = xv
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::Activation(x, Activation::Sigmoid) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, x, Tensor::new(node.value.shape().to_vec(), data)?);
            }
            Op::Sqrt(x) => {
                let half = T::from_f64(0.5);
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&r, &g)| g * half / r)
                    .collect();
                self.accumulate(grads, x, Tensor::new(node.value.shape().to_vec(), data)?);
            }
            Op::Elementwise(a, b, kind) => {
                let (av, bv) = (self.value(a), self.value(b));
                let ga = match kind {
                    Elementwise::Add | Elementwise::Sub => up.clone(),
                    Elementwise::Mul => broadcast_mul(up, bv),
                };
                let gb = match kind {
                    Elementwise::Add => up.clone(),
                    Elementwise::Sub => up.map(|g| -g),
                    Elementwise::Mul => broadcast_mul(up, av),
                };
                self.accumulate(grads, a, reduce_to(ga, av.shape()));
                self.accumulate(grads, b, reduce_to(gb, bv.shape()));
            }
            Op::Affine(x, scale) => {
                self.accumulate(grads, x, up.map(|g| g * scale));
            }
            Op::Reduce(x, kind) => {
                let xv = self.value(x);
                let g = up.data()[0];
                let g = match kind {
                    Reduction::Sum => g,
                    Reduction::Mean => g / T::from_f64(xv.len() as f64),
                };
                self.accumulate(grads, x, Tensor::full(xv.shape().to_vec(), g));
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let axis = sa.len() - 3;
                let outer: usize = sa[..axis].iter().product();
                let block_a: usize = sa[axis..].iter().product();
                let block_b: usize = sb[axis..].iter().product();
                let mut ga = Vec::with_capacity(outer * block_a);
                let mut gb = Vec::with_capacity(outer * block_b);
                for chunk in up.data().chunks(block_a + block_b).take(outer) {
                    ga.extend_from_slice(&chunk[..block_a]);
                    gb.extend_from_slice(&chunk[block_a..]);
                }
                self.accumulate(grads, a, Tensor::new(sa, ga)?);
                self.accumulate(grads, b, Tensor::new(sb, gb)?);
            }
            Op::Lerp { weight, a, b } => {
                let (wv, av, bv) = (self.value(weight), self.value(a), self.value(b));
                let shape = wv.shape().to_vec();
                let mut gw = Vec::with_capacity(up.len());
                let mut ga = Vec::with_capacity(up.len());
                let mut gb = Vec::with_capacity(up.len());
                for (((&g, &w), &x), &y) in up.data().iter().zip(wv.data()).zip(av.data()).zip(bv.data()) {
                    gw.push(g * (x - y));
                    ga.push(g * w);
                    gb.push(g * (T::one() - w));
                }
                self.accumulate(grads, weight, Tensor::new(shape.clone(), gw)?);
                self.accumulate(grads, a, Tensor::new(shape.clone(), ga)?);
                self.accumulate(grads, b, Tensor::new(shape, gb)?);
            }
            Op::SoftHistogram { input, bins } => {
                let xv = self.value(input);
                let rate = T::from_f64((bins - 1) as f64 / xv.len() as f64);
                let g = up.data();
                let data = xv
                    .data()
                    .iter()
                    .map(|&p| {
                        let (k, _) = soft_bin(p, bins);
                        (g[k + 1] - g[k]) * rate
                    })
                    .collect();
                self.accumulate(grads, input, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::XLog2X(x) => {
                let xv = self.value(x);
                let floor = T::from_f64(XLOGX_FLOOR);
                let ln2 = T::from_f64(std::f64::consts::LN_2);
                let data = xv
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&v, &g)| {
                        if v > floor {
                            g * (v.ln() + T::one()) / ln2
                        } else {
                            g * floor.log2()
                        }
                    })
                    .collect();
                self.accumulate(grads, x, Tensor::new(xv.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn broadcast_mul<T: Real>(up: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if other.shape() == up.shape() {
        let data = up
            .data()
            .iter()
            .zip(other.data())
            .map(|(&g, &o)| g * o)
            .collect();
        Tensor::new(up.shape().to_vec(), data).expect("same shape")
    } else {
        let s = other.data()[0];
        up.map(|g| g * s)
    }
}

/// Sums a broadcast gradient back down to a one-element operand.
fn reduce_to<T: Real>(grad: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        grad
    } else {
        let total: T = grad.data().iter().copied().sum();
        Tensor::full(shape.to_vec(), total)
    }
}
