//! The fusion network: two convolutional encoders, a modality attention mask
//! that mixes their features, an alpha head, and a per-pixel convex blend of
//! the infrared image with the visible luminance.
//!
//! Every convolution is 3×3 with padding 1, so all maps share the input's
//! spatial size. With `C` feature channels:
//!
//! | block        | layer 1            | layer 2             |
//! |--------------|--------------------|---------------------|
//! | IR encoder   | 1 → C, ReLU        | C → C, ReLU         |
//! | VIS encoder  | 3 → C, ReLU        | C → C, ReLU         |
//! | attention    | 2C → C, ReLU       | C → C, sigmoid      |
//! | alpha head   | C → C/2, ReLU      | C/2 → 1, sigmoid    |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const DEFAULT_CHANNELS: usize = 64;
pub const KERNEL_SIZE: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// He-normal weights before ReLU, Xavier-uniform before sigmoid, zero biases.
    #[default]
    HeXavier,
    /// Everything zero; every sigmoid then outputs exactly 0.5.
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// `[out, in, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    fn zeros(cin: usize, cout: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros([cout, cin, KERNEL_SIZE, KERNEL_SIZE]),
            bias: Tensor::zeros([cout]),
        }
    }

    fn he_normal(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * KERNEL_SIZE * KERNEL_SIZE) as f64;
        let std = (2.0 / fan_in).sqrt();
        let mut layer = Self::zeros(cin, cout);
        for w in layer.weight.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = T::from_f64(z * std);
        }
        layer
    }

    fn xavier_uniform(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let k2 = (KERNEL_SIZE * KERNEL_SIZE) as f64;
        let limit = (6.0 / (cin as f64 * k2 + cout as f64 * k2)).sqrt();
        let mut layer = Self::zeros(cin, cout);
        for w in layer.weight.data_mut() {
            *w = T::from_f64(rng.random_range(-limit..limit));
        }
        layer
    }

    fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Two 3×3 conv layers with ReLU after each.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// `2C → C` (ReLU) then `C → C` (sigmoid), producing the mask `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// `C → C/2` (ReLU) then `C/2 → 1` (sigmoid), producing `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaHeadParams<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// All learnable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNetParams<T = f32> {
    pub encoder_ir: EncoderParams<T>,
    pub encoder_vis: EncoderParams<T>,
    pub attention: AttentionParams<T>,
    pub alpha_head: AlphaHeadParams<T>,
}

/// Stable names of the eight conv layers, in canonical order.
pub const LAYER_NAMES: [&str; 8] = [
    "encoder_ir.conv1",
    "encoder_ir.conv2",
    "encoder_vis.conv1",
    "encoder_vis.conv2",
    "attention.conv1",
    "attention.conv2",
    "alpha_head.conv1",
    "alpha_head.conv2",
];

impl<T: Real> FusionNetParams<T> {
    /// Initialises a network with `channels` feature channels (even, ≥ 2).
    /// Deterministic for a given seed.
    pub fn init(channels: usize, seed: u64, scheme: InitScheme) -> Result<Self> {
        if channels < 2 || !channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "feature channels must be even and at least 2, got {channels}"
            )));
        }
        let c = channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut relu = |cin, cout| match scheme {
            InitScheme::HeXavier => ConvLayer::he_normal(cin, cout, &mut rng),
            InitScheme::Zeros => ConvLayer::zeros(cin, cout),
        };
        let encoder_ir = EncoderParams {
            conv1: relu(1, c),
            conv2: relu(c, c),
        };
        let encoder_vis = EncoderParams {
            conv1: relu(3, c),
            conv2: relu(c, c),
        };
        let attention_conv1 = relu(2 * c, c);
        let alpha_conv1 = relu(c, c / 2);
        let mut sigmoid = |cin, cout| match scheme {
            InitScheme::HeXavier => ConvLayer::xavier_uniform(cin, cout, &mut rng),
            InitScheme::Zeros => ConvLayer::zeros(cin, cout),
        };
        let attention = AttentionParams {
            conv1: attention_conv1,
            conv2: sigmoid(c, c),
        };
        let alpha_head = AlphaHeadParams {
            conv1: alpha_conv1,
            conv2: sigmoid(c / 2, 1),
        };
        Ok(FusionNetParams {
            encoder_ir,
            encoder_vis,
            attention,
            alpha_head,
        })
    }

    pub fn channels(&self) -> usize {
        self.encoder_ir.conv1.out_channels()
    }

    pub fn layers(&self) -> [&ConvLayer<T>; 8] {
        [
            &self.encoder_ir.conv1,
            &self.encoder_ir.conv2,
            &self.encoder_vis.conv1,
            &self.encoder_vis.conv2,
            &self.attention.conv1,
            &self.attention.conv2,
            &self.alpha_head.conv1,
            &self.alpha_head.conv2,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvLayer<T>; 8] {
        [
            &mut self.encoder_ir.conv1,
            &mut self.encoder_ir.conv2,
            &mut self.encoder_vis.conv1,
            &mut self.encoder_vis.conv2,
            &mut self.attention.conv1,
            &mut self.attention.conv2,
            &mut self.alpha_head.conv1,
            &mut self.alpha_head.conv2,
        ]
    }

    /// `(name, tensor)` for all sixteen parameter tensors in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        LAYER_NAMES
            .iter()
            .zip(self.layers())
            .flat_map(|(name, layer)| {
                [
                    (format!("{name}.weight"), &layer.weight),
                    (format!("{name}.bias"), &layer.bias),
                ]
            })
            .collect()
    }

    /// Mutable access to the tensors of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|layer| [&mut layer.weight, &mut layer.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds a parameter set from tensors in canonical order, validating
    /// every shape against the architecture.
    pub fn from_tensors(channels: usize, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut params = Self::init(channels, 0, InitScheme::Zeros)?;
        if tensors.len() != 16 {
            return Err(Error::Config(format!("expected 16 parameter tensors, got {}", tensors.len())));
        }
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for ((slot, t), name) in params.tensors_mut().into_iter().zip(tensors).zip(names) {
            if slot.shape() != t.shape() {
                return Err(Error::dim(
                    "from_tensors",
                    format!("{name} should be {:?}, got {:?}", slot.shape(), t.shape()),
                ));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn cast<U: Real>(&self) -> FusionNetParams<U> {
        FusionNetParams {
            encoder_ir: EncoderParams {
                conv1: self.encoder_ir.conv1.cast(),
                conv2: self.encoder_ir.conv2.cast(),
            },
            encoder_vis: EncoderParams {
                conv1: self.encoder_vis.conv1.cast(),
                conv2: self.encoder_vis.conv2.cast(),
            },
            attention: AttentionParams {
                conv1: self.attention.conv1.cast(),
                conv2: self.attention.conv2.cast(),
            },
            alpha_head: AlphaHeadParams {
                conv1: self.alpha_head.conv1.cast(),
                conv2: self.alpha_head.conv2.cast(),
            },
        }
    }

    /// Records every parameter in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut bind_layer = |layer: &ConvLayer<T>| {
            let mut leaf = |t: &Tensor<T>| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            };
            ConvVars {
                weight: leaf(&layer.weight),
                bias: leaf(&layer.bias),
            }
        };
        let l = self.layers();
        BoundParams {
            encoder_ir: [bind_layer(l[0]), bind_layer(l[1])],
            encoder_vis: [bind_layer(l[2]), bind_layer(l[3])],
            attention: [bind_layer(l[4]), bind_layer(l[5])],
            alpha_head: [bind_layer(l[6]), bind_layer(l[7])],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

/// Graph handles for one [`FusionNetParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub encoder_ir: [ConvVars; 2],
    pub encoder_vis: [ConvVars; 2],
    pub attention: [ConvVars; 2],
    pub alpha_head: [ConvVars; 2],
}

impl BoundParams {
    /// Inverse of [`vars`](Self::vars): sixteen handles in canonical order.
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.len() != 16 {
            return Err(Error::Contract(format!("expected 16 parameter handles, got {}", vars.len())));
        }
        let layer = |i: usize| ConvVars {
            weight: vars[2 * i],
            bias: vars[2 * i + 1],
        };
        Ok(BoundParams {
            encoder_ir: [layer(0), layer(1)],
            encoder_vis: [layer(2), layer(3)],
            attention: [layer(4), layer(5)],
            alpha_head: [layer(6), layer(7)],
        })
    }

    /// Handles of all sixteen tensors in canonical order.
    pub fn vars(&self) -> Vec<Var> {
        [self.encoder_ir, self.encoder_vis, self.attention, self.alpha_head]
            .iter()
            .flatten()
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }
}

/// `F = relu(conv2(relu(conv1(image))))`; `[Cin,H,W] → [C,H,W]`.
pub fn encode<T: Real>(g: &mut Graph<T>, image: Var, layers: &[ConvVars; 2]) -> Result<Var> {
    let h = g.conv2d(image, layers[0].weight, layers[0].bias)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, layers[1].weight, layers[1].bias)?;
    g.relu(h)
}

/// `A · F_ir + (1 − A) · F_vis`, elementwise.
pub fn attention_blend<T: Real>(g: &mut Graph<T>, mask: Var, f_ir: Var, f_vis: Var) -> Result<Var> {
    g.lerp(mask, f_ir, f_vis)
}

/// Returns `(F_cat, A, F_attn)` with `A = sigmoid(conv2(relu(conv1(F_cat))))`.
pub fn modality_attention<T: Real>(
    g: &mut Graph<T>,
    f_ir: Var,
    f_vis: Var,
    layers: &[ConvVars; 2],
) -> Result<(Var, Var, Var)> {
    let f_cat = g.concat_channels(f_ir, f_vis)?;
    let h = g.conv2d(f_cat, layers[0].weight, layers[0].bias)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, layers[1].weight, layers[1].bias)?;
    let mask = g.sigmoid(h)?;
    let f_attn = attention_blend(g, mask, f_ir, f_vis)?;
    Ok((f_cat, mask, f_attn))
}

/// `[C,H,W] → [1,H,W]` blending weights in `(0, 1)`.
pub fn alpha_map<T: Real>(g: &mut Graph<T>, f_attn: Var, layers: &[ConvVars; 2]) -> Result<Var> {
    let h = g.conv2d(f_attn, layers[0].weight, layers[0].bias)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, layers[1].weight, layers[1].bias)?;
    g.sigmoid(h)
}

/// `alpha · IR + (1 − alpha) · VIS_Y`, per pixel.
pub fn blend<T: Real>(g: &mut Graph<T>, alpha: Var, ir: Var, vis_y: Var) -> Result<Var> {
    g.lerp(alpha, ir, vis_y)
}

/// Graph inputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub ir: Var,
    pub vis: Var,
    pub vis_y: Var,
}

impl PairVars {
    pub fn constants<T: Real>(g: &mut Graph<T>, pair: &ImagePair<T>) -> Self {
        PairVars {
            ir: g.constant(pair.ir.clone()),
            vis: g.constant(pair.vis.clone()),
            vis_y: g.constant(pair.vis_y.clone()),
        }
    }
}

/// Handles to every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub f_ir: Var,
    pub f_vis: Var,
    pub f_cat: Var,
    pub attention: Var,
    pub f_attn: Var,
    pub alpha: Var,
    pub fused: Var,
}

/// Materialised intermediates of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardArtifacts<T = f32> {
    pub f_ir: Tensor<T>,
    pub f_vis: Tensor<T>,
    pub f_cat: Tensor<T>,
    pub attention: Tensor<T>,
    pub f_attn: Tensor<T>,
    pub alpha: Tensor<T>,
    pub fused: Tensor<T>,
}

impl ForwardVars {
    pub fn artifacts<T: Real>(&self, g: &Graph<T>) -> ForwardArtifacts<T> {
        ForwardArtifacts {
            f_ir: g.value(self.f_ir).clone(),
            f_vis: g.value(self.f_vis).clone(),
            f_cat: g.value(self.f_cat).clone(),
            attention: g.value(self.attention).clone(),
            f_attn: g.value(self.f_attn).clone(),
            alpha: g.value(self.alpha).clone(),
            fused: g.value(self.fused).clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Debug switch: replace the learned alpha map by this constant.
    pub alpha_override: Option<f64>,
}

/// Encoders → modality attention → alpha head → blend.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    inputs: PairVars,
    params: &BoundParams,
    options: ForwardOptions,
) -> Result<ForwardVars> {
    let ir_shape = g.shape(inputs.ir).to_vec();
    let vis_shape = g.shape(inputs.vis).to_vec();
    if ir_shape.len() != 3 || vis_shape.len() != 3 || ir_shape[1..] != vis_shape[1..] {
        return Err(Error::dim(
            "forward",
            format!("IR {ir_shape:?} and VIS {vis_shape:?} must be [C,H,W] with equal H,W"),
        ));
    }
    let f_ir = encode(g, inputs.ir, &params.encoder_ir)?;
    let f_vis = encode(g, inputs.vis, &params.encoder_vis)?;
    let (f_cat, attention, f_attn) = modality_attention(g, f_ir, f_vis, &params.attention)?;
    let alpha = match options.alpha_override {
        None => alpha_map(g, f_attn, &params.alpha_head)?,
        Some(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Contract(format!("alpha override {a} outside [0, 1]")));
            }
            g.constant(Tensor::full(ir_shape.clone(), T::from_f64(a)))
        }
    };
    let fused = blend(g, alpha, inputs.ir, inputs.vis_y)?;
    Ok(ForwardVars {
        f_ir,
        f_vis,
        f_cat,
        attention,
        f_attn,
        alpha,
        fused,
    })
}

/// Gradient-free forward pass on a single pair.
pub fn infer<T: Real>(
    params: &FusionNetParams<T>,
    pair: &ImagePair<T>,
    options: ForwardOptions,
) -> Result<ForwardArtifacts<T>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let inputs = PairVars::constants(&mut g, pair);
    let vars = forward(&mut g, inputs, &bound, options)?;
    Ok(vars.artifacts(&g))
}
