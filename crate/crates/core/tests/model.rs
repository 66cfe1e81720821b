use fusionnet_core::data::{AnnotationSet, BoundingBox, ImagePair};
use fusionnet_core::gradcheck::{self, GradCheck, GraphFn};
use fusionnet_core::model::{
    alpha_map, attention_blend, blend, encode, ConvVars, forward, infer, modality_attention, BoundParams, ForwardOptions,
    FusionNetParams, InitScheme, PairVars, KERNEL_SIZE,
};
use fusionnet_core::objectives::{loss_total, LossConfig};
use fusionnet_core::{Error, Graph, Real, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Real>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(lo..hi)))
}

fn random_pair<T: Real>(h: usize, w: usize, seed: u64) -> ImagePair<T> {
    ImagePair::new("p", random(&[1, h, w], seed, 0.0, 1.0), random(&[3, h, w], seed + 1, 0.0, 1.0)).unwrap()
}

/// Parameter count from layer shapes: (cin·k² + 1)·cout per conv.
fn count_by_shapes(c: usize) -> usize {
    let k2 = KERNEL_SIZE * KERNEL_SIZE;
    let conv = |cin: usize, cout: usize| (cin * k2 + 1) * cout;
    let encoders = conv(1, c) + conv(c, c) + conv(3, c) + conv(c, c);
    let attention = conv(2 * c, c) + conv(c, c);
    let alpha = conv(c, c / 2) + conv(c / 2, 1);
    encoders + attention + alpha
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let p = FusionNetParams::<f32>::init(64, 0, InitScheme::HeXavier).unwrap();
    assert_eq!(p.parameter_count(), count_by_shapes(64));
    assert_eq!(p.parameter_count(), 205_761);
    assert_eq!(p.named_tensors().len(), 16);
    for c in [2, 4, 16] {
        let p = FusionNetParams::<f32>::init(c, 1, InitScheme::Zeros).unwrap();
        assert_eq!(p.parameter_count(), count_by_shapes(c));
    }
}

#[test]
fn init_rejects_odd_channels() {
    assert!(matches!(FusionNetParams::<f32>::init(3, 0, InitScheme::HeXavier), Err(Error::Config(_))));
    assert!(FusionNetParams::<f32>::init(0, 0, InitScheme::HeXavier).is_err());
}

#[test]
fn init_is_seed_deterministic() {
    let a = FusionNetParams::<f32>::init(8, 5, InitScheme::HeXavier).unwrap();
    let b = FusionNetParams::<f32>::init(8, 5, InitScheme::HeXavier).unwrap();
    let c = FusionNetParams::<f32>::init(8, 6, InitScheme::HeXavier).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for (name, t) in a.named_tensors() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn he_init_has_expected_spread() {
    let p = FusionNetParams::<f64>::init(64, 9, InitScheme::HeXavier).unwrap();
    let w = &p.encoder_ir.conv2.weight;
    let n = w.len() as f64;
    let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
    let expected = 2.0 / (64.0 * 9.0);
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    let bound = (6.0 / ((32 + 1) as f64 * 9.0)).sqrt();
    assert!(p.alpha_head.conv2.weight.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn from_tensors_roundtrip_and_shape_check() {
    let p = FusionNetParams::<f32>::init(4, 2, InitScheme::HeXavier).unwrap();
    let tensors: Vec<Tensor<f32>> = p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(FusionNetParams::from_tensors(4, tensors.clone()).unwrap(), p);
    let mut bad = tensors;
    bad[3] = Tensor::zeros([5]);
    assert!(matches!(FusionNetParams::from_tensors(4, bad), Err(Error::Dimension { .. })));
}

#[test]
fn zero_params_give_half_masks_and_midpoint_fusion() {
    let p = FusionNetParams::<f32>::init(8, 0, InitScheme::Zeros).unwrap();
    let pair = random_pair::<f32>(6, 7, 3);
    let out = infer(&p, &pair, ForwardOptions::default()).unwrap();
    assert!(out.f_ir.data().iter().all(|&v| v == 0.0));
    assert!(out.attention.data().iter().all(|&v| v == 0.5));
    assert!(out.alpha.data().iter().all(|&v| v == 0.5));
    assert_eq!(out.alpha.shape(), &[1, 6, 7]);
    assert_eq!(out.attention.shape(), &[8, 6, 7]);
    assert_eq!(out.f_cat.shape(), &[16, 6, 7]);
    for ((f, i), v) in out.fused.data().iter().zip(pair.ir.data()).zip(pair.vis_y.data()) {
        assert!((f - (i + v) / 2.0).abs() <= 1e-7);
    }
}

#[test]
fn attention_blend_examples() {
    let mut g = Graph::<f32>::new();
    let ir = g.constant(Tensor::full([2, 2, 2], 2.0));
    let vis = g.constant(Tensor::full([2, 2, 2], 4.0));
    for (a, expected) in [(1.0, 2.0), (0.0, 4.0), (0.5, 3.0)] {
        let mask = g.constant(Tensor::full([2, 2, 2], a));
        let out = attention_blend(&mut g, mask, ir, vis).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == expected), "A = {a}");
    }
}

#[test]
fn blend_examples() {
    let mut g = Graph::<f64>::new();
    let ir = g.constant(Tensor::full([1, 1, 1], 0.2));
    let vis = g.constant(Tensor::full([1, 1, 1], 0.6));
    for (a, expected) in [(1.0, 0.2), (0.0, 0.6), (0.5, 0.4)] {
        let alpha = g.constant(Tensor::full([1, 1, 1], a));
        let out = blend(&mut g, alpha, ir, vis).unwrap();
        assert!((g.value(out).item().unwrap() - expected).abs() < 1e-15);
    }
}

#[test]
fn alpha_override_forces_copy() {
    let p = FusionNetParams::<f32>::init(4, 7, InitScheme::HeXavier).unwrap();
    let pair = random_pair::<f32>(5, 5, 8);
    let one = infer(&p, &pair, ForwardOptions { alpha_override: Some(1.0) }).unwrap();
    assert_eq!(one.fused, pair.ir);
    let zero = infer(&p, &pair, ForwardOptions { alpha_override: Some(0.0) }).unwrap();
    assert_eq!(zero.fused, pair.vis_y);
    assert!(infer(&p, &pair, ForwardOptions { alpha_override: Some(1.5) }).is_err());
}

#[test]
fn encode_of_random_input_is_non_negative() {
    let p = FusionNetParams::<f32>::init(8, 4, InitScheme::HeXavier).unwrap();
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, false);
    let x = g.constant(random(&[3, 9, 9], 5, -1.0, 1.0));
    let f = encode(&mut g, x, &b.encoder_vis).unwrap();
    assert_eq!(g.shape(f), &[8, 9, 9]);
    assert!(g.value(f).min_value() >= 0.0);
}

#[test]
fn forward_rejects_mismatched_sizes() {
    let p = FusionNetParams::<f32>::init(2, 0, InitScheme::Zeros).unwrap();
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, false);
    let inputs = PairVars {
        ir: g.constant(Tensor::zeros([1, 4, 4])),
        vis: g.constant(Tensor::zeros([3, 4, 5])),
        vis_y: g.constant(Tensor::zeros([1, 4, 5])),
    };
    assert!(matches!(forward(&mut g, inputs, &b, ForwardOptions::default()), Err(Error::Dimension { .. })));
}

#[test]
fn forward_is_deterministic() {
    let p = FusionNetParams::<f32>::init(8, 11, InitScheme::HeXavier).unwrap();
    let pair = random_pair::<f32>(8, 8, 12);
    let a = infer(&p, &pair, ForwardOptions::default()).unwrap();
    let b = infer(&p, &pair, ForwardOptions::default()).unwrap();
    assert_eq!(a, b);
}

struct Encoder;

impl GraphFn for Encoder {
    fn build<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> fusionnet_core::Result<Var> {
        let layers = [
            ConvVars { weight: v[1], bias: v[2] },
            ConvVars { weight: v[3], bias: v[4] },
        ];
        let f = encode(g, v[0], &layers)?;
        g.sum(f)
    }
}

#[test]
fn encode_gradient_matches_finite_differences() {
    let p = FusionNetParams::<f64>::init(4, 21, InitScheme::HeXavier).unwrap();
    let e = &p.encoder_ir;
    let inputs = vec![
        random::<f64>(&[1, 6, 6], 22, 0.0, 1.0),
        e.conv1.weight.clone(),
        random(&[4], 23, -0.1, 0.1),
        e.conv2.weight.clone(),
        random(&[4], 24, -0.1, 0.1),
    ];
    let r = gradcheck::check(&inputs, &GradCheck::new(1e-6), &Encoder).unwrap();
    assert!(r.checked > 100, "{r:?}");
    assert!(r.max_rel_error < 1e-6, "{r:?}");
    let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let r = gradcheck::check(&inputs32, &GradCheck::new(1e-3), &Encoder).unwrap();
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

struct AlphaHead;

impl GraphFn for AlphaHead {
    fn build<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> fusionnet_core::Result<Var> {
        let layers = [
            ConvVars { weight: v[1], bias: v[2] },
            ConvVars { weight: v[3], bias: v[4] },
        ];
        let a = alpha_map(g, v[0], &layers)?;
        let w = g.constant(Tensor::from_fn(vec![1, 8, 8], |i| T::from_f64((i % 7) as f64 / 7.0 - 0.4)));
        let a = g.mul(a, w)?;
        g.sum(a)
    }
}

#[test]
fn alpha_map_gradient_matches_finite_differences_on_8x8() {
    let p = FusionNetParams::<f64>::init(4, 31, InitScheme::HeXavier).unwrap();
    let h = &p.alpha_head;
    let inputs = vec![
        random::<f64>(&[4, 8, 8], 32, 0.0, 1.0),
        h.conv1.weight.clone(),
        random(&[2], 33, -0.1, 0.1),
        h.conv2.weight.clone(),
        random(&[1], 34, -0.1, 0.1),
    ];
    let r = gradcheck::check(&inputs, &GradCheck::new(1e-6), &AlphaHead).unwrap();
    assert!(r.checked > 200, "{r:?}");
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

/// The full forward pass and training loss, as a function of the sixteen
/// parameter tensors.
struct FullLoss {
    pair: ImagePair<f64>,
    boxes: AnnotationSet,
}

impl GraphFn for FullLoss {
    fn build<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> fusionnet_core::Result<Var> {
        let bound = BoundParams::from_vars(v)?;
        let pair = self.pair.cast::<T>();
        let inputs = PairVars::constants(g, &pair);
        let fwd = forward(g, inputs, &bound, ForwardOptions::default())?;
        let loss = loss_total(g, fwd.fused, inputs.ir, inputs.vis_y, &self.boxes, &LossConfig::default())?;
        Ok(loss.total)
    }
}

#[test]
fn full_forward_and_loss_gradient_matches_finite_differences() {
    let params = FusionNetParams::<f64>::init(4, 41, InitScheme::HeXavier).unwrap();
    let mut boxes = AnnotationSet::empty("p");
    boxes.boxes.push(BoundingBox::new("t", 1, 2, 6, 7));
    let f = FullLoss { pair: random_pair(8, 8, 42), boxes };
    let inputs: Vec<Tensor<f64>> = params.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let r = gradcheck::check(&inputs, &GradCheck::new(1e-6), &f).unwrap();
    assert!(r.checked > 500, "{r:?}");
    assert!(r.max_rel_error < 1e-6, "{r:?}");
    let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let r = gradcheck::check(&inputs32, &GradCheck::new(1e-3), &f).unwrap();
    assert!(r.checked > 500, "{r:?}");
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fused_is_sandwiched_and_masks_are_open(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let mut p = FusionNetParams::<f32>::init(4, seed, InitScheme::HeXavier).unwrap();
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v *= scale as f32;
            }
        }
        let pair = random_pair::<f32>(6, 7, seed ^ 0x55);
        let out = infer(&p, &pair, ForwardOptions::default()).unwrap();
        for ((f, i), v) in out.fused.data().iter().zip(pair.ir.data()).zip(pair.vis_y.data()) {
            prop_assert!(i.min(*v) <= *f && *f <= i.max(*v));
        }
        prop_assert!(out.alpha.data().iter().all(|&a| a > 0.0 && a < 1.0));
        prop_assert!(out.attention.data().iter().all(|&a| a > 0.0 && a < 1.0));
        for ((f, a), b) in out.f_attn.data().iter().zip(out.f_ir.data()).zip(out.f_vis.data()) {
            prop_assert!(a.min(*b) <= *f && *f <= a.max(*b));
        }
    }

    #[test]
    fn attention_blend_is_symmetric_under_swap(seed in any::<u64>()) {
        let mut g = Graph::<f64>::new();
        let a = random::<f64>(&[3, 4, 4], seed, 0.0, 1.0);
        let inv = a.map(|v| 1.0 - v);
        let x = g.constant(random(&[3, 4, 4], seed ^ 1, -2.0, 2.0));
        let y = g.constant(random(&[3, 4, 4], seed ^ 2, -2.0, 2.0));
        let a = g.constant(a);
        let inv = g.constant(inv);
        let lhs = attention_blend(&mut g, a, x, y).unwrap();
        let rhs = attention_blend(&mut g, inv, y, x).unwrap();
        for (l, r) in g.value(lhs).data().iter().zip(g.value(rhs).data()) {
            prop_assert!((l - r).abs() <= 1e-12);
        }
    }
}

#[test]
fn modality_attention_with_zero_params_averages_features() {
    let p = FusionNetParams::<f64>::init(2, 0, InitScheme::Zeros).unwrap();
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let fi = random::<f64>(&[2, 3, 3], 1, 0.0, 1.0);
    let fv = random::<f64>(&[2, 3, 3], 2, 0.0, 1.0);
    let (x, y) = (g.constant(fi.clone()), g.constant(fv.clone()));
    let (_, mask, out) = modality_attention(&mut g, x, y, &b.attention).unwrap();
    assert!(g.value(mask).data().iter().all(|&v| v == 0.5));
    for ((o, a), b) in g.value(out).data().iter().zip(fi.data()).zip(fv.data()) {
        assert!((o - (a + b) / 2.0).abs() < 1e-15);
    }
}
