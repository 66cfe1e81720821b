use fusionnet_core::data::{AnnotationSet, BoundingBox};
use fusionnet_core::metrics::{
    entropy_metric, gaussian_taps, mse_metric, roi_ssim, ssim, MetricReport, MetricRow, SSIM_WINDOW,
};
use fusionnet_core::objectives::loss_mse;
use fusionnet_core::{Error, Graph, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![1, h, w], |_| rng.random_range(0.0..1.0))
}

fn boxes(list: &[(usize, usize, usize, usize)]) -> AnnotationSet {
    let mut set = AnnotationSet::empty("m");
    set.boxes = list.iter().map(|&(a, b, c, d)| BoundingBox::new("obj", a, b, c, d)).collect();
    set
}

/// Per-window SSIM with a directly built 2-D Gaussian and two-pass moments.
fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let n = 11usize;
    let sigma = 1.5f64;
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            kernel[i * n + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0;
    for top in 0..=h - n {
        for left in 0..=w - n {
            let at = |img: &[f64], i: usize, j: usize| img[(top + i) * w + left + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    mx += kernel[i * n + j] * at(x, i, j);
                    my += kernel[i * n + j] * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = kernel[i * n + j];
                    let (dx, dy) = (at(x, i, j) - mx, at(y, i, j) - my);
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn crop(t: &Tensor<f64>, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<f64> {
    let w = t.shape()[2];
    (y0..y1).flat_map(|y| t.data()[y * w + x0..y * w + x1].to_vec()).collect()
}

/// Fixed 16×16 pattern pair: a ramp with a checker versus its blurred twin.
fn fixture() -> (Tensor<f64>, Tensor<f64>) {
    let x = Tensor::from_fn(vec![1, 16, 16], |i| {
        let (r, c) = (i / 16, i % 16);
        0.5 * (r + c) as f64 / 30.0 + if (r / 2 + c / 2) % 2 == 0 { 0.4 } else { 0.0 }
    });
    let y = Tensor::from_fn(vec![1, 16, 16], |i| {
        let (r, c) = (i / 16, i % 16);
        0.25 + 0.5 * ((r as f64 * 0.7).sin() * (c as f64 * 0.3).cos()).abs()
    });
    (x, y)
}

#[test]
fn gaussian_taps_are_normalised_and_symmetric() {
    let t = gaussian_taps();
    assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    for i in 0..SSIM_WINDOW {
        assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
    }
}

#[test]
fn ssim_matches_per_window_oracle_on_fixture() {
    let (x, y) = fixture();
    let got = ssim(&x, &y).unwrap();
    let want = ssim_oracle(x.data(), y.data(), 16, 16);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!(got < 0.99);
}

#[test]
fn ssim_matches_oracle_on_random_rectangles() {
    for (seed, h, w) in [(1, 11, 11), (2, 13, 20), (3, 24, 17)] {
        let (x, y) = (random(h, w, seed), random(h, w, seed + 10));
        assert!((ssim(&x, &y).unwrap() - ssim_oracle(x.data(), y.data(), h, w)).abs() < 1e-9);
    }
}

#[test]
fn ssim_identity_and_errors() {
    let x = random(12, 15, 4);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let small = random(10, 30, 5);
    assert!(matches!(ssim(&small, &small), Err(Error::Contract(_))));
    assert!(matches!(ssim(&x, &random(12, 16, 6)), Err(Error::Dimension { .. })));
}

#[test]
fn ssim_is_in_range_for_anticorrelated_images() {
    let x = random(16, 16, 7);
    let y = x.map(|v| 1.0 - v);
    let s = ssim(&x, &y).unwrap();
    assert!((-1.0..0.0).contains(&s), "{s}");
}

#[test]
fn mse_metric_examples() {
    let x = random(5, 6, 8);
    assert_eq!(mse_metric(&x, &x).unwrap(), 0.0);
    let shifted = x.map(|v| v + 0.5);
    assert!((mse_metric(&shifted, &x).unwrap() - 0.25).abs() < 1e-12);
    let y = random(5, 6, 9);
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let l = loss_mse(&mut g, a, b).unwrap();
    assert!((mse_metric(&x, &y).unwrap() - g.value(l).item().unwrap()).abs() < 1e-15);
    assert_eq!(mse_metric(&x, &y).unwrap(), mse_metric(&y, &x).unwrap());
}

#[test]
fn entropy_metric_examples() {
    assert_eq!(entropy_metric(&Tensor::<f64>::full([1, 9, 9], 0.3)).unwrap(), 0.0);
    let uniform = Tensor::<f64>::from_fn(vec![1, 256, 256], |i| (i % 256) as f64 / 255.0);
    assert_eq!(entropy_metric(&uniform).unwrap(), 8.0);
    let coin = Tensor::<f64>::from_fn(vec![1, 4, 4], |i| if i < 8 { 0.0 } else { 0.99 });
    assert_eq!(entropy_metric(&coin).unwrap(), 1.0);
    let ones = Tensor::<f64>::full([1, 3, 3], 1.0);
    assert_eq!(entropy_metric(&ones).unwrap(), 0.0);
}

#[test]
fn entropy_metric_is_permutation_invariant() {
    let x = random(20, 20, 10);
    let mut data = x.data().to_vec();
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let y = Tensor::new(vec![1, 20, 20], data).unwrap();
    assert_eq!(entropy_metric(&x).unwrap(), entropy_metric(&y).unwrap());
    let e = entropy_metric(&x).unwrap();
    assert!((0.0..=8.0).contains(&e));
}

#[test]
fn roi_ssim_examples() {
    let (f, r) = (random(40, 40, 12), random(40, 40, 13));
    let full = roi_ssim(&f, &r, &boxes(&[(0, 0, 40, 40)])).unwrap();
    assert!((full.value.unwrap() - ssim(&f, &r).unwrap()).abs() <= 1e-12);

    let same = roi_ssim(&f, &f, &boxes(&[(2, 3, 20, 19), (10, 10, 40, 40)])).unwrap();
    assert!((same.value.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(same.evaluated, 2);

    let two = roi_ssim(&f, &r, &boxes(&[(0, 0, 16, 16), (20, 22, 36, 38)])).unwrap();
    let a = ssim_oracle(&crop(&f, 0, 0, 16, 16), &crop(&r, 0, 0, 16, 16), 16, 16);
    let b = ssim_oracle(&crop(&f, 20, 22, 36, 38), &crop(&r, 20, 22, 36, 38), 16, 16);
    assert!((two.value.unwrap() - (a + b) / 2.0).abs() < 1e-9);
}

#[test]
fn roi_ssim_skips_small_boxes_and_reports_absence() {
    let (f, r) = (random(30, 30, 14), random(30, 30, 15));
    let none = roi_ssim(&f, &r, &boxes(&[])).unwrap();
    assert_eq!(none.value, None);
    let small = roi_ssim(&f, &r, &boxes(&[(0, 0, 10, 20), (5, 5, 30, 15)])).unwrap();
    assert_eq!(small.value, None);
    assert_eq!(small.skipped_small, 2);
    let mixed = roi_ssim(&f, &r, &boxes(&[(0, 0, 10, 20), (0, 0, 11, 11)])).unwrap();
    assert_eq!(mixed.evaluated, 1);
    assert_eq!(mixed.skipped_small, 1);
    assert!(mixed.value.is_some());
}

#[test]
fn report_means_and_csv() {
    let (a, b, c) = (random(16, 16, 16), random(16, 16, 17), random(16, 16, 18));
    let rows = vec![
        MetricRow::compute("a", &a, &b, &boxes(&[(0, 0, 12, 12)])).unwrap(),
        MetricRow::compute("b", &b, &c, &boxes(&[])).unwrap(),
        MetricRow::compute("c", &c, &a, &boxes(&[(2, 2, 16, 16)])).unwrap(),
    ];
    let report = MetricReport::from_rows(rows.clone()).unwrap();
    assert_eq!(report.mean.ssim, (rows[0].ssim + rows[1].ssim + rows[2].ssim) / 3.0);
    assert_eq!(report.mean.mse, (rows[0].mse + rows[1].mse + rows[2].mse) / 3.0);
    assert_eq!(
        report.mean.roi_ssim,
        Some((rows[0].roi_ssim.unwrap() + rows[2].roi_ssim.unwrap()) / 2.0)
    );
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,ssim,mse,entropy,roi_ssim");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].ends_with(",NA"));
    assert!(lines[4].starts_with("mean,"));
    let parsed: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(parsed, rows[0].ssim);
    assert!(MetricReport::from_rows(vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ssim_identity_and_symmetry(seed in any::<u64>(), h in 11usize..20, w in 11usize..20) {
        let (x, y) = (random(h, w, seed), random(h, w, seed ^ 0xabc));
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() <= 1e-12);
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
