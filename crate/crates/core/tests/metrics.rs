use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fovea_core::data::SyntheticScenes;
use fovea_core::encoder::{EncoderConfig, ToyEncoder};
use fovea_core::foveation::ImageBuffer;
use fovea_core::metrics::*;
use fovea_core::par::{self, ExecMode};
use fovea_core::tensor::Mat;

fn grey(side: usize, v: f64) -> ImageBuffer {
    ImageBuffer::from_fn(side, side, |_, _| [v; 3])
}

fn gaussian_rows(n: usize, mean: &[f64], sd: &[f64], seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| mean.iter().zip(sd).map(|(m, s)| m + s * z.sample(&mut rng)).collect())
        .collect();
    Mat::from_rows(&rows)
}

#[test]
fn fid_analytic_gaussians_at_1e5_samples() {
    let n = 100_000;
    let unit = gaussian_rows(n, &[0.0], &[1.0], 1);
    let shifted = gaussian_rows(n, &[1.0], &[1.0], 2);
    let wide = gaussian_rows(n, &[0.0], &[2.0], 3);
    let a = fid(&unit, &shifted).unwrap();
    let b = fid(&unit, &wide).unwrap();
    assert!((a - 1.0).abs() < 0.02, "N(0,1) vs N(1,1): {a}");
    assert!((b - 1.0).abs() < 0.02, "N(0,1) vs N(0,4): {b}");

    // 2-D: ‖μ‖² + Σ(σa − σb)² with diagonal covariances
    let p = gaussian_rows(n, &[0.0, 0.0], &[1.0, 1.0], 4);
    let q = gaussian_rows(n, &[0.6, -0.8], &[2.0, 1.0], 5);
    let c = fid(&p, &q).unwrap();
    assert!((c - 2.0).abs() < 0.04, "2-D case: {c}");
}

#[test]
fn fid_basic_properties() {
    let x = gaussian_rows(500, &[0.0, 1.0, 2.0], &[1.0, 0.5, 2.0], 9);
    let y = gaussian_rows(400, &[0.3, 1.0, 1.0], &[1.0, 1.5, 1.0], 10);
    assert!(fid(&x, &x).unwrap().abs() < 1e-4);
    let (xy, yx) = (fid(&x, &y).unwrap(), fid(&y, &x).unwrap());
    assert!((xy - yx).abs() < 1e-6);
    assert!(xy >= 0.0);
    assert!(fid(&Mat::zeros(1, 3), &y).is_err());
    assert!(fid(&x, &Mat::zeros(5, 2)).is_err());
}

fn depth(v: &[f64]) -> DepthMap {
    DepthMap::new(v.len(), 1, v.to_vec()).unwrap()
}

#[test]
fn silog_cases() {
    let r = depth(&[1.0, 1.0]);
    let p = depth(&[1.0, std::f64::consts::E]);
    let v = silog(&p, &r).unwrap();
    assert!((v - 10.0 * 0.2875f64.sqrt()).abs() < 1e-9, "{v}");
    assert_eq!(silog(&r, &r).unwrap(), 0.0);
    let d = depth(&[0.5, 2.0, 3.0, 7.5]);
    let scaled = depth(&[1.5, 6.0, 9.0, 22.5]);
    assert!(silog_with(&scaled, &d, 1.0).unwrap() < 1e-6);
    assert!(DepthMap::new(2, 1, vec![1.0, 0.0]).is_err());
    assert!(silog(&r, &d).is_err());
}

#[test]
fn delta_threshold_cases() {
    let r = depth(&[1.0, 2.0, 0.5, 4.0]);
    let p = depth(&[1.3, 2.6, 0.65, 5.2]);
    for k in DEPTH_THRESHOLD_EXPONENTS {
        assert_eq!(depth_threshold_accuracy(&r, &r, k).unwrap(), 1.0);
    }
    assert_eq!(depth_threshold_accuracy(&p, &r, 1.0).unwrap(), 0.0);
    assert_eq!(depth_threshold_accuracy(&p, &r, 2.0).unwrap(), 1.0);
    assert_eq!(depth_rmse(&r, &r).unwrap(), 0.0);
}

#[test]
fn psnr_cases() {
    let a = grey(8, 0.5);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    assert!((psnr(&a, &grey(8, 0.6)).unwrap() - 20.0).abs() < 1e-9);
    assert!((psnr(&a, &grey(8, 0.51)).unwrap() - 40.0).abs() < 1e-9);
    assert!(psnr(&a, &grey(4, 0.5)).is_err());
}

#[test]
fn psnr_decreases_with_noise() {
    let img = SyntheticScenes::new(0, 10, 32).image(3);
    let z = Normal::new(0.0, 1.0).unwrap();
    let noisy = |sigma: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let px: Vec<f64> = img.pixels().iter().map(|v| v + sigma * z.sample(&mut rng)).collect();
        ImageBuffer::from_pixels(32, 32, px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()).unwrap()
    };
    let db: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&s| psnr(&img, &noisy(s)).unwrap()).collect();
    assert!(db[0] > db[1] && db[1] > db[2], "{db:?}");
}

/// Independent Gabor response: explicit kernel, clamped borders, mean |r| / mean luma.
fn gabor_oracle(img: &ImageBuffer, deg: f64) -> f64 {
    let (lambda, sigma, gamma) = (8.0, 4.0, 0.5);
    let r = 12i64;
    let th = deg.to_radians();
    let mut k = Vec::new();
    for y in -r..=r {
        for x in -r..=r {
            let xr = x as f64 * th.cos() + y as f64 * th.sin();
            let yr = -(x as f64) * th.sin() + y as f64 * th.cos();
            k.push((-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp() * (2.0 * std::f64::consts::PI * xr / lambda).cos());
        }
    }
    let km = k.iter().sum::<f64>() / k.len() as f64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let luma = |x: i64, y: i64| {
        let p = img.rgb(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
        0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
    };
    let mut total = 0.0;
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += luma(x, y);
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    acc += (k[((ky + r) * (2 * r + 1) + kx + r) as usize] - km) * luma(x + kx, y + ky);
                }
            }
            total += acc.abs();
        }
    }
    let n = (w * h) as f64;
    total / n / (mean / n)
}

#[test]
fn gabor_matches_bruteforce_and_orientation() {
    let p = GaborParams::default();
    let vertical = ImageBuffer::from_fn(24, 24, |x, _| [if (x / 4) % 2 == 0 { 0.9 } else { 0.1 }; 3]);
    let horizontal = ImageBuffer::from_fn(24, 24, |_, y| [if (y / 4) % 2 == 0 { 0.9 } else { 0.1 }; 3]);
    let flat = grey(24, 0.5);
    for deg in GABOR_ORIENTATIONS {
        for img in [&vertical, &horizontal] {
            let got = gabor_response(img, deg, &p);
            let want = gabor_oracle(img, deg);
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "{deg}: {got} vs {want}");
        }
        assert_eq!(gabor_diff(&vertical, &vertical, deg, &p).unwrap(), 0.0);
    }
    assert!(gabor_diff(&flat, &vertical, 0.0, &p).unwrap() > 0.0);
    let resp: Vec<f64> = GABOR_ORIENTATIONS.iter().map(|&d| gabor_response(&horizontal, d, &p)).collect();
    let best = resp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(GABOR_ORIENTATIONS[best], 90.0, "{resp:?}");
    assert_eq!(gabor_response(&grey(8, 0.0), 0.0, &p), 0.0);
}

#[test]
fn sobel_cases() {
    let flat = grey(16, 0.4);
    assert_eq!(sobel_density(&flat), 0.0);
    assert_eq!(sobel_edge_diff(&flat, &flat).unwrap(), 0.0);
    // a unit vertical step gives |gx| = 4 on the two columns beside the edge
    let step = ImageBuffer::from_fn(16, 16, |x, _| [if x < 8 { 0.0 } else { 1.0 }; 3]);
    let expect = (4.0 * 2.0 * 16.0) / (16.0 * 16.0) / (4.0 * std::f64::consts::SQRT_2);
    assert!((sobel_density(&step) - expect).abs() < 1e-9);
    assert!((sobel_edge_diff(&flat, &step).unwrap() - expect).abs() < 1e-9);
}

#[test]
fn cosine_and_embedding_cases() {
    let a = [1.0, 2.0, -0.5];
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((layer_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    assert!((layer_cosine(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(layer_cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    assert!(embed_distance(&a, &a).unwrap().abs() < 1e-15);
    assert!((embed_distance(&a, &neg).unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(embed_similarity(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
    assert_eq!(embed_distance(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert!(matches!(layer_cosine(&[0.0, 0.0], &a[..2]), Err(fovea_core::Error::UndefinedSimilarity(_))));
    assert!(layer_cosine(&a, &a[..2]).is_err());
}

#[test]
fn miou_cases() {
    // 4×4 label maps, column-major halves
    let cols = |f: &dyn Fn(usize) -> usize| -> Vec<usize> { (0..16).map(|i| f(i % 4)).collect() };
    let a = cols(&|c| usize::from(c >= 2));
    let shifted = cols(&|c| usize::from(!(1..=2).contains(&c)));
    assert!((matched_miou(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let relabeled: Vec<usize> = a.iter().map(|&l| 1 - l).collect();
    assert_eq!(matched_miou(&a, &relabeled).unwrap(), 1.0);
    assert_eq!(matched_miou(&a, &a).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let feats = Mat::randn(64, 4, 1.0, &mut rng);
    assert_eq!(proto_object_miou(&feats, &feats, PROTO_CLUSTERS, 3).unwrap(), 1.0);
}

fn det(class: u32, x0: f64, y0: f64, x1: f64, y1: f64, confidence: f64) -> Detection {
    Detection {
        class,
        bbox: BBox { x0, y0, x1, y1 },
        confidence,
    }
}

#[test]
fn detection_cases() {
    let reference = DetectionSet::new(64.0, 64.0, vec![det(1, 0.0, 0.0, 10.0, 10.0, 0.9), det(2, 20.0, 20.0, 40.0, 50.0, 0.8)]).unwrap();
    let same = detection_compare(&reference, &reference, &[0.5, 0.75]).unwrap();
    assert_eq!((same.precision, same.recall, same.f1, same.map), (1.0, 1.0, 1.0, 1.0));

    let other = DetectionSet::new(64.0, 64.0, vec![det(7, 0.0, 0.0, 10.0, 10.0, 0.9)]).unwrap();
    let none = detection_compare(&other, &reference, &[0.5]).unwrap();
    assert_eq!((none.precision, none.recall, none.f1, none.map), (0.0, 0.0, 0.0, 0.0));

    let one = DetectionSet::new(64.0, 64.0, vec![det(1, 0.0, 0.0, 10.0, 10.0, 0.9)]).unwrap();
    let half = detection_compare(&one, &reference, &[0.5]).unwrap();
    assert_eq!((half.precision, half.recall), (1.0, 0.5));
    assert!((half.f1 - 2.0 / 3.0).abs() < 1e-15);

    assert!(DetectionSet::new(10.0, 10.0, vec![det(0, 0.0, 0.0, 11.0, 5.0, 0.5)]).is_err());
    assert!(DetectionSet::new(10.0, 10.0, vec![det(0, 0.0, 0.0, 5.0, 5.0, 1.5)]).is_err());
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let ds = SyntheticScenes::new(4, 50, 64);
    let pairs: Vec<ImagePair> = (0..8)
        .map(|i| ImagePair {
            pair_id: format!("p{i}"),
            original: ds.image(i),
            generated: ds.image(i + 8),
        })
        .collect();
    let enc = ToyEncoder::new(EncoderConfig::default()).unwrap();
    let seq = build_reports(&pairs, &enc, ExecMode::Sequential).unwrap();
    let one = par::with_workers(1, || build_reports(&pairs, &enc, ExecMode::Parallel).unwrap());
    let four = par::with_workers(4, || build_reports(&pairs, &enc, ExecMode::Parallel).unwrap());
    assert_eq!(seq, one);
    assert_eq!(seq, four);
    for r in &seq {
        assert!(r.values().iter().all(|v| v.is_finite()));
    }
}

fn depth_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..20).prop_flat_map(|n| (prop::collection::vec(0.05f64..10.0, n), prop::collection::vec(0.05f64..10.0, n)))
}

proptest! {
    #[test]
    fn delta_accuracy_is_monotone_in_k((p, r) in depth_pair()) {
        let (p, r) = (depth(&p), depth(&r));
        let acc: Vec<f64> = DEPTH_THRESHOLD_EXPONENTS.iter().map(|&k| depth_threshold_accuracy(&p, &r, k).unwrap()).collect();
        for w in acc.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn unit_lambda_silog_is_symmetric((p, r) in depth_pair()) {
        let (p, r) = (depth(&p), depth(&r));
        let a = silog_with(&p, &r, 1.0).unwrap();
        let b = silog_with(&r, &p, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        let c = silog(&p, &r).unwrap();
        let d = silog(&r, &p).unwrap();
        prop_assert!((c - d).abs() < 1e-9);
    }

    #[test]
    fn miou_ignores_label_names(labels in prop::collection::vec(0usize..4, 4..40), perm in Just([2usize, 0, 3, 1])) {
        let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(matched_miou(&labels, &renamed).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(labels.len() as u64);
        let other: Vec<usize> = labels.iter().map(|_| rng.random_range(0..4)).collect();
        let v = matched_miou(&labels, &other).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - matched_miou(&renamed, &other).unwrap()).abs() < 1e-12);
    }
}
