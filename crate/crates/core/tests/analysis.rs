use fovea_core::analysis::*;
use fovea_core::tensor::Mat;
use fovea_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn judgments(spec: &[(Condition, usize, usize)]) -> JudgmentTable {
    let mut rows = Vec::new();
    for &(c, same, diff) in spec {
        for i in 0..same + diff {
            rows.push(Judgment {
                pair_id: format!("{}-{i}", c.as_str()),
                condition: c,
                response: if i < same { Response::Same } else { Response::Different },
                response_time_ms: 700.0,
            });
        }
    }
    JudgmentTable::new(rows)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{}", j + 1)).collect()
}

#[test]
fn metamer_rate_counts() {
    let t = judgments(&[(Condition::Full, 2, 1), (Condition::Original, 4, 0)]);
    assert!((metamer_rate(&t, Condition::Full).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(metamer_rate(&t, Condition::Original).unwrap(), 1.0);
    assert!(matches!(metamer_rate(&t, Condition::Random), Err(Error::EmptyInput(_))));
}

#[test]
fn observer_at_median_threshold_gives_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dist: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
    let tau = median_threshold(&dist).unwrap();
    let rows = dist
        .iter()
        .enumerate()
        .map(|(i, &d)| Judgment {
            pair_id: i.to_string(),
            condition: Condition::Full,
            response: observe_distance(d, tau, 0.01, &mut rng).unwrap(),
            response_time_ms: 500.0,
        })
        .collect();
    let rate = metamer_rate(&JudgmentTable::new(rows), Condition::Full).unwrap();
    assert!((rate - 0.5).abs() < 0.05, "{rate}");
}

#[test]
fn observer_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = [1.0, 2.0, 3.0];
    let neg = [-1.0, -2.0, -3.0];
    assert_eq!(simulated_observer(&a, &a, 0.1, 0.0, &mut rng).unwrap(), Response::Same);
    assert_eq!(simulated_observer(&a, &neg, 0.5, 0.0, &mut rng).unwrap(), Response::Different);
}

#[test]
fn observer_at_threshold_is_a_coin_flip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let same = (0..n)
        .filter(|_| observe_distance(0.3, 0.3, 0.1, &mut rng).unwrap() == Response::Same)
        .count();
    let (lo, hi) = wilson_interval(same, n);
    assert!(lo < 0.5 && 0.5 < hi, "{same}");
}

#[test]
fn observer_is_deterministic_under_seed() {
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..50).map(|i| observe_distance(i as f64 / 50.0, 0.5, 0.2, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn constant_responses_give_flat_bins() {
    let v: Vec<f64> = (0..40).map(|i| (i * 7 % 40) as f64).collect();
    let bins = bin_proportions(&v, &[true; 40], 4).unwrap();
    assert!(bins.iter().all(|b| b.proportion_same == 1.0 && b.count == 10));
}

#[test]
fn median_indicator_gives_zero_one() {
    let v: Vec<f64> = (0..30).map(|i| ((i * 11) % 30) as f64).collect();
    let median = 14.5;
    let r: Vec<bool> = v.iter().map(|&x| x > median).collect();
    let bins = bin_proportions(&v, &r, 2).unwrap();
    assert_eq!(bins[0].proportion_same, 0.0);
    assert_eq!(bins[1].proportion_same, 1.0);
    assert!(bins[0].center < bins[1].center);
}

#[test]
fn too_many_bins_is_a_config_error() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!(matches!(bin_proportions(&v, &[true; 5], 3), Err(Error::Config(_))));
    assert!(bin_proportions(&v, &[true; 5], 2).is_ok());
}

#[test]
fn small_bins_are_flagged() {
    let v: Vec<f64> = (0..12).map(f64::from).collect();
    let bins = bin_proportions(&v, &[false; 12], 3).unwrap();
    assert!(bins.iter().all(|b| b.low_count));
    let bins = bin_proportions(&v, &[false; 12], 2).unwrap();
    assert!(bins.iter().all(|b| !b.low_count));
}

#[test]
fn logistic_data_gives_monotone_bins() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 3000;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y: Vec<bool> = x.iter().map(|&v| rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * v as f64).exp())).collect();
    let bins = bin_proportions(&x, &y, 8).unwrap();
    let c: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let p: Vec<f64> = bins.iter().map(|b| b.proportion_same).collect();
    assert!(spearman(&c, &p).unwrap() > 0.9, "{p:?}");
    for b in &bins {
        assert!(b.ci_low <= b.proportion_same && b.proportion_same <= b.ci_high);
    }
}

#[test]
fn wilson_interval_matches_closed_form() {
    // 8/10 at z = 1.96
    let (lo, hi) = wilson_interval(8, 10);
    let (p, n, z) = (0.8f64, 10.0f64, 1.959_963_984_540_054f64);
    let c = (p + z * z / (2.0 * n)) / (1.0 + z * z / n);
    let h = z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    assert!((lo - (c - h)).abs() < 1e-12 && (hi - (c + h)).abs() < 1e-12);
}

#[test]
fn exact_response_gives_unit_r2() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 60;
    let x = Mat::randn(n, 4, 1.0, &mut rng);
    let y: Vec<f64> = (0..n).map(|i| x.get(i, 0)).collect();
    let r = stepwise_regression(&x, &y, &names(4), 0.05, RegressionModel::Linear).unwrap();
    assert_eq!(r.selected, vec![0]);
    assert!((r.r2 - 1.0).abs() < 1e-12);
    assert!((r.delta_r2[0] - 1.0).abs() < 1e-12);
}

fn recovery_case(seed: u64) -> (Mat, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 100;
    let x = Mat::randn(n, 10, 1.0, &mut rng);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let y = (0..n).map(|i| 2.0 * x.get(i, 0) + x.get(i, 1) + noise.sample(&mut rng)).collect();
    (x, y)
}

#[test]
fn stepwise_recovers_true_support() {
    let (mut hits, mut exact) = (0, 0);
    for seed in 0..100 {
        let (x, y) = recovery_case(seed);
        let r = stepwise_regression(&x, &y, &names(10), 0.05, RegressionModel::Linear).unwrap();
        if r.selected.starts_with(&[0, 1]) {
            hits += 1;
        }
        exact += usize::from(r.selected == [0, 1]);
        assert!(r.delta_r2.iter().all(|d| *d >= 0.0));
        assert!((0.0..=1.0).contains(&r.r2));
    }
    assert!(hits >= 95, "{hits}/100 ({exact} without extra entries)");
}

#[test]
fn pure_noise_rarely_enters() {
    let mut entered = 0;
    let trials = 200;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Mat::randn(80, 5, 1.0, &mut rng);
        let y: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let r = stepwise_regression(&x, &y, &names(5), 0.05, RegressionModel::Linear).unwrap();
        entered += usize::from(!r.selected.is_empty());
    }
    // family-wise bound p · candidates, with slack for sampling error
    assert!((entered as f64) / (trials as f64) <= 0.05 * 5.0, "{entered}");
}

#[test]
fn collinear_candidate_is_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 50;
    let base = Mat::randn(n, 2, 1.0, &mut rng);
    let mut x = Mat::zeros(n, 3);
    for i in 0..n {
        x.set(i, 0, base.get(i, 0));
        x.set(i, 1, 3.0 * base.get(i, 0));
        x.set(i, 2, base.get(i, 1));
    }
    let y: Vec<f64> = (0..n).map(|i| base.get(i, 0) + 0.5 * base.get(i, 1) + 0.01 * rng.random::<f64>()).collect();
    let r = stepwise_regression(&x, &y, &names(3), 0.05, RegressionModel::Linear).unwrap();
    assert_eq!(r.selected.len(), 2);
    assert!(r.selected.contains(&2));
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Mat::randn(40, 5, 1.0, &mut rng);
    let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let beta = ols(&x, &y).unwrap();
    // (XᵀX) β = Xᵀy solved by Gauss-Jordan elimination
    let p = 5;
    let xtx = x.t_matmul(&x);
    let mut aug = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            aug[i][j] = xtx.get(i, j);
        }
        aug[i][p] = (0..40).map(|r| x.get(r, i) * y[r]).sum();
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&a, &b| aug[a][c].abs().total_cmp(&aug[b][c].abs())).unwrap();
        aug.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = aug[r][c] / aug[c][c];
                for k in c..=p {
                    aug[r][k] -= f * aug[c][k];
                }
            }
        }
    }
    for i in 0..p {
        assert!((beta[i] - aug[i][p] / aug[i][i]).abs() < 1e-8);
    }
}

#[test]
fn logistic_stepwise_finds_driver() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 600;
    let x = Mat::randn(n, 4, 1.0, &mut rng);
    let y: Vec<f64> = (0..n)
        .map(|i| f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * x.get(i, 2)).exp()))))
        .collect();
    let r = stepwise_regression(&x, &y, &names(4), 0.05, RegressionModel::Logistic).unwrap();
    assert_eq!(r.selected.first(), Some(&2));
    assert!(r.coefficients[0] > 0.0);
}

#[test]
fn ablation_report_exact_rates() {
    let t = judgments(&[
        (Condition::Original, 9, 1),
        (Condition::Full, 6, 4),
        (Condition::PeripheralOnly, 5, 5),
        (Condition::FovealOnly, 1, 9),
    ]);
    let r = ablation_report(&t).unwrap();
    assert_eq!(r.rate(Condition::Full).unwrap().rate, 0.6);
    assert_eq!(r.rate(Condition::FovealOnly).unwrap().rate, 0.1);
    assert_eq!(r.tests.len(), 6);
    let t = r.test(Condition::FovealOnly, Condition::Original).unwrap();
    assert!(t.z < 0.0 && t.p_value < 0.05);
}

#[test]
fn balanced_ablation_is_nonsignificant() {
    let t = judgments(&[
        (Condition::Original, 10, 10),
        (Condition::Full, 10, 10),
        (Condition::PeripheralOnly, 10, 10),
        (Condition::FovealOnly, 10, 10),
    ]);
    let r = ablation_report(&t).unwrap();
    assert!(r.rates.iter().all(|c| c.rate == 0.5));
    assert!(r.tests.iter().all(|t| t.p_value > 0.05));
}

#[test]
fn ablation_needs_all_conditions() {
    let t = judgments(&[(Condition::Original, 1, 1), (Condition::Full, 1, 1)]);
    assert!(matches!(ablation_report(&t), Err(Error::Config(_))));
}

#[test]
fn judgment_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let t = judgments(&[(Condition::Random, 2, 3)]);
    t.write_jsonl(&path).unwrap();
    assert_eq!(JudgmentTable::read_jsonl(&path).unwrap(), t);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stepwise_r2_never_decreases(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::randn(40, 6, 1.0, &mut rng);
        let y: Vec<f64> = (0..40).map(|i| x.get(i, 3) * 0.8 + x.get(i, 1) * 0.3 + rng.random::<f64>()).collect();
        let r = stepwise_regression(&x, &y, &names(6), 0.2, RegressionModel::Linear).unwrap();
        for w in r.steps.windows(2) {
            prop_assert!(w[1].r2 >= w[0].r2 - 1e-12);
        }
        prop_assert!(r.delta_r2.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn spearman_is_rank_invariant(xs in prop::collection::vec(-100.0f64..100.0, 5..30)) {
        let ys: Vec<f64> = xs.iter().map(|v| v.powi(3) + 2.0).collect();
        let distinct = xs.iter().any(|v| *v != xs[0]);
        prop_assume!(distinct);
        prop_assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
    }
}
