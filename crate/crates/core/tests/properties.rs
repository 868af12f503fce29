//! Randomized invariants across modules.

use nalgebra::{DVector, Matrix3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use otafeel::crb::{crb, crb_lower_bound, FisherInfo};
use otafeel::geometry::{sample_rayleigh_channels, TargetRegion};
use otafeel::linalg::{complex_normal_matrix, frob_sq, CMat};
use otafeel::moop::project_feasible;
use otafeel::ota::{aggregation_mse, optimal_receiver};
use otafeel::signaling::{encode_symbol, standardize, AggregationWeights, PrecoderSet, PulseBook, TaskKind};
use otafeel::ssl::{ssl_centralized, ssl_distributed};
use otafeel::Position3;

fn region() -> TargetRegion {
    TargetRegion { r_in: 100.0, r_out: 110.0, arc_deg: 20.0, alt_min: 0.0, alt_max: 3.0 }
}

fn precoders(seed: u64, k: usize, m: usize, i: usize) -> PrecoderSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PrecoderSet::new((0..k).map(|_| complex_normal_matrix(&mut rng, m, i, 0.5)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crb_dominates_nine_over_trace(entries in prop::array::uniform9(-1.0f64..1.0), ridge in 1e-3f64..1.0) {
        let a = Matrix3::from_row_slice(&entries);
        let info = FisherInfo::from_matrix(a * a.transpose() + Matrix3::identity() * ridge).unwrap();
        prop_assert!(crb(&info).unwrap() >= 9.0 / info.trace() * (1.0 - 1e-12));
    }

    #[test]
    fn receiver_beats_any_perturbation(seed in 0u64..1000, k in 1usize..5, n in 2usize..6, scale in 1e-3f64..1.0) {
        let pre = precoders(seed, k, 3, 2);
        let ch = sample_rayleigh_channels(seed + 1, k, n, 3).unwrap();
        let w = AggregationWeights::for_tasks(&[TaskKind::Sensing, TaskKind::Learning], &vec![5; k]).unwrap();
        let pulses = PulseBook::dft(k, 4).unwrap().at(1);
        let m = optimal_receiver(&pre, &ch, &w, &pulses, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let d = complex_normal_matrix(&mut rng, n, 2, 1.0) * Complex64::new(scale, 0.0);
        let base = aggregation_mse(&m, &pre, &ch, &w, &pulses, 0.1);
        // quadratic with Hessian sum_k H C C^H H^H + sigma2 I, so the increase is at least sigma2 ||D||^2
        let moved = aggregation_mse(&(&m + &d), &pre, &ch, &w, &pulses, 0.1);
        prop_assert!(moved - base >= 0.1 * frob_sq(&d) * (1.0 - 1e-9) - 1e-12 * base);
    }

    #[test]
    fn projection_is_feasible(seed in 0u64..1000, k in 1usize..6, raw in prop::collection::vec(-1.0f64..3.0, 6), frac in 0.0f64..1.0) {
        let power = 1.5;
        let pre = precoders(seed, k, 2, 2);
        let eps_inv = frac * k as f64 * power;
        let (a, out) = project_feasible(&raw[..k], &pre, power, eps_inv).unwrap();
        prop_assert!(a.iter().all(|&x| (0.0..=power * (1.0 + 1e-12)).contains(&x)));
        prop_assert!(a.iter().sum::<f64>() >= eps_inv * (1.0 - 1e-9));
        for (kk, &ak) in a.iter().enumerate() {
            prop_assert!((out.power(kk) - ak).abs() <= 1e-9 * (1.0 + ak));
        }
    }

    #[test]
    fn standardization_round_trips(raw in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let s = standardize(&raw).unwrap();
        if !s.stats.degenerate {
            let n = raw.len() as f64;
            prop_assert!(s.values.iter().sum::<f64>().abs() < 1e-9 * n);
            prop_assert!((s.values.iter().map(|v| v * v).sum::<f64>() / n - 1.0).abs() < 1e-9);
            for (a, b) in s.restore().iter().zip(&raw) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn clamp_is_an_idempotent_map_into_the_region(x in 50.0f64..150.0, y in -60.0f64..60.0, z in -5.0f64..8.0) {
        let r = region();
        let once = r.clamp(&Position3::new(x, y, z));
        prop_assert!(r.contains(&once, 1e-9));
        prop_assert!(r.clamp(&once).distance(&once) < 1e-9);
    }

    #[test]
    fn bound_scales_inversely_with_frame_and_energy(seed in 0u64..1000, t in 1usize..512, gain in 0.1f64..10.0) {
        let pre = precoders(seed, 3, 4, 2);
        let vs = [1e-3, 2e-3, 5e-4];
        let base = crb_lower_bound(&pre, 0.7, t, &vs).unwrap();
        prop_assert!((crb_lower_bound(&pre, 0.7, 2 * t, &vs).unwrap() * 2.0 / base - 1.0).abs() < 1e-12);
        prop_assert!((crb_lower_bound(&pre.scaled(gain.sqrt()), 0.7, t, &vs).unwrap() * gain / base - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signaling_loads(k in 1u64..64, m in 1u64..128, s in 1u64..1000, d in 1u64..100, r in 1u64..500, tau in 1u64..20) {
        prop_assert_eq!(ssl_centralized(k, 2 * m, s), 2 * ssl_centralized(k, m, s));
        let dist = ssl_distributed(d, r, tau);
        prop_assert!(dist * tau >= d * r && (dist - 1) * tau < d * r);
    }
}

#[test]
fn symbol_autocovariance_converges_to_precoder_gram() {
    let draws = 100_000;
    for seed in 0..3u64 {
        let pre = precoders(seed, 1, 4, 2);
        let c = &pre.c[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let mut acc = CMat::zeros(4, 4);
        for _ in 0..draws {
            let g = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let s = encode_symbol(c, &g).unwrap();
            acc += &s * s.adjoint();
        }
        let sample = acc / Complex64::new(draws as f64, 0.0);
        let gram = c * c.adjoint();
        let rel = frob_sq(&(sample - &gram)).sqrt() / frob_sq(&gram).sqrt();
        assert!(rel < 0.05, "seed {seed}: relative gap {rel}");
        // the symbol energy is the precoder norm in expectation
        assert!((gram.trace().re - frob_sq(c)).abs() < 1e-12);
    }
}
