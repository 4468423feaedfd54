use impedance_irl::approx::GaussianPolicy;
use impedance_irl::evalharness::scores::{deviation_metrics, relative_perf_diff};
use impedance_irl::impedance::{
    feedback_force, from_positive_gains, squash_force, to_positive_gains, unsquash_force, GainBounds,
};
use impedance_irl::rng;
use proptest::prelude::*;
use rand::RngCore;

proptest! {
    #[test]
    fn gain_squash_round_trips(raw in prop::collection::vec(-8f64..8.0, 4)) {
        let b = GainBounds::standard(&[false, false, true], true);
        let g = to_positive_gains(&raw, &b).unwrap();
        let back = from_positive_gains(&g, &b).unwrap();
        for (x, y) in raw.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn force_squash_round_trips(raw in prop::collection::vec(-5f64..5.0, 3)) {
        let f_max = [150.0, 150.0, 20.0];
        let f = squash_force(&raw, &f_max).unwrap();
        prop_assert!(f.iter().zip(&f_max).all(|(v, m)| v.abs() <= *m));
        let back = unsquash_force(&f, &f_max).unwrap();
        for (x, y) in raw.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn mirrored_error_mirrors_gain_force(
        k in prop::collection::vec(10f64..2000.0, 3),
        b in prop::collection::vec(0f64..200.0, 3),
        e in prop::collection::vec(-0.5f64..0.5, 3),
        ed in prop::collection::vec(-2f64..2.0, 3),
    ) {
        let f_max = [150.0, 150.0, 20.0];
        let f = feedback_force(&k, &b, &e, &ed, &f_max).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
        let g = feedback_force(&k, &b, &neg(&e), &neg(&ed), &f_max).unwrap();
        prop_assert_eq!(g, neg(&f));
    }

    #[test]
    fn named_streams_are_reproducible(seed in any::<u64>(), idx in 0u64..1000) {
        let a = rng::stream(seed, "rollout", idx).next_u64();
        prop_assert_eq!(a, rng::stream(seed, "rollout", idx).next_u64());
        prop_assert_ne!(a, rng::stream(seed, "eval", idx).next_u64());
        prop_assert_ne!(a, rng::stream(seed, "rollout", idx + 1).next_u64());
        prop_assert_eq!(rng::child_seed(seed, "x", idx), rng::child_seed(seed, "x", idx));
    }

    #[test]
    fn rigid_shift_deviation_is_symmetric(
        pts in prop::collection::vec(prop::collection::vec(-1f64..1.0, 3), 1..30),
        shift in prop::collection::vec(-0.05f64..0.05, 3),
    ) {
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
        let norm = shift.iter().map(|s| s * s).sum::<f64>().sqrt();
        let (avg_a, fin_a) = deviation_metrics(&pts, &moved).unwrap();
        let (avg_b, fin_b) = deviation_metrics(&moved, &pts).unwrap();
        prop_assert!((fin_a - norm).abs() < 1e-12 && (fin_b - norm).abs() < 1e-12);
        prop_assert!(avg_a <= norm + 1e-12 && avg_b <= norm + 1e-12);
        // a single-point path has only its shifted twin to compare against
        if pts.len() == 1 {
            prop_assert!((avg_a - avg_b).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_difference_is_scale_free(p in -10f64..-1e-3, e in -10f64..-1e-3, c in 1e-3f64..1e3) {
        let r = relative_perf_diff(p, e).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!((relative_perf_diff(c * p, c * e).unwrap() - r).abs() < 1e-9 * (1.0 + r));
    }

    #[test]
    fn log_density_peaks_at_the_mean(seed in 0u64..200, obs in prop::collection::vec(-1f64..1.0, 4), d in prop::collection::vec(-1f64..1.0, 2)) {
        let mut r = rng::stream(seed, "policy", 0);
        let p = GaussianPolicy::init(4, &[8], 2, &mut r).unwrap();
        let mu = p.mean_action(&obs).unwrap();
        let off: Vec<f64> = mu.iter().zip(&d).map(|(m, x)| m + x).collect();
        prop_assert!(p.log_prob(&obs, &mu).unwrap() >= p.log_prob(&obs, &off).unwrap());
    }
}
