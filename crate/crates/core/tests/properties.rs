use proptest::prelude::*;
use tfw_core::coulomb::build_kernel;
use tfw_core::functional::ConvexityBound;
use tfw_core::random::{rng, smooth_field};
use tfw_core::Lattice;

fn lattice() -> impl Strategy<Value = Lattice> {
    (1.0f64..6.0, 1usize..=2, prop::sample::select(vec![4usize, 6, 8]))
        .prop_map(|(a, l, n)| Lattice::new(a, l, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fourier_round_trip(lat in lattice(), seed in any::<u64>()) {
        let f = smooth_field(lat, &mut rng(seed), 0.3, 1.0);
        let back = f.to_fourier().to_real();
        prop_assert!((&back - &f).max_abs() <= 1e-12 * f.max_abs().max(1.0));
        let direct = f.inner(&f);
        prop_assert!((direct - f.to_fourier().norm_sq()).abs() <= 1e-12 * direct);
    }

    #[test]
    fn coulomb_form_symmetric_and_nonnegative(lat in lattice(), seed in any::<u64>()) {
        let kernel = build_kernel(&lat);
        let mut r = rng(seed);
        let f = smooth_field(lat, &mut r, 0.0, 1.0);
        let g = smooth_field(lat, &mut r, 0.1, 1.0);
        let (fg, gf) = (kernel.form(&f, &g).unwrap(), kernel.form(&g, &f).unwrap());
        let (ff, gg) = (kernel.form(&f, &f).unwrap(), kernel.form(&g, &g).unwrap());
        prop_assert!(ff >= 0.0 && gg >= 0.0);
        prop_assert!((fg - gf).abs() <= 1e-12 * (ff * gg).sqrt());
        prop_assert!(fg * fg <= ff * gg * (1.0 + 1e-12));
    }

    #[test]
    fn convexity_sandwich(a in 0.2f64..5.0, frac in -1.0f64..1.0, log_b in -3.0f64..3.0, wide in any::<bool>()) {
        let b = if wide { 10f64.powf(log_b) } else { frac * a };
        for gamma in [2.0, 10.0 / 3.0] {
            let bound = ConvexityBound::calibrate(0.2, 5.0, gamma).unwrap();
            let (lo, mid, up) = bound.gap(a, b).unwrap();
            prop_assert!(lo <= mid, "lower fails at a={a}, b={b}, gamma={gamma}");
            prop_assert!(mid <= up, "upper fails at a={a}, b={b}, gamma={gamma}");
        }
    }
}
