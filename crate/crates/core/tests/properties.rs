use proptest::prelude::*;

use mfbank::fixed_point::erfc_level_sum;
use mfbank::particle::{resolve_default_cascade, DynamicsVariant};
use mfbank::stationary::StationarySolution;

// The stationary density solves (1/2) p'' + ((a (x - x0) + x0 e0) p)' = 0 on both sides
// of x0, vanishes at 0, and its outward flux at 0 is the default rate.
#[test]
fn stationary_density_solves_its_equation() {
    for &(a, x0) in &[(0.5, 2.0), (2.0, 1.0), (0.01125, 3.0)] {
        let sol = StationarySolution::new(a, x0).unwrap();
        let p = |x: f64| sol.pdf(x);
        let h = 1e-3;
        assert!(p(0.0).abs() < 1e-14);
        let slope0 = (4.0 * p(h) - p(2.0 * h)) / (2.0 * h);
        assert!((0.5 * slope0 - sol.e0()).abs() < 1e-5 * sol.e0().max(1e-3), "a={a} x0={x0}");
        for &x in &[0.3 * x0, 0.8 * x0, 1.3 * x0, 2.0 * x0] {
            let h = 1e-3;
            let flux = |y: f64| 0.5 * (p(y + h) - p(y - h)) / (2.0 * h) + (a * (y - x0) + x0 * sol.e0()) * p(y);
            let div = (flux(x + h) - flux(x - h)) / (2.0 * h);
            let scale = p(x).max(1e-3);
            assert!(div.abs() < 1e-3 * scale.max(1.0), "a={a} x0={x0} x={x} div={div}");
        }
        // Re-injection at x0 makes the flux jump by the default rate.
        let e = 1e-6;
        let left = 0.5 * (p(x0 - e) - p(x0 - 2.0 * e)) / e;
        let right = 0.5 * (p(x0 + 2.0 * e) - p(x0 + e)) / e;
        assert!(((left - right) - sol.e0()).abs() < 1e-4 * sol.e0().max(1e-2), "a={a} x0={x0}");
    }
}

proptest! {
    #[test]
    fn cascade_survivors_stay_positive(
        x in prop::collection::vec(-0.1f64..1.0, 1..8),
        mfsta in any::<bool>(),
    ) {
        let variant = if mfsta { DynamicsVariant::MeanFieldStationary { x0: 1.0 } } else { DynamicsVariant::Ps };
        let c = resolve_default_cascade(&x, variant);
        if !c.absorbed {
            for (i, v) in c.x_new.iter().enumerate() {
                if !c.defaulted.contains(&i) {
                    prop_assert!(*v > 0.0);
                }
            }
            for &i in &c.defaulted {
                prop_assert!(x[i] <= c.x_new[i]);
            }
        }
    }

    #[test]
    fn cascade_is_idempotent_on_healthy_states(x in prop::collection::vec(0.01f64..2.0, 1..8)) {
        let c = resolve_default_cascade(&x, DynamicsVariant::Ps);
        prop_assert!(c.defaulted.is_empty());
        prop_assert_eq!(c.x_new, x);
    }

    #[test]
    fn level_sum_is_monotone(t in 0.05f64..4.0, dt in 0.0f64..1.0, x0 in 0.5f64..3.0, dx in 0.0f64..1.0) {
        let base = erfc_level_sum(t, x0);
        prop_assert!(erfc_level_sum(t + dt, x0) >= base - 1e-14);
        prop_assert!(erfc_level_sum(t, x0 + dx) <= base + 1e-14);
        if x0 >= 1.0 {
            prop_assert!(base <= t / x0);
        }
    }
}
