use std::f64::consts::PI;

use proptest::prelude::*;
use waveguide_diode::cwdrive::{generator, solve_from_ground, CwDrive};
use waveguide_diode::sweep::diode_metrics;
use waveguide_diode::{Direction, EmitterArray, C64};

fn device() -> impl Strategy<Value = EmitterArray> {
    (-3.0..3.0f64, -3.0..3.0f64, 0.05..2.0 * PI - 0.05)
        .prop_map(|(d1, d2, kl)| EmitterArray::pair(1.0, kl, d1, d2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_range(f in 0.0..1.0f64, b in 0.0..1.0f64, norm in prop::sample::select(vec![1.0, 2.0])) {
        let m = diode_metrics(f * norm, b * norm, norm).unwrap();
        prop_assert!(m.rectification.abs() <= 1.0);
        prop_assert!(m.efficiency <= m.transmission + 1e-15);
        prop_assert!(m.efficiency_clamped >= 0.0);
        let swapped = diode_metrics(b * norm, f * norm, norm).unwrap();
        prop_assert!((m.rectification + swapped.rectification).abs() < 1e-12);
    }

    #[test]
    fn generator_preserves_trace(
        arr in device(),
        amp in 0.0..1.5f64,
        phase in 0.0..2.0 * PI,
        noise in 0.0..2.0f64,
        left in any::<bool>(),
    ) {
        let dir = if left { Direction::LeftGoing } else { Direction::RightGoing };
        let drive = CwDrive::new(C64::from_polar(amp, phase), dir, noise).unwrap();
        let (l, _, _) = generator(&arr, &drive);
        prop_assert!(l.trace_preservation_error() < 1e-12);
    }

    #[test]
    fn mirroring_is_an_involution(arr in device()) {
        prop_assert_eq!(arr.mirrored().mirrored(), arr);
    }

    #[test]
    fn mirror_equals_reversed_drive(arr in device(), amp in 0.05..0.8f64, noise in 0.0..1.0f64) {
        let right = CwDrive::right_going(amp).with_noise(noise).unwrap();
        let left = right.with_direction(Direction::LeftGoing);
        let mirrored = solve_from_ground(&arr.mirrored(), &right).unwrap().fluxes;
        let reversed = solve_from_ground(&arr, &left).unwrap().fluxes;
        prop_assert!((mirrored.phi_r_out - reversed.phi_l_out).abs() < 1e-9);
        prop_assert!((mirrored.phi_l_out - reversed.phi_r_out).abs() < 1e-9);
    }
}
