use proptest::prelude::*;
use steer_core::{NoiseSchedule, ScheduleKind, StepCoeffs};

fn golden_cosine() -> Vec<f64> {
    include_str!("data/cosine_t100.txt")
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

#[test]
fn cosine_t100_matches_golden_file() {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 100).unwrap();
    let golden = golden_cosine();
    assert_eq!(golden.len(), 101);
    for (i, (a, b)) in s.alpha_bars().iter().zip(&golden).enumerate() {
        assert!((a - b).abs() <= 1e-13 * b, "node {i}: {a} vs {b}");
        assert!(*a > 0.0 && *a <= 1.0);
    }
}

#[test]
fn mean_consistency_on_fine_grids() {
    for kind in [ScheduleKind::LinearAlphabar, ScheduleKind::Cosine] {
        let s = NoiseSchedule::new(kind, 1000).unwrap();
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let c = s.coeffs(i).unwrap();
            let lhs = c.c1 * s.alpha_bar(i).sqrt() + c.c2;
            let rhs = s.alpha_bar(i + 1).sqrt();
            worst = worst.max((lhs - rhs).abs() / rhs);
            assert!(c.beta <= 1.0 - c.alpha, "beta exceeds the step variance at {i}");
            assert!(c.alpha > 0.0 && c.alpha <= 1.0 && c.sigma >= 0.0 && c.beta >= 0.0);
        }
        assert!(worst <= 1e-12, "{kind:?}: {worst:e}");
    }
}

#[test]
fn coefficients_are_pure() {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 37).unwrap();
    for i in 0..37 {
        let a = s.coeffs(i).unwrap();
        let b = s.coeffs(i).unwrap();
        assert_eq!(a.c1.to_bits(), b.c1.to_bits());
        assert_eq!(a.beta.to_bits(), b.beta.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn identity_holds_for_random_pairs(lo in 1e-4f64..1.0, frac in 1e-6f64..1.0) {
        let hi = lo + (1.0 - lo) * frac;
        prop_assume!(hi > lo);
        let c = StepCoeffs::from_alpha_bars(lo, hi);
        let rel = (c.c1 * lo.sqrt() + c.c2 - hi.sqrt()).abs() / hi.sqrt();
        prop_assert!(rel <= 1e-12, "rel {rel:e}");
        prop_assert!(c.beta <= 1.0 - c.alpha + 1e-15);
    }
}
