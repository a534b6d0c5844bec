use nlhomog::kernel::{
    make_cutoff_perturbation, omega, CoefficientFamily, CoefficientSpec, JumpDensity, KernelSpec,
    PerturbationSpec,
};
use nlhomog::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn perturbation_components_are_odd(z in -2.0f64..2.0, ell in 0.0f64..0.05) {
        let base = KernelSpec::gaussian(0.2, 1).unwrap();
        let cutoff = make_cutoff_perturbation(&base, &[ell]).unwrap();
        let pair = PerturbationSpec::odd_gaussian_pair(1, 0.1, 0.2, 0.5, &[ell]).unwrap();
        for c in cutoff.components.iter().chain(&pair.components) {
            prop_assert!((c.eval(&[z]) + c.eval(&[-z])).abs() <= 1e-15 * c.eval(&[z]).abs().max(1.0));
        }
    }

    #[test]
    fn trig_product_respects_its_bounds(x in 0.0f64..1.0, y in 0.0f64..1.0, amp in 0.0f64..0.9) {
        let mu = CoefficientSpec::trig_product(amp, 1).unwrap();
        let v = mu.eval(&[x], &[y]);
        prop_assert!(v >= mu.alpha1 - 1e-14 && v <= mu.alpha2 + 1e-14);
        prop_assert!(mu.eval_checked(&[x], &[y]).is_ok());
    }

    #[test]
    fn coefficients_are_periodic(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let mu = CoefficientSpec::new(
            CoefficientFamily::TrigProduct { amplitude: 0.5, phase: 0.1, scale: 1.5 },
            1,
        ).unwrap();
        let shifted = mu.eval(&[x + 1.0], &[y - 2.0]);
        prop_assert!((mu.eval(&[x], &[y]) - shifted).abs() < 1e-12);
    }

    #[test]
    fn cutoff_is_monotone_between_zero_and_one(s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        prop_assert!((0.0..=1.0).contains(&omega(lo)));
        prop_assert!(omega(lo) >= omega(hi));
    }
}

#[test]
fn cutoff_values_at_the_breakpoints() {
    assert_eq!(omega(0.0), 1.0);
    assert_eq!(omega(0.25), 1.0);
    assert_eq!(omega(0.5), 0.0);
    assert!((omega(0.375) - 0.5).abs() < 1e-15);
}

#[test]
fn oversized_perturbation_is_rejected() {
    let base = KernelSpec::gaussian(0.2, 1).unwrap();
    let pair = PerturbationSpec::odd_gaussian_pair(1, 0.05, 0.1, 1.0, &[5.0]).unwrap();
    match KernelSpec::composite(base, pair) {
        Err(Error::StepTooLarge { step, min_value }) => {
            assert_eq!(step, 5.0);
            assert!(min_value < 0.0);
        }
        other => panic!("expected step-too-large, got {other:?}"),
    }
}

#[test]
fn cutoff_needs_an_even_base() {
    let base = KernelSpec::shifted_gaussian(0.2, vec![0.1]).unwrap();
    assert!(matches!(make_cutoff_perturbation(&base, &[0.01]), Err(Error::Input(_))));
}

#[test]
fn declared_bounds_must_contain_the_coefficient() {
    let mu = CoefficientSpec::trig_product(0.5, 1).unwrap();
    assert!(mu.clone().with_declared_bounds(0.5, 1.5).is_ok());
    assert!(matches!(
        mu.with_declared_bounds(0.6, 1.5),
        Err(Error::Specification(_))
    ));
}

#[test]
fn moments_by_quadrature_match_closed_forms() {
    let g = KernelSpec::shifted_gaussian(0.2, vec![0.3]).unwrap();
    let m = g.moments().unwrap();
    assert_eq!(m.first, vec![0.3]);
    assert!((m.second[0] - 0.13).abs() < 1e-15);
    let bump = KernelSpec::compact_bump(0.25, vec![0.1]).unwrap();
    let mb = bump.moments().unwrap();
    assert!((mb.mass - 1.0).abs() < 1e-10);
    assert!((mb.first[0] - 0.1).abs() < 1e-10);
}
