use swlab_core::geometry::SchwarzschildChart;
use swlab_core::identity::{verify_divergence_identity, TestField};
use swlab_core::morawetz::{verify_ta_closed_forms, MultiplierSpec, TaMultiplier};
use swlab_core::rweight::{verify_rpw_formulas, RWeightSpec, RpwMultiplier};

const GAMMAS: [f64; 3] = [0.5, 1.0, 1.5];

fn fields() -> [TestField; 2] {
    [
        TestField::gaussian_default(),
        TestField::PolyBump { amp: 0.5, c0: 1.0, c1: -0.3, c2: 0.05, vc: 12.0, sv: 4.0, kappa: 0.2 },
    ]
}

#[test]
fn closed_forms_match_definitions_at_random_points() {
    let c = SchwarzschildChart::new(1.0).unwrap();
    let e = verify_ta_closed_forms(&c, &MultiplierSpec::default(), 3.0, 1000).unwrap();
    assert!(e <= 1e-10, "Ta: {e:e}");
    for g in GAMMAS {
        let e = verify_rpw_formulas(&c, &RWeightSpec::new(g, 3.0), 1000).unwrap();
        assert!(e <= 1e-10, "γ = {g}: {e:e}");
    }
}

#[test]
fn ta_divergence_identity_by_finite_differences() {
    let c = SchwarzschildChart::new(1.0).unwrap();
    let mult = TaMultiplier::new(&c, MultiplierSpec::default());
    for field in fields() {
        for k in [0, 1] {
            let rep = verify_divergence_identity(&c, &field, &mult, k, 3.0, 1e-3, (2.05, 50.0), 60).unwrap();
            assert!(rep.rel_error <= 1e-5, "k = {k}: {rep:?}");
            assert!(rep.order >= 2.0, "k = {k}: {rep:?}");
        }
    }
}

#[test]
fn rpw_divergence_identity_by_finite_differences() {
    let c = SchwarzschildChart::new(1.0).unwrap();
    for g in GAMMAS {
        let mult = RpwMultiplier::new(&c, RWeightSpec::new(g, 3.0));
        for field in fields() {
            for k in [0, 1] {
                let rep = verify_divergence_identity(&c, &field, &mult, k, 3.0, 1e-3, (2.05, 50.0), 60).unwrap();
                assert!(rep.rel_error <= 1e-5, "γ = {g}, k = {k}: {rep:?}");
                assert!(rep.order >= 2.0, "γ = {g}, k = {k}: {rep:?}");
            }
        }
    }
}
