use kacwalk::density::IsotropicDensity;
use kacwalk::functionals::{entropy_h, epsilon_of_q, i_minus, j_e, poisson_bound, qbar, static_cost};
use kacwalk::optimizer::{q_grid, rate_bounds_table, DensityFamily, MixtureParams, OptConfig};
use kacwalk::quadrature::{collision_rates, qbar_monte_carlo, CollisionPoints, EstimatorOptions, Proposal};
use kacwalk::Dim;
use proptest::prelude::*;

#[test]
fn qbar_scales_like_square_root_of_energy() {
    for d in [Dim::Two, Dim::Three] {
        let q1 = qbar(1.0, d);
        for e in [0.25, 2.0, 9.0] {
            assert!((qbar(e, d) - e.sqrt() * q1).abs() < 1e-12 * q1);
        }
    }
}

#[test]
fn qbar_agrees_with_its_oracle_in_both_dimensions() {
    for d in [Dim::Two, Dim::Three] {
        let mc = qbar_monte_carlo(0.7, d, 400_000, 17).unwrap();
        assert!(mc.within(qbar(0.7, d), 3.0), "{d:?}: {mc:?}");
    }
}

#[test]
fn second_order_rate_is_the_maxwellian_entropy() {
    for d in [Dim::Two, Dim::Three] {
        let e = 1.7;
        let qb = qbar(e, d);
        for frac in [0.3, 0.6, 0.9] {
            let q = frac * qb;
            let eps = epsilon_of_q(q, e, d).unwrap();
            let h = entropy_h(&IsotropicDensity::maxwellian(eps, d).unwrap(), e).unwrap();
            assert!((j_e(q, e, d).value - h).abs() < 1e-4, "{d:?} {frac}");
        }
    }
}

#[test]
fn static_cost_at_the_maxwellian_is_poisson() {
    let d = Dim::Three;
    let qb = qbar(1.0, d);
    for q in [0.5 * qb, qb, 2.0 * qb] {
        assert!((static_cost(q, qb, qb) - poisson_bound(q, 1.0, d)).abs() < 1e-12);
    }
    assert_eq!(static_cost(qb, qb, qb), 0.0);
}

#[test]
fn lower_bound_vanishes_below_qhat() {
    assert_eq!(i_minus(2.0, 3.0), 0.0);
    assert_eq!(i_minus(3.0, 3.0), 0.0);
    assert!(i_minus(3.5, 3.0) > 0.0);
}

#[test]
fn maxwellian_is_a_fixed_point_of_the_rates() {
    let d = Dim::Three;
    let pts = CollisionPoints::sample(d, 100_000, Proposal::default(), 5).unwrap();
    for e in [0.5, 1.0, 3.0] {
        let m = IsotropicDensity::maxwellian(e, d).unwrap();
        let r = collision_rates(&m, &pts, EstimatorOptions::plain()).unwrap();
        let qb = qbar(e, d);
        assert!(r.r2.within(qb, 3.0) && r.r4.within(qb, 3.0), "{e}: {r:?}");
        assert!(r.q2.value.abs() < 1e-9 * qb, "{e}: {:?}", r.q2);
    }
}

fn mixture() -> impl Strategy<Value = MixtureParams> {
    (0.05f64..0.95, 0.2f64..1.0, 0.0f64..1.2).prop_map(|(w, e0, mu)| MixtureParams {
        weights: vec![w, 1.0 - w],
        energies: vec![e0, 0.5 * e0],
        shifts: vec![0.0, mu],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Cauchy-Schwarz gives R4 ≤ R2; the positive part is at most twice the gain term.
    #[test]
    fn rate_inequalities_hold(p in mixture()) {
        let d = Dim::Three;
        let f = p.density(d).unwrap();
        let pts = CollisionPoints::sample(d, 20_000, Proposal::default(), 3).unwrap();
        let r = collision_rates(&f, &pts, EstimatorOptions::plain()).unwrap();
        let s = 3.0 * (r.r2.stderr.powi(2) + r.r4.stderr.powi(2)).sqrt();
        prop_assert!(r.r4.value <= r.r2.value + s, "{:?}", r);
        prop_assert!(r.q2.value <= 2.0 * r.r2.value + 3.0 * (r.q2.stderr + 2.0 * r.r2.stderr));
        prop_assert!(r.q2.value >= 0.0);
    }
}

#[test]
fn small_bounds_table_is_ordered() {
    let d = Dim::Three;
    let cfg = OptConfig {
        budget: 120,
        restarts: 1,
        surrogate_points: 20_000,
        final_points: 100_000,
        family: DensityFamily::default(),
        seed: 21,
        ..OptConfig::default()
    };
    let grid = q_grid(1.0, d, 3, 3.0);
    let t = rate_bounds_table(1.0, d, &grid, cfg).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.ordering_violations(3.0).is_empty(), "{t:?}");
    assert_eq!(t.rows[0].i_minus, 0.0);
    assert!(t.rows[0].i_plus <= 3.0 * t.rows[0].i_plus_stderr + 1e-9);
    let csv = t.to_csv();
    assert!(csv.starts_with("q,i_minus,i_plus,poisson,j_e\n"));
    assert_eq!(csv.lines().count(), 4);
}
