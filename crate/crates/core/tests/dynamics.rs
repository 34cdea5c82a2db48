use kacwalk::functionals::qbar;
use kacwalk::seed::rng_for;
use kacwalk::sim::{simulate, SimConfig};
use kacwalk::velocity::{collide, kernel_b, sample_microcanonical, ConservedQuantities};
use kacwalk::{Dim, Velocity};
use proptest::prelude::*;

fn velocity() -> impl Strategy<Value = Velocity> {
    prop::array::uniform3(-5.0f64..5.0).prop_map(Velocity)
}

fn direction() -> impl Strategy<Value = Velocity> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("nonzero", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-4)
        .prop_map(|a| {
            let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            Velocity([a[0] / n, a[1] / n, a[2] / n])
        })
}

proptest! {
    #[test]
    fn collisions_conserve_and_are_involutive(v in velocity(), w in velocity(), om in direction()) {
        let (a, b) = collide(v, w, om).unwrap();
        let before = ConservedQuantities::total([v, w].iter());
        let after = ConservedQuantities::total([a, b].iter());
        prop_assert!((before.energy - after.energy).abs() <= 1e-12 * before.energy.max(1.0));
        prop_assert!((before.momentum - after.momentum).norm() <= 1e-12 * before.momentum.norm().max(1.0));
        let (c, e) = collide(a, b, om).unwrap();
        prop_assert!((c - v).norm() < 1e-10 && (e - w).norm() < 1e-10);
        // The kernel sees the same |(v − w)·ω| before and after.
        let k0 = kernel_b(v, w, om).unwrap();
        let k1 = kernel_b(a, b, om).unwrap();
        prop_assert!((k0 - k1).abs() < 1e-10 * k0.max(1.0));
    }
}

#[test]
fn unnormalized_direction_is_rejected() {
    let v = Velocity::new(1.0, 0.0, 0.0);
    assert!(collide(v, -v, Velocity::new(2.0, 0.0, 0.0)).is_err());
}

#[test]
fn simulation_stays_on_the_shell() {
    for d in [Dim::Two, Dim::Three] {
        let init = sample_microcanonical(1.3, d, 1000, &mut rng_for(4, &[1])).unwrap();
        let cfg = SimConfig::new(1000, d, 1.3, 5.0, 9);
        let (fin, rec, _) = simulate(init, &cfg).unwrap();
        let (de, dp) = fin.shell_deviation();
        assert!(de < 1e-8 && dp < 1e-8, "{d:?}: {de} {dp}");
        assert!(rec.count > 0);
    }
}

#[test]
fn two_particles_still_collide() {
    let init = sample_microcanonical(1.0, Dim::Three, 2, &mut rng_for(1, &[2])).unwrap();
    let (fin, rec, _) = simulate(init, &SimConfig::new(2, Dim::Three, 1.0, 3.0, 2)).unwrap();
    assert!(rec.count > 0);
    fin.check_shell(1e-10).unwrap();
}

#[test]
fn collision_rate_tracks_qbar() {
    let (n, t) = (2000, 4.0);
    let mut qs = Vec::new();
    for r in 0..4u64 {
        let init = sample_microcanonical(1.0, Dim::Three, n, &mut rng_for(r, &[0])).unwrap();
        let (_, rec, _) = simulate(init, &SimConfig::new(n, Dim::Three, 1.0, t, 100 + r)).unwrap();
        qs.push(rec.collision_count());
    }
    let mean = qs.iter().sum::<f64>() / qs.len() as f64;
    let qb = qbar(1.0, Dim::Three);
    assert!((mean - qb).abs() < 0.03 * qb, "{mean} vs {qb}");
}

#[test]
fn seeded_runs_repeat_exactly() {
    let run = || {
        let init = sample_microcanonical(1.0, Dim::Two, 300, &mut rng_for(8, &[0])).unwrap();
        let mut cfg = SimConfig::new(300, Dim::Two, 1.0, 2.0, 8);
        cfg.record_events = true;
        simulate(init, &cfg).unwrap()
    };
    let (a, ra, _) = run();
    let (b, rb, _) = run();
    assert_eq!(a.velocities, b.velocities);
    assert_eq!(ra.events.len(), rb.events.len());
}
