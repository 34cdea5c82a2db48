use kacwalk::cloning::{dual_grid, estimate_scgf, legendre_rate, systematic_resample, CloningConfig};
use kacwalk::Dim;

fn cfg() -> CloningConfig {
    CloningConfig {
        n: 10,
        t: 2.0,
        clones: 60,
        e: 1.0,
        d: Dim::Three,
        window: 0.5,
        replicas: 4,
        seed: 13,
    }
}

#[test]
fn scgf_is_zero_at_zero_and_increasing() {
    let s = [-0.5, -0.2, 0.0, 0.2, 0.5];
    let est = estimate_scgf(&s, &cfg()).unwrap();
    assert_eq!(est.row(0.0).unwrap().psi, 0.0);
    for w in est.rows.windows(2) {
        assert!(w[1].psi > w[0].psi, "{:?}", est.rows);
    }
    // Convexity between the outer tilts and zero, within errors.
    let (a, b) = (est.row(-0.5).unwrap(), est.row(0.5).unwrap());
    assert!(a.psi + b.psi >= -3.0 * (a.stderr + b.stderr));
    assert!(est.rows.iter().all(|r| !r.collapsed));
    let csv = est.to_csv();
    assert!(csv.starts_with("s,psi,stderr,N,T,M,seed\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn legendre_dual_is_nonnegative_and_picks_interior_tilts() {
    let est = estimate_scgf(&[-0.4, 0.0, 0.4], &cfg()).unwrap();
    let q = dual_grid(&est);
    assert_eq!(q.len(), 2);
    let rows = legendre_rate(&est, &q).unwrap();
    for r in &rows {
        assert!(r.i_hat.value >= -1e-12);
    }
    assert!(legendre_rate(&est, &[]).unwrap().is_empty());
}

#[test]
fn estimates_repeat_for_a_seed() {
    let a = estimate_scgf(&[0.3], &cfg()).unwrap();
    let b = estimate_scgf(&[0.3], &cfg()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resampling_preserves_population_size() {
    let idx = systematic_resample(&[0.1, 0.0, 0.6, 0.3], 10, 0.37);
    assert_eq!(idx.len(), 10);
    assert!(!idx.contains(&1));
    assert_eq!(idx.iter().filter(|&&i| i == 2).count(), 6);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = CloningConfig { clones: 10, ..cfg() };
    assert!(estimate_scgf(&[0.1], &bad).is_err());
    assert!(estimate_scgf(&[f64::NAN], &cfg()).is_err());
}
