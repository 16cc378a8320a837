use super::gradcheck::run_layer_suite;

#[test]
fn every_layer_matches_finite_differences() {
    let entries = run_layer_suite(&[1, 2, 3, 4, 5]);
    let mut worst = 0.0f64;
    for e in &entries {
        worst = worst.max(e.check.worst());
        assert!(
            e.check.worst() < 1e-4,
            "{} {:?} seed {}: {:?}",
            e.layer,
            e.shape,
            e.seed,
            e.check
        );
    }
    assert!(entries.len() >= 5 * 3 * 12);
    assert!(worst < 1e-4);
}
