mod common;

use fedfuse::seed;

#[test]
fn fedavg_matches_scalar_loop() {
    let mut rng = seed::stream(2024, &[]);
    for trial in 0..100 {
        let updates = common::random_updates(&mut rng);
        let err = common::fedavg_error(&updates);
        assert!(err < 1e-12, "trial {trial}: relative error {err:e}");
    }
}
