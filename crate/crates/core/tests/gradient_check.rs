mod common;

#[test]
fn reduced_cnn_gradients_match_central_differences() {
    for seed in [1, 2, 3] {
        let err = common::gradient_check(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}
