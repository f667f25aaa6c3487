mod common;

#[test]
fn random_networks_match_central_differences() {
    for seed in 0..20 {
        let (err, spec) = common::random_network_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}\n{spec}");
    }
}
