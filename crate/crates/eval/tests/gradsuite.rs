use psl_eval::gradsuite::run_gradient_suite;

#[test]
fn every_gradient_matches_central_differences() {
    let cases = run_gradient_suite().unwrap();
    assert!(cases.len() > 50, "{} cases", cases.len());
    for case in &cases {
        assert!(case.max_rel_err < 1e-4, "{}: {:e}", case.name, case.max_rel_err);
    }
    for name in ["wave_block", "backbone", "temporal_transformer", "fuse_w3", "gradient_penalty", "generator"] {
        assert!(cases.iter().any(|c| c.name == name), "missing {name}");
    }
}
