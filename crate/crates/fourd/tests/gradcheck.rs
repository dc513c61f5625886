//! Finite-difference validation of the segmenter's analytic gradients.

mod support;

#[test]
fn analytic_gradients_match_central_differences() {
    let report = support::gradient_check(20, 9000);
    assert_eq!(report.instances, 20);
    // Every parameter of every instance is probed: 268 coords per net.
    assert_eq!(report.coords_checked, 20 * 268);
    assert!(
        report.max_rel_err < 1e-4,
        "max relative error {}",
        report.max_rel_err
    );
}
