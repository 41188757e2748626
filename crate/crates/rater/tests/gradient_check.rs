//! Analytic gradients against central finite differences on a reduced
//! two-stage topology in double precision.

#[path = "support/gradient.rs"]
mod gradient;

use gradient::worst_relative_error;

#[test]
fn every_tensor_matches_finite_differences() {
    let errs = worst_relative_error(3);
    assert_eq!(errs.len(), 2 * 3 + 8);
    for (name, e, norm) in errs {
        println!("{name}: |g| {norm:.3e}, relative error {e:.2e}");
        assert!(norm > 1e-8, "{name}: vanishing gradient");
        assert!(e < 1e-4, "{name}: relative error {e:e}");
    }
}
