mod common;

#[test]
fn formulas_match_oracles() {
    common::assert_all(&common::formula_suite());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    common::assert_all(&common::gradient_suite());
}
