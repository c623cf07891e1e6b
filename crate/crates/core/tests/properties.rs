#[path = "support/properties.rs"]
mod properties;

const CASES: u32 = 1000;

#[test]
fn luders_updates_are_physical() {
    properties::luders_physicality(CASES).unwrap();
}

#[test]
fn branches_cannot_signal_to_the_center() {
    properties::no_signaling(CASES).unwrap();
}

#[test]
fn correlator_recursion_matches_matrix_path() {
    properties::recursion_matches_matrix_path(CASES).unwrap();
}

#[test]
fn s_is_monotone_in_depth() {
    properties::monotone_in_depth(CASES).unwrap();
}

#[test]
fn s_is_linear_in_visibility() {
    properties::visibility_linearity(CASES).unwrap();
}

#[test]
fn kraus_pairs_are_complete() {
    properties::kraus_completeness(CASES).unwrap();
}

#[test]
fn sagnac_circuit_is_an_unsharp_z() {
    properties::sagnac_equivalence(CASES).unwrap();
}
