//! Shared fixtures for the criterion benches.

use semiflow::inducing::InducedSystem;
use semiflow::mapzoo::{MapSpec, Profile, RoofSpec};

/// Intermittent map with a non-constant roof.
pub fn afn_system(beta: f64, a: f64) -> InducedSystem {
    InducedSystem::new(
        MapSpec::afn(beta, a).expect("valid map"),
        RoofSpec::hoelder(Profile::Affine { c0: 2.0, c1: 1.0 }, 1.0).expect("valid roof"),
    )
}
