//! Recycled Bell nonlocality in star networks.
//!
//! A central party shares one noisy `|φ⁺⟩` with each of `m` branches. Along
//! every branch a chain of parties measures the same qubit one after another
//! with unsharp Pauli observables, passing it on. This crate evaluates the
//! network Bell quantity `S_s` for every choice `s` of one party per branch,
//! exactly and from simulated shots, and searches for sharpness settings under
//! which all choices violate the network-local bound at once.

pub mod bell;
pub mod linalg;
pub mod measurement;
pub mod network;
pub mod optimizer;
pub mod sampler;
pub mod sequence;

pub use bell::{
    bell_value, chsh_pair, closed_form_s, deterministic_max_s, joint_distribution, projective_bound, BellError,
    BellReport, ChshPair, JointDistribution, Method,
};
pub use linalg::{ComplexMatrix, DensityOperator};
pub use network::{BranchConfig, NetworkConfig, PartySelection, PartySetting, SourceSpec};
pub use optimizer::{optimize, worst_case_objective, Objective, OptimizationProblem, OptimizationResult, Symmetry};
pub use sampler::{experiment_report, CountTable, ExperimentReport, SamplingOptions, ShotRecord};
pub use sequence::{BranchState, CorrelatorVector};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/star-network.md")]
    mod star_network {}
    #[doc = include_str!("../../../book/src/unsharp-measurements.md")]
    mod unsharp_measurements {}
    #[doc = include_str!("../../../book/src/recycling.md")]
    mod recycling {}
    #[doc = include_str!("../../../book/src/bell-quantity.md")]
    mod bell_quantity {}
    #[doc = include_str!("../../../book/src/sequential-chsh.md")]
    mod sequential_chsh {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
