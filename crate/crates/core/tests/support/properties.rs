//! Randomised invariant checks shared by the property tests and the
//! acceptance harness. Each runs `cases` deterministic instances and reports
//! the first counterexample.

use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use starnet::bell::{bell_value, closed_form_s, joint_distribution};
use starnet::linalg::{dagger, DensityOperator, PSD_TOL};
use starnet::measurement::{
    cnot_circuit_kraus, kraus_from_povm, sagnac_kraus, sharpness_from_hwp_angle, unsharp_along, unsharp_pauli, Axis,
    KrausPair,
};
use starnet::network::{BranchConfig, NetworkConfig, PartySelection, PartySetting, SourceSpec};
use starnet::sequence::{
    evolve_correlators, evolve_source, luders_average, luders_conditional, BranchState, CorrelatorVector,
};
use starnet::ComplexMatrix;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// `G G† / Tr` of a random complex 4×4 `G`; full rank almost surely.
fn two_qubit_state() -> impl Strategy<Value = DensityOperator> {
    prop::collection::vec(-1.0f64..1.0, 32).prop_map(|v| {
        let g = ComplexMatrix::new(4, v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()).unwrap();
        let rho = &g * &dagger(&g);
        let tr = (0..4).map(|i| rho.get(i, i).re).sum::<f64>();
        DensityOperator::new(rho.scale(1.0 / tr)).unwrap()
    })
}

fn setting() -> impl Strategy<Value = PartySetting> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(z, x)| PartySetting::new(z, x))
}

fn network(ideal: bool) -> impl Strategy<Value = NetworkConfig> {
    let branch = prop::collection::vec(setting(), 1..=3).prop_map(BranchConfig::new);
    let vis = if ideal { Just(1.0).boxed() } else { (0.0f64..=1.0).boxed() };
    (prop::collection::vec((branch, vis), 1..=3), 0.0f64..=std::f64::consts::FRAC_PI_2).prop_map(|(b, theta)| {
        let (branches, sources) = b.into_iter().map(|(b, v)| (b, SourceSpec::new(v))).unzip();
        NetworkConfig::new(branches, sources, theta)
    })
}

/// A network with one selection, given as fractions of each chain length.
fn network_with_selection(ideal: bool) -> impl Strategy<Value = (NetworkConfig, PartySelection)> {
    (network(ideal), prop::collection::vec(0.0f64..1.0, 3)).prop_map(|(config, u)| {
        let sel = config
            .branch_lengths()
            .iter()
            .zip(&u)
            .map(|(&n, f)| 1 + (f * n as f64) as usize)
            .collect();
        (config, PartySelection::new(sel))
    })
}

fn s_born(config: &NetworkConfig, sel: &PartySelection) -> f64 {
    bell_value(&joint_distribution(config, sel).unwrap()).s_value
}

fn physical(m: &ComplexMatrix) -> Result<(), TestCaseError> {
    let tr: Complex64 = (0..m.dim()).map(|i| m.get(i, i)).sum();
    prop_assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-12, "trace {tr}");
    prop_assert!(m.is_hermitian(1e-12));
    prop_assert!(m.is_psd(PSD_TOL));
    Ok(())
}

/// Conditional and averaged Lüders updates return density operators.
pub fn luders_physicality(cases: u32) -> Result<(), String> {
    run(cases, (two_qubit_state(), setting(), 0u8..2, 0u8..2), |(rho, p, y, b)| {
        let state = BranchState::new(rho, 0, 1).unwrap();
        physical(luders_average(&state, &p).unwrap().rho().matrix())?;
        // outcomes of an η = 1 measurement can have probability zero
        if let Ok((post, prob)) = luders_conditional(&state, &p, y, b) {
            prop_assert!((0.0..=1.0).contains(&prob));
            physical(post.rho().matrix())?;
        }
        Ok(())
    })
}

/// Nothing done along the branches changes the center's statistics.
pub fn no_signaling(cases: u32) -> Result<(), String> {
    run(cases, (two_qubit_state(), setting(), network_with_selection(false)), |(rho, p, (config, sel))| {
        let state = BranchState::new(rho, 0, 1).unwrap();
        let before = state.alice_marginal();
        let after = luders_average(&state, &p).unwrap().alice_marginal();
        prop_assert!(before.max_abs_diff(&after) < 1e-12);

        let dist = joint_distribution(&config, &sel).unwrap();
        for x in 0..2u8 {
            for a in 0..2u8 {
                let reference = dist.alice_marginal(x, 0, a);
                for y in 1..1usize << sel.len() {
                    prop_assert!((dist.alice_marginal(x, y, a) - reference).abs() < 1e-12);
                }
            }
        }
        Ok(())
    })
}

/// Correlators of the averaged state match the scalar recursion at every depth.
pub fn recursion_matches_matrix_path(cases: u32) -> Result<(), String> {
    let chain = prop::collection::vec(setting(), 1..=4).prop_map(BranchConfig::new);
    run(cases, (chain, 0.0f64..=1.0), |(branch, v)| {
        let source = SourceSpec::new(v);
        for depth in 0..=branch.len() {
            let matrix = CorrelatorVector::of_state(evolve_source(&source, &branch, depth).unwrap().rho());
            let scalar = evolve_correlators(&source, &branch, depth);
            prop_assert!(matrix.max_abs_diff(&scalar) < 1e-12, "depth {depth}");
        }
        Ok(())
    })
}

/// Pushing a party one step down its chain, past anyone, never raises `S`.
pub fn monotone_in_depth(cases: u32) -> Result<(), String> {
    run(cases, (network_with_selection(false), 0usize..3, setting()), |((config, sel), k, extra)| {
        let k = k % config.branch_count();
        let mut longer = config.clone();
        longer.branches[k].parties.insert(sel.0[k] - 1, extra);
        let mut later = sel.clone();
        later.0[k] += 1;
        let (before, after) = (s_born(&config, &sel), s_born(&longer, &later));
        prop_assert!(after <= before + 1e-12, "{before} -> {after}");
        Ok(())
    })
}

/// `S` scales with the geometric mean of the visibilities, and the closed
/// form tracks it.
pub fn visibility_linearity(cases: u32) -> Result<(), String> {
    let vis = prop::collection::vec(0.0f64..=1.0, 3);
    run(cases, (network_with_selection(true), vis), |((ideal, sel), vis)| {
        let mut noisy = ideal.clone();
        for (s, v) in noisy.sources.iter_mut().zip(&vis) {
            s.visibility = *v;
        }
        let m = ideal.branch_count() as f64;
        let factor: f64 = noisy.sources.iter().map(|s| s.visibility.powf(1.0 / m)).product();
        let s = s_born(&noisy, &sel);
        prop_assert!((s - factor * s_born(&ideal, &sel)).abs() < 1e-10);
        prop_assert!((s - closed_form_s(&noisy, &sel)).abs() < 1e-10);
        Ok(())
    })
}

fn completeness_error(k: &KrausPair) -> f64 {
    let sum = &(&dagger(k.operator(0)) * k.operator(0)) + &(&dagger(k.operator(1)) * k.operator(1));
    sum.max_abs_diff(&ComplexMatrix::identity(2))
}

/// `Σ_b M_b† M_b = 𝟙` for Lüders instruments along any direction and for
/// both meter circuits.
pub fn kraus_completeness(cases: u32) -> Result<(), String> {
    let dir = (0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::TAU);
    run(cases, (0.0f64..=1.0, dir, 0.0f64..=std::f64::consts::FRAC_PI_4), |(eta, (pol, az), t)| {
        let r = [pol.sin() * az.cos(), pol.sin() * az.sin(), pol.cos()];
        let luders = kraus_from_povm(&unsharp_along(eta, r).unwrap()).unwrap();
        prop_assert!(completeness_error(&luders) < 1e-12);
        prop_assert!(completeness_error(&sagnac_kraus(t).unwrap()) < 1e-12);
        prop_assert!(completeness_error(&cnot_circuit_kraus(t).unwrap()) < 1e-12);
        Ok(())
    })
}

/// The interferometer at plate angle θ̃ realises the unsharp σ_Z POVM with
/// `η = cos 2θ̃`, as does the CNOT meter circuit.
pub fn sagnac_equivalence(cases: u32) -> Result<(), String> {
    run(cases, 0.0f64..=std::f64::consts::FRAC_PI_4, |t| {
        let target = unsharp_pauli(sharpness_from_hwp_angle(t), Axis::Z).unwrap();
        prop_assert!(sagnac_kraus(t).unwrap().povm().unwrap().max_abs_diff(&target) < 1e-12);
        prop_assert!(cnot_circuit_kraus(t).unwrap().povm().unwrap().max_abs_diff(&target) < 1e-12);
        Ok(())
    })
}

/// Name and check of every suite, in report order.
#[allow(dead_code)]
pub const SUITES: [(&str, fn(u32) -> Result<(), String>); 7] = [
    ("Lüders physicality", luders_physicality),
    ("no-signaling", no_signaling),
    ("recursion vs matrix path", recursion_matches_matrix_path),
    ("monotonicity in depth", monotone_in_depth),
    ("visibility linearity", visibility_linearity),
    ("Kraus completeness", kraus_completeness),
    ("Sagnac POVM equivalence", sagnac_equivalence),
];
