//! Propagating a source's two-qubit state down its branch.
//!
//! The state of one source is stored as a 4×4 density operator on
//! **branch-party qubit ⊗ Alice qubit**. Outer parties therefore act with
//! `K ⊗ 𝟙`, and every correlator `t_uv = Tr[ρ (σ_u ⊗ σ_v)]` has its first
//! index on the branch side.
//!
//! Two independent routes are provided. The matrix route applies the Lüders
//! instrument of each party (averaged over its uniform input and its outcome).
//! The arithmetic route, [`correlator_recursion`], evolves only the four Z/X
//! correlators:
//!
//! ```text
//! t_zz' = ½(1 + √(1-η_X²)) t_zz      t_xz' = ½(1 + √(1-η_Z²)) t_xz
//! t_zx' = ½(1 + √(1-η_X²)) t_zx      t_xx' = ½(1 + √(1-η_Z²)) t_xx
//! ```

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{kron, pauli_x, pauli_z, ComplexMatrix, DensityOperator, LinalgError};
use crate::measurement::{kraus_from_povm, unsharp_pauli, Axis, MeasurementError};
use crate::network::{BranchConfig, PartySetting, SourceSpec};

/// Outcome probabilities below this are reported as impossible branches.
pub const ZERO_PROBABILITY: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("branch chain exhausted: depth {depth} of {chain_len}")]
    DepthExhausted { depth: usize, chain_len: usize },
    #[error("outcome has probability {0:e}; no post-measurement state")]
    ZeroProbability(f64),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `v |φ⁺⟩⟨φ⁺| + (1 - v) 𝟙/4`.
pub fn noisy_phi_plus(visibility: f64) -> DensityOperator {
    let mut m = ComplexMatrix::identity(4).scale((1.0 - visibility) / 4.0);
    let half_v = Complex64::new(visibility / 2.0, 0.0);
    for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        m.set(i, j, m.get(i, j) + half_v);
    }
    DensityOperator::from_trusted(m)
}

/// State of one source after `depth` parties of its branch have measured.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchState {
    rho: DensityOperator,
    depth: usize,
    chain_len: usize,
}

impl BranchState {
    pub fn new(rho: DensityOperator, depth: usize, chain_len: usize) -> Result<Self, SequenceError> {
        if rho.dim() != 4 {
            return Err(LinalgError::WrongDimension {
                expected: 4,
                got: rho.dim(),
            }
            .into());
        }
        if depth > chain_len {
            return Err(SequenceError::DepthExhausted { depth, chain_len });
        }
        Ok(Self {
            rho,
            depth,
            chain_len,
        })
    }

    /// Fresh state of `source`, about to enter a chain of `chain_len` parties.
    pub fn initial(source: &SourceSpec, chain_len: usize) -> Self {
        Self {
            rho: noisy_phi_plus(source.visibility),
            depth: 0,
            chain_len,
        }
    }

    pub fn rho(&self) -> &DensityOperator {
        &self.rho
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn chain_len(&self) -> usize {
        self.chain_len
    }

    pub fn correlators(&self) -> CorrelatorVector {
        CorrelatorVector::of_state(&self.rho)
    }

    /// Reduced state of Alice's qubit.
    pub fn alice_marginal(&self) -> ComplexMatrix {
        self.rho.matrix().partial_trace_left(2)
    }

    fn advance(&self, rho: ComplexMatrix) -> Result<Self, SequenceError> {
        if self.depth >= self.chain_len {
            return Err(SequenceError::DepthExhausted {
                depth: self.depth,
                chain_len: self.chain_len,
            });
        }
        Ok(Self {
            rho: DensityOperator::from_trusted(rho),
            depth: self.depth + 1,
            chain_len: self.chain_len,
        })
    }
}

/// The four Z/X two-qubit correlators, branch side first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatorVector {
    pub t_zz: f64,
    pub t_zx: f64,
    pub t_xz: f64,
    pub t_xx: f64,
}

impl CorrelatorVector {
    pub fn new(t_zz: f64, t_zx: f64, t_xz: f64, t_xx: f64) -> Self {
        Self { t_zz, t_zx, t_xz, t_xx }
    }

    pub fn of_state(rho: &DensityOperator) -> Self {
        let (z, x) = (pauli_z(), pauli_x());
        let t = |a: &ComplexMatrix, b: &ComplexMatrix| rho.expectation(&kron(a, b));
        Self {
            t_zz: t(&z, &z),
            t_zx: t(&z, &x),
            t_xz: t(&x, &z),
            t_xx: t(&x, &x),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.t_zz - other.t_zz,
            self.t_zx - other.t_zx,
            self.t_xz - other.t_xz,
            self.t_xx - other.t_xx,
        ]
        .iter()
        .fold(0.0, |acc, d| acc.max(d.abs()))
    }
}

/// `½(1 + √(1 - η²))`: fraction of a correlator on the conjugate axis that
/// survives one unsharp measurement of sharpness η.
pub fn survival_factor(eta: f64) -> f64 {
    0.5 * (1.0 + (1.0 - eta * eta).max(0.0).sqrt())
}

/// One step of the correlator recursion; pure arithmetic.
pub fn correlator_recursion(c: CorrelatorVector, setting: &PartySetting) -> CorrelatorVector {
    let keep_z = survival_factor(setting.eta_x);
    let keep_x = survival_factor(setting.eta_z);
    CorrelatorVector {
        t_zz: keep_z * c.t_zz,
        t_zx: keep_z * c.t_zx,
        t_xz: keep_x * c.t_xz,
        t_xx: keep_x * c.t_xx,
    }
}

/// Lüders instrument of one outer party, lifted to branch ⊗ Alice.
#[derive(Debug, Clone)]
pub struct LudersInstrument {
    // [y][b]
    kraus: [[ComplexMatrix; 2]; 2],
    effects: [[ComplexMatrix; 2]; 2],
}

impl LudersInstrument {
    pub fn new(setting: &PartySetting) -> Result<Self, SequenceError> {
        let id = ComplexMatrix::identity(2);
        let lift = |eta: f64, axis: Axis| -> Result<_, SequenceError> {
            let povm = unsharp_pauli(eta, axis)?;
            let k = kraus_from_povm(&povm)?;
            Ok((
                [kron(k.operator(0), &id), kron(k.operator(1), &id)],
                [kron(povm.effect(0), &id), kron(povm.effect(1), &id)],
            ))
        };
        let (kz, ez) = lift(setting.eta_z, Axis::Z)?;
        let (kx, ex) = lift(setting.eta_x, Axis::X)?;
        Ok(Self {
            kraus: [kz, kx],
            effects: [ez, ex],
        })
    }

    /// `√B_{b|y} ⊗ 𝟙`.
    pub fn kraus(&self, y: u8, b: u8) -> &ComplexMatrix {
        &self.kraus[y as usize][b as usize]
    }

    /// `B_{b|y} ⊗ 𝟙`.
    pub fn effect(&self, y: u8, b: u8) -> &ComplexMatrix {
        &self.effects[y as usize][b as usize]
    }

    /// `Tr[(B_{b|y} ⊗ 𝟙) ρ]`.
    pub fn probability(&self, rho: &ComplexMatrix, y: u8, b: u8) -> f64 {
        self.effect(y, b).trace_product(rho).re
    }

    /// Unnormalised post-measurement operator `K ρ K†`.
    pub fn apply(&self, rho: &ComplexMatrix, y: u8, b: u8) -> ComplexMatrix {
        rho.conjugate_by(self.kraus(y, b))
    }

    /// `½ Σ_{y,b} K_{b|y} ρ K_{b|y}†`.
    pub fn average(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(4);
        for y in 0..2 {
            for b in 0..2 {
                acc = &acc + &self.apply(rho, y, b);
            }
        }
        acc.scale(0.5)
    }
}

/// Input- and outcome-averaged Lüders update of one party.
pub fn luders_average(state: &BranchState, setting: &PartySetting) -> Result<BranchState, SequenceError> {
    if state.depth >= state.chain_len {
        return Err(SequenceError::DepthExhausted {
            depth: state.depth,
            chain_len: state.chain_len,
        });
    }
    let instrument = LudersInstrument::new(setting)?;
    state.advance(instrument.average(state.rho.matrix()))
}

/// The averaged update written as three conjugations:
/// `¼[2 + √(1-η_Z²) + √(1-η_X²)] ρ + ¼[1 - √(1-η_Z²)] ZρZ + ¼[1 - √(1-η_X²)] XρX`
/// with Z, X acting on the branch qubit.
pub fn luders_average_closed_form(rho: &ComplexMatrix, setting: &PartySetting) -> ComplexMatrix {
    let rz = (1.0 - setting.eta_z * setting.eta_z).max(0.0).sqrt();
    let rx = (1.0 - setting.eta_x * setting.eta_x).max(0.0).sqrt();
    let id = ComplexMatrix::identity(2);
    let z = kron(&pauli_z(), &id);
    let x = kron(&pauli_x(), &id);
    let keep = rho.scale(0.25 * (2.0 + rz + rx));
    let flip_z = rho.conjugate_by(&z).scale(0.25 * (1.0 - rz));
    let flip_x = rho.conjugate_by(&x).scale(0.25 * (1.0 - rx));
    &(&keep + &flip_z) + &flip_x
}

/// Lüders update conditioned on input `y` and outcome `b`.
///
/// Returns the normalised post-measurement state and the outcome probability
/// `Tr[(B_{b|y} ⊗ 𝟙) ρ]`. Outcomes with probability below
/// [`ZERO_PROBABILITY`] yield [`SequenceError::ZeroProbability`].
pub fn luders_conditional(
    state: &BranchState,
    setting: &PartySetting,
    y: u8,
    b: u8,
) -> Result<(BranchState, f64), SequenceError> {
    let instrument = LudersInstrument::new(setting)?;
    luders_conditional_with(state, &instrument, y, b)
}

/// [`luders_conditional`] with a prebuilt instrument.
pub fn luders_conditional_with(
    state: &BranchState,
    instrument: &LudersInstrument,
    y: u8,
    b: u8,
) -> Result<(BranchState, f64), SequenceError> {
    if state.depth >= state.chain_len {
        return Err(SequenceError::DepthExhausted {
            depth: state.depth,
            chain_len: state.chain_len,
        });
    }
    let p = instrument.probability(state.rho.matrix(), y, b);
    if p < ZERO_PROBABILITY {
        return Err(SequenceError::ZeroProbability(p));
    }
    let post = instrument.apply(state.rho.matrix(), y, b).scale(1.0 / p);
    Ok((state.advance(post)?, p))
}

/// The noisy |φ⁺⟩ of `source` after the first `depth` parties of `branch`.
pub fn evolve_source(
    source: &SourceSpec,
    branch: &BranchConfig,
    depth: usize,
) -> Result<BranchState, SequenceError> {
    if depth > branch.len() {
        return Err(SequenceError::DepthExhausted {
            depth,
            chain_len: branch.len(),
        });
    }
    let mut state = BranchState::initial(source, branch.len());
    for setting in &branch.parties[..depth] {
        state = luders_average(&state, setting)?;
    }
    Ok(state)
}

/// Correlators after `depth` parties, by the arithmetic route only.
pub fn evolve_correlators(source: &SourceSpec, branch: &BranchConfig, depth: usize) -> CorrelatorVector {
    let v = source.visibility;
    branch.parties[..depth]
        .iter()
        .fold(CorrelatorVector::new(v, 0.0, 0.0, v), correlator_recursion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, trace, PSD_TOL};
    use proptest::prelude::*;

    fn phi_plus_state(chain_len: usize) -> BranchState {
        BranchState::initial(&SourceSpec::ideal(), chain_len)
    }

    #[test]
    fn zero_sharpness_leaves_state_alone() {
        let s = phi_plus_state(1);
        let out = luders_average(&s, &PartySetting::symmetric(0.0)).unwrap();
        assert!(out.rho().matrix().max_abs_diff(s.rho().matrix()) < 1e-15);
        assert_eq!(out.depth(), 1);
    }

    #[test]
    fn sharp_party_halves_correlators() {
        let out = luders_average(&phi_plus_state(1), &PartySetting::sharp()).unwrap();
        let c = out.correlators();
        assert!(c.max_abs_diff(&CorrelatorVector::new(0.5, 0.0, 0.0, 0.5)) < 1e-15);
        // ¼(ρ + ZρZ) + ¼(ρ + XρX) for φ⁺.
        let rho = phi_plus_state(1).rho().matrix().clone();
        let z = kron(&pauli_z(), &ComplexMatrix::identity(2));
        let x = kron(&pauli_x(), &ComplexMatrix::identity(2));
        let expected = (&(&rho.scale(2.0) + &rho.conjugate_by(&z)) + &rho.conjugate_by(&x)).scale(0.25);
        assert!(out.rho().matrix().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn operating_sharpness_keeps_eight_tenths() {
        let out = luders_average(&phi_plus_state(2), &PartySetting::symmetric(0.8)).unwrap();
        assert!(out.correlators().max_abs_diff(&CorrelatorVector::new(0.8, 0.0, 0.0, 0.8)) < 1e-15);
    }

    #[test]
    fn depth_is_bounded() {
        let s = luders_average(&phi_plus_state(1), &PartySetting::sharp()).unwrap();
        assert_eq!(
            luders_average(&s, &PartySetting::sharp()),
            Err(SequenceError::DepthExhausted { depth: 1, chain_len: 1 })
        );
        assert!(luders_conditional(&s, &PartySetting::sharp(), 0, 0).is_err());
    }

    #[test]
    fn projective_collapse() {
        let s = phi_plus_state(1);
        for b in 0..2u8 {
            let (post, p) = luders_conditional(&s, &PartySetting::sharp(), 0, b).unwrap();
            assert!((p - 0.5).abs() < 1e-15);
            let mut expected = ComplexMatrix::zeros(4);
            let i = if b == 0 { 0 } else { 3 };
            expected.set(i, i, Complex64::new(1.0, 0.0));
            assert!(post.rho().matrix().max_abs_diff(&expected) < 1e-15);
        }
    }

    #[test]
    fn zero_probability_is_signalled() {
        let (post, _) = luders_conditional(&phi_plus_state(2), &PartySetting::sharp(), 0, 0).unwrap();
        assert!(matches!(
            luders_conditional(&post, &PartySetting::sharp(), 0, 1),
            Err(SequenceError::ZeroProbability(_))
        ));
    }

    #[test]
    fn trivial_conditional() {
        let s = phi_plus_state(1);
        let (post, p) = luders_conditional(&s, &PartySetting::symmetric(0.0), 1, 1).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(post.rho().matrix().max_abs_diff(s.rho().matrix()) < 1e-15);
    }

    #[test]
    fn conditional_branches_average_back() {
        let setting = PartySetting::symmetric(0.8);
        let s = phi_plus_state(1);
        let mut avg = ComplexMatrix::zeros(4);
        for y in 0..2 {
            for b in 0..2 {
                let (post, p) = luders_conditional(&s, &setting, y, b).unwrap();
                assert!((p - 0.5).abs() < 1e-15);
                avg = &avg + &post.rho().matrix().scale(0.5 * p);
            }
        }
        let direct = luders_average(&s, &setting).unwrap();
        assert!(avg.max_abs_diff(direct.rho().matrix()) < 1e-12);
    }

    #[test]
    fn recursion_examples() {
        let phi = CorrelatorVector::new(1.0, 0.0, 0.0, 1.0);
        let c = correlator_recursion(phi, &PartySetting::symmetric(0.8));
        assert!(c.max_abs_diff(&CorrelatorVector::new(0.8, 0.0, 0.0, 0.8)) < 1e-15);
        assert_eq!(correlator_recursion(phi, &PartySetting::symmetric(0.0)), phi);
        let c = correlator_recursion(phi, &PartySetting::new(1.0, 0.0));
        assert!(c.max_abs_diff(&CorrelatorVector::new(1.0, 0.0, 0.0, 0.5)) < 1e-15);
    }

    #[test]
    fn evolve_source_examples() {
        let chain = BranchConfig::new(vec![PartySetting::symmetric(0.8), PartySetting::sharp()]);
        let s0 = evolve_source(&SourceSpec::ideal(), &chain, 0).unwrap();
        let phi = noisy_phi_plus(1.0);
        assert_eq!(s0.rho(), &phi);
        assert!((phi.matrix().get(0, 3).re - 0.5).abs() < 1e-16);
        let s1 = evolve_source(&SourceSpec::ideal(), &chain, 1).unwrap();
        assert!(s1.correlators().max_abs_diff(&CorrelatorVector::new(0.8, 0.0, 0.0, 0.8)) < 1e-15);
        let noisy = evolve_source(&SourceSpec::new(0.9), &chain, 0).unwrap();
        let expected = &phi.matrix().scale(0.9) + &ComplexMatrix::identity(4).scale(0.025);
        assert!(noisy.rho().matrix().max_abs_diff(&expected) < 1e-15);
        assert!(evolve_source(&SourceSpec::ideal(), &chain, 3).is_err());
    }

    fn random_state() -> impl Strategy<Value = DensityOperator> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16).prop_map(|v| {
            let g = ComplexMatrix::new(4, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap();
            let m = &g * &dagger(&g);
            let t = trace(&m).re;
            DensityOperator::new(m.scale(1.0 / t)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn average_is_physical(rho in random_state(), ez in 0.0f64..=1.0, ex in 0.0f64..=1.0) {
            let s = BranchState::new(rho, 0, 1).unwrap();
            let out = luders_average(&s, &PartySetting::new(ez, ex)).unwrap();
            prop_assert!(DensityOperator::new(out.rho().matrix().clone()).is_ok());
            prop_assert!(out.rho().matrix().is_psd(PSD_TOL));
        }

        #[test]
        fn kraus_sum_equals_three_term_form(rho in random_state(), ez in 0.0f64..=1.0, ex in 0.0f64..=1.0) {
            let setting = PartySetting::new(ez, ex);
            let s = BranchState::new(rho.clone(), 0, 1).unwrap();
            let out = luders_average(&s, &setting).unwrap();
            let closed = luders_average_closed_form(rho.matrix(), &setting);
            prop_assert!(out.rho().matrix().max_abs_diff(&closed) < 1e-12);
        }

        #[test]
        fn matrix_and_arithmetic_routes_agree(rho in random_state(), ez in 0.0f64..=1.0, ex in 0.0f64..=1.0) {
            let setting = PartySetting::new(ez, ex);
            let s = BranchState::new(rho, 0, 1).unwrap();
            let via_matrix = luders_average(&s, &setting).unwrap().correlators();
            let via_recursion = correlator_recursion(s.correlators(), &setting);
            prop_assert!(via_matrix.max_abs_diff(&via_recursion) < 1e-12);
        }

        #[test]
        fn alice_marginal_is_untouched(rho in random_state(), ez in 0.0f64..=1.0, ex in 0.0f64..=1.0) {
            let s = BranchState::new(rho, 0, 1).unwrap();
            let out = luders_average(&s, &PartySetting::new(ez, ex)).unwrap();
            prop_assert!(out.alice_marginal().max_abs_diff(&s.alice_marginal()) < 1e-12);
        }
    }
}
