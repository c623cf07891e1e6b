//! Measurement objects of the protocol.
//!
//! Outer parties measure unsharp Pauli observables `η σ_Z` (input 0) and
//! `η σ_X` (input 1), with effects `½(𝟙 ± η σ)`; their Lüders instruments use
//! the PSD square roots of those effects. The centre measures each of its `m`
//! qubits projectively along `cos θ σ_Z ± sin θ σ_X` and outputs the parity of
//! the `m` bits.
//!
//! The Sagnac helpers model the optical implementation. The system qubit
//! (polarisation) couples to a meter qubit (path); a half-wave plate at angle
//! θ̃ sets the sharpness η = cos 2θ̃. In the optical setup the four detectors
//! D₁…D₄ of a branch report the outcome pairs (b₁, b₂) = (0,0), (0,1), (1,1)
//! and (1,0), in that order.

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{
    dagger, kron, kron_all, pauli_x, pauli_y, pauli_z, psd_sqrt_2x2, ComplexMatrix, LinalgError,
};
use crate::network::NetworkConfig;

/// Completeness / idempotency tolerance.
pub const COMPLETENESS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("sharpness {0} outside [0, 1]")]
    SharpnessOutOfRange(f64),
    #[error("half-wave-plate angle {0} outside [0, π/4]")]
    AngleOutOfRange(f64),
    #[error("effects do not sum to the identity (deviation {0:e})")]
    Incomplete(f64),
    #[error("effects must be 2x2 operators")]
    NotQubit,
    #[error("Bloch direction must be a unit vector")]
    NotUnitDirection,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Measured observable of an outer party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Z,
    X,
}

impl Axis {
    /// Input `y = 0` measures Z, `y = 1` measures X.
    pub fn from_input(y: u8) -> Self {
        if y == 0 {
            Axis::Z
        } else {
            Axis::X
        }
    }

    pub fn pauli(self) -> ComplexMatrix {
        match self {
            Axis::Z => pauli_z(),
            Axis::X => pauli_x(),
        }
    }
}

/// Two-outcome qubit POVM.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPovm {
    effect0: ComplexMatrix,
    effect1: ComplexMatrix,
}

impl BinaryPovm {
    pub fn new(effect0: ComplexMatrix, effect1: ComplexMatrix) -> Result<Self, MeasurementError> {
        if effect0.dim() != 2 || effect1.dim() != 2 {
            return Err(MeasurementError::NotQubit);
        }
        let deviation = (&effect0 + &effect1).max_abs_diff(&ComplexMatrix::identity(2));
        if deviation > COMPLETENESS_TOL {
            return Err(MeasurementError::Incomplete(deviation));
        }
        for e in [&effect0, &effect1] {
            // Reuses the square-root checks: Hermitian and PSD.
            psd_sqrt_2x2(e)?;
        }
        Ok(Self { effect0, effect1 })
    }

    pub fn effect(&self, outcome: u8) -> &ComplexMatrix {
        if outcome == 0 {
            &self.effect0
        } else {
            &self.effect1
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.effect0
            .max_abs_diff(&other.effect0)
            .max(self.effect1.max_abs_diff(&other.effect1))
    }
}

/// Kraus operators of a two-outcome instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausPair {
    m0: ComplexMatrix,
    m1: ComplexMatrix,
}

impl KrausPair {
    pub fn new(m0: ComplexMatrix, m1: ComplexMatrix) -> Result<Self, MeasurementError> {
        if m0.dim() != 2 || m1.dim() != 2 {
            return Err(MeasurementError::NotQubit);
        }
        let sum = &(&dagger(&m0) * &m0) + &(&dagger(&m1) * &m1);
        let deviation = sum.max_abs_diff(&ComplexMatrix::identity(2));
        if deviation > COMPLETENESS_TOL {
            return Err(MeasurementError::Incomplete(deviation));
        }
        Ok(Self { m0, m1 })
    }

    pub fn operator(&self, outcome: u8) -> &ComplexMatrix {
        if outcome == 0 {
            &self.m0
        } else {
            &self.m1
        }
    }

    /// The POVM `{M_b† M_b}` this instrument realises.
    pub fn povm(&self) -> Result<BinaryPovm, MeasurementError> {
        BinaryPovm::new(&dagger(&self.m0) * &self.m0, &dagger(&self.m1) * &self.m1)
    }

    /// Instrument obtained by rotating the system with `u` before measuring:
    /// `M_b → M_b U`, so the effects become `U† E_b U`.
    pub fn after_rotation(&self, u: &ComplexMatrix) -> Result<Self, MeasurementError> {
        Self::new(&self.m0 * u, &self.m1 * u)
    }
}

fn check_sharpness(eta: f64) -> Result<(), MeasurementError> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(MeasurementError::SharpnessOutOfRange(eta))
    }
}

/// `effect_b = ½(𝟙 + (-1)^b η σ_axis)`.
pub fn unsharp_pauli(eta: f64, axis: Axis) -> Result<BinaryPovm, MeasurementError> {
    check_sharpness(eta)?;
    unsharp_along_operator(eta, &axis.pauli())
}

/// Unsharp measurement along an arbitrary Bloch direction `r`, |r| = 1.
pub fn unsharp_along(eta: f64, direction: [f64; 3]) -> Result<BinaryPovm, MeasurementError> {
    check_sharpness(eta)?;
    let norm = direction.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(MeasurementError::NotUnitDirection);
    }
    let [rx, ry, rz] = direction;
    let sigma = &(&pauli_x().scale(rx) + &pauli_y().scale(ry)) + &pauli_z().scale(rz);
    unsharp_along_operator(eta, &sigma)
}

fn unsharp_along_operator(eta: f64, sigma: &ComplexMatrix) -> Result<BinaryPovm, MeasurementError> {
    let id = ComplexMatrix::identity(2);
    let e0 = (&id + &sigma.scale(eta)).scale(0.5);
    let e1 = (&id - &sigma.scale(eta)).scale(0.5);
    BinaryPovm::new(e0, e1)
}

/// Lüders instrument: `M_b = √E_b`.
pub fn kraus_from_povm(p: &BinaryPovm) -> Result<KrausPair, MeasurementError> {
    KrausPair::new(psd_sqrt_2x2(&p.effect0)?, psd_sqrt_2x2(&p.effect1)?)
}

/// Sharpness realised by a meter prepared at half-wave-plate angle θ̃.
pub fn sharpness_from_hwp_angle(theta_hwp: f64) -> f64 {
    (2.0 * theta_hwp).cos()
}

/// Inverse of [`sharpness_from_hwp_angle`] on θ̃ ∈ [0, π/4].
pub fn hwp_angle_from_sharpness(eta: f64) -> Result<f64, MeasurementError> {
    check_sharpness(eta)?;
    Ok(0.5 * eta.acos())
}

fn check_hwp_angle(theta: f64) -> Result<(), MeasurementError> {
    if (0.0..=std::f64::consts::FRAC_PI_4 + 1e-15).contains(&theta) {
        Ok(())
    } else {
        Err(MeasurementError::AngleOutOfRange(theta))
    }
}

fn ket_bra(row: usize, col: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2);
    m.set(row, col, Complex64::new(1.0, 0.0));
    m
}

/// Meter-side operator `⟨b_m| U |0_m⟩` of a system ⊗ meter unitary.
fn meter_block(u: &ComplexMatrix, meter_out: usize, meter_in: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(2);
    for s_out in 0..2 {
        for s_in in 0..2 {
            out.set(s_out, s_in, u.get(2 * s_out + meter_out, 2 * s_in + meter_in));
        }
    }
    out
}

/// CNOT with the system (left factor) as control and the meter as target.
fn cnot_system_controls() -> ComplexMatrix {
    &kron(&ket_bra(0, 0), &ComplexMatrix::identity(2)) + &kron(&ket_bra(1, 1), &pauli_x())
}

/// CNOT with the meter (right factor) as control and the system as target.
fn cnot_meter_controls() -> ComplexMatrix {
    &kron(&ComplexMatrix::identity(2), &ket_bra(0, 0)) + &kron(&pauli_x(), &ket_bra(1, 1))
}

/// Real rotation `S(θ)` with `S(θ)|0⟩ = cos θ|0⟩ + sin θ|1⟩`.
fn rotation(theta: f64) -> ComplexMatrix {
    let (s, c) = theta.sin_cos();
    ComplexMatrix::from_real(2, &[c, -s, s, c]).unwrap()
}

/// Kraus pair of the meter circuit: rotate the meter to `S(θ̃)|0⟩`, apply a
/// system-controlled CNOT, read the meter.
pub fn cnot_circuit_kraus(theta_hwp: f64) -> Result<KrausPair, MeasurementError> {
    check_hwp_angle(theta_hwp)?;
    let prep = kron(&ComplexMatrix::identity(2), &rotation(theta_hwp));
    let u = &cnot_system_controls() * &prep;
    KrausPair::new(meter_block(&u, 0, 0), meter_block(&u, 1, 0))
}

/// The Sagnac interferometer unitary on system ⊗ meter, in closed form:
///
/// ```text
/// (cos θ̃|0⟩⟨0| + sin θ̃|1⟩⟨1|) ⊗ |0⟩⟨0| + (−sin θ̃|0⟩⟨1| + cos θ̃|1⟩⟨0|) ⊗ |0⟩⟨1|
/// + (sin θ̃|0⟩⟨0| + cos θ̃|1⟩⟨1|) ⊗ |1⟩⟨0| + (cos θ̃|0⟩⟨1| − sin θ̃|1⟩⟨0|) ⊗ |1⟩⟨1|
/// ```
pub fn sagnac_unitary(theta_hwp: f64) -> ComplexMatrix {
    let (s, c) = theta_hwp.sin_cos();
    let blocks = [
        (&ket_bra(0, 0).scale(c) + &ket_bra(1, 1).scale(s), ket_bra(0, 0)),
        (&ket_bra(0, 1).scale(-s) + &ket_bra(1, 0).scale(c), ket_bra(0, 1)),
        (&ket_bra(0, 0).scale(s) + &ket_bra(1, 1).scale(c), ket_bra(1, 0)),
        (&ket_bra(0, 1).scale(c) + &ket_bra(1, 0).scale(-s), ket_bra(1, 1)),
    ];
    blocks
        .iter()
        .map(|(sys, meter)| kron(sys, meter))
        .reduce(|a, b| &a + &b)
        .unwrap()
}

/// The Sagnac unitary assembled from its optical elements:
/// `C_ms · C_sm · ((S(θ̃) σ_Z) ⊗ 𝟙) · C_ms · C_sm`.
///
/// Agrees with [`sagnac_unitary`] on every meter-|0⟩ input column, which is
/// all the instrument depends on.
pub fn sagnac_unitary_from_gates(theta_hwp: f64) -> ComplexMatrix {
    let c_sm = cnot_system_controls();
    let c_ms = cnot_meter_controls();
    let plate = kron(&(&rotation(theta_hwp) * &pauli_z()), &ComplexMatrix::identity(2));
    [&c_sm, &plate, &c_ms, &c_sm]
        .into_iter()
        .fold(c_ms.clone(), |acc, f| &acc * f)
}

/// Kraus pair `M_b = ⟨b_m| U_Sagnac |0_m⟩`:
/// `M₀ = cos θ̃|0⟩⟨0| + sin θ̃|1⟩⟨1|`, `M₁ = sin θ̃|0⟩⟨0| + cos θ̃|1⟩⟨1|`.
pub fn sagnac_kraus(theta_hwp: f64) -> Result<KrausPair, MeasurementError> {
    check_hwp_angle(theta_hwp)?;
    let u = sagnac_unitary(theta_hwp);
    KrausPair::new(meter_block(&u, 0, 0), meter_block(&u, 1, 0))
}

/// Hadamard: rotating with it before a Z readout measures σ_X.
pub fn hadamard() -> ComplexMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_real(2, &[h, h, h, -h]).unwrap()
}

/// `(𝟙 − iσ_X)/√2`: rotating with it before a Z readout measures σ_Y.
pub fn y_readout_rotation() -> ComplexMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::new(
        2,
        vec![
            Complex64::new(h, 0.0),
            Complex64::new(0.0, -h),
            Complex64::new(0.0, -h),
            Complex64::new(h, 0.0),
        ],
    )
    .unwrap()
}

/// `Π_{a|x} = ½(𝟙 + (-1)^a (cos θ σ_Z + (-1)^x sin θ σ_X))`.
pub fn alice_projector(theta: f64, x: u8, a: u8) -> ComplexMatrix {
    let sign_a = if a == 0 { 1.0 } else { -1.0 };
    let sign_x = if x == 0 { 1.0 } else { -1.0 };
    let (s, c) = theta.sin_cos();
    let n = &pauli_z().scale(c) + &pauli_x().scale(sign_x * s);
    (&ComplexMatrix::identity(2) + &n.scale(sign_a)).scale(0.5)
}

/// Alice's measurement kept factorised: one sharp qubit measurement per
/// branch, wired by parity.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralMeasurement {
    branches: usize,
    // projectors[x][a_k]
    projectors: [[ComplexMatrix; 2]; 2],
}

impl CentralMeasurement {
    pub fn new(theta: f64, branches: usize) -> Self {
        let p = |x, a| alice_projector(theta, x, a);
        Self {
            branches,
            projectors: [[p(0, 0), p(0, 1)], [p(1, 0), p(1, 1)]],
        }
    }

    pub fn for_network(config: &NetworkConfig) -> Self {
        Self::new(config.theta, config.branch_count())
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    /// Π^{(k)}_{a_k|x}; identical for every branch.
    pub fn projector(&self, x: u8, a_k: u8) -> &ComplexMatrix {
        &self.projectors[x as usize][a_k as usize]
    }

    /// Parity wiring a = a₁ ⊕ … ⊕ a_m.
    pub fn wire(outcomes: &[u8]) -> u8 {
        outcomes.iter().fold(0, |acc, &a| acc ^ (a & 1))
    }

    /// The monolithic 2^m-dimensional effect A_{a|x}; qubit k is branch k.
    pub fn effect(&self, x: u8, a: u8) -> ComplexMatrix {
        let m = self.branches;
        let mut total = ComplexMatrix::zeros(1 << m);
        for bits in 0..(1usize << m) {
            let outcomes: Vec<u8> = (0..m).map(|k| ((bits >> (m - 1 - k)) & 1) as u8).collect();
            if Self::wire(&outcomes) != a {
                continue;
            }
            let term = kron_all(outcomes.iter().map(|&ak| self.projector(x, ak)));
            total = &total + &term;
        }
        total
    }
}

/// A_{a|x} for the network's angle and branch count.
pub fn central_effect(config: &NetworkConfig, x: u8, a: u8) -> ComplexMatrix {
    CentralMeasurement::for_network(config).effect(x, a)
}
