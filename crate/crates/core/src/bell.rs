//! Outcome statistics and the star-network Bell quantity.
//!
//! For a selection `s` the central party and the selected branch parties see
//! the product state `χ_s = ⊗_k ρ_k^{(s_k - 1)}`. From the distribution
//! `p(a, b | x, y)` we form
//!
//! ```text
//! I_s = 2^-m Σ_y Σ_{a,b} (-1)^{a + Σb}        p(a, b | 0, y)
//! J_s = 2^-m Σ_y Σ_{a,b} (-1)^{a + Σb + Σy}   p(a, b | 1, y)
//! S_s = |I_s|^{1/m} + |J_s|^{1/m}
//! ```
//!
//! Network-local models obey `S_s ≤ 1`; quantum theory reaches `√2`.

use std::f64::consts::SQRT_2;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{kron, kron_all, pauli_x, pauli_z, ComplexMatrix};
use crate::measurement::{unsharp_pauli, Axis, CentralMeasurement, MeasurementError};
use crate::network::{NetworkConfig, NetworkError, PartySelection};
use crate::sequence::{evolve_source, SequenceError};

/// Normalisation slack on each `(x, y)` slice.
pub const SLICE_TOL: f64 = 1e-10;

/// Largest `m` for the exhaustive deterministic-strategy search.
pub const DETERMINISTIC_MAX_BRANCHES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("branch {branch} has {len} parties; a CHSH pair needs at least 2")]
    ChainTooShort { branch: usize, len: usize },
    #[error("branch index {index} out of range for a {branches}-branch network")]
    BranchOutOfRange { index: usize, branches: usize },
    #[error("CHSH value {value} outside the projective-curve domain [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("exhaustive deterministic search supports m ≤ {max}, got {m}")]
    TooManyBranches { m: usize, max: usize },
}

/// `p(a, b | x, y)` for `m` selected branch parties.
///
/// `y` and `b` are bit masks with bit `k` belonging to branch `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    m: usize,
    selection: PartySelection,
    // index: ((x * 2^m + y) * 2 + a) * 2^m + b
    table: Vec<f64>,
}

impl JointDistribution {
    /// All-zero table, to be filled with [`set`](Self::set).
    pub fn zeros(m: usize, selection: PartySelection) -> Self {
        let w = 1usize << m;
        Self {
            m,
            selection,
            table: vec![0.0; 4 * w * w],
        }
    }

    /// Builds a table from `f(x, y, a, b)`.
    pub fn from_fn(m: usize, selection: PartySelection, mut f: impl FnMut(u8, usize, u8, usize) -> f64) -> Self {
        let mut d = Self::zeros(m, selection);
        let w = 1usize << m;
        for x in 0..2u8 {
            for y in 0..w {
                for a in 0..2u8 {
                    for b in 0..w {
                        d.set(x, y, a, b, f(x, y, a, b));
                    }
                }
            }
        }
        d
    }

    fn index(&self, x: u8, y: usize, a: u8, b: usize) -> usize {
        let w = 1usize << self.m;
        ((x as usize * w + y) * 2 + a as usize) * w + b
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn selection(&self) -> &PartySelection {
        &self.selection
    }

    pub fn get(&self, x: u8, y: usize, a: u8, b: usize) -> f64 {
        self.table[self.index(x, y, a, b)]
    }

    pub fn set(&mut self, x: u8, y: usize, a: u8, b: usize, p: f64) {
        let i = self.index(x, y, a, b);
        self.table[i] = p;
    }

    /// Sum of the `(x, y)` slice.
    pub fn slice_total(&self, x: u8, y: usize) -> f64 {
        let w = 1usize << self.m;
        (0..2u8)
            .flat_map(|a| (0..w).map(move |b| (a, b)))
            .map(|(a, b)| self.get(x, y, a, b))
            .sum()
    }

    /// `p(a | x, y)`, summed over every branch outcome.
    pub fn alice_marginal(&self, x: u8, y: usize, a: u8) -> f64 {
        (0..1usize << self.m).map(|b| self.get(x, y, a, b)).sum()
    }

    /// Entries in [0, 1] and every slice normalised within [`SLICE_TOL`].
    pub fn is_normalized(&self) -> bool {
        let w = 1usize << self.m;
        self.table.iter().all(|&p| (-SLICE_TOL..=1.0 + SLICE_TOL).contains(&p))
            && (0..2u8).all(|x| (0..w).all(|y| (self.slice_total(x, y) - 1.0).abs() < SLICE_TOL))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .fold(0.0, |acc, (p, q)| acc.max((p - q).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    ClosedForm,
    Sampled,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::ClosedForm => "closed_form",
            Method::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellReport {
    pub i_s: f64,
    pub j_s: f64,
    pub s_value: f64,
    pub selection: PartySelection,
    /// Zero-based indices of the branches the selection refers to.
    pub branches: Vec<usize>,
    pub method: Method,
    pub std_error: Option<f64>,
    /// Set when the error bar rests on fewer than two bootstrap resamples.
    pub degenerate_error: bool,
}

impl BellReport {
    /// `|I|^{1/m} + |J|^{1/m}`.
    pub fn s_from(i_s: f64, j_s: f64, m: usize) -> f64 {
        let r = 1.0 / m as f64;
        i_s.abs().powf(r) + j_s.abs().powf(r)
    }

    /// Selection label in a network of `total` branches, `*` for unused ones.
    pub fn label(&self, total: usize) -> String {
        self.selection.label_in(&self.branches, total)
    }
}

/// Sequential CHSH values of one branch against the unwired central party.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChshPair {
    pub branch: usize,
    pub chsh1: f64,
    pub chsh2: f64,
    pub std_error1: Option<f64>,
    pub std_error2: Option<f64>,
    /// `chsh2 - projective_bound(chsh1)` when `chsh1` lies on the curve's domain.
    pub bound_margin: Option<f64>,
    pub bound_margin_std_error: Option<f64>,
}

impl ChshPair {
    pub fn new(branch: usize, chsh1: f64, chsh2: f64) -> Self {
        Self {
            branch,
            chsh1,
            chsh2,
            std_error1: None,
            std_error2: None,
            bound_margin: projective_bound(chsh1).ok().map(|b| chsh2 - b),
            bound_margin_std_error: None,
        }
    }
}

fn branch_operator(config: &NetworkConfig, branch: usize, position: usize, y: u8, b: u8) -> Result<ComplexMatrix, BellError> {
    let party = config.party(branch, position);
    let eta = if y == 0 { party.eta_z } else { party.eta_x };
    Ok(unsharp_pauli(eta, Axis::from_input(y))?.effect(b).clone())
}

/// Exact `p(a, b | x, y)` by the Born rule on the full recycled state `χ_s`.
pub fn joint_distribution(config: &NetworkConfig, sel: &PartySelection) -> Result<JointDistribution, BellError> {
    config.check_selection(sel)?;
    let m = config.branch_count();
    let w = 1usize << m;

    let states = config
        .branches
        .iter()
        .zip(&config.sources)
        .zip(sel.positions())
        .map(|((branch, source), &s)| evolve_source(source, branch, s - 1))
        .collect::<Result<Vec<_>, _>>()?;
    // Qubits come out as (B_1, A_1, B_2, A_2, …); regroup to (B_1..B_m, A_1..A_m).
    let chi = kron_all(states.iter().map(|s| s.rho().matrix()));
    let order: Vec<usize> = (0..m).map(|k| 2 * k).chain((0..m).map(|k| 2 * k + 1)).collect();
    let chi = chi.permute_qubits(&order);

    let central = CentralMeasurement::for_network(config);
    let alice: Vec<Vec<ComplexMatrix>> = (0..2u8).map(|x| (0..2u8).map(|a| central.effect(x, a)).collect()).collect();

    // effects[k][y][b] for the selected party of branch k
    let effects = (0..m)
        .map(|k| {
            (0..2u8)
                .map(|y| (0..2u8).map(|b| branch_operator(config, k, sel.0[k], y, b)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut dist = JointDistribution::zeros(m, sel.clone());
    for y in 0..w {
        for b in 0..w {
            let outer = kron_all((0..m).map(|k| &effects[k][(y >> k) & 1][(b >> k) & 1]));
            for x in 0..2u8 {
                for a in 0..2u8 {
                    let op = kron(&outer, &alice[x as usize][a as usize]);
                    dist.set(x, y, a, b, op.trace_product(&chi).re);
                }
            }
        }
    }
    Ok(dist)
}

fn parity(bits: usize) -> i32 {
    if bits.count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// `(I_s, J_s)` of a distribution.
pub fn bell_correlators(dist: &JointDistribution) -> (f64, f64) {
    let w = 1usize << dist.m;
    let mut i_s = 0.0;
    let mut j_s = 0.0;
    for y in 0..w {
        for a in 0..2u8 {
            for b in 0..w {
                let sign = parity(b) * if a == 0 { 1 } else { -1 };
                i_s += sign as f64 * dist.get(0, y, a, b);
                j_s += (sign * parity(y)) as f64 * dist.get(1, y, a, b);
            }
        }
    }
    (i_s / w as f64, j_s / w as f64)
}

/// `I_s`, `J_s` and `S_s` of a distribution, labelled exact.
pub fn bell_value(dist: &JointDistribution) -> BellReport {
    let (i_s, j_s) = bell_correlators(dist);
    BellReport {
        i_s,
        j_s,
        s_value: BellReport::s_from(i_s, j_s, dist.m),
        selection: dist.selection.clone(),
        branches: (0..dist.m).collect(),
        method: Method::Exact,
        std_error: None,
        degenerate_error: false,
    }
}

/// Per-branch factor of the closed form for a party at one-based `depth`,
/// including the source visibility.
pub fn closed_form_branch_term(config: &NetworkConfig, branch: usize, depth: usize) -> f64 {
    let chain = &config.branches[branch].parties;
    let f = |eta: f64| 1.0 + (1.0 - eta * eta).max(0.0).sqrt();
    let (mut keep_z, mut keep_x) = (1.0, 1.0);
    for p in &chain[..depth - 1] {
        keep_z *= f(p.eta_x);
        keep_x *= f(p.eta_z);
    }
    let p = chain[depth - 1];
    let v = config.sources[branch].visibility;
    let (c, s) = (config.theta.cos(), config.theta.sin());
    v * 2f64.powi(1 - depth as i32) * (p.eta_z * c * keep_z + p.eta_x * s * keep_x)
}

/// `S_s` from the product formula. Sources with `v < 1` contribute `v^{1/m}`.
pub fn closed_form_s(config: &NetworkConfig, sel: &PartySelection) -> f64 {
    let m = sel.len();
    let r = 1.0 / m as f64;
    sel.positions()
        .iter()
        .enumerate()
        .map(|(k, &s)| closed_form_branch_term(config, k, s).abs().powf(r))
        .product()
}

/// [`closed_form_s`] wrapped as a report. `I_s = J_s = ±½^m ∏ term_k`.
pub fn closed_form_report(config: &NetworkConfig, sel: &PartySelection) -> BellReport {
    let m = sel.len();
    let i_s: f64 = sel
        .positions()
        .iter()
        .enumerate()
        .map(|(k, &s)| 0.5 * closed_form_branch_term(config, k, s))
        .product();
    BellReport {
        i_s,
        j_s: i_s,
        s_value: closed_form_s(config, sel),
        selection: sel.clone(),
        branches: (0..m).collect(),
        method: Method::ClosedForm,
        std_error: None,
        degenerate_error: false,
    }
}

/// `CHSH_j = Σ_{x,y} (-1)^{xy} ⟨A_x ⊗ B_{k,j,y}⟩` on the state reaching party `j`,
/// for every party of `branch`.
pub fn chsh_values(config: &NetworkConfig, branch: usize) -> Result<Vec<f64>, BellError> {
    if branch >= config.branch_count() {
        return Err(BellError::BranchOutOfRange {
            index: branch,
            branches: config.branch_count(),
        });
    }
    let chain = &config.branches[branch];
    let source = &config.sources[branch];
    let (c, s) = (config.theta.cos(), config.theta.sin());
    let alice = |x: u8| {
        let sign = if x == 0 { 1.0 } else { -1.0 };
        &pauli_z().scale(c) + &pauli_x().scale(sign * s)
    };
    (0..chain.len())
        .map(|j| {
            let rho = evolve_source(source, chain, j)?;
            let p = chain.parties[j];
            let bob = [pauli_z().scale(p.eta_z), pauli_x().scale(p.eta_x)];
            let mut total = 0.0;
            for x in 0..2u8 {
                for (y, b_obs) in bob.iter().enumerate() {
                    let sign = if x == 1 && y == 1 { -1.0 } else { 1.0 };
                    total += sign * rho.rho().expectation(&kron(b_obs, &alice(x)));
                }
            }
            Ok(total)
        })
        .collect()
}

/// First two sequential CHSH values of `branch`.
pub fn chsh_pair(config: &NetworkConfig, branch: usize) -> Result<ChshPair, BellError> {
    if branch < config.branch_count() && config.branches[branch].len() < 2 {
        return Err(BellError::ChainTooShort {
            branch,
            len: config.branches[branch].len(),
        });
    }
    let v = chsh_values(config, branch)?;
    Ok(ChshPair::new(branch, v[0], v[1]))
}

/// Lower end of the projective trade-off curve's domain.
pub const PROJECTIVE_LO: f64 = 2.0;

/// Upper end, `2√10 - 4`, where the curve meets the local bound.
pub fn projective_hi() -> f64 {
    2.0 * 10f64.sqrt() - 4.0
}

/// Best second CHSH value reachable with projective measurements and shared
/// randomness given the first: `√10 - CHSH₁/2`.
pub fn projective_bound(chsh1: f64) -> Result<f64, BellError> {
    const SLACK: f64 = 1e-12;
    let hi = projective_hi();
    if !(chsh1 >= PROJECTIVE_LO - SLACK && chsh1 <= hi + SLACK) {
        return Err(BellError::OutOfRange {
            value: chsh1,
            lo: PROJECTIVE_LO,
            hi,
        });
    }
    Ok(10f64.sqrt() - chsh1 / 2.0)
}

/// Joint distribution of a deterministic strategy: the central party answers
/// `a(x)`, branch party `k` answers `b_k(y_k)`. Functions `{0,1} → {0,1}` are
/// encoded as 2-bit masks, bit `i` holding the answer to input `i`.
pub fn deterministic_distribution(alice: u8, branch_fns: &[u8]) -> JointDistribution {
    let m = branch_fns.len();
    JointDistribution::from_fn(m, PartySelection::first_parties(m), |x, y, a, b| {
        let a_out = (alice >> x) & 1;
        let b_out = branch_fns
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &f)| acc | ((((f >> ((y >> k) & 1)) & 1) as usize) << k));
        if a == a_out && b == b_out {
            1.0
        } else {
            0.0
        }
    })
}

/// Largest `S` over every deterministic assignment for `m` branches.
///
/// This only probes the extreme points of the local set; since `S` is not
/// linear in `p`, it is a consistency check of the bound, not a proof of it.
pub fn deterministic_max_s(m: usize) -> Result<f64, BellError> {
    if m == 0 || m > DETERMINISTIC_MAX_BRANCHES {
        return Err(BellError::TooManyBranches {
            m,
            max: DETERMINISTIC_MAX_BRANCHES,
        });
    }
    let mut best = f64::NEG_INFINITY;
    for alice in 0..4u8 {
        for code in 0..(1usize << (2 * m)) {
            let fns: Vec<u8> = (0..m).map(|k| ((code >> (2 * k)) & 3) as u8).collect();
            best = best.max(bell_value(&deterministic_distribution(alice, &fns)).s_value);
        }
    }
    Ok(best)
}

/// Tsirelson value of the star-network quantity.
pub const QUANTUM_MAX_S: f64 = SQRT_2;
