//! Sharpness and angle search for simultaneous violations.
//!
//! The objective is built from the product formula for `S_s`. Because that
//! formula factorises over branches, the worst case over all selections is
//! `∏_k (min_j term_{k,j})^{1/m}` and the average is `∏_k (mean_j term_{k,j}^{1/m})`.
//!
//! Search is coordinate ascent with golden-section line searches, restarted
//! from random points. A pure minimum over selections has ridges along which
//! every single-coordinate move loses, so each start first climbs a sequence
//! of soft-min surrogates `-τ log Σ exp(-S_s/τ)` with shrinking `τ` and
//! finishes on the exact objective.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bell::closed_form_branch_term;
use crate::network::{BranchConfig, NetworkConfig, PartySetting, SourceSpec};

/// Relative tolerance of the golden-section searches.
const LINE_TOL: f64 = 1e-11;
/// Sweeps per smoothing level before giving up on further progress.
const MAX_SWEEPS: usize = 200;
/// Smoothing schedule; the last entry is the exact objective.
const TEMPERATURES: [f64; 9] = [5e-2, 1e-2, 2e-3, 5e-4, 1e-4, 2e-5, 4e-6, 8e-7, 0.0];
/// Parameters within this distance of a bound are tried exactly on it.
const SNAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    /// Every `η^Z_{k,j}`, `η^X_{k,j}` free.
    None,
    /// `η^Z_{k,j} = η^X_{k,j} = η_j` for all branches.
    PerDepth,
    /// A single `η` for every party and axis.
    Full,
}

impl Symmetry {
    pub fn as_str(self) -> &'static str {
        match self {
            Symmetry::None => "none",
            Symmetry::PerDepth => "per-depth",
            Symmetry::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    WorstCaseS,
    AverageS,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::WorstCaseS => "worst_case_s",
            Objective::AverageS => "average_s",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationProblem {
    pub branch_lengths: Vec<usize>,
    pub symmetry: Symmetry,
    pub objective: Objective,
    /// Source visibility used while optimising; 1 unless stated.
    pub visibility: f64,
}

impl OptimizationProblem {
    pub fn new(m: usize, n: usize, symmetry: Symmetry, objective: Objective) -> Self {
        Self {
            branch_lengths: vec![n; m],
            symmetry,
            objective,
            visibility: 1.0,
        }
    }

    /// Whether the result has no published reference to compare against:
    /// unequal chains, or a fully free search over more than one branch.
    pub fn is_exploratory(&self) -> bool {
        let uneven = self.branch_lengths.windows(2).any(|w| w[0] != w[1]);
        uneven || (self.symmetry == Symmetry::None && self.branch_lengths.len() > 1)
    }

    fn dimension(&self) -> usize {
        let etas = match self.symmetry {
            Symmetry::None => 2 * self.branch_lengths.iter().sum::<usize>(),
            Symmetry::PerDepth => self.branch_lengths.iter().copied().max().unwrap_or(0),
            Symmetry::Full => 1,
        };
        etas + 1
    }

    fn upper(&self, i: usize) -> f64 {
        if i + 1 == self.dimension() {
            FRAC_PI_2
        } else {
            1.0
        }
    }

    /// Expands a parameter vector (sharpnesses, then θ) into a network.
    pub fn config_from(&self, params: &[f64]) -> NetworkConfig {
        let theta = params[params.len() - 1];
        let mut next = 0;
        let branches = self
            .branch_lengths
            .iter()
            .map(|&n| {
                BranchConfig::new(
                    (0..n)
                        .map(|j| match self.symmetry {
                            Symmetry::None => {
                                let p = PartySetting::new(params[next], params[next + 1]);
                                next += 2;
                                p
                            }
                            Symmetry::PerDepth => PartySetting::symmetric(params[j]),
                            Symmetry::Full => PartySetting::symmetric(params[0]),
                        })
                        .collect(),
                )
            })
            .collect();
        NetworkConfig::new(
            branches,
            vec![SourceSpec::new(self.visibility); self.branch_lengths.len()],
            theta,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_params: NetworkConfig,
    pub best_objective: f64,
    /// Best objective so far after each start.
    pub trace: Vec<TracePoint>,
    pub exploratory: bool,
}

fn branch_terms(config: &NetworkConfig) -> Vec<Vec<f64>> {
    (0..config.branch_count())
        .map(|k| {
            (1..=config.branches[k].len())
                .map(|j| closed_form_branch_term(config, k, j).abs())
                .collect()
        })
        .collect()
}

/// `min_s S_s` over every selection.
pub fn worst_case_objective(config: &NetworkConfig) -> f64 {
    let r = 1.0 / config.branch_count() as f64;
    branch_terms(config)
        .iter()
        .map(|t| t.iter().copied().fold(f64::INFINITY, f64::min).powf(r))
        .product()
}

/// `(1/|s|) Σ_s S_s` over every selection.
pub fn average_objective(config: &NetworkConfig) -> f64 {
    let r = 1.0 / config.branch_count() as f64;
    branch_terms(config)
        .iter()
        .map(|t| t.iter().map(|v| v.powf(r)).sum::<f64>() / t.len() as f64)
        .product()
}

pub fn objective_value(config: &NetworkConfig, objective: Objective) -> f64 {
    match objective {
        Objective::WorstCaseS => worst_case_objective(config),
        Objective::AverageS => average_objective(config),
    }
}

/// Soft-min of `S_s` over selections at temperature `tau`; exact at `tau = 0`.
fn smoothed(config: &NetworkConfig, objective: Objective, tau: f64) -> f64 {
    if tau == 0.0 || objective == Objective::AverageS {
        return objective_value(config, objective);
    }
    let r = 1.0 / config.branch_count() as f64;
    // Per-branch values enter S_s multiplicatively, so enumerate selections
    // through the log-sum-exp of their products.
    let mut values = vec![1.0];
    for terms in branch_terms(config) {
        values = values
            .iter()
            .flat_map(|v| terms.iter().map(move |t| v * t.powf(r)))
            .collect();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|v| (-(v - lo) / tau).exp()).sum();
    lo - tau * sum.ln()
}

fn golden_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LINE_TOL * (hi - lo) {
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        }
    }
    (a + b) / 2.0
}

struct Climber<'a> {
    problem: &'a OptimizationProblem,
}

impl Climber<'_> {
    fn eval(&self, p: &[f64], tau: f64) -> f64 {
        smoothed(&self.problem.config_from(p), self.problem.objective, tau)
    }

    /// Moves coordinate `i` to the best of its current value, the interior
    /// golden-section optimum and both bounds. Ties go to the larger value,
    /// so a sharpness that does not matter ends up at exactly 1.
    fn line_search(&self, p: &mut [f64], i: usize, tau: f64) {
        let hi = self.problem.upper(i);
        let mut probe = p.to_vec();
        let mut at = |t: f64| {
            probe[i] = t;
            self.eval(&probe, tau)
        };
        let inner = golden_max(&mut at, 0.0, hi);
        let candidates = [inner, 0.0, hi];
        let mut best = (at(p[i]), p[i]);
        for t in candidates {
            let v = at(t);
            if v > best.0 || (v == best.0 && t > best.1) {
                best = (v, t);
            }
        }
        p[i] = best.1;
    }

    fn climb(&self, start: Vec<f64>) -> Vec<f64> {
        let mut p = start;
        for &tau in &TEMPERATURES {
            for _ in 0..MAX_SWEEPS {
                let before = self.eval(&p, tau);
                for i in 0..p.len() {
                    self.line_search(&mut p, i, tau);
                }
                if self.eval(&p, tau) - before <= 1e-13 {
                    break;
                }
            }
        }
        self.snap_sharp(&mut p);
        p
    }

    /// Pushes sharpness values that sit just below 1 onto 1 when that does
    /// not lower the objective.
    fn snap_sharp(&self, p: &mut [f64]) {
        let n_eta = p.len() - 1;
        for i in 0..n_eta {
            if p[i] < 1.0 && 1.0 - p[i] < SNAP {
                let mut q = p.to_vec();
                q[i] = 1.0;
                if self.eval(&q, 0.0) >= self.eval(p, 0.0) {
                    p[i] = 1.0;
                }
            }
        }
    }
}

/// Multistart coordinate ascent; `budget` random starts, run in parallel.
pub fn optimize(problem: &OptimizationProblem, budget: usize, seed: u64) -> OptimizationResult {
    let budget = budget.max(1);
    let dim = problem.dimension();
    let climber = Climber { problem };
    let results: Vec<(f64, Vec<f64>)> = (0..budget)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start as u64);
            let p0: Vec<f64> = (0..dim).map(|i| rng.random::<f64>() * problem.upper(i)).collect();
            let p = climber.climb(p0);
            (climber.eval(&p, 0.0), p)
        })
        .collect();

    let mut trace = Vec::with_capacity(budget);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (iteration, (value, params)) in results.into_iter().enumerate() {
        // strict improvement keeps the earliest start on ties
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, params));
        }
        trace.push(TracePoint {
            iteration,
            objective: best.as_ref().map(|b| b.0).unwrap_or(value),
        });
    }
    let (_, params) = best.expect("budget is at least one");
    let best_params = problem.config_from(&params);
    OptimizationResult {
        best_objective: objective_value(&best_params, problem.objective),
        best_params,
        trace,
        exploratory: problem.is_exploratory(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::closed_form_s;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn operating_point() -> NetworkConfig {
        NetworkConfig::uniform(3, &[PartySetting::symmetric(0.8), PartySetting::sharp()], FRAC_PI_4, 1.0)
    }

    #[test]
    fn worst_case_examples() {
        assert!((worst_case_objective(&operating_point()) - 0.8 * SQRT_2).abs() < 1e-15);
        let sharp_first = NetworkConfig::uniform(3, &[PartySetting::sharp(); 2], FRAC_PI_4, 1.0);
        assert!((worst_case_objective(&sharp_first) - SQRT_2 / 2.0).abs() < 1e-15);
        let blind_first =
            NetworkConfig::uniform(3, &[PartySetting::symmetric(0.0), PartySetting::sharp()], FRAC_PI_4, 1.0);
        assert_eq!(worst_case_objective(&blind_first), 0.0);
    }

    #[test]
    fn factorised_objectives_match_enumeration() {
        let c = NetworkConfig::new(
            vec![
                BranchConfig::new(vec![PartySetting::new(0.9, 0.4), PartySetting::new(0.7, 1.0)]),
                BranchConfig::new(vec![PartySetting::new(0.2, 0.6)]),
                BranchConfig::new(vec![PartySetting::new(0.5, 0.5), PartySetting::sharp(), PartySetting::new(1.0, 0.3)]),
            ],
            vec![SourceSpec::new(0.9), SourceSpec::ideal(), SourceSpec::new(0.7)],
            0.6,
        );
        let all: Vec<f64> = c.enumerate_selections().iter().map(|s| closed_form_s(&c, s)).collect();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((worst_case_objective(&c) - min).abs() < 1e-14);
        assert!((average_objective(&c) - mean).abs() < 1e-14);
        assert!((smoothed(&c, Objective::WorstCaseS, 1e-6) - min).abs() < 1e-5);
    }

    #[test]
    fn tsirelson_point() {
        let r = optimize(&OptimizationProblem::new(1, 1, Symmetry::PerDepth, Objective::WorstCaseS), 4, 1);
        assert!((r.best_objective - SQRT_2).abs() < 1e-12);
        assert_eq!(r.best_params.party(0, 1), PartySetting::sharp());
        assert!((r.best_params.theta - FRAC_PI_4).abs() < 1e-6);
    }

    #[test]
    fn operating_point_is_recovered() {
        let r = optimize(&OptimizationProblem::new(3, 2, Symmetry::PerDepth, Objective::WorstCaseS), 8, 7);
        let first = r.best_params.party(0, 1);
        assert!((first.eta_z - 0.8).abs() < 1e-6);
        // equalisation: η₁ = ½(1 + √(1 - η₁²))
        assert!((first.eta_z - 0.5 * (1.0 + (1.0 - first.eta_z.powi(2)).sqrt())).abs() < 1e-6);
        assert_eq!(r.best_params.party(0, 2), PartySetting::sharp());
        assert!((r.best_params.theta - FRAC_PI_4).abs() < 1e-6);
        assert!((r.best_objective - 0.8 * SQRT_2).abs() < 1e-9);
        assert!(!r.exploratory);
        assert!(r.trace.windows(2).all(|w| w[0].objective <= w[1].objective));
    }

    #[test]
    fn result_is_reproducible() {
        let p = OptimizationProblem::new(2, 2, Symmetry::Full, Objective::AverageS);
        assert_eq!(optimize(&p, 5, 3), optimize(&p, 5, 3));
    }

    #[test]
    fn exploratory_label() {
        let mut p = OptimizationProblem::new(2, 2, Symmetry::PerDepth, Objective::WorstCaseS);
        assert!(!p.is_exploratory());
        p.branch_lengths = vec![1, 3];
        assert!(p.is_exploratory());
        assert!(OptimizationProblem::new(3, 3, Symmetry::None, Objective::WorstCaseS).is_exploratory());
    }
}
