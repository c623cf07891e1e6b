//! Star-network description: branches of sequential parties, the sources
//! feeding them, Alice's angle, and selections of one party per branch.
//!
//! Branch indices are zero-based throughout the API. Party positions inside a
//! selection are one-based (`s_k = 1` is the first party of branch `k`), which
//! keeps selection labels such as `(2,1,2)` readable.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the θ ∈ [0, π/2] bound for degree→radian round-off.
const ANGLE_SLACK: f64 = 1e-12;

/// Sharpness pair of one sequential party: observable `eta_z σ_Z` for input 0,
/// `eta_x σ_X` for input 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySetting {
    pub eta_z: f64,
    pub eta_x: f64,
}

impl PartySetting {
    pub fn new(eta_z: f64, eta_x: f64) -> Self {
        Self { eta_z, eta_x }
    }

    /// Same sharpness on both observables.
    pub fn symmetric(eta: f64) -> Self {
        Self::new(eta, eta)
    }

    /// Projective Z and X measurements.
    pub fn sharp() -> Self {
        Self::symmetric(1.0)
    }
}

/// The ordered chain B_{k,1}, …, B_{k,n} of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchConfig {
    pub parties: Vec<PartySetting>,
}

impl BranchConfig {
    pub fn new(parties: Vec<PartySetting>) -> Self {
        Self { parties }
    }

    pub fn len(&self) -> usize {
        self.parties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parties.is_empty()
    }
}

/// Isotropic-noise source: `v |φ⁺⟩⟨φ⁺| + (1 - v) 𝟙/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub visibility: f64,
}

impl SourceSpec {
    pub fn new(visibility: f64) -> Self {
        Self { visibility }
    }

    pub fn ideal() -> Self {
        Self::new(1.0)
    }
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self::ideal()
    }
}

/// Full description of a star network. `theta` is in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub branches: Vec<BranchConfig>,
    pub sources: Vec<SourceSpec>,
    pub theta: f64,
}

/// One violated invariant, located by a path into the config tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("branch subset is empty")]
    EmptySubset,
    #[error("branch index {index} out of range for a {branches}-branch network")]
    BranchOutOfRange { index: usize, branches: usize },
    #[error("selection has {got} entries, network has {expected} branches")]
    SelectionLength { expected: usize, got: usize },
    #[error("selection entry {position} for branch {branch} outside 1..={len}")]
    SelectionOutOfRange {
        branch: usize,
        position: usize,
        len: usize,
    },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// On-disk form: angles in degrees, everything else as in [`NetworkConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    theta_degrees: f64,
    branches: Vec<BranchConfig>,
    sources: Vec<SourceSpec>,
}

impl NetworkConfig {
    pub fn new(branches: Vec<BranchConfig>, sources: Vec<SourceSpec>, theta: f64) -> Self {
        Self {
            branches,
            sources,
            theta,
        }
    }

    /// `m` identical branches running `chain`, every source at `visibility`.
    pub fn uniform(m: usize, chain: &[PartySetting], theta: f64, visibility: f64) -> Self {
        Self::new(
            vec![BranchConfig::new(chain.to_vec()); m],
            vec![SourceSpec::new(visibility); m],
            theta,
        )
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_lengths(&self) -> Vec<usize> {
        self.branches.iter().map(BranchConfig::len).collect()
    }

    /// Party B_{branch, position} with `position` one-based.
    pub fn party(&self, branch: usize, position: usize) -> PartySetting {
        self.branches[branch].parties[position - 1]
    }

    /// Checks every invariant; an empty list means the config is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });

        if self.branches.is_empty() {
            push("branches".into(), "at least one branch is required".into());
        }
        if self.branches.len() != self.sources.len() {
            push(
                "sources".into(),
                format!(
                    "{} sources for {} branches; lengths must match",
                    self.sources.len(),
                    self.branches.len()
                ),
            );
        }
        if !(self.theta >= -ANGLE_SLACK && self.theta <= FRAC_PI_2 + ANGLE_SLACK) {
            push(
                "theta_degrees".into(),
                format!("{}° outside [0°, 90°]", self.theta.to_degrees()),
            );
        }
        for (k, branch) in self.branches.iter().enumerate() {
            if branch.is_empty() {
                push(format!("branches[{k}]"), "branch has no parties".into());
            }
            for (j, party) in branch.parties.iter().enumerate() {
                for (name, eta) in [("eta_z", party.eta_z), ("eta_x", party.eta_x)] {
                    if !(0.0..=1.0).contains(&eta) {
                        push(format!("branches[{k}][{j}].{name}"), format!("{eta} outside [0, 1]"));
                    }
                }
            }
        }
        for (k, source) in self.sources.iter().enumerate() {
            if !(0.0..=1.0).contains(&source.visibility) {
                push(
                    format!("sources[{k}].visibility"),
                    format!("{} outside [0, 1]", source.visibility),
                );
            }
        }
        out
    }

    /// Every selection in `{1..n_1} × … × {1..n_m}`, lexicographic with the
    /// first branch varying slowest.
    pub fn enumerate_selections(&self) -> Vec<PartySelection> {
        let lengths = self.branch_lengths();
        let mut out = vec![Vec::with_capacity(lengths.len())];
        for &n in &lengths {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (1..=n).map(move |s| {
                        let mut next = prefix.clone();
                        next.push(s);
                        next
                    })
                })
                .collect();
        }
        out.into_iter().map(PartySelection).collect()
    }

    /// Restriction to the given (zero-based) branches, in ascending order.
    pub fn subnetwork(&self, branch_subset: &[usize]) -> Result<NetworkConfig, NetworkError> {
        let subset: BTreeSet<usize> = branch_subset.iter().copied().collect();
        if subset.is_empty() {
            return Err(NetworkError::EmptySubset);
        }
        if let Some(&index) = subset.iter().find(|&&i| i >= self.branches.len()) {
            return Err(NetworkError::BranchOutOfRange {
                index,
                branches: self.branches.len(),
            });
        }
        Ok(NetworkConfig {
            branches: subset.iter().map(|&i| self.branches[i].clone()).collect(),
            sources: subset.iter().map(|&i| self.sources[i]).collect(),
            theta: self.theta,
        })
    }

    /// Checks that `sel` picks an existing party in every branch.
    pub fn check_selection(&self, sel: &PartySelection) -> Result<(), NetworkError> {
        if sel.0.len() != self.branches.len() {
            return Err(NetworkError::SelectionLength {
                expected: self.branches.len(),
                got: sel.0.len(),
            });
        }
        for (branch, (&position, b)) in sel.0.iter().zip(&self.branches).enumerate() {
            if position == 0 || position > b.len() {
                return Err(NetworkError::SelectionOutOfRange {
                    branch,
                    position,
                    len: b.len(),
                });
            }
        }
        Ok(())
    }

    /// Parses the JSON config format. Errors carry the path of the offending
    /// node, e.g. `branches[0][1].eta_z`.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        Ok(NetworkConfig {
            branches: file.branches,
            sources: file.sources,
            theta: file.theta_degrees.to_radians(),
        })
    }

    /// Parses and validates in one step.
    pub fn load_json_str(text: &str) -> Result<Self, ConfigError> {
        let config = Self::from_json_str(text)?;
        let violations = config.validate();
        if violations.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Canonical pretty-printed JSON form.
    pub fn to_json_string(&self) -> String {
        let file = ConfigFile {
            theta_degrees: self.theta.to_degrees(),
            branches: self.branches.clone(),
            sources: self.sources.clone(),
        };
        serde_json::to_string_pretty(&file).expect("config serialisation is infallible")
    }
}

/// The string `s`: one one-based party position per branch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartySelection(pub Vec<usize>);

impl PartySelection {
    pub fn new(positions: Vec<usize>) -> Self {
        Self(positions)
    }

    /// The standard, non-recycled selection (1, …, 1).
    pub fn first_parties(m: usize) -> Self {
        Self(vec![1; m])
    }

    pub fn positions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Label in the full network, with `*` for branches not in `branches`.
    ///
    /// `branches` lists the zero-based branch index of every entry of `self`.
    pub fn label_in(&self, branches: &[usize], total_branches: usize) -> String {
        let mut slots = vec!["*".to_string(); total_branches];
        for (&branch, &pos) in branches.iter().zip(&self.0) {
            slots[branch] = pos.to_string();
        }
        format!("({})", slots.join(","))
    }
}

impl fmt::Display for PartySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All non-empty subsets of `0..m` of size `size`, lexicographic.
pub fn branch_subsets(m: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size > 0 && size <= m {
        rec(0, m, size, &mut Vec::new(), &mut out);
    }
    out
}
