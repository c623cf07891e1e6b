//! Finite-statistics experiments.
//!
//! Every run draws the central input `x` and every branch input uniformly,
//! walks each branch party by party through the conditional Lüders update,
//! then draws the central party's per-branch outcome `a_k` from what is left
//! of the pair. The wired outcome is `a = a_1 ⊕ … ⊕ a_m`.
//!
//! Randomness is counter based. Run `r` of seed `σ` reads ChaCha8 stream `r`
//! under key `σ`, and each (branch, depth) pair owns its own 16-word block of
//! that stream, so a run's outcome never depends on which thread produced it
//! or on what other runs did. Counts are merged by integer addition, which
//! makes every report independent of the parallel schedule.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::bell::{
    bell_value, chsh_values, BellError, BellReport, ChshPair, JointDistribution, Method,
};
use crate::linalg::{kron, ComplexMatrix};
use crate::measurement::alice_projector;
use crate::network::{branch_subsets, NetworkConfig, PartySelection};
use crate::sequence::{luders_conditional_with, BranchState, LudersInstrument, SequenceError};

pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Runs handed to one parallel task.
const CHUNK: u64 = 4096;
/// Chunks processed between merges; bounds the memory held by run logs.
const CHUNKS_PER_BATCH: u64 = 64;
/// ChaCha block length in 32-bit words.
const BLOCK_WORDS: u128 = 16;
/// Key offset separating bootstrap randomness from run randomness.
const BOOTSTRAP_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("shots must be at least 1")]
    NoShots,
    #[error("no counts in slice {slice}; cannot estimate")]
    InsufficientData { slice: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Bell(#[from] BellError),
    #[error("run log: {0}")]
    Io(String),
}

/// One simulated run.
///
/// Branch chains are stored as bit masks: bit `j` of `y[k]` is the input of
/// party `B_{k,j+1}`, likewise for `b[k]`; bit `k` of `a_bits` is `a_k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShotRecord {
    pub x: u8,
    pub y: Vec<u32>,
    pub b: Vec<u32>,
    pub a_bits: u32,
    pub a: u8,
}

impl ShotRecord {
    /// Input of party `B_{branch, position}` (position one-based).
    pub fn y(&self, branch: usize, position: usize) -> u8 {
        ((self.y[branch] >> (position - 1)) & 1) as u8
    }

    pub fn b(&self, branch: usize, position: usize) -> u8 {
        ((self.b[branch] >> (position - 1)) & 1) as u8
    }

    pub fn a_k(&self, branch: usize) -> u8 {
        ((self.a_bits >> branch) & 1) as u8
    }
}

/// Per-setting allocation of inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputAllocation {
    /// Each input an independent fair coin.
    #[default]
    Uniform,
    /// Run `r` uses input setting `r mod 2^(1 + Σ n_k)`, so every full
    /// setting gets the same number of runs (up to one).
    Fixed,
}

/// A configuration prepared for repeated sampling.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: NetworkConfig,
    instruments: Vec<Vec<LudersInstrument>>,
    // [x][a_k] as 𝟙 ⊗ Π on branch ⊗ Alice
    alice: Vec<Vec<ComplexMatrix>>,
    // first slot of each branch; slot 0 holds x
    slot_offset: Vec<u128>,
    input_offset: Vec<u32>,
    allocation: InputAllocation,
    key: ChaCha8Rng,
}

impl Sampler {
    pub fn new(config: &NetworkConfig, seed: u64, allocation: InputAllocation) -> Result<Self, SampleError> {
        let instruments = config
            .branches
            .iter()
            .map(|b| b.parties.iter().map(LudersInstrument::new).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let id = ComplexMatrix::identity(2);
        let alice = (0..2u8)
            .map(|x| (0..2u8).map(|a| kron(&id, &alice_projector(config.theta, x, a))).collect())
            .collect();
        let mut slot_offset = Vec::with_capacity(config.branch_count());
        let mut input_offset = Vec::with_capacity(config.branch_count());
        let (mut slot, mut bit) = (1u128, 1u32);
        for n in config.branch_lengths() {
            slot_offset.push(slot);
            input_offset.push(bit);
            // one slot per party plus one for the central outcome a_k
            slot += n as u128 + 1;
            bit += n as u32;
        }
        Ok(Self {
            config: config.clone(),
            instruments,
            alice,
            slot_offset,
            input_offset,
            allocation,
            key: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn slot_rng(&self, run: u64, slot: u128) -> ChaCha8Rng {
        let mut rng = self.key.clone();
        rng.set_stream(run);
        rng.set_word_pos(slot * BLOCK_WORDS);
        rng
    }

    fn fixed_inputs(&self, run: u64) -> u64 {
        let total_bits = 1 + self.config.branch_lengths().iter().sum::<usize>();
        if total_bits >= 64 {
            run
        } else {
            run % (1u64 << total_bits)
        }
    }

    /// Simulates run number `run`.
    pub fn sample_run(&self, run: u64) -> Result<ShotRecord, SampleError> {
        let mut rec = ShotRecord::default();
        self.sample_run_into(run, &mut rec)?;
        Ok(rec)
    }

    /// [`sample_run`](Self::sample_run) reusing `rec`'s buffers.
    pub fn sample_run_into(&self, run: u64, rec: &mut ShotRecord) -> Result<(), SampleError> {
        let m = self.config.branch_count();
        let fixed = match self.allocation {
            InputAllocation::Uniform => None,
            InputAllocation::Fixed => Some(self.fixed_inputs(run)),
        };
        rec.x = match fixed {
            Some(bits) => (bits & 1) as u8,
            None => coin(&mut self.slot_rng(run, 0)),
        };
        rec.y.clear();
        rec.b.clear();
        rec.a_bits = 0;
        for k in 0..m {
            let mut state = BranchState::initial(&self.config.sources[k], self.config.branches[k].len());
            let (mut ys, mut bs) = (0u32, 0u32);
            for (j, instrument) in self.instruments[k].iter().enumerate() {
                let mut rng = self.slot_rng(run, self.slot_offset[k] + j as u128);
                let drawn = coin(&mut rng);
                let y = match fixed {
                    Some(bits) => ((bits >> (self.input_offset[k] + j as u32)) & 1) as u8,
                    None => drawn,
                };
                let p0 = instrument.probability(state.rho().matrix(), y, 0);
                let b = u8::from(rng.random::<f64>() >= p0);
                state = luders_conditional_with(&state, instrument, y, b)?.0;
                ys |= u32::from(y) << j;
                bs |= u32::from(b) << j;
            }
            let mut rng = self.slot_rng(run, self.slot_offset[k] + self.instruments[k].len() as u128);
            let p0 = self.alice[rec.x as usize][0].trace_product(state.rho().matrix()).re;
            let a_k = u8::from(rng.random::<f64>() >= p0);
            rec.y.push(ys);
            rec.b.push(bs);
            rec.a_bits |= u32::from(a_k) << k;
        }
        rec.a = (rec.a_bits.count_ones() % 2) as u8;
        Ok(())
    }
}

fn coin(rng: &mut ChaCha8Rng) -> u8 {
    (rng.random::<u64>() >> 63) as u8
}

/// Free-function form of [`Sampler::sample_run`].
pub fn sample_run(config: &NetworkConfig, seed: u64, run: u64) -> Result<ShotRecord, SampleError> {
    Sampler::new(config, seed, InputAllocation::Uniform)?.sample_run(run)
}

/// Which part of a record a [`CountTable`] tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum View {
    /// Selected parties of `branches` (zero-based) at one-based `positions`,
    /// with the central outcome wired over those branches only.
    Selection { branches: Vec<usize>, positions: Vec<usize> },
    /// Every party of one branch against the unwired `a_k`.
    Chain { branch: usize, len: usize },
}

impl View {
    pub fn bits(&self) -> usize {
        match self {
            View::Selection { branches, .. } => branches.len(),
            View::Chain { len, .. } => *len,
        }
    }

    /// `(x, y, a, b)` of `rec` under this view.
    pub fn project(&self, rec: &ShotRecord) -> (u8, usize, u8, usize) {
        match self {
            View::Selection { branches, positions } => {
                let (mut y, mut b, mut a) = (0usize, 0usize, 0u8);
                for (i, (&k, &s)) in branches.iter().zip(positions).enumerate() {
                    y |= (rec.y(k, s) as usize) << i;
                    b |= (rec.b(k, s) as usize) << i;
                    a ^= rec.a_k(k);
                }
                (rec.x, y, a, b)
            }
            View::Chain { branch, .. } => (rec.x, rec.y[*branch] as usize, rec.a_k(*branch), rec.b[*branch] as usize),
        }
    }
}

/// Outcome counts laid out like a [`JointDistribution`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    bits: usize,
    counts: Vec<u64>,
    total_shots: u64,
}

impl CountTable {
    pub fn new(bits: usize) -> Self {
        let w = 1usize << bits;
        Self {
            bits,
            counts: vec![0; 4 * w * w],
            total_shots: 0,
        }
    }

    fn index(&self, x: u8, y: usize, a: u8, b: usize) -> usize {
        let w = 1usize << self.bits;
        ((x as usize * w + y) * 2 + a as usize) * w + b
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    pub fn get(&self, x: u8, y: usize, a: u8, b: usize) -> u64 {
        self.counts[self.index(x, y, a, b)]
    }

    pub fn record(&mut self, x: u8, y: usize, a: u8, b: usize) {
        let i = self.index(x, y, a, b);
        self.counts[i] += 1;
        self.total_shots += 1;
    }

    pub fn slice_total(&self, x: u8, y: usize) -> u64 {
        let w = 1usize << self.bits;
        let start = self.index(x, y, 0, 0);
        self.counts[start..start + 2 * w].iter().sum()
    }

    pub fn merge(&mut self, other: &CountTable) {
        assert_eq!(self.bits, other.bits, "merging tables of different shape");
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.total_shots += other.total_shots;
    }

    /// Multinomial redraw of `total_shots` runs from the empirical cell
    /// frequencies; the same law as resampling runs with replacement.
    pub fn resample(&self, rng: &mut ChaCha8Rng) -> CountTable {
        let mut out = CountTable::new(self.bits);
        let mut left_runs = self.total_shots;
        let mut left_mass = self.total_shots;
        for (slot, &c) in out.counts.iter_mut().zip(&self.counts) {
            if left_runs == 0 || left_mass == 0 {
                break;
            }
            if c == 0 {
                continue;
            }
            let draw = if c >= left_mass {
                left_runs
            } else {
                Binomial::new(left_runs, c as f64 / left_mass as f64)
                    .expect("probability lies in [0, 1]")
                    .sample(rng)
            };
            *slot = draw;
            left_runs -= draw;
            left_mass -= c;
        }
        out.total_shots = self.total_shots;
        out
    }

    /// Empirical `p̂(a, b | x, y)`; every `(x, y)` slice needs a count.
    pub fn to_distribution(&self, sel: &PartySelection) -> Result<JointDistribution, SampleError> {
        let w = 1usize << self.bits;
        for x in 0..2u8 {
            for y in 0..w {
                if self.slice_total(x, y) == 0 {
                    return Err(SampleError::InsufficientData {
                        slice: slice_label(x, y, self.bits),
                    });
                }
            }
        }
        Ok(JointDistribution::from_fn(self.bits, sel.clone(), |x, y, a, b| {
            self.get(x, y, a, b) as f64 / self.slice_total(x, y) as f64
        }))
    }

    /// Plug-in `CHSH_j` for every position `j` of a chain table, pooling
    /// over the inputs of the other parties.
    pub fn chsh_estimates(&self) -> Result<Vec<f64>, SampleError> {
        let w = 1usize << self.bits;
        (0..self.bits)
            .map(|j| {
                let mut chsh = 0.0;
                for x in 0..2u8 {
                    for yj in 0..2usize {
                        let (mut n, mut signed) = (0u64, 0i64);
                        for y in (0..w).filter(|y| (y >> j) & 1 == yj) {
                            for a in 0..2u8 {
                                for b in 0..w {
                                    let c = self.get(x, y, a, b);
                                    n += c;
                                    let even = (a as usize + ((b >> j) & 1)) % 2 == 0;
                                    signed += if even { c as i64 } else { -(c as i64) };
                                }
                            }
                        }
                        if n == 0 {
                            return Err(SampleError::InsufficientData {
                                slice: format!("x={x}, y_{}={yj}", j + 1),
                            });
                        }
                        let sign = if x == 1 && yj == 1 { -1.0 } else { 1.0 };
                        chsh += sign * signed as f64 / n as f64;
                    }
                }
                Ok(chsh)
            })
            .collect()
    }
}

fn slice_label(x: u8, y: usize, bits: usize) -> String {
    let ys: Vec<String> = (0..bits).map(|k| ((y >> k) & 1).to_string()).collect();
    format!("x={x}, y=({})", ys.join(","))
}

/// Sample standard deviation; `None` with fewer than two values.
fn std_dev(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn bootstrap_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BOOTSTRAP_KEY);
    rng.set_stream(stream);
    rng
}

/// Plug-in `S` with a bootstrap error bar.
///
/// Resamples that leave a slice empty are skipped. Fewer than two usable
/// resamples give `std_error = 0` with `degenerate_error` set.
pub fn estimate_bell(
    counts: &CountTable,
    sel: &PartySelection,
    bootstrap_resamples: usize,
    seed: u64,
) -> Result<BellReport, SampleError> {
    estimate_bell_on_stream(counts, sel, bootstrap_resamples, seed, 0)
}

fn estimate_bell_on_stream(
    counts: &CountTable,
    sel: &PartySelection,
    resamples: usize,
    seed: u64,
    stream: u64,
) -> Result<BellReport, SampleError> {
    let mut report = bell_value(&counts.to_distribution(sel)?);
    report.method = Method::Sampled;
    let mut rng = bootstrap_rng(seed, stream);
    let values: Vec<f64> = (0..resamples)
        .filter_map(|_| counts.resample(&mut rng).to_distribution(sel).ok())
        .map(|d| bell_value(&d).s_value)
        .collect();
    let sd = std_dev(&values);
    report.degenerate_error = sd.is_none();
    report.std_error = Some(sd.unwrap_or(0.0));
    Ok(report)
}

/// `CHSH₁`, `CHSH₂` of a chain table with bootstrap errors, including one for
/// the distance to the projective curve (which shares both estimates).
pub fn estimate_chsh(
    counts: &CountTable,
    branch: usize,
    bootstrap_resamples: usize,
    seed: u64,
) -> Result<ChshPair, SampleError> {
    estimate_chsh_on_stream(counts, branch, bootstrap_resamples, seed, 0)
}

fn estimate_chsh_on_stream(
    counts: &CountTable,
    branch: usize,
    resamples: usize,
    seed: u64,
    stream: u64,
) -> Result<ChshPair, SampleError> {
    if counts.bits() < 2 {
        return Err(BellError::ChainTooShort {
            branch,
            len: counts.bits(),
        }
        .into());
    }
    let est = counts.chsh_estimates()?;
    let mut pair = ChshPair::new(branch, est[0], est[1]);
    let mut rng = bootstrap_rng(seed, stream);
    let draws: Vec<Vec<f64>> = (0..resamples)
        .filter_map(|_| counts.resample(&mut rng).chsh_estimates().ok())
        .collect();
    let column = |f: &dyn Fn(&[f64]) -> f64| draws.iter().map(|d| f(d)).collect::<Vec<_>>();
    let or_zero = |v: Option<f64>| Some(v.unwrap_or(0.0));
    pair.std_error1 = or_zero(std_dev(&column(&|d| d[0])));
    pair.std_error2 = or_zero(std_dev(&column(&|d| d[1])));
    // The curve is linear, so the margin's spread is that of CHSH₂ + CHSH₁/2.
    pair.bound_margin_std_error = pair
        .bound_margin
        .map(|_| std_dev(&column(&|d| d[1] + d[0] / 2.0)).unwrap_or(0.0));
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub bootstrap_resamples: usize,
    pub allocation: InputAllocation,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            bootstrap_resamples: DEFAULT_BOOTSTRAP,
            allocation: InputAllocation::Uniform,
        }
    }
}

/// Everything estimated from one stream of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub shots: u64,
    pub seed: u64,
    /// One report per selection of the full network.
    pub full: Vec<BellReport>,
    /// One report per selection of each two-branch subnetwork; empty for `m ≤ 2`.
    pub pairs: Vec<BellReport>,
    /// One pair per branch with at least two parties, from unwired outcomes.
    pub chsh: Vec<ChshPair>,
}

/// Views tallied by [`experiment_report`], in report order.
pub fn report_views(config: &NetworkConfig) -> Vec<View> {
    let m = config.branch_count();
    let mut views: Vec<View> = config
        .enumerate_selections()
        .into_iter()
        .map(|s| View::Selection {
            branches: (0..m).collect(),
            positions: s.0,
        })
        .collect();
    if m > 2 {
        for subset in branch_subsets(m, 2) {
            let sub = config.subnetwork(&subset).expect("subset indices are in range");
            views.extend(sub.enumerate_selections().into_iter().map(|s| View::Selection {
                branches: subset.clone(),
                positions: s.0,
            }));
        }
    }
    views.extend(
        config
            .branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.len() >= 2)
            .map(|(branch, b)| View::Chain { branch, len: b.len() }),
    );
    views
}

/// Runs `shots` simulated experiments and tallies every view.
///
/// When `log` is given every record is written to it, one CSV line per run
/// in run order.
pub fn tally(
    sampler: &Sampler,
    views: &[View],
    shots: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<CountTable>, SampleError> {
    if shots == 0 {
        return Err(SampleError::NoShots);
    }
    let with_log = log.is_some();
    let lengths = sampler.config().branch_lengths();
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", log_header(sampler.config())).map_err(|e| SampleError::Io(e.to_string()))?;
    }
    let mut tables: Vec<CountTable> = views.iter().map(|v| CountTable::new(v.bits())).collect();
    let batch = CHUNK * CHUNKS_PER_BATCH;
    let mut start = 0;
    while start < shots {
        let end = (start + batch).min(shots);
        let chunks: Vec<(Vec<CountTable>, String)> = (start..end)
            .step_by(CHUNK as usize)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|lo| {
                let hi = (lo + CHUNK).min(end);
                let mut local: Vec<CountTable> = views.iter().map(|v| CountTable::new(v.bits())).collect();
                let mut text = String::new();
                let mut rec = ShotRecord::default();
                for run in lo..hi {
                    sampler.sample_run_into(run, &mut rec)?;
                    for (t, v) in local.iter_mut().zip(views) {
                        let (x, y, a, b) = v.project(&rec);
                        t.record(x, y, a, b);
                    }
                    if with_log {
                        log_line(&mut text, run, &rec, &lengths);
                    }
                }
                Ok((local, text))
            })
            .collect::<Result<_, SampleError>>()?;
        for (local, text) in chunks {
            for (t, l) in tables.iter_mut().zip(&local) {
                t.merge(l);
            }
            if let Some(w) = log.as_deref_mut() {
                w.write_all(text.as_bytes()).map_err(|e| SampleError::Io(e.to_string()))?;
            }
        }
        start = end;
    }
    Ok(tables)
}

/// Column names of the run log.
pub fn log_header(config: &NetworkConfig) -> String {
    let mut cols = vec!["run".to_string(), "x".to_string()];
    for prefix in ["y", "b"] {
        for (k, n) in config.branch_lengths().into_iter().enumerate() {
            cols.extend((1..=n).map(|j| format!("{prefix}_{}_{j}", k + 1)));
        }
    }
    cols.extend((1..=config.branch_count()).map(|k| format!("a_{k}")));
    cols.push("a".into());
    cols.join(",")
}

fn log_line(out: &mut String, run: u64, rec: &ShotRecord, lengths: &[usize]) {
    let _ = write!(out, "{run},{}", rec.x);
    for chains in [&rec.y, &rec.b] {
        for (&bits, &n) in chains.iter().zip(lengths) {
            for j in 0..n {
                let _ = write!(out, ",{}", (bits >> j) & 1);
            }
        }
    }
    for k in 0..lengths.len() {
        let _ = write!(out, ",{}", rec.a_k(k));
    }
    let _ = writeln!(out, ",{}", rec.a);
}

/// Simulates `shots` runs once and estimates every quantity from them.
pub fn experiment_report(
    config: &NetworkConfig,
    shots: u64,
    seed: u64,
    options: &SamplingOptions,
    log: Option<&mut dyn Write>,
) -> Result<ExperimentReport, SampleError> {
    let sampler = Sampler::new(config, seed, options.allocation)?;
    let views = report_views(config);
    let tables = tally(&sampler, &views, shots, log)?;
    let m = config.branch_count();
    let estimates: Vec<Estimate> = views
        .par_iter()
        .zip(&tables)
        .enumerate()
        .map(|(i, (view, table))| match view {
            View::Selection { branches, positions } => {
                let sel = PartySelection::new(positions.clone());
                let mut r = estimate_bell_on_stream(table, &sel, options.bootstrap_resamples, seed, i as u64)?;
                r.branches = branches.clone();
                Ok(Estimate::Bell(r, branches.len() == m))
            }
            View::Chain { branch, .. } => Ok(Estimate::Chsh(estimate_chsh_on_stream(
                table,
                *branch,
                options.bootstrap_resamples,
                seed,
                i as u64,
            )?)),
        })
        .collect::<Result<_, SampleError>>()?;
    let mut report = ExperimentReport {
        shots,
        seed,
        full: vec![],
        pairs: vec![],
        chsh: vec![],
    };
    for e in estimates {
        match e {
            Estimate::Bell(r, true) => report.full.push(r),
            Estimate::Bell(r, false) => report.pairs.push(r),
            Estimate::Chsh(p) => report.chsh.push(p),
        }
    }
    Ok(report)
}

enum Estimate {
    Bell(BellReport, bool),
    Chsh(ChshPair),
}

/// Exact CHSH pair of every branch with at least two parties; the oracle for
/// the sampled pairs.
pub fn exact_chsh_pairs(config: &NetworkConfig) -> Result<Vec<ChshPair>, BellError> {
    config
        .branches
        .iter()
        .enumerate()
        .filter(|(_, b)| b.len() >= 2)
        .map(|(k, _)| chsh_values(config, k).map(|v| ChshPair::new(k, v[0], v[1])))
        .collect()
}
