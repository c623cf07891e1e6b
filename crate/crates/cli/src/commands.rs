use std::f64::consts::SQRT_2;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

use starnet::bell::{
    bell_value, closed_form_s, joint_distribution, projective_bound, projective_hi, BellReport, PROJECTIVE_LO,
};
use starnet::network::{branch_subsets, ConfigError, NetworkConfig, PartySelection};
use starnet::optimizer::{optimize as run_optimizer, Objective, OptimizationProblem, Symmetry};
use starnet::sampler::{exact_chsh_pairs, experiment_report, InputAllocation, SamplingOptions};

use crate::output::{emit, table_paths, write_to, Cell, RunManifest, Table};
use crate::Common;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Failure>() {
        Some(Failure::Config(_)) => 2,
        Some(Failure::Validation(_)) => 3,
        Some(Failure::Numerical(_)) => 4,
        None => 1,
    }
}

fn numerical(e: impl std::fmt::Display) -> anyhow::Error {
    Failure::Numerical(e.to_string()).into()
}

fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    NetworkConfig::load_json_str(&text).map_err(|e| match e {
        ConfigError::Parse { .. } => Failure::Config(format!("{}: {e}", path.display())).into(),
        ConfigError::Invalid(_) => Failure::Validation(format!("{}: {e}", path.display())).into(),
    })
}

fn compact(config: &NetworkConfig) -> String {
    let v: Value = serde_json::from_str(&config.to_json_string()).expect("canonical form is valid JSON");
    v.to_string()
}

fn manifest_for(command: &str, config_path: Option<&Path>, config: Option<&NetworkConfig>) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.config_path = config_path.map(|p| p.display().to_string());
    m.config = config.map(compact);
    m
}

fn record_outputs(manifest: &mut RunManifest, common: &Common, tables: &[Table], extra: &[&Path]) {
    manifest.outputs = table_paths(common.output.as_deref(), tables, common.format)
        .into_iter()
        .flatten()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>();
    manifest.outputs.dedup();
    manifest.outputs.extend(extra.iter().map(|p| p.display().to_string()));
}

/// Every selection of the full network, then of each two-branch
/// subnetwork when there are more than two branches.
fn scoped_selections(config: &NetworkConfig) -> Vec<(&'static str, Vec<usize>, PartySelection)> {
    let m = config.branch_count();
    let mut out: Vec<_> = config
        .enumerate_selections()
        .into_iter()
        .map(|s| ("full", (0..m).collect(), s))
        .collect();
    if m > 2 {
        for subset in branch_subsets(m, 2) {
            let sub = config.subnetwork(&subset).expect("indices in range");
            out.extend(sub.enumerate_selections().into_iter().map(|s| ("pair", subset.clone(), s)));
        }
    }
    out
}

fn chsh_rows(config: &NetworkConfig) -> Result<Table> {
    let mut t = Table::new("chsh", &["branch", "chsh1", "chsh2", "projective_bound", "margin"]);
    for pair in exact_chsh_pairs(config).map_err(numerical)? {
        t.push(vec![
            (pair.branch + 1).into(),
            pair.chsh1.into(),
            pair.chsh2.into(),
            projective_bound(pair.chsh1).ok().into(),
            pair.bound_margin.into(),
        ]);
    }
    Ok(t)
}

pub fn evaluate(config_path: &Path, common: &Common) -> Result<()> {
    let config = load_config(config_path)?;
    let m = config.branch_count();
    let rows = scoped_selections(&config)
        .into_par_iter()
        .map(|(scope, branches, sel)| {
            let net = config.subnetwork(&branches).map_err(numerical)?;
            let closed = closed_form_s(&net, &sel);
            let exact = bell_value(&joint_distribution(&net, &sel).map_err(numerical)?);
            Ok(vec![
                scope.into(),
                sel.label_in(&branches, m).into(),
                closed.into(),
                exact.s_value.into(),
                (exact.s_value - closed).into(),
                exact.i_s.into(),
                exact.j_s.into(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "selections",
        &["scope", "selection", "S_closed_form", "S_born_rule", "difference", "I", "J"],
    );
    rows.into_iter().for_each(|r| table.push(r));
    let tables = [table, chsh_rows(&config)?];

    let mut manifest = manifest_for("evaluate", Some(config_path), Some(&config));
    record_outputs(&mut manifest, common, &tables, &[]);
    emit(&manifest, &tables, None, common.output.as_deref(), common.format)
}

pub struct SampleArgs {
    pub shots: u64,
    pub seed: u64,
    pub bootstrap: usize,
    pub fixed_allocation: bool,
    pub log: Option<PathBuf>,
}

fn z_score(value: f64, reference: f64, sd: Option<f64>) -> Option<f64> {
    sd.map(|s| (value - reference) / s)
}

pub fn sample(config_path: &Path, args: &SampleArgs, common: &Common) -> Result<()> {
    let config = load_config(config_path)?;
    if args.shots == 0 {
        return Err(Failure::Validation("--shots must be at least 1".into()).into());
    }
    let options = SamplingOptions {
        bootstrap_resamples: args.bootstrap,
        allocation: if args.fixed_allocation {
            InputAllocation::Fixed
        } else {
            InputAllocation::Uniform
        },
    };
    let report = match &args.log {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            let mut w = BufWriter::new(file);
            let r = experiment_report(&config, args.shots, args.seed, &options, Some(&mut w));
            w.flush()?;
            r
        }
        None => experiment_report(&config, args.shots, args.seed, &options, None),
    }
    .map_err(numerical)?;

    let m = config.branch_count();
    let mut table = Table::new(
        "selections",
        &["scope", "selection", "S_hat", "std_error", "z_score_vs_1", "I_hat", "J_hat", "S_exact", "degenerate"],
    );
    let bell_row = |scope: &str, r: &BellReport| -> Result<Vec<Cell>> {
        let net = config.subnetwork(&r.branches).map_err(numerical)?;
        Ok(vec![
            scope.into(),
            r.label(m).into(),
            r.s_value.into(),
            r.std_error.into(),
            z_score(r.s_value, 1.0, r.std_error).into(),
            r.i_s.into(),
            r.j_s.into(),
            closed_form_s(&net, &r.selection).into(),
            r.degenerate_error.into(),
        ])
    };
    for r in &report.full {
        table.push(bell_row("full", r)?);
    }
    for r in &report.pairs {
        table.push(bell_row("pair", r)?);
    }

    let mut chsh = Table::new(
        "chsh",
        &[
            "branch",
            "chsh1",
            "std_error1",
            "chsh2",
            "std_error2",
            "projective_bound",
            "margin",
            "margin_std_error",
            "margin_z",
            "chsh1_exact",
            "chsh2_exact",
        ],
    );
    let exact = exact_chsh_pairs(&config).map_err(numerical)?;
    for (p, e) in report.chsh.iter().zip(&exact) {
        chsh.push(vec![
            (p.branch + 1).into(),
            p.chsh1.into(),
            p.std_error1.into(),
            p.chsh2.into(),
            p.std_error2.into(),
            projective_bound(p.chsh1).ok().into(),
            p.bound_margin.into(),
            p.bound_margin_std_error.into(),
            p.bound_margin.and_then(|mg| z_score(mg, 0.0, p.bound_margin_std_error)).into(),
            e.chsh1.into(),
            e.chsh2.into(),
        ]);
    }
    let tables = [table, chsh];

    let mut manifest = manifest_for("sample", Some(config_path), Some(&config));
    manifest.seed = Some(args.seed);
    manifest.shots = Some(args.shots);
    let log: Vec<&Path> = args.log.iter().map(PathBuf::as_path).collect();
    record_outputs(&mut manifest, common, &tables, &log);
    emit(&manifest, &tables, None, common.output.as_deref(), common.format)
}

pub struct OptimizeArgs {
    pub m: usize,
    pub n: usize,
    pub symmetry: Symmetry,
    pub objective: Objective,
    pub budget: usize,
    pub seed: u64,
    pub config_out: Option<PathBuf>,
}

pub fn optimize(args: &OptimizeArgs, common: &Common) -> Result<()> {
    if args.m == 0 || args.n == 0 {
        return Err(Failure::Validation("--m and --n must be at least 1".into()).into());
    }
    if args.budget == 0 {
        return Err(Failure::Validation("--budget must be at least 1".into()).into());
    }
    let problem = OptimizationProblem::new(args.m, args.n, args.symmetry, args.objective);
    let result = run_optimizer(&problem, args.budget, args.seed);
    let best = &result.best_params;

    let mut table = Table::new("result", &["field", "value"]);
    table.push(vec!["objective_name".into(), args.objective.as_str().into()]);
    table.push(vec!["objective".into(), result.best_objective.into()]);
    table.push(vec!["theta_degrees".into(), best.theta.to_degrees().into()]);
    table.push(vec!["symmetry".into(), args.symmetry.as_str().into()]);
    table.push(vec!["exploratory".into(), result.exploratory.into()]);
    for (k, branch) in best.branches.iter().enumerate() {
        for (j, p) in branch.parties.iter().enumerate() {
            table.push(vec![format!("eta_z[{}][{}]", k + 1, j + 1).into(), p.eta_z.into()]);
            table.push(vec![format!("eta_x[{}][{}]", k + 1, j + 1).into(), p.eta_x.into()]);
        }
    }
    let mut trace = Table::new("trace", &["start", "best_objective"]);
    for t in &result.trace {
        trace.push(vec![t.iteration.into(), t.objective.into()]);
    }
    let tables = [table, trace];

    let config_out = args
        .config_out
        .clone()
        .or_else(|| common.output.as_ref().map(|p| p.with_extension("config.json")));
    if let Some(path) = &config_out {
        write_to(Some(path), &(best.to_json_string() + "\n"))?;
    }
    let mut manifest = manifest_for("optimize", None, Some(best));
    manifest.seed = Some(args.seed);
    let extra: Vec<&Path> = config_out.iter().map(PathBuf::as_path).collect();
    record_outputs(&mut manifest, common, &tables, &extra);
    let config_json: Value = serde_json::from_str(&best.to_json_string())?;
    emit(
        &manifest,
        &tables,
        Some(("config", config_json)),
        common.output.as_deref(),
        common.format,
    )
}

pub fn tradeoff(points: usize, common: &Common) -> Result<()> {
    if points < 2 {
        return Err(Failure::Validation("--points must be at least 2".into()).into());
    }
    let grid = |lo: f64, hi: f64| (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64);
    let mut t = Table::new("curves", &["curve", "eta", "chsh1", "chsh2"]);
    for c1 in grid(PROJECTIVE_LO, projective_hi()) {
        let c2 = projective_bound(c1).map_err(numerical)?;
        t.push(vec!["projective".into(), Cell::Empty, c1.into(), c2.into()]);
    }
    let tsirelson = 2.0 * SQRT_2;
    for c in grid(0.0, tsirelson) {
        t.push(vec!["local_chsh1".into(), Cell::Empty, 2.0.into(), c.into()]);
    }
    for c in grid(0.0, tsirelson) {
        t.push(vec!["local_chsh2".into(), Cell::Empty, c.into(), 2.0.into()]);
    }
    for eta in grid(0.0, 1.0) {
        let c1 = tsirelson * eta;
        let c2 = SQRT_2 * (1.0 + (1.0 - eta * eta).max(0.0).sqrt());
        t.push(vec!["unsharp".into(), eta.into(), c1.into(), c2.into()]);
    }
    let tables = [t];
    let mut manifest = manifest_for("tradeoff", None, None);
    record_outputs(&mut manifest, common, &tables, &[]);
    emit(&manifest, &tables, None, common.output.as_deref(), common.format)
}
