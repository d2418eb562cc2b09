//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | estimation failed (too few observations, rank deficiency, ...) |
//! | 2 | assumption violation: overlap, propensity at the boundary, or unmatched treated nodes under `--strict` |
//! | 3 | usage, parse, schema or parameter error |
//! | 4 | I/O error |
//!
//! Reports go to stdout (or `--output`); everything else goes to stderr.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{adet_ols, ols_fit, pooled_adet_ci, AdetReport, Estimator, DEFAULT_PROPENSITY_EPS};
use crate::k0infer::{infer_k0, K0Config, K0ConfidenceSet, Ladder};
use crate::netgraph::{all_depth_profiles, ExposureMapping};
use crate::partition::{kappa_diagnostic, partition_from_profiles, GroupPartition, KAPPA_WARN_THRESHOLD};
use crate::sfl::{adet_sfl_with_eps, dc_solve};
use crate::simharness::{presets, run_adet_study, run_k0_study, AdetStudySpec, StudyMethod};

use config::{CandidateModeArg, EstimatorArg, MethodArg, RunConfig, StudyKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const DEFAULT_MAPPING: &str = "prop:0.05";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Overlap { .. } | Error::PropensityAtBoundary { .. } | Error::UnmatchedTreated { .. } => {
            EXIT_ASSUMPTION
        }
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::InvalidParameter(_)
        | Error::NodeOutOfRange { .. }
        | Error::SelfLoop { .. }
        | Error::DuplicateEdge { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFiniteOutcome(_) => EXIT_USAGE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hnci", version, about = "ADET confidence intervals and k0 confidence sets on one observed network")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check inputs: overlap, balanced features and κ·d^{3/2} per k.
    Validate(ValidateArgs),
    /// Confidence interval for the average direct effect on the treated.
    Adet(AdetArgs),
    /// Confidence set for the interference neighborhood size.
    K0(K0Args),
    /// Run a simulation preset.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Nodes CSV with header `node_id,z,y,p`.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Edges CSV with header `u,v`.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Exposure mapping: `prop:<step>`, `prop-ceil:<step>`, `count:<width>` or `raw-prop`.
    #[arg(long)]
    pub mapping: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub kappa_threshold: Option<f64>,
    /// Exit with code 2 when any k has unmatched treated nodes.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct AdetArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Neighborhood size; a conservative upper bound on the true one is enough.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fail (exit 2) on unmatched treated nodes instead of dropping them.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub propensity_eps: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct K0Args {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub max_k: Option<usize>,
    #[arg(long, value_enum)]
    pub candidate_mode: Option<CandidateModeArg>,
    /// Repro copies for the candidate set.
    #[arg(long = "B", visible_alias = "b")]
    pub b: Option<usize>,
    /// Conditional draws per candidate.
    #[arg(long = "J", visible_alias = "j")]
    pub j: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `staircase`, `setting1`..`setting4` or `k0-setting<S>-k<K>`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub study: Option<StudyKind>,
    #[arg(long)]
    pub outer_reps: Option<usize>,
    #[arg(long)]
    pub inner_reps: Option<usize>,
    /// Comma-separated neighborhood sizes.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Comma-separated: pooled-ols, or-ols, dr-ols, or-sfl, dr-sfl.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_redraws: Option<usize>,
    #[arg(long)]
    pub max_k: Option<usize>,
    #[arg(long = "B", visible_alias = "b")]
    pub b: Option<usize>,
    #[arg(long = "J", visible_alias = "j")]
    pub j: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Option<Vec<CandidateModeArg>>,
    /// Also write the summary table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

/// Envelope around every JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// SHA-256 over the nodes file then the edges file.
    pub input_sha256: Option<String>,
    pub mapping: Option<String>,
    pub report: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    fn of(xs: impl Iterator<Item = f64>) -> Summary {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for x in xs {
            min = min.min(x);
            max = max.max(x);
            sum += x;
            n += 1;
        }
        Summary {
            min,
            mean: sum / n.max(1) as f64,
            max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCheck {
    pub k: usize,
    pub d: usize,
    pub min_group_size: usize,
    /// Treated node ids without an untreated match.
    pub violations: Vec<String>,
    pub kappa_d32: f64,
    pub kappa_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    pub edges: usize,
    pub degree: Summary,
    pub propensity: Summary,
    pub per_k: Vec<KCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SflSummary {
    pub lambda1: f64,
    pub lambda2: f64,
    pub merged_groups: usize,
    pub converged: bool,
    pub safeguard_stop: bool,
    pub box_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdetOutput {
    #[serde(flatten)]
    pub adet: AdetReport,
    /// Unmatched treated nodes left out of the estimand (non-strict mode).
    pub dropped_treated: Vec<String>,
    pub sfl: Option<SflSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K0Output {
    pub confidence_set: K0ConfidenceSet,
    /// Neighborhood size to pass to `adet`: the largest retained k.
    pub recommended_k: Option<usize>,
    pub config: K0Config,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("HNCI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("HNCI_THREADS={v:?} is not a positive integer")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::warn!("thread pool already initialised; HNCI_THREADS ignored");
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.seed);
    let output = cli.output.clone().or_else(|| file.output.clone());
    let (json, deferred) = match &cli.command {
        Command::Validate(a) => cmd_validate(a, &file, seed)?,
        Command::Adet(a) => (cmd_adet(a, &file, seed)?, None),
        Command::K0(a) => (cmd_k0(a, &file, seed)?, None),
        Command::Simulate(a) => (cmd_simulate(a, &file, seed)?, None),
    };
    emit(&json, output.as_deref())?;
    deferred.map_or(Ok(()), Err)
}

fn emit(json: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, format!("{json}\n")).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Schema(format!("report serialization: {e}")))
}

struct Resolved {
    input: io::LoadedInput,
    mapping: ExposureMapping,
}

fn resolve_input(a: &InputArgs, file: &RunConfig) -> Result<Resolved> {
    let need = |flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str| {
        flag.clone()
            .or_else(|| cfg.clone())
            .ok_or_else(|| Error::InvalidParameter(format!("--{name} is required (flag or [input].{name})")))
    };
    let nodes = need(&a.nodes, &file.input.nodes, "nodes")?;
    let edges = need(&a.edges, &file.input.edges, "edges")?;
    let spec = a
        .mapping
        .clone()
        .or_else(|| file.input.mapping.clone())
        .unwrap_or_else(|| DEFAULT_MAPPING.to_string());
    let mapping = ExposureMapping::parse(&spec)?;
    let input = io::load_input(&nodes, &edges)?;
    log::info!(
        "loaded {} nodes, {} edges, {} treated",
        input.graph.n(),
        input.graph.edge_count(),
        input.graph.treated_count()
    );
    Ok(Resolved { input, mapping })
}

fn envelope<T>(command: &str, seed: Option<u64>, r: Option<&Resolved>, report: T) -> Envelope<T> {
    Envelope {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        input_sha256: r.map(|r| r.input.sha256.clone()),
        mapping: r.map(|r| r.mapping.label()),
        report,
    }
}

// Neither command draws random numbers; the seed is recorded for provenance.
fn cmd_validate(a: &ValidateArgs, file: &RunConfig, seed: Option<u64>) -> Result<(String, Option<Error>)> {
    let r = resolve_input(&a.input, file)?;
    let g = &r.input.graph;
    let k_max = a.k_max.or(file.validate.k_max).unwrap_or(3);
    let threshold = a
        .kappa_threshold
        .or(file.validate.kappa_threshold)
        .unwrap_or(KAPPA_WARN_THRESHOLD);
    let profiles = all_depth_profiles(g, k_max);
    let mut per_k = Vec::new();
    let mut strict_fail = None;
    for k in 0..=k_max {
        let part = partition_from_profiles(g, &profiles, &r.mapping, k)?;
        if strict_fail.is_none() {
            strict_fail = part.require_balanced().err();
        }
        let kd = kappa_diagnostic(&part);
        if kd > threshold {
            log::warn!("k = {k}: kappa*d^1.5 = {kd:.3} exceeds {threshold}");
        }
        if !part.violations.is_empty() {
            log::warn!("k = {k}: {} treated nodes have no untreated match", part.violations.len());
        }
        per_k.push(KCheck {
            k,
            d: part.d(),
            min_group_size: part.group_sizes().into_iter().min().unwrap_or(0),
            violations: part.violations.iter().map(|&i| r.input.ids[i].clone()).collect(),
            kappa_d32: kd,
            kappa_warning: kd > threshold,
        });
    }
    let n1 = g.treated_count();
    let report = ValidateReport {
        n: g.n(),
        n0: g.n() - n1,
        n1,
        edges: g.edge_count(),
        degree: Summary::of((0..g.n()).map(|i| g.degree(i) as f64)),
        propensity: Summary::of(g.propensities().iter().copied()),
        per_k,
    };
    let json = to_json(&envelope("validate", Some(seed.unwrap_or(0)), Some(&r), report))?;
    // In strict mode the report is still emitted before failing.
    Ok((json, strict_fail.filter(|_| a.strict)))
}

fn cmd_adet(a: &AdetArgs, file: &RunConfig, seed: Option<u64>) -> Result<String> {
    let cfg = &file.adet;
    let k = a
        .k
        .or(cfg.k)
        .ok_or_else(|| Error::InvalidParameter("--k is required (flag or [adet].k)".into()))?;
    let method = a.method.or(cfg.method).unwrap_or(MethodArg::Ols);
    let estimator = a.estimator.or(cfg.estimator).unwrap_or(EstimatorArg::Dr);
    let alpha = a.alpha.or(cfg.alpha).unwrap_or(0.05);
    let strict = a.strict || cfg.strict.unwrap_or(false);
    let eps = a.propensity_eps.or(cfg.propensity_eps).unwrap_or(DEFAULT_PROPENSITY_EPS);
    let r = resolve_input(&a.input, file)?;
    let g = &r.input.graph;

    if estimator == EstimatorArg::Pooled {
        let rep = pooled_adet_ci(g, &r.mapping, k, alpha)?;
        let out = AdetOutput {
            adet: rep,
            dropped_treated: vec![],
            sfl: None,
        };
        return to_json(&envelope("adet", Some(seed.unwrap_or(0)), Some(&r), out));
    }
    let est = match estimator {
        EstimatorArg::Or => Estimator::Or,
        _ => Estimator::Dr,
    };
    let full = partition_from_profiles(g, &all_depth_profiles(g, k), &r.mapping, k)?;
    let (part, dropped): (GroupPartition, Vec<usize>) = if strict {
        if let Some(&first) = full.violations.first() {
            log::error!("k = {k}: treated node {:?} has no untreated match", r.input.ids[first]);
        }
        full.require_balanced()?;
        (full, vec![])
    } else {
        let (p, dropped) = full.trim_unmatched();
        if !dropped.is_empty() {
            log::warn!(
                "k = {k}: {} unmatched treated nodes dropped from the estimand (use --strict to fail)",
                dropped.len()
            );
        }
        (p, dropped)
    };
    let (adet, sfl) = match method {
        MethodArg::Ols => (adet_ols(g, &part, &ols_fit(g, &part)?, alpha, est, eps)?, None),
        MethodArg::Sfl => {
            let mut sc = cfg.sfl.resolve(g.n());
            if let Some(l) = a.lambda1 {
                sc.lambda1 = l;
            }
            if let Some(l) = a.lambda2 {
                sc.lambda2 = l;
            }
            let sol = dc_solve(&part.untreated_outcomes(g), &part, &sc)?;
            if !sol.converged {
                log::warn!("SFL did not converge (primal residual {:.3e})", sol.primal_residual);
            }
            if sol.box_violation {
                log::warn!("SFL coefficients left the box 10*max|y|");
            }
            let rep = adet_sfl_with_eps(g, &part, &sol, alpha, est, eps)?;
            let summary = SflSummary {
                lambda1: sc.lambda1,
                lambda2: sc.lambda2,
                merged_groups: sol.m(),
                converged: sol.converged,
                safeguard_stop: sol.safeguard_stop,
                box_violation: sol.box_violation,
            };
            (rep, Some(summary))
        }
    };
    if adet.diagnostics.kappa_warning {
        log::warn!("kappa*d^1.5 = {:.3} > {KAPPA_WARN_THRESHOLD}", adet.diagnostics.kappa_d32);
    }
    let out = AdetOutput {
        adet,
        dropped_treated: dropped.iter().map(|&i| r.input.ids[i].clone()).collect(),
        sfl,
    };
    to_json(&envelope("adet", Some(seed.unwrap_or(0)), Some(&r), out))
}

fn cmd_k0(a: &K0Args, file: &RunConfig, seed: Option<u64>) -> Result<String> {
    let s = &file.k0;
    let mut cfg = K0Config::default();
    cfg.k_max = a.max_k.or(s.max_k).unwrap_or(cfg.k_max);
    cfg.b = a.b.or(s.b).unwrap_or(cfg.b);
    cfg.j = a.j.or(s.j).unwrap_or(cfg.j);
    cfg.alpha = a.alpha.or(s.alpha).unwrap_or(cfg.alpha);
    cfg.seed = seed.unwrap_or(0);
    cfg.lambda_grid = s.lambda_grid.clone();
    cfg.lambda_prime_grid = s.lambda_prime_grid.clone();
    if let Some(sel) = s.lambda_selection {
        cfg.lambda_selection = sel;
    }
    if let Some(m) = a.candidate_mode.or(s.candidate_mode) {
        cfg.candidate_mode = m.into();
    }
    cfg.validate()?;
    let r = resolve_input(&a.input, file)?;
    let g = &r.input.graph;
    let profiles = all_depth_profiles(g, cfg.k_max);
    let parts: Vec<GroupPartition> = (0..=cfg.k_max)
        .map(|k| partition_from_profiles(g, &profiles, &r.mapping, k))
        .collect::<Result<_>>()?;
    let ladder = Ladder::new(&parts)?;
    let set = infer_k0(&parts[0].untreated_outcomes(g), &ladder, &cfg)?;
    let out = K0Output {
        recommended_k: set.k_alpha_star,
        confidence_set: set,
        config: cfg,
    };
    to_json(&envelope("k0", Some(out.config.seed), Some(&r), out))
}

fn cmd_simulate(a: &SimulateArgs, file: &RunConfig, seed: Option<u64>) -> Result<String> {
    let s = &file.simulate;
    let name = a
        .preset
        .clone()
        .or_else(|| s.preset.clone())
        .ok_or_else(|| Error::InvalidParameter("--preset is required (flag or [simulate].preset)".into()))?;
    let mut design = presets::by_name(&name)?;
    if let Some(v) = a.outer_reps.or(s.outer_reps) {
        design.outer_reps = v;
    }
    if let Some(v) = a.inner_reps.or(s.inner_reps) {
        design.inner_reps = v;
    }
    if let Some(v) = seed {
        design.seed = v;
    }
    let default_kind = if name.starts_with("k0-") { StudyKind::K0 } else { StudyKind::Adet };
    let kind = a.study.or(s.study).unwrap_or(default_kind);
    let table = a.table.clone().or_else(|| s.table.clone());
    let used_seed = Some(design.seed);

    let (json, csv) = match kind {
        StudyKind::Adet => {
            let k_values = a
                .k_values
                .clone()
                .or_else(|| s.k_values.clone())
                .unwrap_or_else(|| if name == "staircase" { (0..=6).collect() } else { (0..=4).collect() });
            let methods = match a.methods.clone().or_else(|| s.methods.clone()) {
                Some(ms) => ms.iter().map(|m| StudyMethod::parse(m)).collect::<Result<Vec<_>>>()?,
                None if name == "staircase" => vec![StudyMethod::PooledOls],
                None => StudyMethod::FOUR.to_vec(),
            };
            let mut spec = AdetStudySpec::new(k_values, methods);
            if let Some(v) = a.alpha.or(s.alpha) {
                spec.alpha = v;
            }
            if let Some(v) = a.max_redraws.or(s.max_redraws) {
                spec.max_redraws = v;
            }
            let res = run_adet_study(&design, &spec)?;
            (to_json(&envelope("simulate", used_seed, None, &res))?, res.to_csv())
        }
        StudyKind::K0 => {
            let mut cfg = K0Config::default();
            cfg.k_max = a.max_k.or(s.max_k).unwrap_or(cfg.k_max);
            cfg.b = a.b.or(s.b).unwrap_or(cfg.b);
            cfg.j = a.j.or(s.j).unwrap_or(cfg.j);
            cfg.alpha = a.alpha.or(s.alpha).unwrap_or(cfg.alpha);
            cfg.seed = design.seed;
            let modes: Vec<_> = a
                .modes
                .clone()
                .or_else(|| s.modes.clone())
                .unwrap_or_else(|| vec![CandidateModeArg::Repro, CandidateModeArg::Range])
                .into_iter()
                .map(Into::into)
                .collect();
            let res = run_k0_study(&design, &cfg, &modes)?;
            (to_json(&envelope("simulate", used_seed, None, &res))?, res.to_csv())
        }
    };
    if let Some(p) = table {
        std::fs::write(&p, csv).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(json)
}
