//! The `fair-screen` command line.
//!
//! Exit codes: 0 success, 1 a check or reproduction failed, 2 usage or
//! input error, 3 a solver hit its size budget.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::eodds::eodds_precision_bound;
use crate::error::Error;
use crate::exact::solve_exact;
use crate::fairness::{check_eo, check_eodds, FairnessReport, Scope, DEFAULT_TOLERANCE};
use crate::fptas::{solve_fptas_f, solve_fptas_g};
use crate::groupblind::solve_groupblind;
use crate::model::{evaluate, Evaluation, Group, Pipeline, Policy, TestStats};
use crate::objective::Objective;
use crate::oracle::{grid_search, structured_grid_search, Constraint, GridSpec};
use crate::ratio::{max_precision, solve_ratio, two_approx, RatioPolicyKind};
use crate::repro;
use crate::report::SolverReport;

pub const THREADS_ENV: &str = "FAIR_SCREEN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fair-screen", version, about = "Fair promotion policies for multi-stage screening pipelines")]
struct Cli {
    /// Worker threads for the parallel solvers; 0 uses all cores.
    /// FAIR_SCREEN_THREADS takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a policy and check both fairness criteria at both scopes.
    Evaluate {
        spec: PathBuf,
        policy: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Compute a policy with one of the solvers.
    Solve(SolveArgs),
    /// Check a policy against Equal Opportunity or Equalized Odds.
    Verify {
        spec: PathBuf,
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Eo)]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value_t = ScopeArg::Final)]
        scope: ScopeArg,
        /// Overrides the pipeline file's tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Run the built-in worked examples; all of them when no id is given.
    Repro {
        id: Option<String>,
        #[command(flatten)]
        out: Output,
    },
    /// Print the precision ceiling with and without Equalized Odds.
    Bounds {
        spec: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Debug, Args)]
struct Output {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Eo,
    Eodds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Final,
    PerStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ratio,
    TwoApprox,
    Exact,
    Fptas,
    Groupblind,
    Oracle,
    StructuredOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Precision,
    Linear,
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConstraintArg {
    Eo,
    Eodds,
    None,
}

#[derive(Debug, Args)]
struct SolveArgs {
    spec: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Defaults to precision for `ratio` and linear otherwise.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Weight on precision; defaults to 0.5.
    #[arg(long)]
    alpha: Option<f64>,
    /// Approximation parameter for `fptas` and `groupblind`; defaults to 0.1.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = RatioKindArg::FirstStage)]
    ratio_kind: RatioKindArg,
    /// Grid steps per probability for `oracle`.
    #[arg(long, default_value_t = 10)]
    steps: u32,
    #[arg(long, value_enum, default_value_t = ConstraintArg::Eo)]
    constraint: ConstraintArg,
    /// Common-tpr scan points for `structured-oracle`.
    #[arg(long, default_value_t = 2001)]
    t_resolution: usize,
    #[command(flatten)]
    out: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RatioKindArg {
    FirstStage,
    PerStage,
}

/// A failed command: message and exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::SizeLimit { .. }) { 3 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("error: {THREADS_ENV}={v:?} is not a thread count");
                return 2;
            }
        },
        Err(_) => cli.threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Evaluate { spec, policy, out } => cmd_evaluate(&spec, &policy, out.format),
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify {
            spec,
            policy,
            criterion,
            scope,
            tolerance,
            out,
        } => cmd_verify(&spec, &policy, criterion, scope, tolerance, out.format),
        Command::Repro { id, out } => cmd_repro(id.as_deref(), out.format),
        Command::Bounds { spec, out } => cmd_bounds(&spec, out.format),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    groups: Vec<SpecGroup>,
    tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecGroup {
    id: String,
    weight: Option<f64>,
    base_rate: Option<f64>,
    q: Option<f64>,
    u: Option<f64>,
    stages: Vec<SpecStage>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecStage {
    tau1: f64,
    tau0: f64,
}

/// A parsed pipeline file.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub pipeline: Pipeline,
    pub tolerance: f64,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let at = if at == "." { String::new() } else { format!(" at {at}") };
        Failure::usage(format!("{}{at}: {}", path.display(), e.inner()))
    })
}

/// Masses from either raw `q`/`u` or `weight` and `base_rate`, then
/// rescaled to total 1.
fn spec_masses(groups: &[SpecGroup]) -> std::result::Result<Vec<(f64, f64)>, String> {
    let raw = groups
        .iter()
        .enumerate()
        .map(|(i, g)| match (g.weight, g.base_rate, g.q, g.u) {
            (None, None, Some(q), Some(u)) => Ok((q, u)),
            (Some(w), Some(b), None, None) if (0.0..=1.0).contains(&b) => Ok((w * b, w * (1.0 - b))),
            (Some(_), Some(b), None, None) => Err(format!("groups[{i}].base_rate: {b} is outside [0,1]")),
            (Some(_), None, None, None) => Err(format!("groups[{i}]: weight needs a base_rate")),
            _ => Err(format!("groups[{i}]: give either q and u, or weight and base_rate")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let by_weight = groups.iter().map(|g| g.weight.is_some());
    if by_weight.clone().any(|w| w) && by_weight.clone().any(|w| !w) {
        return Err("groups mix weight/base_rate with q/u".into());
    }
    for (i, &(q, u)) in raw.iter().enumerate() {
        if !(q.is_finite() && u.is_finite() && q >= 0.0 && u >= 0.0) {
            return Err(format!("groups[{i}]: masses must be finite and non-negative"));
        }
    }
    let total: f64 = raw.iter().map(|(q, u)| q + u).sum();
    if total <= 0.0 {
        return Err("total mass is zero".into());
    }
    Ok(raw.into_iter().map(|(q, u)| (q / total, u / total)).collect())
}

/// Reads a pipeline file.
pub fn load_spec(path: &Path) -> Result<LoadedSpec, String> {
    load_spec_inner(path).map_err(|f| f.message)
}

fn load_spec_inner(path: &Path) -> Result<LoadedSpec, Failure> {
    let file: SpecFile = parse_json(path, &read(path)?)?;
    let masses = spec_masses(&file.groups).map_err(|m| Failure::usage(format!("{}: {m}", path.display())))?;
    let mut groups = Vec::with_capacity(file.groups.len());
    for (i, (g, (q, u))) in file.groups.into_iter().zip(masses).enumerate() {
        let stages = g
            .stages
            .iter()
            .enumerate()
            .map(|(j, s)| {
                TestStats::weak(s.tau1, s.tau0)
                    .map_err(|e| Failure::usage(format!("{}: groups[{i}].stages[{j}]: {e}", path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        groups.push(Group::new(g.id, q, u, stages));
    }
    let pipeline = Pipeline::new(groups).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let tolerance = file.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Failure::usage(format!("{}: tolerance must be non-negative", path.display())));
    }
    Ok(LoadedSpec { pipeline, tolerance })
}

/// Reads a policy file. A `solve` report is accepted too; its `policy`
/// field is used.
pub fn load_policy(path: &Path) -> Result<Policy, String> {
    load_policy_inner(path).map_err(|f| f.message)
}

fn load_policy_inner(path: &Path) -> Result<Policy, Failure> {
    let text = read(path)?;
    let value: serde_json::Value = parse_json(path, &text)?;
    if let Some(inner) = value.get("policy") {
        let policy = serde_path_to_error::deserialize(inner)
            .map_err(|e| Failure::usage(format!("{} at policy.{}: {}", path.display(), e.path(), e.inner())))?;
        return Ok(policy);
    }
    parse_json(path, &text)
}

fn fairness_all(pl: &Pipeline, pol: &Policy, tol: f64) -> crate::Result<Vec<FairnessReport>> {
    Ok(vec![
        check_eo(pl, pol, tol, Scope::Final)?,
        check_eo(pl, pol, tol, Scope::PerStage)?,
        check_eodds(pl, pol, tol, Scope::Final)?,
        check_eodds(pl, pol, tol, Scope::PerStage)?,
    ])
}

fn emit_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), fmt6)
}

fn render_evaluation(s: &mut String, pl: &Pipeline, pol: &Policy, ev: &Evaluation) {
    let rows = pol.aligned(pl).expect("validated policy");
    let width = pl.groups().iter().map(|g| g.id.len()).max().unwrap_or(0).max(5);
    let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}  policy (pi1, pi0) per stage", "group", "tpr", "fpr");
    for ((g, r), row) in pl.groups().iter().zip(&ev.groups).zip(rows) {
        let stages: Vec<String> = row.iter().map(|p| format!("({}, {})", fmt6(p.pi1), fmt6(p.pi0))).collect();
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}  {}", g.id, fmt6(r.tpr), fmt6(r.fpr), stages.join(" "));
    }
    let _ = writeln!(s, "recall     {}", fmt6(ev.recall));
    let _ = writeln!(s, "precision  {}", fmt_opt(ev.precision));
}

fn render_fairness(s: &mut String, reports: &[FairnessReport]) {
    for r in reports {
        let scope = match r.scope {
            Scope::Final => "final",
            Scope::PerStage => "per-stage",
        };
        let verdict = if r.satisfied { "satisfied" } else { "violated" };
        let witness = r
            .witness
            .as_ref()
            .map(|(a, b)| format!(" ({a} vs {b}, stage {})", r.stage))
            .unwrap_or_default();
        let _ = writeln!(s, "{:<6} {:<10} gap {}  {verdict}{witness}", r.criterion.name(), scope, fmt6(r.max_gap));
    }
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    policy: &'a Policy,
    evaluation: &'a Evaluation,
    fairness: &'a [FairnessReport],
}

fn cmd_evaluate(spec: &Path, policy: &Path, format: Format) -> CmdResult {
    let spec = load_spec_inner(spec)?;
    let pol = load_policy_inner(policy)?;
    let pl = &spec.pipeline;
    let ev = evaluate(pl, &pol)?;
    let fairness = fairness_all(pl, &pol, spec.tolerance)?;
    match format {
        Format::Json => emit_json(&EvaluateOutput {
            policy: &pol,
            evaluation: &ev,
            fairness: &fairness,
        }),
        Format::Table => {
            let mut s = String::new();
            render_evaluation(&mut s, pl, &pol, &ev);
            render_fairness(&mut s, &fairness);
            print!("{s}");
        }
    }
    Ok(0)
}

fn objective_for(args: &SolveArgs) -> Result<Objective, Failure> {
    let kind = args.objective.unwrap_or(match args.method {
        MethodArg::Ratio => ObjectiveArg::Precision,
        _ => ObjectiveArg::Linear,
    });
    let alpha = args.alpha.unwrap_or(0.5);
    let obj = match kind {
        ObjectiveArg::Precision if args.alpha.is_some() => {
            return Err(Failure::usage("--alpha does not apply to the precision objective"))
        }
        ObjectiveArg::Precision => Objective::precision(),
        ObjectiveArg::Linear => Objective::linear(alpha),
        ObjectiveArg::Reciprocal => Objective::reciprocal(alpha),
    };
    obj.validate()?;
    let incompatible = match args.method {
        MethodArg::Ratio => kind != ObjectiveArg::Precision,
        MethodArg::TwoApprox => kind == ObjectiveArg::Reciprocal,
        _ => false,
    };
    if incompatible {
        return Err(Failure::usage(format!(
            "method {:?} does not accept objective {}",
            args.method,
            obj.label()
        )));
    }
    let uses_eps = matches!(args.method, MethodArg::Fptas | MethodArg::Groupblind);
    if args.eps.is_some() && !uses_eps {
        return Err(Failure::usage("--eps applies only to fptas and groupblind"));
    }
    Ok(obj)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    #[serde(flatten)]
    report: &'a SolverReport,
    fairness: &'a [FairnessReport],
}

fn cmd_solve(args: &SolveArgs) -> CmdResult {
    let spec = load_spec_inner(&args.spec)?;
    let pl = &spec.pipeline;
    let obj = objective_for(args)?;
    let eps = args.eps.unwrap_or(0.1);
    let report = match args.method {
        MethodArg::Ratio => solve_ratio(
            pl,
            match args.ratio_kind {
                RatioKindArg::FirstStage => RatioPolicyKind::FirstStage,
                RatioKindArg::PerStage => RatioPolicyKind::PerStage,
            },
        )?,
        MethodArg::TwoApprox => two_approx(pl, &obj)?,
        MethodArg::Exact => solve_exact(pl, &obj)?,
        MethodArg::Fptas => match obj {
            Objective::Linear { alpha } => solve_fptas_f(pl, alpha, eps)?,
            Objective::Reciprocal { alpha } => solve_fptas_g(pl, alpha, eps)?,
            Objective::Custom(_) => unreachable!("the CLI builds no custom objectives"),
        },
        MethodArg::Groupblind => solve_groupblind(pl, &obj, eps)?,
        MethodArg::Oracle => {
            let constraint = match args.constraint {
                ConstraintArg::Eo => Constraint::Eo,
                ConstraintArg::Eodds => Constraint::Eodds,
                ConstraintArg::None => Constraint::None,
            };
            grid_search(pl, &obj, &GridSpec::new(args.steps, spec.tolerance.max(1e-9))?, constraint)?
        }
        MethodArg::StructuredOracle => structured_grid_search(pl, &obj, args.t_resolution)?,
    };
    let fairness = fairness_all(pl, &report.policy, spec.tolerance)?;
    match args.out.format {
        Format::Json => emit_json(&SolveOutput {
            report: &report,
            fairness: &fairness,
        }),
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "method     {}", serde_json::to_value(report.method).expect("enum").as_str().unwrap_or("?"));
            let _ = writeln!(s, "objective  {}", report.objective);
            if let Some(e) = report.eps {
                let _ = writeln!(s, "eps        {e}");
            }
            render_evaluation(&mut s, pl, &report.policy, &report.evaluation);
            let _ = writeln!(s, "score      {}", fmt6(report.score));
            render_fairness(&mut s, &fairness);
            let d = &report.diagnostics;
            let _ = writeln!(
                s,
                "configs {} (feasible {}), dp cells {}, updates {}, candidates {}, {:.1} ms",
                d.configs_enumerated, d.configs_feasible, d.dp_cells, d.cell_updates, d.candidates_scored, d.wall_time_ms
            );
            print!("{s}");
        }
    }
    Ok(0)
}

fn cmd_verify(
    spec: &Path,
    policy: &Path,
    criterion: CriterionArg,
    scope: ScopeArg,
    tolerance: Option<f64>,
    format: Format,
) -> CmdResult {
    let spec = load_spec_inner(spec)?;
    let pol = load_policy_inner(policy)?;
    let tol = tolerance.unwrap_or(spec.tolerance);
    let scope = match scope {
        ScopeArg::Final => Scope::Final,
        ScopeArg::PerStage => Scope::PerStage,
    };
    let report = match criterion {
        CriterionArg::Eo => check_eo(&spec.pipeline, &pol, tol, scope)?,
        CriterionArg::Eodds => check_eodds(&spec.pipeline, &pol, tol, scope)?,
    };
    match format {
        Format::Json => emit_json(&report),
        Format::Table => {
            let mut s = String::new();
            render_fairness(&mut s, std::slice::from_ref(&report));
            print!("{s}");
        }
    }
    Ok(if report.satisfied { 0 } else { 1 })
}

fn cmd_repro(id: Option<&str>, format: Format) -> CmdResult {
    let ids: Vec<&str> = match id {
        Some(id) => vec![id],
        None => repro::IDS.to_vec(),
    };
    let mut results = Vec::with_capacity(ids.len());
    for id in ids {
        let r = repro::run(id).ok_or_else(|| {
            Failure::usage(format!("unknown example {id:?}; known: {}", repro::IDS.join(", ")))
        })??;
        results.push(r);
    }
    let ok = results.iter().all(repro::ReproResult::passed);
    match format {
        Format::Json => emit_json(&results),
        Format::Table => {
            for r in &results {
                for c in &r.checks {
                    let tag = if c.pass { "PASS" } else { "FAIL" };
                    println!("{tag} {}: {} = {} (expected {})", r.id, c.name, c.actual, c.expected);
                }
            }
        }
    }
    Ok(if ok { 0 } else { 1 })
}

#[derive(Serialize)]
struct BoundsOutput {
    max_precision: f64,
    eodds_precision_bound: f64,
    rho: f64,
    gap_ratio: f64,
}

fn cmd_bounds(spec: &Path, format: Format) -> CmdResult {
    let spec = load_spec_inner(spec)?;
    let mp = max_precision(&spec.pipeline);
    let b = eodds_precision_bound(&spec.pipeline);
    let out = BoundsOutput {
        max_precision: mp,
        eodds_precision_bound: b.value,
        rho: b.rho,
        gap_ratio: mp / b.value,
    };
    match format {
        Format::Json => emit_json(&out),
        Format::Table => {
            println!("max precision (EO)       {}", fmt6(out.max_precision));
            println!("EOdds precision bound    {}", fmt6(out.eodds_precision_bound));
            println!("rho                      {}", fmt6(out.rho));
            println!("ratio                    {}", fmt6(out.gap_ratio));
        }
    }
    Ok(0)
}
