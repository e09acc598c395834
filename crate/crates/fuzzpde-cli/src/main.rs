//! Command-line front end: crisp solves, sign classification, alpha-cut
//! envelopes, and reproduction runs against the built-in problem registry.
//!
//! Every run that produces files also writes a `manifest.json` (last, so its
//! presence marks a complete run) recording the invocation, overrides, and
//! output list. Errors go to stderr as a single JSON line; exit codes are
//! 0 success, 2 I/O, 3 parse/validation, 4 numerical, 5 reproduce mismatch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::SecondsFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use expr::Expr;
use fuzzpde::bfs::{self, ClassificationReport, Sign, SignInfo};
use fuzzpde::grid::{GridFunction, GridSpec};
use fuzzpde::problem::{
    instantiate, load_problem_file, uniform_corners, CornerChoice, HeatLikeProblem, ProblemError,
    ProblemFile, VimOverrides,
};
use fuzzpde::registry::{self, RegistryError};
use fuzzpde::ss::{
    assemble_system, solve_all_levels, ss_fuzzy_solution, validity_region, RegionBox, SsError,
    SsSolution, ValidityMask,
};
use fuzzpde::vim::{solve_crisp_on, sup_error_against, VimConfig, VimError};
use fuzzpde::BfsError;

const CRISP_ORACLE_LIMIT: f64 = 5e-4;

#[derive(Parser)]
#[command(
    name = "fuzzpde",
    version,
    about = "Fuzzy-parameter heat-like PDE solver and classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one crisp instance and write solution.csv + report.json
    Solve(SolveArgs),
    /// Run the sign analysis and write classification.json
    Classify(ClassifyArgs),
    /// Solve the endpoint system over all alpha levels; write envelope.csv + region.json
    Envelope(EnvelopeArgs),
    /// Re-run built-in entries against their recorded oracles
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Problem file (TOML)
    file: Option<PathBuf>,
    /// Built-in problem id instead of a file
    #[arg(long, value_name = "ID", conflicts_with = "file")]
    registry: Option<u8>,
}

#[derive(Args)]
struct CommonOpts {
    /// Override the grid as NT,NX or NT,NX,NY (must match the problem dimension)
    #[arg(long, value_name = "NT,NX[,NY]")]
    grid: Option<String>,
    /// Override the number of alpha levels (at least 2)
    #[arg(long, value_name = "N")]
    alpha_levels: Option<usize>,
    /// Override the crisp iteration tolerance
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    /// Directory for output files
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    common: CommonOpts,
    /// Parameter corner to instantiate
    #[arg(long, value_enum, default_value_t = Corner::Peak)]
    corner: Corner,
    /// Alpha level for the corner cut (ignored for --corner peak)
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Closed-form reference expression; overrides any oracle in the file
    #[arg(long, value_name = "EXPR")]
    oracle: Option<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    common: CommonOpts,
    /// Crisp closed form to classify against; overrides any oracle in the file
    #[arg(long, value_name = "EXPR")]
    oracle: Option<String>,
}

#[derive(Args)]
struct EnvelopeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    common: CommonOpts,
    /// Probe points, semicolon separated: "t,x" or "t,x,y"; each prints one line
    #[arg(long, value_name = "PTS")]
    points: Option<String>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Built-in problem id; omit to run every entry
    #[arg(long, value_name = "ID")]
    registry: Option<u8>,
    /// Directory for the run manifest
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Corner {
    Lower,
    Peak,
    Upper,
}

impl From<Corner> for CornerChoice {
    fn from(c: Corner) -> Self {
        match c {
            Corner::Lower => CornerChoice::Lower,
            Corner::Peak => CornerChoice::Peak,
            Corner::Upper => CornerChoice::Upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Io,
    Parse,
    Numerical,
    Mismatch,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Io => 2,
            Kind::Parse => 3,
            Kind::Numerical => 4,
            Kind::Mismatch => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Numerical => "numerical",
            Kind::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug)]
struct CliError {
    kind: Kind,
    message: String,
}

impl CliError {
    fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Io,
            message: message.into(),
        }
    }

    fn parse(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Parse,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Numerical,
            message: message.into(),
        }
    }

    fn mismatch(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Mismatch,
            message: message.into(),
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<VimError> for CliError {
    fn from(e: VimError) -> Self {
        match e {
            VimError::BadConfig { .. } => CliError::parse(e.to_string()),
            _ => CliError::numerical(e.to_string()),
        }
    }
}

impl From<SsError> for CliError {
    fn from(e: SsError) -> Self {
        match e {
            SsError::InvalidAlpha { .. } | SsError::Problem(_) => CliError::parse(e.to_string()),
            _ => CliError::numerical(e.to_string()),
        }
    }
}

impl From<BfsError> for CliError {
    fn from(e: BfsError) -> Self {
        match e {
            BfsError::UndeclaredSymbol { .. } | BfsError::InvalidArgument { .. } => {
                CliError::parse(e.to_string())
            }
            _ => CliError::numerical(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit(&CliError::parse(e.to_string()));
            return ExitCode::from(3);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.kind.code();
            emit(&e);
            ExitCode::from(code)
        }
    }
}

fn emit(e: &CliError) {
    let line = json!({ "error": e.kind.name(), "message": e.message });
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Envelope(a) => cmd_envelope(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}

fn load_source(src: &SourceArgs) -> Result<(ProblemFile, String), CliError> {
    match (&src.file, src.registry) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
            let file = load_problem_file(&text)?;
            Ok((file, format!("file:{}", path.display())))
        }
        (None, Some(id)) => Ok((registry::load(id)?, format!("registry:{id}"))),
        (None, None) => Err(CliError::parse(
            "no problem given: pass a file path or --registry ID",
        )),
        (Some(_), Some(_)) => unreachable!("clap rejects file together with --registry"),
    }
}

fn apply_overrides(p: &mut HeatLikeProblem, opts: &CommonOpts) -> Result<(), CliError> {
    if let Some(spec) = &opts.grid {
        let nums: Result<Vec<usize>, _> = spec.split(',').map(|s| s.trim().parse()).collect();
        let nums =
            nums.map_err(|e| CliError::parse(format!("--grid {spec:?} is not NT,NX[,NY]: {e}")))?;
        let want = if p.dimension == 2 { 3 } else { 2 };
        if nums.len() != want {
            return Err(CliError::parse(format!(
                "--grid needs {want} values for a {}D problem, got {}",
                p.dimension,
                nums.len()
            )));
        }
        if nums.iter().any(|&n| n < 3) {
            return Err(CliError::parse("--grid axes need at least 3 nodes"));
        }
        p.domain.nt = nums[0];
        p.domain.nx = nums[1];
        if p.dimension == 2 {
            p.domain.ny = Some(nums[2]);
        }
    }
    if let Some(levels) = opts.alpha_levels {
        if levels < 2 {
            return Err(CliError::parse("--alpha-levels must be at least 2"));
        }
        p.alpha_level_count = levels;
    }
    if let Some(tol) = opts.tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(CliError::parse("--tol must be a positive finite number"));
        }
    }
    Ok(())
}

fn vim_config(file: &ProblemFile, opts: &CommonOpts) -> VimConfig {
    let mut cfg = VimConfig::default();
    if let Some(o) = &file.vim {
        cfg = cfg.with_overrides(o);
    }
    if let Some(tol) = opts.tol {
        cfg.tolerance = tol;
    }
    cfg
}

/// Resolve the crisp reference expression: flag first, then the file's oracle.
fn resolve_oracle(
    flag: &Option<String>,
    file: &ProblemFile,
    p: &HeatLikeProblem,
) -> Result<Option<Expr>, CliError> {
    let e = match flag {
        Some(src) => {
            let e = expr::parse(src)
                .map_err(|err| CliError::parse(format!("--oracle {src:?}: {err}")))?;
            check_oracle_symbols(&e, p)?;
            Some(e)
        }
        None => file.oracle.as_ref().and_then(|o| o.g.clone()),
    };
    Ok(e)
}

fn check_oracle_symbols(e: &Expr, p: &HeatLikeProblem) -> Result<(), CliError> {
    for sym in e.free_symbols() {
        let is_axis = sym == "t" || sym == "x" || (sym == "y" && p.dimension == 2);
        if !is_axis && p.param(&sym).is_none() {
            return Err(CliError::parse(format!(
                "--oracle references undeclared symbol '{sym}'"
            )));
        }
    }
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating output directory {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

struct ManifestInput<'a> {
    command: &'static str,
    source: &'a str,
    overrides: serde_json::Value,
    outputs: Vec<&'static str>,
}

fn overrides_json(opts: &CommonOpts) -> serde_json::Value {
    json!({
        "grid": opts.grid,
        "alpha_levels": opts.alpha_levels,
        "tol": opts.tol,
    })
}

/// Written after every other file so a manifest always describes a finished run.
fn write_manifest(dir: &Path, m: &ManifestInput) -> Result<(), CliError> {
    let mut outputs: Vec<&str> = m.outputs.clone();
    outputs.push("manifest.json");
    let args: Vec<String> = std::env::args().skip(1).collect();
    let doc = json!({
        "command": m.command,
        "args": args,
        "problem_source": m.source,
        "overrides": m.overrides,
        "version": env!("CARGO_PKG_VERSION"),
        "generated": chrono::Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        "outputs": outputs,
    });
    write_text(&dir.join("manifest.json"), &format!("{doc:#}\n"))
}

fn csv_value(v: f64) -> String {
    format!("{v:.11e}")
}

fn cmd_solve(a: SolveArgs) -> Result<(), CliError> {
    let (file, source) = load_source(&a.source)?;
    let mut p = file.problem.clone();
    apply_overrides(&mut p, &a.common)?;
    let cfg = vim_config(&file, &a.common);

    let corners = uniform_corners(&p, a.corner.into());
    let inst = instantiate(&p, &corners, a.alpha)?;
    let spec = p.grid_spec()?;
    let result = solve_crisp_on(&inst, &cfg, &spec)?;
    if !result.converged {
        return Err(CliError::numerical(format!(
            "iteration stalled at delta {:.3e} after {} iterations (tolerance {:.1e})",
            result.final_delta, result.iterations_used, cfg.tolerance
        )));
    }

    let oracle = resolve_oracle(&a.oracle, &file, &p)?;
    let oracle_err = match &oracle {
        Some(g) => {
            let reference = GridFunction::sample(&spec, g, inst.bindings())
                .map_err(|e| CliError::numerical(e.to_string()))?;
            Some(sup_error_against(&result, &reference)?)
        }
        None => None,
    };

    ensure_out_dir(&a.common.out)?;
    write_text(
        &a.common.out.join("solution.csv"),
        &solution_csv(&result.solution),
    )?;

    let bindings: BTreeMap<&str, f64> = p
        .param_names()
        .iter()
        .map(|&n| (n, inst.binding(n).unwrap_or(f64::NAN)))
        .collect();
    let report = json!({
        "corner": format!("{:?}", a.corner).to_lowercase(),
        "alpha": inst.alpha(),
        "bindings": bindings,
        "grid": { "nt": spec.t.n, "nx": spec.x.n, "ny": spec.y.as_ref().map(|a| a.n) },
        "iterations_used": result.iterations_used,
        "final_delta": result.final_delta,
        "residual_sup": result.residual_sup,
        "converged": result.converged,
        "oracle_sup_error": oracle_err,
    });
    write_text(&a.common.out.join("report.json"), &format!("{report:#}\n"))?;

    write_manifest(
        &a.common.out,
        &ManifestInput {
            command: "solve",
            source: &source,
            overrides: overrides_json(&a.common),
            outputs: vec!["solution.csv", "report.json"],
        },
    )?;

    match oracle_err {
        Some(err) => println!(
            "converged in {} iterations; residual sup {:.3e}; oracle sup error {:.3e}",
            result.iterations_used, result.residual_sup, err
        ),
        None => println!(
            "converged in {} iterations; residual sup {:.3e}",
            result.iterations_used, result.residual_sup
        ),
    }
    Ok(())
}

fn solution_csv(u: &GridFunction) -> String {
    let spec = u.spec();
    let two_dim = spec.is_two_dim();
    let mut out = String::new();
    out.push_str(if two_dim { "t,x,y,u\n" } else { "t,x,u\n" });
    let t_nodes = spec.t.nodes();
    let x_nodes = spec.x.nodes();
    let y_nodes: Vec<f64> = spec.y.as_ref().map_or_else(|| vec![0.0], |a| a.nodes());
    for (it, &t) in t_nodes.iter().enumerate() {
        for (ix, &x) in x_nodes.iter().enumerate() {
            for (iy, &y) in y_nodes.iter().enumerate() {
                let v = u.at(it, ix, iy);
                if two_dim {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        csv_value(t),
                        csv_value(x),
                        csv_value(y),
                        csv_value(v)
                    );
                } else {
                    let _ = writeln!(out, "{},{},{}", csv_value(t), csv_value(x), csv_value(v));
                }
            }
        }
    }
    out
}

fn sign_json(info: &SignInfo) -> serde_json::Value {
    json!({
        "sign": sign_name(info.sign),
        "positive_witness": info.positive.as_ref().map(|w| w.to_string()),
        "negative_witness": info.negative.as_ref().map(|w| w.to_string()),
    })
}

fn sign_name(s: Sign) -> &'static str {
    match s {
        Sign::Positive => "positive",
        Sign::Negative => "negative",
        Sign::Zero => "zero",
        Sign::Mixed => "mixed",
    }
}

fn partials_json(map: &BTreeMap<String, SignInfo>) -> serde_json::Value {
    let m: serde_json::Map<String, serde_json::Value> = map
        .iter()
        .map(|(k, v)| (k.clone(), sign_json(v)))
        .collect();
    serde_json::Value::Object(m)
}

fn region_json(region: &RegionBox) -> serde_json::Value {
    json!({
        "t_end_index": region.t_end_index,
        "t_extent": region.t_extent,
        "x_range": region.x_range.map(|(a, b)| vec![a, b]),
        "y_range": region.y_range.map(|(a, b)| vec![a, b]),
        "node_count": region.node_count,
    })
}

fn classification_json(report: &ClassificationReport) -> serde_json::Value {
    let profile = &report.sign_profile;
    let products: serde_json::Map<String, serde_json::Value> = profile
        .products
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                json!({
                    "with_p": v.with_p.as_ref().map(sign_json),
                    "with_q": v.with_q.as_ref().map(sign_json),
                    "with_f": v.with_f.as_ref().map(sign_json),
                }),
            )
        })
        .collect();
    json!({
        "verdict": report.verdict.to_string(),
        "signs": {
            "p": sign_json(&profile.p),
            "q": profile.q.as_ref().map(sign_json),
            "g_partials": partials_json(&profile.g_partials),
            "f_partials": partials_json(&profile.f_partials),
            "p_partials": partials_json(&profile.p_partials),
            "q_partials": partials_json(&profile.q_partials),
            "ic_partials": partials_json(&profile.ic_partials),
            "products": serde_json::Value::Object(products),
        },
        "differentiability": report.differentiability.as_ref().map(|d| json!({
            "lower_monotone": {
                "passed": d.lower_monotone.passed,
                "worst": d.lower_monotone.worst.as_ref().map(|w| w.to_string()),
            },
            "upper_monotone": {
                "passed": d.upper_monotone.passed,
                "worst": d.upper_monotone.worst.as_ref().map(|w| w.to_string()),
            },
            "ordered_at_one": {
                "passed": d.ordered_at_one.passed,
                "worst": d.ordered_at_one.worst.as_ref().map(|w| w.to_string()),
            },
        })),
        "residual_sup": report.residual_sup,
        "ic_endpoints_match": report.ic_endpoints_match,
        "region": report.region.as_ref().map(region_json),
        "notes": report.notes,
    })
}

fn cmd_classify(a: ClassifyArgs) -> Result<(), CliError> {
    let (file, source) = load_source(&a.source)?;
    let mut p = file.problem.clone();
    apply_overrides(&mut p, &a.common)?;

    let g = resolve_oracle(&a.oracle, &file, &p)?.ok_or_else(|| {
        CliError::parse(
            "classification needs a crisp closed form: pass --oracle or add [oracle] g to the file",
        )
    })?;
    let report = bfs::classify(&p, &g)?;

    ensure_out_dir(&a.common.out)?;
    let doc = classification_json(&report);
    write_text(
        &a.common.out.join("classification.json"),
        &format!("{doc:#}\n"),
    )?;
    write_manifest(
        &a.common.out,
        &ManifestInput {
            command: "classify",
            source: &source,
            overrides: overrides_json(&a.common),
            outputs: vec!["classification.json"],
        },
    )?;

    println!("verdict: {}", report.verdict);
    for note in &report.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn cmd_envelope(a: EnvelopeArgs) -> Result<(), CliError> {
    let (file, source) = load_source(&a.source)?;
    let mut p = file.problem.clone();
    apply_overrides(&mut p, &a.common)?;

    let profile = bfs::coefficient_signs(&p)?;
    let system = assemble_system(&p, &profile)?;
    let sol = solve_all_levels(&system, &p)?;
    let (mask, region) = validity_region(&sol)?;

    ensure_out_dir(&a.common.out)?;
    write_text(
        &a.common.out.join("envelope.csv"),
        &envelope_csv(&sol, &mask, &region),
    )?;

    let valid = mask.valid_count();
    let total = sol.spec().node_count();
    let doc = json!({
        "region": region_json(&region),
        "valid_nodes": valid,
        "total_nodes": total,
        "alpha_levels": sol.level_count(),
    });
    write_text(&a.common.out.join("region.json"), &format!("{doc:#}\n"))?;
    write_manifest(
        &a.common.out,
        &ManifestInput {
            command: "envelope",
            source: &source,
            overrides: overrides_json(&a.common),
            outputs: vec!["envelope.csv", "region.json"],
        },
    )?;

    match region.x_range {
        Some((x0, x1)) => println!(
            "valid box: t <= {:.4} ({} of {} planes), x in [{:.4}, {:.4}]{}; {valid}/{total} nodes fuzzy",
            region.t_extent,
            region.t_end_index + 1,
            sol.spec().t.n,
            x0,
            x1,
            region
                .y_range
                .map(|(y0, y1)| format!(", y in [{y0:.4}, {y1:.4}]"))
                .unwrap_or_default(),
        ),
        None => println!("valid box is empty; {valid}/{total} nodes fuzzy"),
    }

    if let Some(pts) = &a.points {
        probe_points(pts, &p, &sol, &mask)?;
    }
    Ok(())
}

/// Per-node status: inside the anchored valid box, fuzzy but outside it, or
/// not a fuzzy number at all.
fn node_status(spec: &GridSpec, mask: &ValidityMask, region: &RegionBox, idx: (usize, usize, usize)) -> &'static str {
    let (it, ix, iy) = idx;
    if !mask.at(it, ix, iy) {
        return "invalid";
    }
    let Some((x0, x1)) = region.x_range else {
        return "outside_region";
    };
    let eps_x = spec.x.spacing() * 1e-9;
    let x = spec.x.node(ix);
    let mut inside = it <= region.t_end_index && x >= x0 - eps_x && x <= x1 + eps_x;
    if let (Some(axis), Some((y0, y1))) = (spec.y.as_ref(), region.y_range) {
        let eps_y = axis.spacing() * 1e-9;
        let y = axis.node(iy);
        inside = inside && y >= y0 - eps_y && y <= y1 + eps_y;
    }
    if inside {
        "valid"
    } else {
        "outside_region"
    }
}

fn envelope_csv(sol: &SsSolution, mask: &ValidityMask, region: &RegionBox) -> String {
    let spec = sol.spec().clone();
    let two_dim = spec.is_two_dim();
    let mut out = String::new();
    out.push_str(if two_dim {
        "t,x,y,alpha,lower,upper,status\n"
    } else {
        "t,x,alpha,lower,upper,status\n"
    });
    let t_nodes = spec.t.nodes();
    let x_nodes = spec.x.nodes();
    let y_nodes: Vec<f64> = spec.y.as_ref().map_or_else(|| vec![0.0], |a| a.nodes());
    for (it, &t) in t_nodes.iter().enumerate() {
        for (ix, &x) in x_nodes.iter().enumerate() {
            for (iy, &y) in y_nodes.iter().enumerate() {
                let status = node_status(&spec, mask, region, (it, ix, iy));
                for (j, &alpha) in sol.alphas.iter().enumerate() {
                    let lo = sol.lower[j].at(it, ix, iy);
                    let hi = sol.upper[j].at(it, ix, iy);
                    if two_dim {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{status}",
                            csv_value(t),
                            csv_value(x),
                            csv_value(y),
                            csv_value(alpha),
                            csv_value(lo),
                            csv_value(hi)
                        );
                    } else {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{status}",
                            csv_value(t),
                            csv_value(x),
                            csv_value(alpha),
                            csv_value(lo),
                            csv_value(hi)
                        );
                    }
                }
            }
        }
    }
    out
}

fn probe_points(
    pts: &str,
    p: &HeatLikeProblem,
    sol: &SsSolution,
    mask: &ValidityMask,
) -> Result<(), CliError> {
    let spec = sol.spec();
    for chunk in pts.split(';').filter(|c| !c.trim().is_empty()) {
        let coords: Result<Vec<f64>, _> = chunk.split(',').map(|s| s.trim().parse()).collect();
        let coords = coords
            .map_err(|e| CliError::parse(format!("--points entry {chunk:?} is not numeric: {e}")))?;
        let want = if p.dimension == 2 { 3 } else { 2 };
        if coords.len() != want {
            return Err(CliError::parse(format!(
                "--points entry {chunk:?} needs {want} coordinates for a {}D problem",
                p.dimension
            )));
        }
        let it = nearest(&spec.t.nodes(), coords[0]);
        let ix = nearest(&spec.x.nodes(), coords[1]);
        let iy = match spec.y.as_ref() {
            Some(axis) => nearest(&axis.nodes(), coords[2]),
            None => 0,
        };
        let label = if p.dimension == 2 {
            format!(
                "t={:.4}, x={:.4}, y={:.4}",
                spec.t.node(it),
                spec.x.node(ix),
                spec.y.as_ref().map_or(0.0, |a| a.node(iy))
            )
        } else {
            format!("t={:.4}, x={:.4}", spec.t.node(it), spec.x.node(ix))
        };
        match ss_fuzzy_solution(sol, mask, it, ix, iy) {
            Ok(number) => {
                let support = number.support();
                let core = number.core();
                println!(
                    "point {label}: support [{:.6e}, {:.6e}], core [{:.6e}, {:.6e}]",
                    support.lo, support.hi, core.lo, core.hi
                );
            }
            Err(e) => println!("point {label}: not a fuzzy number ({e})"),
        }
    }
    Ok(())
}

fn nearest(nodes: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, &v) in nodes.iter().enumerate() {
        let d = (v - target).abs();
        if d < dist {
            dist = d;
            best = i;
        }
    }
    best
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    let ids: Vec<u8> = match a.registry {
        Some(id) => {
            if !registry::ids().contains(&id) {
                return Err(CliError::parse(
                    registry::source(id).unwrap_err().to_string(),
                ));
            }
            vec![id]
        }
        None => registry::ids().to_vec(),
    };

    let mut failures = 0usize;
    let mut rows = Vec::new();
    for id in ids {
        let file = registry::load(id)?;
        let oracle = file.oracle.clone().ok_or_else(|| {
            CliError::parse(format!("registry entry {id} carries no oracle to reproduce"))
        })?;
        let g = oracle.g.clone().ok_or_else(|| {
            CliError::parse(format!("registry entry {id} has no closed form recorded"))
        })?;
        let want_verdict = oracle.verdict.clone().unwrap_or_default();

        let p = &file.problem;
        let defaults = VimOverrides::default();
        let cfg = VimConfig::default().with_overrides(file.vim.as_ref().unwrap_or(&defaults));
        let inst = instantiate(p, &uniform_corners(p, CornerChoice::Peak), 1.0)?;
        let spec = p.grid_spec()?;
        let result = solve_crisp_on(&inst, &cfg, &spec)?;
        let reference = GridFunction::sample(&spec, &g, inst.bindings())
            .map_err(|e| CliError::numerical(e.to_string()))?;
        let err = sup_error_against(&result, &reference)?;
        // Scale-aware gate: the shipped grids differ wildly in solution
        // magnitude, so compare against a relative threshold.
        let scale = reference.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let limit = CRISP_ORACLE_LIMIT * (1.0 + scale);
        let crisp_ok = result.converged && err <= limit;

        let report = bfs::classify(p, &g)?;
        let got_verdict = report.verdict.to_string().to_lowercase();
        let verdict_ok = got_verdict == want_verdict;

        let ok = crisp_ok && verdict_ok;
        if !ok {
            failures += 1;
        }
        let line = format!(
            "entry {id}: crisp sup error {err:.2e} (limit {limit:.2e}), \
             verdict {got_verdict} (recorded {want_verdict}) -> {}",
            if ok { "ok" } else { "MISMATCH" }
        );
        println!("{line}");
        rows.push(json!({
            "id": id,
            "crisp_sup_error": err,
            "crisp_limit": limit,
            "crisp_ok": crisp_ok,
            "verdict": got_verdict,
            "recorded_verdict": want_verdict,
            "ok": ok,
        }));
    }

    ensure_out_dir(&a.out)?;
    let doc = json!({ "entries": rows, "failures": failures });
    write_text(&a.out.join("reproduce.json"), &format!("{doc:#}\n"))?;
    write_manifest(
        &a.out,
        &ManifestInput {
            command: "reproduce",
            source: "registry",
            overrides: json!({}),
            outputs: vec!["reproduce.json"],
        },
    )?;

    if failures > 0 {
        return Err(CliError::mismatch(format!(
            "{failures} registry entr{} diverged from the recorded oracle",
            if failures == 1 { "y" } else { "ies" }
        )));
    }
    println!("all entries reproduced");
    Ok(())
}
