//! Command-line front end: validate, expand, solve-ref, verify, presets.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::{AsymptoticTerm, Coefficient, Expansion, ExpansionOptions, K_MAX};
use crate::problem::{default_epsilons, parse_epsilon_list, preset, validate_assumptions, ProblemSpec, PRESET_NAMES, PRESET_SUMMARIES};
use crate::reference::{build_mesh, solve_reference_strided, Scheme};
use crate::series::{clustered_t_nodes, clustered_x_nodes, evaluate_partial_sum};
use crate::verification::{convergence_study, emit_report, ReportFormat, StudyParams};

/// Exit status of a `verify` run whose study completed but did not pass.
pub const EXIT_STUDY_FAILED: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "perturba", version, about = "Regularized asymptotics for singularly perturbed parabolic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the bundled problems.
    Presets,
    /// Check the standing assumptions and print the report as JSON.
    Validate {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Samples per unit interval for the checks.
        #[arg(long, default_value_t = 256)]
        density: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build u_0..u_n, write per-order summaries and the partial sum for each ε.
    Expand {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long)]
        epsilons: Option<String>,
        /// Intervals of the clustered evaluation grid in x and t.
        #[arg(long, default_value_t = 64)]
        nx: usize,
        #[arg(long, default_value_t = 64)]
        nt: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference reference solution for each ε.
    SolveRef {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        epsilons: Option<String>,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 2048)]
        nt: usize,
        /// Keep every k-th time level.
        #[arg(long, default_value_t = 16)]
        stride: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Ie)]
        scheme: SchemeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence study of u_ref − u_εn over the ε sweep.
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long)]
        epsilons: Option<String>,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 2048)]
        nt: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Cn)]
        scheme: SchemeArg,
        /// Skip the doubled-resolution reference solve.
        #[arg(long)]
        no_floor: bool,
        /// Comma-separated subset of csv,json,svg.
        #[arg(long, default_value = "json")]
        format: String,
        /// Keep wall-clock timings in the JSON report (makes output run-dependent).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ProblemArgs {
    /// Bundled problem name (see `perturba presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchemeArg {
    Ie,
    Cn,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Ie => Scheme::ImplicitEuler,
            SchemeArg::Cn => Scheme::CrankNicolson,
        }
    }
}

impl ProblemArgs {
    pub fn load(&self) -> Result<ProblemSpec<f64>> {
        match (&self.preset, &self.problem) {
            (Some(name), _) => preset(name).ok_or_else(|| {
                Error::Spec(format!("unknown preset {name:?}; known: {}", PRESET_NAMES.join(", ")))
            }),
            (None, Some(path)) => ProblemSpec::from_json(&std::fs::read_to_string(path)?),
            (None, None) => Err(Error::Spec("either --preset or --problem is required".into())),
        }
    }
}

fn epsilons_for(spec: &ProblemSpec<f64>, arg: &Option<String>) -> Result<Vec<f64>> {
    let eps = match arg {
        Some(s) => parse_epsilon_list(s)?,
        None if !spec.epsilons.is_empty() => spec.epsilons.clone(),
        None => default_epsilons(),
    };
    if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Spec("ε values must lie in (0, 1)".into()));
    }
    Ok(eps)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct TermSummary {
    k: usize,
    v_max: f64,
    c_max: f64,
    p_max: f64,
    layer_max: f64,
    convolution_max: f64,
    boundary_residual: f64,
    initial_residual: f64,
}

#[derive(Serialize)]
struct ExpansionSummary {
    schema: &'static str,
    order: usize,
    epsilons: Vec<f64>,
    terms: Vec<TermSummary>,
}

fn summarize(term: &AsymptoticTerm<f64>) -> TermSummary {
    let max = |cs: &[Coefficient<f64>]| cs.iter().map(Coefficient::max_magnitude).fold(0.0, f64::max);
    let both = |a: &[Vec<Coefficient<f64>>; 2]| max(&a[0]).max(max(&a[1]));
    TermSummary {
        k: term.k,
        v_max: max(&term.v),
        c_max: max(&term.c),
        p_max: term.p.iter().map(|p| p.max_magnitude()).fold(0.0, f64::max),
        layer_max: both(&term.d).max(both(&term.omega)),
        convolution_max: both(&term.d_conv).max(both(&term.omega_conv)),
        boundary_residual: term.residuals.boundary,
        initial_residual: term.residuals.initial,
    }
}

fn stem(prefix: &str, idx: usize) -> String {
    format!("{prefix}_eps{idx:02}")
}

/// Runs one command; returns the process exit status.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Presets => {
            for (name, summary) in PRESET_NAMES.iter().zip(PRESET_SUMMARIES) {
                writeln!(stdout, "{name:<22} {summary}")?;
            }
            Ok(0)
        }
        Command::Validate { problem, density, out } => {
            let spec = problem.load()?;
            let report = validate_assumptions(&spec, density)?;
            let json = serde_json::to_string_pretty(&report)?;
            writeln!(stdout, "{json}")?;
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                std::fs::write(dir.join("validate.json"), &json)?;
            }
            Ok(match report.into_result() {
                Ok(_) => 0,
                Err(e) => e.exit_code(),
            })
        }
        Command::Expand {
            problem,
            order,
            epsilons,
            nx,
            nt,
            out,
        } => {
            if order > K_MAX {
                return Err(Error::Spec(format!("order {order} exceeds {K_MAX}")));
            }
            let spec = problem.load()?;
            let eps = epsilons_for(&spec, &epsilons)?;
            let e = Expansion::build(&spec, order, &ExpansionOptions::default())?;
            ensure_dir(&out)?;
            let summary = ExpansionSummary {
                schema: "perturba.expansion/1",
                order,
                epsilons: eps.clone(),
                terms: e.terms.iter().map(summarize).collect(),
            };
            std::fs::write(out.join("expansion.json"), serde_json::to_string_pretty(&summary)?)?;
            let xs = clustered_x_nodes(nx);
            for (idx, &eps) in eps.iter().enumerate() {
                let ts = clustered_t_nodes(nt, spec.t_end, eps);
                let field = evaluate_partial_sum(&e, order, eps, &xs, &ts)?;
                field.write_files(&out, &stem("asymptotic", idx))?;
            }
            writeln!(stdout, "expanded to order {order}; {} grid field(s) in {}", eps.len(), out.display())?;
            Ok(0)
        }
        Command::SolveRef {
            problem,
            epsilons,
            nx,
            nt,
            stride,
            scheme,
            out,
        } => {
            let spec = problem.load()?;
            let eps = epsilons_for(&spec, &epsilons)?;
            ensure_dir(&out)?;
            for (idx, &eps) in eps.iter().enumerate() {
                let mesh = build_mesh(eps, nx, nt, spec.t_end)?;
                let field = solve_reference_strided(&spec, eps, &mesh, scheme.into(), stride)?;
                field.write_files(&out, &stem("reference", idx))?;
            }
            writeln!(stdout, "{} reference solution(s) in {}", eps.len(), out.display())?;
            Ok(0)
        }
        Command::Verify {
            problem,
            order,
            epsilons,
            nx,
            nt,
            scheme,
            no_floor,
            format,
            timings,
            out,
        } => {
            let formats = parse_formats(&format)?;
            let spec = problem.load()?;
            let eps = epsilons_for(&spec, &epsilons)?;
            let params = StudyParams {
                ref_nx: nx,
                ref_nt: nt,
                scheme: scheme.into(),
                stored_t: (nt / 16).max(1),
                check_floor: !no_floor,
                ..StudyParams::default()
            };
            let mut report = convergence_study(&spec, order, &eps, &params)?;
            if !timings {
                report.total_seconds = 0.0;
                report.entries.iter_mut().for_each(|e| e.seconds = 0.0);
            }
            match &out {
                Some(dir) => {
                    ensure_dir(dir)?;
                    for f in &formats {
                        let name = match f {
                            ReportFormat::Csv => "report.csv",
                            ReportFormat::Json => "report.json",
                            ReportFormat::Svg => "report.svg",
                        };
                        let file = std::fs::File::create(dir.join(name))?;
                        emit_report(&report, *f, std::io::BufWriter::new(file))?;
                    }
                }
                None => {
                    for f in &formats {
                        emit_report(&report, *f, &mut *stdout)?;
                    }
                }
            }
            let verdict = if report.pass { "PASS" } else { "FAIL" };
            eprintln!(
                "order {order}: slope {:.4} (target {:.2}, tolerance 0.3) -> {verdict}",
                report.slope, report.target
            );
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(if report.pass { 0 } else { EXIT_STUDY_FAILED })
        }
    }
}

fn parse_formats(s: &str) -> Result<Vec<ReportFormat>> {
    s.split(',')
        .map(|f| match f.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Spec(format!("unknown report format {other:?}"))),
        })
        .collect()
}

/// Caps rayon's pool from PERTURBA_THREADS when set to a positive integer.
pub fn configure_threads() {
    if let Some(n) = std::env::var("PERTURBA_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
