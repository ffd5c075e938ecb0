//! Remainder measurement u_ref − u_εn over an ε sweep and log-log order fits.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{Expansion, ExpansionContext, ExpansionOptions, K_MAX};
use crate::problem::ProblemSpec;
use crate::reference::{build_mesh_with, solve_reference_strided, MeshConstants, Scheme};
use crate::scalar::{Real, C};
use crate::series::{clustered_x_nodes, evaluate_partial_sum, GridField};

/// Largest Euclidean norm of `asym − reference` over the nodes of `asym`; the
/// reference is interpolated bilinearly when the grids differ.
pub fn error_norm<T: Real>(asym: &GridField<T>, reference: &GridField<T>) -> Result<T> {
    let (ea, er) = (asym.meta.epsilon, reference.meta.epsilon);
    if (ea - er).abs() > T::lit(1e-12) * ea.abs().max(er.abs()) {
        return Err(Error::spec("fields belong to different ε"));
    }
    if asym.dim() != reference.dim() {
        return Err(Error::spec("fields have different dimensions"));
    }
    let (ax, at) = (asym.x_nodes(), asym.t_nodes());
    let (rx, rt) = (reference.x_nodes(), reference.t_nodes());
    let slack = T::lit(1e-12);
    let covers = |a: &[T], r: &[T]| a[0] >= r[0] - slack && a[a.len() - 1] <= r[r.len() - 1] + slack;
    if !covers(ax, rx) || !covers(at, rt) {
        return Err(Error::spec("reference grid does not cover the evaluation grid"));
    }
    let same = ax == rx && at == rt;
    let mut worst = T::zero();
    for (ix, &x) in ax.iter().enumerate() {
        for (it, &t) in at.iter().enumerate() {
            let r = if same { reference.value(ix, it) } else { reference.eval_bilinear(x, t) };
            let a = asym.value(ix, it);
            let d = a.iter().zip(&r).fold(T::zero(), |s, (p, q)| s + (*p - *q).norm_sqr());
            worst = worst.max(d.sqrt());
        }
    }
    Ok(worst)
}

/// Resolution of one study.
#[derive(Clone, Debug)]
pub struct StudyParams<T> {
    pub ref_nx: usize,
    pub ref_nt: usize,
    pub scheme: Scheme,
    pub mesh: MeshConstants<T>,
    /// Reference time levels kept (every `ref_nt / stored_t` steps).
    pub stored_t: usize,
    /// Intervals of the clustered x grid the error is measured on.
    pub eval_nx: usize,
    pub expansion: ExpansionOptions<T>,
    /// Also solve at doubled resolution to estimate the reference floor.
    pub check_floor: bool,
}

impl<T: Real> Default for StudyParams<T> {
    fn default() -> Self {
        StudyParams {
            ref_nx: 256,
            ref_nt: 2048,
            scheme: Scheme::CrankNicolson,
            mesh: MeshConstants::default(),
            stored_t: 128,
            eval_nx: 128,
            expansion: ExpansionOptions::default(),
            check_floor: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonResult {
    pub epsilon: f64,
    pub error: f64,
    /// ln(E_i/E_{i−1}) / ln(ε_i/ε_{i−1}); absent for the first ε.
    pub local_order: Option<f64>,
    /// Error of the next lower partial sum at the same ε (n ≥ 1 only).
    pub lower_order_error: Option<f64>,
    /// max |ref(N) − ref(2N)| on the coarse nodes.
    pub floor: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub order: usize,
    pub target: f64,
    pub slope: f64,
    pub constant: f64,
    pub decreasing: bool,
    pub pass: bool,
    /// Largest ε below which E(ε, n) ≤ E(ε, n−1) holds for every sampled ε.
    pub improvement_threshold: Option<f64>,
    /// max floor ≤ min E / 4, when floors were computed.
    pub floor_ok: Option<bool>,
    pub entries: Vec<EpsilonResult>,
    pub warnings: Vec<String>,
    pub total_seconds: f64,
}

/// Allowed shortfall of the fitted slope below (n+1)/2.
pub const SLOPE_TOLERANCE: f64 = 0.3;

/// Least-squares fit of ln E = ln c + s ln ε; returns (s, c).
pub fn fit_power_law(eps: &[f64], err: &[f64]) -> (f64, f64) {
    let m = eps.len() as f64;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let s = sxy / sxx;
    (s, (my - s * mx).exp())
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::spec("a convergence study needs at least 4 ε values"));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::spec("ε values must lie in (0, 1)"));
    }
    if eps.windows(2).any(|w| w[1] > 0.5 * w[0] * (1.0 + 1e-12)) {
        return Err(Error::spec("ε values must decrease geometrically with ratio ≤ 1/2"));
    }
    Ok(())
}

/// Builds the report from measured errors; `errors[i]` belongs to `eps[i]`.
pub fn report_from_errors(order: usize, eps: &[f64], errors: &[f64]) -> Result<ConvergenceReport> {
    check_epsilons(eps)?;
    if errors.len() != eps.len() || errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Numerical("errors must be positive and finite, one per ε".into()));
    }
    let (slope, constant) = fit_power_law(eps, errors);
    let target = (order as f64 + 1.0) / 2.0;
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let entries = eps
        .iter()
        .zip(errors)
        .enumerate()
        .map(|(i, (&e, &err))| EpsilonResult {
            epsilon: e,
            error: err,
            local_order: (i > 0).then(|| (err / errors[i - 1]).ln() / (e / eps[i - 1]).ln()),
            lower_order_error: None,
            floor: None,
            seconds: 0.0,
        })
        .collect();
    Ok(ConvergenceReport {
        order,
        target,
        slope,
        constant,
        decreasing,
        pass: decreasing && slope >= target - SLOPE_TOLERANCE,
        improvement_threshold: None,
        floor_ok: None,
        entries,
        warnings: Vec::new(),
        total_seconds: 0.0,
    })
}

struct Measured {
    error: f64,
    lower: Option<f64>,
    floor: Option<f64>,
    seconds: f64,
}

/// Runs the full pipeline for every ε: one expansion (built two orders above n
/// where possible, so the p-coefficients of the summed terms are determined),
/// one reference solve per ε, errors on a clustered grid.
pub fn convergence_study<T: Real>(
    spec: &ProblemSpec<T>,
    order: usize,
    epsilons: &[T],
    params: &StudyParams<T>,
) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let eps64: Vec<f64> = epsilons.iter().map(|e| e.as_f64()).collect();
    check_epsilons(&eps64)?;
    if order > K_MAX {
        return Err(Error::Unsupported(format!("order {order} exceeds {K_MAX}")));
    }
    if params.stored_t == 0 || params.ref_nt % params.stored_t != 0 {
        return Err(Error::spec("stored time levels must divide N_t"));
    }
    let mut warnings = Vec::new();
    let ctx = ExpansionContext::new(spec, &params.expansion)?;
    let build_order = (order + 2).min(K_MAX);
    let expansion = match Expansion::build_in(ctx.clone(), build_order) {
        Ok(e) => e,
        Err(Error::Unsupported(msg)) if build_order > order => {
            warnings.push(format!(
                "expansion to order {build_order} unsupported ({msg}); p-coefficients of the summed terms left at zero"
            ));
            Expansion::build_in(ctx, order)?
        }
        Err(e) => return Err(e),
    };
    let stride = params.ref_nt / params.stored_t;
    let xs: Vec<T> = clustered_x_nodes(params.eval_nx);
    let measured: Vec<Measured> = epsilons
        .par_iter()
        .map(|&eps| -> Result<Measured> {
            let t0 = Instant::now();
            let annotate = |e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!("ε={}: {m}", eps.as_f64())),
                other => other,
            };
            let mesh = build_mesh_with(eps, params.ref_nx, params.ref_nt, spec.t_end, params.mesh)?;
            let reference = solve_reference_strided(spec, eps, &mesh, params.scheme, stride).map_err(annotate)?;
            let ts = reference.t_nodes().to_vec();
            let asym = evaluate_partial_sum(&expansion, order, eps, &xs, &ts)?;
            let error = error_norm(&asym, &reference)?.as_f64();
            let lower = if order > 0 {
                let a = evaluate_partial_sum(&expansion, order - 1, eps, &xs, &ts)?;
                Some(error_norm(&a, &reference)?.as_f64())
            } else {
                None
            };
            let floor = if params.check_floor {
                let fine = build_mesh_with(eps, 2 * params.ref_nx, 2 * params.ref_nt, spec.t_end, params.mesh)?;
                let r2 = solve_reference_strided(spec, eps, &fine, params.scheme, 2 * stride).map_err(annotate)?;
                Some(error_norm(&reference, &r2)?.as_f64())
            } else {
                None
            };
            Ok(Measured {
                error,
                lower,
                floor,
                seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = measured.iter().map(|m| m.error).collect();
    let mut report = report_from_errors(order, &eps64, &errors)?;
    for (entry, m) in report.entries.iter_mut().zip(&measured) {
        entry.lower_order_error = m.lower;
        entry.floor = m.floor;
        entry.seconds = m.seconds;
    }
    if params.check_floor {
        let max_floor = measured.iter().filter_map(|m| m.floor).fold(0.0, f64::max);
        let min_err = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        report.floor_ok = Some(max_floor <= min_err / 4.0);
        for e in &report.entries {
            if let Some(f) = e.floor {
                if f > e.error / 4.0 {
                    warnings.push(format!(
                        "ε={}: error {:.3e} is within 4× of the reference floor {:.3e}",
                        e.epsilon, e.error, f
                    ));
                }
            }
        }
    }
    if order > 0 {
        report.improvement_threshold = improvement_threshold(&report.entries);
    }
    report.warnings = warnings;
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Largest sampled ε such that the higher-order sum is no worse at it and at every smaller ε.
fn improvement_threshold(entries: &[EpsilonResult]) -> Option<f64> {
    let mut threshold = None;
    for e in entries.iter().rev() {
        match e.lower_order_error {
            Some(lower) if e.error <= lower => threshold = Some(e.epsilon),
            _ => break,
        }
    }
    threshold
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, mut sink: impl Write) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            writeln!(sink, "epsilon,error,local_order")?;
            for e in &report.entries {
                let lo = e.local_order.map(|v| format!("{v:e}")).unwrap_or_default();
                writeln!(sink, "{:e},{:e},{lo}", e.epsilon, e.error)?;
            }
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, report)?;
            writeln!(sink)?;
        }
        ReportFormat::Svg => sink.write_all(svg_plot(report).as_bytes())?,
    }
    Ok(())
}

/// Log-log polyline of E(ε) and a guide line of the target slope through the first point.
fn svg_plot(report: &ConvergenceReport) -> String {
    let (w, h, pad) = (480.0, 360.0, 40.0);
    let pts: Vec<(f64, f64)> = report.entries.iter().map(|e| (e.epsilon.log10(), e.error.log10())).collect();
    let guide: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(x, _)| (x, pts[0].1 + report.target * (x - pts[0].0)))
        .collect();
    let all = pts.iter().chain(&guide);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-12);
    let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-12);
    let map = |(x, y): (f64, f64)| (pad + (x - x0) * sx, h - pad - (y - y0) * sy);
    let line = |p: &[(f64, f64)]| {
        p.iter().fold(String::new(), |mut s, &q| {
            let (a, b) = map(q);
            let _ = write!(s, "{a:.2},{b:.2} ");
            s
        })
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(
        s,
        r#"  <title>order {} : fitted slope {:.4}, target {:.2}</title>"#,
        report.order, report.slope, report.target
    );
    let _ = writeln!(s, r#"  <polyline id="error" fill="none" stroke="black" points="{}"/>"#, line(&pts).trim_end());
    let _ = writeln!(
        s,
        r#"  <polyline id="guide" fill="none" stroke="gray" stroke-dasharray="4 3" points="{}"/>"#,
        line(&guide).trim_end()
    );
    for &p in &pts {
        let (a, b) = map(p);
        let _ = writeln!(s, r#"  <circle cx="{a:.2}" cy="{b:.2}" r="3"/>"#);
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Largest deviation of a field from a closure, for tests and diagnostics.
pub fn max_deviation<T: Real>(field: &GridField<T>, exact: impl Fn(T, T) -> Vec<C<T>>) -> T {
    let mut worst = T::zero();
    for (ix, &x) in field.x_nodes().iter().enumerate() {
        for (it, &t) in field.t_nodes().iter().enumerate() {
            let e = exact(x, t);
            let d = field.value(ix, it).iter().zip(&e).fold(T::zero(), |s, (p, q)| s + (*p - *q).norm_sqr());
            worst = worst.max(d.sqrt());
        }
    }
    worst
}
