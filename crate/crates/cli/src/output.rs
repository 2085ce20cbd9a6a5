//! Result records, text tables and CSV output.

use std::io::Write;

use anyhow::Result;
use mht_core::{Dataset, FitOptions, FitResult, InversionResult, InversionSettings, ModelSpec, ModelStructure};
use serde::Serialize;
use serde_json::{json, Value};

/// JSON has no infinities; failed starts become `null`.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn fit_record(r: &FitResult, data: &Dataset, options: &FitOptions) -> Value {
    json!({
        "structure": ModelStructure::of(&r.theta_hat),
        "observations": data.len(),
        "complete": data.complete_count(),
        "covariates": data.covariate_names(),
        "estimates": r.estimates,
        "loglik": r.loglik,
        "gradient_norm": r.gradient_norm,
        "iterations": r.iterations,
        "converged": r.converged,
        "trace": r.trace,
        "start_logliks": r.start_logliks.iter().map(|&v| finite(v)).collect::<Vec<_>>(),
        "warnings": r.warnings,
        "mode": r.mode,
        "settings": r.settings_used,
        "options": options,
        "model": ModelSpec::from(&r.theta_hat),
    })
}

pub fn write_table(mut w: impl Write, r: &FitResult, data: &Dataset) -> Result<()> {
    writeln!(w, "{:<12} {:>12} {:>12}", "parameter", "estimate", "std. error")?;
    for e in &r.estimates {
        let se = e.std_error.map_or_else(|| "-".to_string(), |s| format!("({s:.4})"));
        writeln!(w, "{:<12} {:>12.4} {:>12}", e.name, e.value, se)?;
    }
    writeln!(w, "{:<12} {:>12.1}", "loglik", r.loglik)?;
    writeln!(w, "{:<12} {:>12}", "N", data.len())?;
    if !r.converged {
        writeln!(
            w,
            "not converged: gradient norm {:.3e} after {} iterations",
            r.gradient_norm, r.iterations
        )?;
    }
    for warning in &r.warnings {
        writeln!(w, "warning: {warning}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    t: f64,
    value: f64,
    error_estimate: f64,
    c_over_t: f64,
    h_times_t: f64,
    truncation: usize,
    euler_order: usize,
}

pub fn write_curve(w: impl Write, rows: &[(f64, InversionResult)], s: &InversionSettings) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (t, r) in rows {
        csv.serialize(CurveRow {
            t: *t,
            value: r.value,
            error_estimate: r.error_estimate,
            c_over_t: s.c_over_t,
            h_times_t: s.h_times_t,
            truncation: s.truncation,
            euler_order: s.euler_order,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub struct CheckRow {
    pub t: f64,
    pub exact: f64,
    pub inverted: f64,
    pub error_estimate: f64,
}

#[derive(Serialize)]
struct CheckCsvRow {
    t: f64,
    exact: f64,
    inverted: f64,
    abs_error: f64,
    scaled_error: f64,
    error_estimate: f64,
    c_over_t: f64,
    h_times_t: f64,
    truncation: usize,
    euler_order: usize,
}

pub fn write_check(w: impl Write, rows: &[CheckRow], s: &InversionSettings) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        let abs_error = (r.inverted - r.exact).abs();
        csv.serialize(CheckCsvRow {
            t: r.t,
            exact: r.exact,
            inverted: r.inverted,
            abs_error,
            scaled_error: abs_error * r.exact,
            error_estimate: r.error_estimate,
            c_over_t: s.c_over_t,
            h_times_t: s.h_times_t,
            truncation: s.truncation,
            euler_order: s.euler_order,
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// Largest `|err| f` and largest error relative to `max(1e-9, 1e-10 / f)`
/// over points with `f >= 1e-10`.
pub fn check_summary(rows: &[CheckRow]) -> (f64, f64) {
    rows.iter().fold((0.0f64, 0.0f64), |(scaled, ratio), r| {
        let err = (r.inverted - r.exact).abs();
        let ratio = if r.exact >= 1e-10 {
            ratio.max(err / 1e-9f64.max(1e-10 / r.exact))
        } else {
            ratio
        };
        (scaled.max(err * r.exact), ratio)
    })
}

pub fn write_check_summary(mut w: impl Write, rows: &[CheckRow], s: &InversionSettings) -> Result<()> {
    let (scaled, ratio) = check_summary(rows);
    let record = json!({
        "points": rows.len(),
        "max_scaled_error": scaled,
        "max_error_over_tolerance": ratio,
        "pass": ratio <= 1.0,
        "settings": s,
    });
    serde_json::to_writer_pretty(&mut w, &record)?;
    writeln!(w)?;
    Ok(())
}
