use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mht_core::gaussian::{ig_density, IgParams};
use mht_core::inversion::{euler_invert, Target};
use mht_core::io::{ingest_csv, ingest_kennan, write_csv, CsvSchema};
use mht_core::simulate::simulate_dataset;
use mht_core::{
    fit as fit_model, fit_from, Censoring, Dataset, FitOptions, InversionSettings, JumpFamily, LikelihoodMode,
    MhtModel, ModelSpec, ModelStructure, Normalization, SimSpec,
};
use serde_json::Value;

use crate::args::{
    CheckArgs, CurveArgs, DataArgs, DataFormat, FitArgs, GridArgs, GridKind, InversionArgs, JumpKind, ModeArg,
    NormalizationArg, SimulateArgs,
};
use crate::output;

fn settings(a: &InversionArgs) -> Result<InversionSettings> {
    let d = InversionSettings::default();
    let s = InversionSettings {
        c_over_t: a.c_over_t.unwrap_or(d.c_over_t),
        h_times_t: a.h_times_t.unwrap_or(d.h_times_t),
        truncation: a.truncation.unwrap_or(d.truncation),
        euler_order: a.euler_order.unwrap_or(d.euler_order),
    };
    s.validate()?;
    Ok(s)
}

fn mode(m: Option<ModeArg>) -> LikelihoodMode {
    match m.unwrap_or(ModeArg::Auto) {
        ModeArg::Auto => LikelihoodMode::Auto,
        ModeArg::ClosedForm => LikelihoodMode::ClosedForm,
        ModeArg::Inverted => LikelihoodMode::Inverted,
    }
}

fn csv_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(reader.headers()?.iter().map(String::from).collect())
}

pub(crate) fn load_data(a: &DataArgs) -> Result<Dataset> {
    let Some(path) = &a.data else {
        bail!("no input dataset given (--data)");
    };
    let format = a.format.unwrap_or_else(|| {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => DataFormat::Csv,
            _ => DataFormat::Kennan,
        }
    });
    match format {
        DataFormat::Kennan => Ok(ingest_kennan(path, a.days_to_weeks.unwrap_or(true))?),
        DataFormat::Csv => {
            if a.days_to_weeks == Some(true) {
                bail!("--days-to-weeks applies to strike files only");
            }
            let header = csv_header(path)?;
            let duration = a.duration_col.clone().unwrap_or_else(|| "duration".into());
            // A column named "status" is used unless another is named.
            let status = a
                .status_col
                .clone()
                .or_else(|| header.iter().any(|h| h == "status").then(|| "status".into()));
            let covariates = a.covariates.clone().unwrap_or_else(|| {
                header
                    .iter()
                    .filter(|h| **h != duration && Some(*h) != status.as_ref())
                    .cloned()
                    .collect()
            });
            Ok(ingest_csv(
                path,
                &CsvSchema {
                    duration,
                    status,
                    covariates,
                },
            )?)
        }
    }
}

/// Read a model record, or the `model` entry of a fit result file.
pub(crate) fn load_model(path: Option<&Path>) -> Result<MhtModel> {
    let Some(path) = path else {
        bail!("no model file given (--model)");
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    let record = value.get("model").cloned().unwrap_or(value);
    let spec: ModelSpec =
        serde_json::from_value(record).with_context(|| format!("model record in {}", path.display()))?;
    Ok(spec.build()?)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn fit(a: FitArgs) -> Result<()> {
    let data = load_data(&a.data_args)?;
    let s = settings(&a.inversion)?;
    let defaults = FitOptions::default();
    let options = FitOptions {
        tolerance: a.tolerance.unwrap_or(defaults.tolerance),
        max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        seed: a.seed.unwrap_or(defaults.seed),
        multistart: a.multistart.unwrap_or(defaults.multistart),
        mode: mode(a.mode),
        skip_standard_errors: a.skip_standard_errors.unwrap_or(false),
    };
    let result = match &a.start {
        Some(path) => fit_from(&data, &load_model(Some(path))?, &s, &options)?,
        None => {
            let jumps = match a.jumps.unwrap_or(JumpKind::None) {
                JumpKind::None => JumpFamily::None,
                JumpKind::Discrete => JumpFamily::Discrete(a.shocks.unwrap_or(1)),
                JumpKind::Gamma => JumpFamily::Gamma,
            };
            let mut structure = ModelStructure::new(jumps, a.support_points.unwrap_or(1), data.covariate_dim());
            if a.normalization == Some(NormalizationArg::UnitDispersion) {
                structure.normalization = Normalization::UnitDispersion;
            }
            fit_model(&data, &structure, &s, &options)?
        }
    };
    let record = output::fit_record(&result, &data, &options);
    if let Some(path) = &a.output {
        let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, &record)?;
        writeln!(f)?;
    }
    let mut out = io::stdout().lock();
    output::write_table(&mut out, &result, &data)?;
    if a.output.is_none() {
        serde_json::to_writer_pretty(&mut out, &record)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let model = load_model(a.model.as_deref())?;
    let mut spec = SimSpec::new(model.clone(), a.n.unwrap_or(1000), a.seed.unwrap_or(0));
    spec.censoring = match (a.censor_at, a.censor_rate) {
        (Some(_), Some(_)) => bail!("choose one of --censor-at and --censor-rate"),
        (Some(c), None) => Censoring::Fixed(c),
        (None, Some(r)) => Censoring::Exponential(r),
        (None, None) => Censoring::None,
    };
    if let Some(path) = &a.covariates_from {
        let (names, rows) = read_covariates(path, a.covariate_cols.as_deref())?;
        spec.covariate_names = names;
        spec.covariate_source = Some(rows);
    } else if model.link.dim() > 0 {
        bail!("the model has covariates; give a CSV to draw them from (--covariates-from)");
    }
    let data = simulate_dataset(&spec)?;
    write_csv(&data, sink(a.output.as_deref())?)?;
    Ok(())
}

fn read_covariates(path: &Path, columns: Option<&[String]>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let header = csv_header(path)?;
    let names = columns.map_or_else(|| header.clone(), <[String]>::to_vec);
    let index = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .with_context(|| format!("unknown column {n:?} in {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = index
            .iter()
            .map(|&c| {
                let field = record.get(c).unwrap_or("");
                field
                    .parse::<f64>()
                    .with_context(|| format!("line {}: bad covariate value {field:?}", i + 2))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

fn grid(a: &GridArgs, default: (f64, f64, usize)) -> Result<Vec<f64>> {
    let (lo, hi, n) = (
        a.t_min.unwrap_or(default.0),
        a.t_max.unwrap_or(default.1),
        a.points.unwrap_or(default.2),
    );
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || n == 0 {
        bail!("time grid needs 0 < t_min <= t_max and at least one point");
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = |i: usize| i as f64 / (n - 1) as f64;
    Ok(match a.grid.unwrap_or(GridKind::Log) {
        GridKind::Log => (0..n).map(|i| lo * (hi / lo).powf(step(i))).collect(),
        GridKind::Linear => (0..n).map(|i| lo + (hi - lo) * step(i)).collect(),
    })
}

pub fn curve(a: CurveArgs, target: Target) -> Result<()> {
    let model = load_model(a.model.as_deref())?;
    let s = settings(&a.inversion)?;
    let x = a.x.clone().unwrap_or_default();
    if x.len() != model.link.dim() {
        bail!(
            "the model has {} covariates but {} values were given (--x)",
            model.link.dim(),
            x.len()
        );
    }
    let rows = grid(&a.grid_args, (0.05, 20.0, 200))?
        .into_iter()
        .map(|t| Ok((t, euler_invert(target, &model, &x, t, &s)?)))
        .collect::<Result<Vec<_>>>()?;
    output::write_curve(sink(a.output.as_deref())?, &rows, &s)
}

pub fn check_inversion(a: CheckArgs) -> Result<()> {
    let (mu, sigma, barrier) = (a.mu.unwrap_or(1.0), a.sigma.unwrap_or(1.0), a.barrier.unwrap_or(1.0));
    let p = IgParams::new(mu, sigma, barrier)?;
    // The same law under the normalization that allows any drift sign.
    let spec = ModelSpec {
        mu: mu / sigma,
        sigma: 1.0,
        jumps: Default::default(),
        beta: vec![],
        support: vec![barrier / sigma],
        masses: vec![1.0],
        normalization: Normalization::UnitDispersion,
    };
    let model = spec.build()?;
    let s = settings(&a.inversion)?;
    let mut rows = Vec::new();
    for t in grid(&a.grid_args, (0.05, 20.0, 200))? {
        let exact = ig_density(p, t)?;
        let r = euler_invert(Target::Density, &model, &[], t, &s)?;
        rows.push(output::CheckRow {
            t,
            exact,
            inverted: r.value,
            error_estimate: r.error_estimate,
        });
    }
    if let Some(path) = &a.output {
        output::write_check(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
            &rows,
            &s,
        )?;
    }
    output::write_check_summary(io::stdout().lock(), &rows, &s)
}
