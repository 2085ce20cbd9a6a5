//! Command-line flags. Every option is optional here so that a config file
//! can fill what the command line leaves out.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "mht", version, about = "Mixed hitting-time duration models")]
pub struct Cli {
    /// JSON file with default values for any flag; flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Draw a dataset from a model.
    Simulate(SimulateArgs),
    /// Tabulate the density over a time grid.
    Density(CurveArgs),
    /// Tabulate the survival function over a time grid.
    Survival(CurveArgs),
    /// Compare the inversion with the closed-form inverse Gaussian density.
    CheckInversion(CheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Density(_) => "density",
            Command::Survival(_) => "survival",
            Command::CheckInversion(_) => "check-inversion",
        }
    }
}

/// Fill unset fields of `self` from `other`.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* $(,)? } $(nested { $($inner:ident),* })?) => {
        impl Merge for $ty {
            fn merge(&mut self, other: Self) {
                $(if self.$field.is_none() {
                    self.$field = other.$field;
                })*
                $($(self.$inner.merge(other.$inner);)*)?
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Whitespace-separated duration in days and one covariate.
    Kennan,
    /// CSV with a header row.
    Csv,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct DataArgs {
    /// Input dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Input format; inferred from the extension when absent (.csv is CSV).
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Divide durations by seven (strike files only, on by default).
    #[arg(long)]
    pub days_to_weeks: Option<bool>,
    /// CSV duration column.
    #[arg(long)]
    pub duration_col: Option<String>,
    /// CSV status column, 1 complete and 0 censored.
    #[arg(long)]
    pub status_col: Option<String>,
    /// CSV covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

merge_fields!(DataArgs {
    data,
    format,
    days_to_weeks,
    duration_col,
    status_col,
    covariates
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct InversionArgs {
    /// Contour abscissa times t.
    #[arg(long)]
    pub c_over_t: Option<f64>,
    /// Trapezoid step times t.
    #[arg(long)]
    pub h_times_t: Option<f64>,
    /// Truncation base R.
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Euler averaging order M.
    #[arg(long)]
    pub euler_order: Option<usize>,
}

merge_fields!(InversionArgs {
    c_over_t,
    h_times_t,
    truncation,
    euler_order
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpKind {
    None,
    Discrete,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Auto,
    ClosedForm,
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationArg {
    UnitDrift,
    UnitDispersion,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data_args: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub inversion: InversionArgs,
    /// Jump component of the latent process.
    #[arg(long, value_enum)]
    pub jumps: Option<JumpKind>,
    /// Number of discrete shock sizes Q.
    #[arg(long)]
    pub shocks: Option<usize>,
    /// Number of support points L of the heterogeneity distribution.
    #[arg(long)]
    pub support_points: Option<usize>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationArg>,
    /// Likelihood evaluation path.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of optimizer starts.
    #[arg(long)]
    pub multistart: Option<usize>,
    /// Gradient norm tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Skip the Hessian and standard errors.
    #[arg(long)]
    pub skip_standard_errors: Option<bool>,
    /// Model JSON to start from instead of the default starting values.
    #[arg(long)]
    pub start: Option<PathBuf>,
    /// Result file (JSON).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(FitArgs {
    jumps, shocks, support_points, normalization, mode, seed, multistart, tolerance, max_iter,
    skip_standard_errors, start, output
} nested { data_args, inversion });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// Model JSON, either a model record or a fit result file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of draws.
    #[arg(long, short)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Censor every spell at this time.
    #[arg(long, conflicts_with = "censor_rate")]
    pub censor_at: Option<f64>,
    /// Censor at independent exponential times with this rate.
    #[arg(long)]
    pub censor_rate: Option<f64>,
    /// CSV whose rows supply covariate values, cycled through in order.
    #[arg(long)]
    pub covariates_from: Option<PathBuf>,
    /// Columns of that CSV to use, comma separated; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    /// Output CSV; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(SimulateArgs {
    model,
    n,
    seed,
    censor_at,
    censor_rate,
    covariates_from,
    covariate_cols,
    output
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Log,
    Linear,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct GridArgs {
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_enum)]
    pub grid: Option<GridKind>,
}

merge_fields!(GridArgs {
    t_min,
    t_max,
    points,
    grid
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct CurveArgs {
    /// Model JSON, either a model record or a fit result file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Covariate values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub inversion: InversionArgs,
    /// Output CSV; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(CurveArgs { model, x, output } nested { grid_args, inversion });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct CheckArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub barrier: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub inversion: InversionArgs,
    /// Output CSV with one row per grid point.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(CheckArgs { mu, sigma, barrier, output } nested { grid_args, inversion });
