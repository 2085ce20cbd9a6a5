//! Reading and writing duration datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{MhtError, Result};
use crate::likelihood::{Dataset, Observation};

/// Name given to the single covariate of the strike file.
pub const KENNAN_COVARIATE: &str = "log_ip";

/// Read a whitespace-separated file with exactly two numeric columns per
/// record: a duration in days and one covariate. Durations are divided by
/// seven when `days_to_weeks` is set. All spells are complete.
pub fn ingest_kennan(path: impl AsRef<Path>, days_to_weeks: bool) -> Result<Dataset> {
    read_kennan(File::open(path)?, days_to_weeks)
}

pub fn read_kennan(reader: impl Read, days_to_weeks: bool) -> Result<Dataset> {
    let scale = if days_to_weeks { 7.0 } else { 1.0 };
    let mut observations = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(MhtError::Schema(format!(
                "line {number} has {} columns, expected duration and covariate",
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| MhtError::Parse {
                line: number,
                message: format!("{s:?}: {e}"),
            })
        };
        let duration = parse(fields[0])?;
        let x = parse(fields[1])?;
        let obs = Observation::new(duration / scale, true, vec![x]).map_err(|e| MhtError::Parse {
            line: number,
            message: e.to_string(),
        })?;
        observations.push(obs);
    }
    if observations.is_empty() {
        return Err(MhtError::Schema("no records found".into()));
    }
    Dataset::new(observations, vec![KENNAN_COVARIATE.to_string()])
}

/// Column mapping for CSV input.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct CsvSchema {
    pub duration: String,
    /// 1 for a completed spell, 0 for a censored one; all complete if absent.
    pub status: Option<String>,
    pub covariates: Vec<String>,
}

impl CsvSchema {
    /// Schema matching the layout written by [`write_csv`].
    pub fn for_dataset(data: &Dataset) -> Self {
        Self {
            duration: "duration".into(),
            status: Some("status".into()),
            covariates: data.covariate_names().to_vec(),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv(reader: impl Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MhtError::Schema(format!("unknown column {name:?}")))
    };
    let duration_col = column(&schema.duration)?;
    let status_col = schema.status.as_deref().map(column).transpose()?;
    let covariate_cols = schema
        .covariates
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    for (i, record) in csv.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let record = record.map_err(csv_error)?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize| {
            field(col).parse::<f64>().map_err(|e| MhtError::Parse {
                line,
                message: format!("column {:?}: {:?}: {e}", &headers[col], field(col)),
            })
        };
        let duration = number(duration_col)?;
        let complete = match status_col {
            None => true,
            Some(c) => match field(c) {
                "1" => true,
                "0" => false,
                other => {
                    return Err(MhtError::Parse {
                        line,
                        message: format!("status must be 0 or 1, got {other:?}"),
                    })
                }
            },
        };
        let x = covariate_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        let obs = Observation::new(duration, complete, x).map_err(|e| MhtError::Parse {
            line,
            message: e.to_string(),
        })?;
        observations.push(obs);
    }
    Dataset::new(observations, schema.covariates.clone())
}

fn csv_error(e: csv::Error) -> MhtError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    MhtError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Write `duration,status,<covariates>`; floats use the shortest
/// representation that reads back exactly.
pub fn write_csv(data: &Dataset, writer: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["duration".to_string(), "status".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    csv.write_record(&header).map_err(csv_error)?;
    for obs in data.observations() {
        let mut row = vec![
            obs.duration.to_string(),
            if obs.complete { "1" } else { "0" }.to_string(),
        ];
        row.extend(obs.covariates.iter().map(|x| x.to_string()));
        csv.write_record(&row).map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, File::create(path)?)
}
