use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which CSV columns carry what.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub series: String,
    pub target: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

struct Row {
    line: usize,
    ts: NaiveDateTime,
    target: f64,
    covs: Vec<f64>,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

/// Reads a long-format CSV (one row per series and timestamp) into an aligned
/// panel. Gaps, duplicate timestamps and unequal series lengths are errors;
/// nothing is imputed. Row numbers in errors are 1-based data rows.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("unknown column {name:?} in {}", path.display())))
    };
    let ts_col = col(&schema.timestamp)?;
    let id_col = col(&schema.series)?;
    let y_col = col(&schema.target)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    // series label -> rows, in label order
    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Format {
            row: line,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Format {
            row: line,
            message: format!("unparseable timestamp {:?}", field(ts_col)),
        })?;
        let number = |c: usize| {
            field(c).parse::<f64>().map_err(|_| Error::Format {
                row: line,
                message: format!("non-numeric value {:?} in column {:?}", field(c), &headers[c]),
            })
        };
        let target = number(y_col)?;
        let covs = cov_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?;
        groups.entry(field(id_col).to_string()).or_default().push(Row {
            line,
            ts,
            target,
            covs,
        });
    }
    if groups.is_empty() {
        return Err(Error::Format {
            row: 0,
            message: "no data rows".into(),
        });
    }

    let mut values = Vec::new();
    let mut covariates = Vec::new();
    let mut axis: Option<Vec<NaiveDateTime>> = None;
    for (label, mut rows) in groups {
        rows.sort_by_key(|r| r.ts);
        if let Some(w) = rows.windows(2).find(|w| w[1].ts == w[0].ts) {
            return Err(Error::Format {
                row: w[1].line,
                message: format!("duplicate timestamp {} for series {label:?}", w[1].ts),
            });
        }
        if rows.len() >= 2 {
            let step = rows[1].ts - rows[0].ts;
            if let Some(w) = rows.windows(2).find(|w| w[1].ts - w[0].ts != step) {
                return Err(Error::Format {
                    row: w[1].line,
                    message: format!("non-constant timestamp step for series {label:?} (missing steps are not imputed)"),
                });
            }
        }
        let ts: Vec<_> = rows.iter().map(|r| r.ts).collect();
        match &axis {
            None => axis = Some(ts),
            Some(a) if a.len() != ts.len() => {
                return Err(Error::Format {
                    row: rows[0].line,
                    message: format!(
                        "series {label:?} has {} steps but earlier series have {}; an aligned panel with equal lengths is required",
                        ts.len(),
                        a.len()
                    ),
                });
            }
            Some(a) if *a != ts => {
                return Err(Error::Format {
                    row: rows[0].line,
                    message: format!("series {label:?} timestamps are not aligned with earlier series"),
                });
            }
            Some(_) => {}
        }
        values.push(rows.iter().map(|r| r.target).collect());
        covariates.push(Matrix::from_vec(
            rows.len(),
            cov_cols.len(),
            rows.iter().flat_map(|r| r.covs.iter().copied()).collect(),
        ));
    }
    SeriesDataset::new(
        values,
        covariates,
        schema.covariates.clone(),
        axis.expect("at least one series"),
    )
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            row: 0,
            message: format!("{other:?}"),
        },
    }
}
