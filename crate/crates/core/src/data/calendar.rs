use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "30min")]
    HalfHour,
    #[serde(rename = "1h")]
    Hour,
}

impl Granularity {
    pub fn minutes(self) -> i64 {
        match self {
            Granularity::HalfHour => 30,
            Granularity::Hour => 60,
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "30min" => Ok(Granularity::HalfHour),
            "1h" => Ok(Granularity::Hour),
            other => Err(Error::Config(format!(
                "unsupported granularity {other:?} (expected \"30min\" or \"1h\")"
            ))),
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::HalfHour => "30min",
            Granularity::Hour => "1h",
        })
    }
}

pub struct CalendarFeatures {
    pub names: Vec<String>,
    /// `[T × 4]`, every column in `[0, 1]`.
    pub features: Matrix,
}

/// Month, hour-of-day, minute-of-hour (half-hourly) or day-of-week (hourly),
/// and a linear age ramp. Each feature is min-max scaled over its natural
/// range: month over 1..=12, hour over 0..=23, minute over 0..=59, weekday
/// over 0..=6, age over the sequence.
pub fn build_calendar_features(
    timestamps: &[NaiveDateTime],
    granularity: Granularity,
) -> Result<CalendarFeatures> {
    let step = chrono::TimeDelta::minutes(granularity.minutes());
    if let Some(row) = timestamps.windows(2).position(|w| w[1] - w[0] != step) {
        return Err(Error::Format {
            row: row + 1,
            message: format!("timestamp step does not match granularity {granularity}"),
        });
    }
    let n = timestamps.len();
    let mut data = Vec::with_capacity(n * 4);
    for (i, ts) in timestamps.iter().enumerate() {
        let month = (ts.month() - 1) as f64 / 11.0;
        let hour = ts.hour() as f64 / 23.0;
        let third = match granularity {
            Granularity::HalfHour => ts.minute() as f64 / 59.0,
            Granularity::Hour => ts.weekday().num_days_from_monday() as f64 / 6.0,
        };
        let age = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        data.extend_from_slice(&[month, hour, third, age]);
    }
    let third_name = match granularity {
        Granularity::HalfHour => "minute_of_hour",
        Granularity::Hour => "day_of_week",
    };
    Ok(CalendarFeatures {
        names: ["month", "hour_of_day", third_name, "age"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        features: Matrix::from_vec(n, 4, data),
    })
}
