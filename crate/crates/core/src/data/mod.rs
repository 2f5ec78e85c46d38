//! Datasets, calendar covariates, normalization, windowing and
//! chronological splits.

mod calendar;
mod csv_source;
mod synth;
mod window;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use calendar::{build_calendar_features, Granularity};
pub use csv_source::{load_csv, CsvSchema};
pub use synth::{synthesize_dataset, SynthKind, SynthSpec, SYNTH_DAY};
pub use window::{split, window, ForecastWindow, SplitSpec, WindowSplits};

/// Per-series affine normalization, `z = (v - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
    };

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Aligned panel of `N` target series sharing one timestamp axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    /// `[N][T]` target values.
    pub values: Vec<Vec<f64>>,
    /// One `[T × d_x]` covariate block per series.
    pub covariates: Vec<Matrix>,
    pub covariate_names: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub series_ids: Vec<usize>,
    pub norm_stats: Vec<NormStats>,
}

impl SeriesDataset {
    /// Builds a dataset after checking the shape invariants.
    pub fn new(
        values: Vec<Vec<f64>>,
        covariates: Vec<Matrix>,
        covariate_names: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
    ) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Config("dataset needs at least one series".into()));
        }
        let t = timestamps.len();
        if covariates.len() != n {
            return Err(Error::Contract(format!(
                "{} covariate blocks for {n} series",
                covariates.len()
            )));
        }
        for (i, (v, c)) in values.iter().zip(&covariates).enumerate() {
            if v.len() != t || c.rows() != t {
                return Err(Error::Contract(format!(
                    "series {i}: {} values and {} covariate rows for {t} timestamps",
                    v.len(),
                    c.rows()
                )));
            }
            if c.cols() != covariate_names.len() {
                return Err(Error::Contract(format!(
                    "series {i}: {} covariate columns but {} names",
                    c.cols(),
                    covariate_names.len()
                )));
            }
        }
        if let Some(row) = check_constant_step(&timestamps) {
            return Err(Error::Format {
                row,
                message: "timestamps must strictly increase with a constant step".into(),
            });
        }
        Ok(SeriesDataset {
            series_ids: (0..n).collect(),
            norm_stats: vec![NormStats::IDENTITY; n],
            values,
            covariates,
            covariate_names,
            timestamps,
        })
    }

    pub fn n_series(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    /// Appends calendar features to every series' covariate block.
    pub fn with_calendar_features(mut self, granularity: Granularity) -> Result<Self> {
        let cal = build_calendar_features(&self.timestamps, granularity)?;
        for block in &mut self.covariates {
            let mut rows = Vec::with_capacity(block.rows());
            for i in 0..block.rows() {
                let mut r = block.row(i).to_vec();
                r.extend_from_slice(cal.features.row(i));
                rows.push(r);
            }
            *block = Matrix::from_vec(
                block.rows(),
                block.cols() + cal.features.cols(),
                rows.concat(),
            );
        }
        self.covariate_names.extend(cal.names);
        Ok(self)
    }

    /// Standardizes each target series with statistics taken only from
    /// `training_range`. Population standard deviation is used.
    pub fn normalize(&self, training_range: std::ops::Range<usize>) -> Result<(Self, Vec<NormStats>)> {
        if training_range.is_empty() || training_range.end > self.len() {
            return Err(Error::Split(format!(
                "training range {training_range:?} is empty or exceeds {} steps",
                self.len()
            )));
        }
        let mut stats = Vec::with_capacity(self.n_series());
        for (i, v) in self.values.iter().enumerate() {
            // undo any earlier normalization so stats refer to raw units
            let raw: Vec<f64> = v[training_range.clone()]
                .iter()
                .map(|&z| self.norm_stats[i].denormalize(z))
                .collect();
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 1e-12) {
                return Err(Error::Degenerate { series: i });
            }
            stats.push(NormStats { mean, std });
        }
        Ok((self.with_stats(&stats)?, stats))
    }

    /// Re-expresses the dataset under the given normalization statistics.
    pub fn with_stats(&self, stats: &[NormStats]) -> Result<Self> {
        if stats.len() != self.n_series() {
            return Err(Error::Contract(format!(
                "{} normalization entries for {} series",
                stats.len(),
                self.n_series()
            )));
        }
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let old = self.norm_stats[i];
            for x in v.iter_mut() {
                *x = stats[i].normalize(old.denormalize(*x));
            }
        }
        out.norm_stats = stats.to_vec();
        Ok(out)
    }

    /// Values of the dataset back in raw units.
    pub fn denormalized(&self) -> Self {
        self.with_stats(&vec![NormStats::IDENTITY; self.n_series()])
            .expect("stats length matches")
    }
}

/// Index of the first row breaking a constant positive step, if any.
fn check_constant_step(ts: &[NaiveDateTime]) -> Option<usize> {
    if ts.len() < 2 {
        return None;
    }
    let step = ts[1] - ts[0];
    if step <= chrono::TimeDelta::zero() {
        return Some(1);
    }
    ts.windows(2)
        .position(|w| w[1] - w[0] != step)
        .map(|p| p + 1)
}
