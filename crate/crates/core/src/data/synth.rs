//! Seeded synthetic panels standing in for the PV and load datasets.

use std::f64::consts::PI;
use std::str::FromStr;

use chrono::{NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Steps per generated day; both kinds are hourly.
pub const SYNTH_DAY: usize = 24;
const SYNTH_WEEK: usize = 24 * 7;
const SYNTH_YEAR: usize = 24 * 365;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    /// Daily plus weekly sinusoids on a positive level, with Gaussian noise.
    #[serde(rename = "sine-mix")]
    SineMix,
    /// Half-sine daylight profile scaled by a persistent cloud factor; exactly
    /// zero at night.
    #[serde(rename = "solar-like")]
    SolarLike,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-mix" => Ok(SynthKind::SineMix),
            "solar-like" => Ok(SynthKind::SolarLike),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_series: usize,
    pub t_total: usize,
    pub seed: u64,
    pub kind: SynthKind,
    /// Input length the data will be windowed with; sizes the minimum length.
    pub t_l: usize,
    /// Horizon the data will be windowed with.
    pub t_h: usize,
}

/// Generates a dataset. The covariates are the phase features the generator
/// itself uses, so the mapping is learnable.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<SeriesDataset> {
    if spec.n_series == 0 {
        return Err(Error::Config("n_series must be at least 1".into()));
    }
    let minimum = 4 * (spec.t_l + spec.t_h);
    if spec.t_total < minimum || spec.t_l == 0 || spec.t_h == 0 {
        return Err(Error::Sizing {
            minimum: minimum.max(8),
            got: spec.t_total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = NaiveDate::from_ymd_opt(2011, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let timestamps = (0..spec.t_total)
        .map(|t| start + TimeDelta::hours(t as i64))
        .collect();

    let phase = |t: usize, period: usize| 2.0 * PI * t as f64 / period as f64;
    let (values, covariates, names) = match spec.kind {
        SynthKind::SineMix => {
            let mut values = Vec::with_capacity(spec.n_series);
            for i in 0..spec.n_series {
                let level = 5.0 + i as f64;
                let daily = 1.0 + 0.25 * i as f64;
                let weekly = 0.2 * daily;
                let shift = rng.random_range(0.0..2.0 * PI);
                let noise = Normal::new(0.0, 0.05 * daily).expect("positive sd");
                let series = (0..spec.t_total)
                    .map(|t| {
                        level
                            + daily * (phase(t, SYNTH_DAY) + shift).sin()
                            + weekly * phase(t, SYNTH_WEEK).sin()
                            + noise.sample(&mut rng)
                    })
                    .collect();
                values.push(series);
            }
            let block = Matrix::from_vec(
                spec.t_total,
                4,
                (0..spec.t_total)
                    .flat_map(|t| {
                        let (d, w) = (phase(t, SYNTH_DAY), phase(t, SYNTH_WEEK));
                        [d.sin(), d.cos(), w.sin(), w.cos()]
                    })
                    .collect(),
            );
            let names = ["day_sin", "day_cos", "week_sin", "week_cos"];
            (values, vec![block; spec.n_series], names.to_vec())
        }
        SynthKind::SolarLike => {
            let mut values = Vec::with_capacity(spec.n_series);
            let mut covariates = Vec::with_capacity(spec.n_series);
            for i in 0..spec.n_series {
                let capacity = 1.0 + 0.5 * i as f64;
                let jitter = Normal::new(0.0, 0.03).expect("positive sd");
                let mut cloud: f64 = 0.8;
                let mut series = Vec::with_capacity(spec.t_total);
                let mut block = Vec::with_capacity(spec.t_total * 5);
                for t in 0..spec.t_total {
                    if t % SYNTH_DAY == 0 {
                        // day-to-day persistence of cloud cover
                        cloud = (0.7 * cloud + 0.3 * rng.random_range(0.3..1.0)).clamp(0.3, 1.0);
                    }
                    let hour = t % SYNTH_DAY;
                    let season = 1.0 + 0.2 * phase(t, SYNTH_YEAR).sin();
                    let v = if (6..18).contains(&hour) {
                        let profile = (PI * (hour as f64 - 5.5) / 12.0).sin();
                        (capacity * season * cloud * profile * (1.0 + jitter.sample(&mut rng)))
                            .max(0.0)
                    } else {
                        0.0
                    };
                    series.push(v);
                    let (d, y) = (phase(t, SYNTH_DAY), phase(t, SYNTH_YEAR));
                    block.extend_from_slice(&[d.sin(), d.cos(), y.sin(), y.cos(), cloud]);
                }
                values.push(series);
                covariates.push(Matrix::from_vec(spec.t_total, 5, block));
            }
            let names = ["day_sin", "day_cos", "year_sin", "year_cos", "cloud"];
            (values, covariates, names.to_vec())
        }
    };
    SeriesDataset::new(
        values,
        covariates,
        names.into_iter().map(String::from).collect(),
        timestamps,
    )
}
