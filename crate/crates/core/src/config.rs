//! Flat key-value run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, split, synthesize_dataset, CsvSchema, Granularity, NormStats, SeriesDataset,
    SplitSpec, SynthKind, SynthSpec, WindowSplits,
};
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::nn::{ModelConfig, Preset};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

/// Every tunable of a run. Unknown keys are errors; absent keys take the
/// defaults below, or the preset's values when `preset` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub name: String,

    pub source: DataSource,
    pub synth_kind: SynthKind,
    pub n_series: usize,
    pub t_total: usize,
    pub data_seed: u64,
    pub csv_path: Option<PathBuf>,
    pub csv_timestamp: String,
    pub csv_series: String,
    pub csv_target: String,
    pub csv_covariates: Vec<String>,
    /// Append calendar covariates at this granularity.
    pub calendar: Option<Granularity>,
    pub val_len: usize,
    pub test_len: usize,
    pub train_stride: usize,
    pub steps_per_day: usize,

    pub t_l: usize,
    pub t_h: usize,
    pub d_hid: usize,
    pub n_e: usize,
    pub n_d: usize,
    pub n_s: usize,
    pub d_f: usize,
    pub n_h: usize,
    /// Defaults to half the horizon.
    pub t_de: Option<usize>,
    pub dropout: f64,
    pub attn_sampling_factor: usize,
    pub use_prob_sparse: bool,
    pub use_id_embedding: bool,

    pub lr_g: f64,
    pub lr_d: f64,
    pub alpha_o: f64,
    pub alpha_h: f64,
    pub e_max: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub non_saturating: bool,

    pub knn_k: usize,
    pub latency_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Sanyo, None)
    }
}

impl RunConfig {
    fn from_preset(preset: Preset, name: Option<String>) -> Self {
        let (t_l, t_h) = (48, 24);
        let m = ModelConfig::preset(preset, t_l, t_h, 1);
        let t = TrainConfig::preset(preset);
        RunConfig {
            preset: name,
            name: "run".into(),
            source: DataSource::Synthetic,
            synth_kind: SynthKind::SineMix,
            n_series: 2,
            t_total: 24 * 60,
            data_seed: 7,
            csv_path: None,
            csv_timestamp: "timestamp".into(),
            csv_series: "series".into(),
            csv_target: "value".into(),
            csv_covariates: Vec::new(),
            calendar: None,
            val_len: 24 * 7,
            test_len: 24 * 14,
            train_stride: 1,
            steps_per_day: 24,
            t_l,
            t_h,
            d_hid: m.d_hid,
            n_e: m.n_e,
            n_d: m.n_d,
            n_s: m.n_s,
            d_f: m.d_f,
            n_h: m.n_h,
            t_de: None,
            dropout: m.dropout,
            attn_sampling_factor: m.attn_sampling_factor,
            use_prob_sparse: m.use_prob_sparse,
            use_id_embedding: m.use_id_embedding,
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            alpha_o: t.alpha_o,
            alpha_h: t.alpha_h,
            e_max: t.e_max,
            batch_size: t.batch_size,
            patience: t.patience,
            seed: t.seed,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            non_saturating: t.non_saturating,
            knn_k: 6,
            latency_runs: 10,
        }
    }

    /// Parses TOML text; `preset` selects the base values that the other
    /// keys then override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let base = match user.get("preset") {
            Some(toml::Value::String(p)) => Self::from_preset(p.parse()?, Some(p.clone())),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Self::default(),
        };
        let mut merged = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(format!("cannot materialize defaults: {e}")))?;
        merged.extend(user);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == DataSource::Csv && self.csv_path.is_none() {
            return Err(Error::Config("source = \"csv\" needs csv_path".into()));
        }
        if self.steps_per_day == 0 || self.train_stride == 0 {
            return Err(Error::Config("steps_per_day and train_stride must be positive".into()));
        }
        if self.latency_runs == 1 {
            return Err(Error::Config("latency_runs must be 0 (off) or at least 2".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip must be >= 0, got {}", self.grad_clip)));
        }
        Ok(())
    }

    /// Architecture for data with `d_x` covariates over `n_series` series.
    pub fn model_config(&self, d_x: usize, n_series: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            d_hid: self.d_hid,
            n_e: self.n_e,
            n_d: self.n_d,
            n_s: self.n_s,
            d_f: self.d_f,
            n_h: self.n_h,
            t_de: self.t_de.unwrap_or((self.t_h / 2).max(1)),
            dropout: self.dropout,
            attn_sampling_factor: self.attn_sampling_factor,
            use_prob_sparse: self.use_prob_sparse,
            use_id_embedding: self.use_id_embedding,
            max_series: n_series.max(1),
            t_l: self.t_l,
            t_h: self.t_h,
            d_x,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            alpha_o: self.alpha_o,
            alpha_h: self.alpha_h,
            e_max: self.e_max,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            non_saturating: self.non_saturating,
        }
    }

    pub fn eval_options(&self, workers: usize) -> EvalOptions {
        EvalOptions {
            steps_per_day: self.steps_per_day,
            knn_k: self.knn_k,
            latency_runs: self.latency_runs,
            workers,
        }
    }

    fn raw_dataset(&self) -> Result<SeriesDataset> {
        let ds = match self.source {
            DataSource::Synthetic => synthesize_dataset(&SynthSpec {
                n_series: self.n_series,
                t_total: self.t_total,
                seed: self.data_seed,
                kind: self.synth_kind,
                t_l: self.t_l,
                t_h: self.t_h,
            })?,
            DataSource::Csv => {
                let path = self.csv_path.as_ref().expect("validated");
                load_csv(
                    path,
                    &CsvSchema {
                        timestamp: self.csv_timestamp.clone(),
                        series: self.csv_series.clone(),
                        target: self.csv_target.clone(),
                        covariates: self.csv_covariates.clone(),
                    },
                )?
            }
        };
        match self.calendar {
            Some(g) => ds.with_calendar_features(g),
            None => Ok(ds),
        }
    }

    /// Loads, normalizes and windows the data. With `stats`, those
    /// normalization statistics are used instead of fitting new ones.
    pub fn prepare_data(&self, stats: Option<&[NormStats]>) -> Result<PreparedData> {
        let ds = self.raw_dataset()?;
        let spec = SplitSpec::tail(ds.len(), self.val_len, self.test_len)?;
        let (normalized, norm_stats) = match stats {
            Some(s) => (ds.with_stats(s)?, s.to_vec()),
            None => ds.normalize(spec.training.clone())?,
        };
        let windows = split(&normalized, &spec, self.t_l, self.t_h, self.train_stride)?;
        Ok(PreparedData {
            d_x: normalized.covariate_dim(),
            n_series: normalized.n_series(),
            dataset: normalized,
            norm_stats,
            spec,
            windows,
        })
    }
}

pub struct PreparedData {
    pub dataset: SeriesDataset,
    pub norm_stats: Vec<NormStats>,
    pub spec: SplitSpec,
    pub windows: WindowSplits,
    pub d_x: usize,
    pub n_series: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::from_toml_str("t_h = 12\nalpha_h = 0.0\n").unwrap();
        assert_eq!(c.t_h, 12);
        assert_eq!(c.alpha_h, 0.0);
        assert_eq!(c.lr_g, 0.005);
        let m = c.model_config(3, 2).unwrap();
        assert_eq!((m.t_de, m.max_series, m.d_x), (6, 2, 3));
        assert_eq!(c.train_config().grad_clip, Some(5.0));
    }

    #[test]
    fn preset_then_overrides() {
        let c = RunConfig::from_toml_str("preset = \"electricity\"\nd_hid = 32\n").unwrap();
        assert_eq!((c.d_hid, c.n_d, c.lr_g, c.alpha_h), (32, 3, 0.001, 0.001));
        assert!(RunConfig::from_toml_str("preset = \"weather\"").is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml_str("alpha_0 = 0.1\n").unwrap_err().to_string();
        assert!(e.contains("alpha_0"), "{e}");
        let e = RunConfig::from_toml_str("t_h = \"twelve\"\n").unwrap_err().to_string();
        assert!(e.contains("twelve"), "{e}");
    }

    #[test]
    fn materialized_config_round_trips() {
        let c = RunConfig::from_toml_str("preset = \"solar\"\ncalendar = \"1h\"\n").unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn csv_source_needs_a_path() {
        assert!(matches!(RunConfig::from_toml_str("source = \"csv\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn prepared_data_uses_given_statistics() {
        let c = RunConfig::from_toml_str("t_l = 24\nt_h = 12\nt_total = 480\nval_len = 48\ntest_len = 48\n").unwrap();
        let fresh = c.prepare_data(None).unwrap();
        assert_eq!(fresh.d_x, fresh.dataset.covariate_dim());
        let reused = c.prepare_data(Some(&fresh.norm_stats)).unwrap();
        assert_eq!(reused.windows.test, fresh.windows.test);
    }
}
