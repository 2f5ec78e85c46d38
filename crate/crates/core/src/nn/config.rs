use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the encoder, the three decoders and
/// the discriminator bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of every layer.
    pub d_hid: usize,
    /// Encoder layers.
    pub n_e: usize,
    /// Layers in each deep decoder (P1 and P2).
    pub n_d: usize,
    /// Layers in the shallow student decoder.
    pub n_s: usize,
    /// Feed-forward width.
    pub d_f: usize,
    /// Attention heads.
    pub n_h: usize,
    /// Start-token length fed to the non-autoregressive decoders.
    pub t_de: usize,
    pub dropout: f64,
    pub attn_sampling_factor: usize,
    pub use_prob_sparse: bool,
    pub use_id_embedding: bool,
    pub max_series: usize,
    /// Input length.
    pub t_l: usize,
    /// Forecast horizon.
    pub t_h: usize,
    /// Covariate width.
    pub d_x: usize,
}

/// Named hyperparameter sets for the four reference datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Sanyo,
    Hanergy,
    Solar,
    Electricity,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sanyo" => Ok(Preset::Sanyo),
            "hanergy" => Ok(Preset::Hanergy),
            "solar" => Ok(Preset::Solar),
            "electricity" => Ok(Preset::Electricity),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?}; expected sanyo, hanergy, solar or electricity"
            ))),
        }
    }
}

impl ModelConfig {
    /// Architecture for a preset; `t_de` defaults to half the horizon.
    pub fn preset(preset: Preset, t_l: usize, t_h: usize, d_x: usize) -> Self {
        let (d_hid, n_e, n_d, n_s, d_f, n_h, dropout) = match preset {
            Preset::Sanyo | Preset::Hanergy => (48, 4, 4, 2, 16, 8, 0.0),
            Preset::Solar => (96, 4, 3, 2, 48, 32, 0.2),
            // 32 heads do not divide 48; 16 is the nearest admissible count
            Preset::Electricity => (48, 4, 3, 2, 48, 16, 0.1),
        };
        ModelConfig {
            d_hid,
            n_e,
            n_d,
            n_s,
            d_f,
            n_h,
            t_de: (t_h / 2).max(1),
            dropout,
            attn_sampling_factor: 2,
            use_prob_sparse: false,
            use_id_embedding: true,
            max_series: 1,
            t_l,
            t_h,
            d_x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.n_e >= self.n_d && self.n_d > self.n_s && self.n_s >= 1) {
            return fail(format!(
                "layer counts must satisfy n_e >= n_d > n_s >= 1 (got n_e={}, n_d={}, n_s={})",
                self.n_e, self.n_d, self.n_s
            ));
        }
        if self.n_h == 0 || self.d_hid == 0 || self.d_hid % self.n_h != 0 {
            return fail(format!(
                "d_hid={} must be a positive multiple of n_h={}",
                self.d_hid, self.n_h
            ));
        }
        if self.d_f == 0 {
            return fail("d_f must be positive".into());
        }
        if self.t_l == 0 || self.t_h == 0 {
            return fail("t_l and t_h must be positive".into());
        }
        if self.t_de == 0 || self.t_de > self.t_l {
            return fail(format!(
                "t_de={} must lie in 1..=t_l ({})",
                self.t_de, self.t_l
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.attn_sampling_factor == 0 {
            return fail("attn_sampling_factor must be positive".into());
        }
        if self.max_series == 0 {
            return fail("max_series must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_hid / self.n_h
    }

    /// Positions covered by one window.
    pub fn max_positions(&self) -> usize {
        self.t_l + self.t_h
    }
}
