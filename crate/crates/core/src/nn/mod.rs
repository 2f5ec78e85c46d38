//! Building blocks shared by the encoder, the decoders and the heads.
//!
//! Every layer is a set of [`ParamId`]s plus a `forward` that records its
//! computation on a [`Graph`]. Sequences are `[len × width]` matrices.

mod attention;
mod config;

pub use attention::{AttentionMask, MultiHeadAttention, ProbSparse};
pub use config::{ModelConfig, Preset};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let weight = pb.fan_in(&format!("{name}.weight"), d_in, d_out);
        let bias = bias.then(|| pb.zeros(&format!("{name}.bias"), 1, d_out));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Row-wise normalization with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: pb.ones(&format!("{name}.gain"), 1, width),
            offset: pb.zeros(&format!("{name}.offset"), 1, width),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
        let gain = g.param(self.gain);
        let offset = g.param(self.offset);
        let y = g.mul_row(n, gain);
        g.add_row(y, offset)
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, d: usize, d_f: usize, dropout: f64) -> Self {
        pb.scoped(name, |pb| FeedForward {
            up: Linear::new(pb, "up", d, d_f, true),
            down: Linear::new(pb, "down", d_f, d, true),
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        let h = g.dropout(h, self.dropout);
        self.down.forward(g, h)
    }
}

/// Maps a window of scalar values and covariates to `d_hid`-wide rows.
///
/// Each row is the sum of a value projection, a covariate projection, a
/// learned position vector and, optionally, a per-series identity vector.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub value: ParamId,
    pub covariates: Option<ParamId>,
    pub position: ParamId,
    pub identity: Option<ParamId>,
    pub max_positions: usize,
    pub max_series: usize,
    pub d_x: usize,
}

impl Embedding {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.d_hid;
        pb.scoped(name, |pb| Embedding {
            value: pb.fan_in("value", 1, d),
            covariates: (cfg.d_x > 0).then(|| pb.fan_in("covariates", cfg.d_x, d)),
            position: pb.uniform("position", cfg.max_positions(), d, 0.1),
            identity: cfg
                .use_id_embedding
                .then(|| pb.uniform("identity", cfg.max_series, d, 0.1)),
            max_positions: cfg.max_positions(),
            max_series: cfg.max_series,
            d_x: cfg.d_x,
        })
    }

    /// Embeds `values.len()` rows starting at absolute position `first_pos`.
    /// `covariates` must have one row per value.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        values: &[f64],
        covariates: &Matrix,
        series_id: usize,
        first_pos: usize,
    ) -> Result<Var> {
        let n = values.len();
        if covariates.rows() != n || covariates.cols() != self.d_x {
            return Err(Error::Contract(format!(
                "embedding expects {n}×{} covariates, got {:?}",
                self.d_x,
                covariates.shape()
            )));
        }
        if first_pos + n > self.max_positions {
            return Err(Error::Contract(format!(
                "positions {first_pos}..{} exceed the table of {}",
                first_pos + n,
                self.max_positions
            )));
        }
        let v = g.constant(Matrix::column(values));
        let w = g.param(self.value);
        let mut e = g.matmul(v, w);
        if let Some(c) = self.covariates {
            let x = g.constant(covariates.clone());
            let w = g.param(c);
            let proj = g.matmul(x, w);
            e = g.add(e, proj);
        }
        let table = g.param(self.position);
        let pos = g.slice_rows(table, first_pos, n);
        e = g.add(e, pos);
        if let Some(id) = self.identity {
            if series_id >= self.max_series {
                return Err(Error::Contract(format!(
                    "series id {series_id} outside the identity table of {}",
                    self.max_series
                )));
            }
            let table = g.param(id);
            let row = g.slice_rows(table, series_id, 1);
            e = g.add_row(e, row);
        }
        Ok(e)
    }
}

/// Pre-norm self-attention plus feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &ModelConfig) -> Self {
        pb.scoped(name, |pb| EncoderLayer {
            norm_attn: LayerNorm::new(pb, "norm_attn", cfg.d_hid),
            attn: MultiHeadAttention::new(pb, "attn", cfg, ProbSparse::from_config(cfg)),
            norm_ffn: LayerNorm::new(pb, "norm_ffn", cfg.d_hid),
            ffn: FeedForward::new(pb, "ffn", cfg.d_hid, cfg.d_f, cfg.dropout),
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(g, x);
        let a = self.attn.forward(g, h, h, AttentionMask::None)?;
        let a = g.dropout(a, self.dropout);
        let x = g.add(x, a);
        let h = self.norm_ffn.forward(g, x);
        let f = self.ffn.forward(g, h);
        let f = g.dropout(f, self.dropout);
        Ok(g.add(x, f))
    }
}

/// Pre-norm self-attention, cross-attention over the encoder output, then
/// feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl DecoderLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &ModelConfig) -> Self {
        pb.scoped(name, |pb| DecoderLayer {
            norm_self: LayerNorm::new(pb, "norm_self", cfg.d_hid),
            self_attn: MultiHeadAttention::new(pb, "self_attn", cfg, ProbSparse::from_config(cfg)),
            norm_cross: LayerNorm::new(pb, "norm_cross", cfg.d_hid),
            cross_attn: MultiHeadAttention::new(pb, "cross_attn", cfg, None),
            norm_ffn: LayerNorm::new(pb, "norm_ffn", cfg.d_hid),
            ffn: FeedForward::new(pb, "ffn", cfg.d_hid, cfg.d_f, cfg.dropout),
            dropout: cfg.dropout,
        })
    }

    /// Returns the layer output, which is also the layer's hidden state.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var, mask: AttentionMask) -> Result<Var> {
        let h = self.norm_self.forward(g, x);
        let a = self.self_attn.forward(g, h, h, mask)?;
        let a = g.dropout(a, self.dropout);
        let x = g.add(x, a);
        let h = self.norm_cross.forward(g, x);
        let c = self.cross_attn.forward(g, h, memory, AttentionMask::None)?;
        let c = g.dropout(c, self.dropout);
        let x = g.add(x, c);
        let h = self.norm_ffn.forward(g, x);
        let f = self.ffn.forward(g, h);
        let f = g.dropout(f, self.dropout);
        Ok(g.add(x, f))
    }
}
