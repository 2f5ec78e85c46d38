//! The shared encoder, the three decoders and the discriminator bank.
//!
//! Every decode path exists twice: a graph-level form returning [`Var`]s for
//! training, and a value-level form that builds its own inference graph.

mod checkpoint;
mod discriminator;

pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use discriminator::{
    conv1_len, BatchStats, BnMode, BnRunning, Discriminator, DiscriminatorBank, Teacher,
    CONV1_CHANNELS,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::ForecastWindow;
use crate::error::{Error, Result};
use crate::nn::{AttentionMask, DecoderLayer, Embedding, EncoderLayer, LayerNorm, Linear, ModelConfig};
use crate::params::{Group, ParamBuilder, ParamStore};
use crate::tensor::Matrix;

/// Lower bound added to the softplus scale.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecoderKind {
    P1,
    P2,
    S,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::P1, DecoderKind::P2, DecoderKind::S];

    pub fn group(self) -> Group {
        match self {
            DecoderKind::P1 => Group::P1,
            DecoderKind::P2 => Group::P2,
            DecoderKind::S => Group::Student,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::P1 => "P1",
            DecoderKind::P2 => "P2",
            DecoderKind::S => "S",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P1" => Ok(DecoderKind::P1),
            "P2" => Ok(DecoderKind::P2),
            "S" => Ok(DecoderKind::S),
            _ => Err(Error::Config(format!("unknown decoder {s:?}; expected P1, P2 or S"))),
        }
    }
}

/// Per-step Gaussian forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianForecast {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Contract(format!(
                "forecast has {} means and {} scales",
                mu.len(),
                sigma.len()
            )));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                component: "forecast".into(),
            });
        }
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain("forecast scale must be positive".into()));
        }
        Ok(GaussianForecast { mu, sigma })
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    /// The same forecast in another unit: `mu·std + mean`, `sigma·std`.
    pub fn rescaled(&self, mean: f64, std: f64) -> Self {
        GaussianForecast {
            mu: self.mu.iter().map(|m| m * std + mean).collect(),
            sigma: self.sigma.iter().map(|s| s * std).collect(),
        }
    }
}

/// Hidden states of every decoder layer at the horizon positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenStateTrace {
    pub p1: Vec<Matrix>,
    pub p2: Vec<Matrix>,
    pub s: Vec<Matrix>,
}

/// Graph-level decoder output: `mu` and `sigma` are `[T_h × 1]` and each
/// hidden state is `[T_h × d_hid]`.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub mu: Var,
    pub sigma: Var,
    pub hidden: Vec<Var>,
}

impl DecoderOutput {
    pub fn forecast(&self, g: &Graph<'_>) -> Result<GaussianForecast> {
        GaussianForecast::new(
            g.value(self.mu).as_slice().to_vec(),
            g.value(self.sigma).as_slice().to_vec(),
        )
    }

    pub fn hidden_values(&self, g: &Graph<'_>) -> Vec<Matrix> {
        self.hidden.iter().map(|&h| g.value(h).clone()).collect()
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    embedding: Embedding,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
struct Decoder {
    embedding: Embedding,
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    head: Linear,
}

impl Decoder {
    fn build(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig, depth: usize) -> Self {
        Decoder {
            embedding: Embedding::new(pb, "embedding", cfg),
            layers: (0..depth)
                .map(|i| DecoderLayer::new(pb, &format!("layer{i}"), cfg))
                .collect(),
            norm: LayerNorm::new(pb, "norm", cfg.d_hid),
            head: Linear::new(pb, "head", cfg.d_hid, 2, true),
        }
    }

    /// Runs the stack over the rows `first_pos..first_pos + values.len()`
    /// and returns the outputs and hidden states of the last `keep` rows.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        g: &mut Graph<'_>,
        values: &[f64],
        covariates: &Matrix,
        series_id: usize,
        first_pos: usize,
        memory: Var,
        mask: AttentionMask,
        keep: usize,
    ) -> Result<DecoderOutput> {
        let n = values.len();
        let mut x = self
            .embedding
            .forward(g, values, covariates, series_id, first_pos)?;
        let mut hidden = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(g, x, memory, mask)?;
            hidden.push(g.slice_rows(x, n - keep, keep));
        }
        let normed = self.norm.forward(g, x);
        let tail = g.slice_rows(normed, n - keep, keep);
        let out = self.head.forward(g, tail);
        let mu = g.slice_cols(out, 0, 1);
        let raw = g.slice_cols(out, 1, 1);
        let sp = g.softplus(raw);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        Ok(DecoderOutput { mu, sigma, hidden })
    }
}

#[derive(Debug, Default)]
struct CallCounter([AtomicUsize; 3]);

impl Clone for CallCounter {
    fn clone(&self) -> Self {
        let c = CallCounter::default();
        for (dst, src) in c.0.iter().zip(&self.0) {
            dst.store(src.load(Ordering::Relaxed), Ordering::Relaxed);
        }
        c
    }
}

/// Encoder, P1 (deep, autoregressive), P2 (deep, non-autoregressive),
/// S (shallow, non-autoregressive) and the discriminator bank, all over one
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AmlNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub discriminators: DiscriminatorBank,
    encoder: Encoder,
    p1: Decoder,
    p2: Decoder,
    s: Decoder,
    calls: CallCounter,
}

impl AmlNet {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &config;
        let encoder = ParamBuilder::new(&mut params, &mut rng, Group::Encoder).scoped("encoder", |pb| Encoder {
            embedding: Embedding::new(pb, "embedding", cfg),
            layers: (0..cfg.n_e)
                .map(|i| EncoderLayer::new(pb, &format!("layer{i}"), cfg))
                .collect(),
            norm: LayerNorm::new(pb, "norm", cfg.d_hid),
        });
        let p1 = ParamBuilder::new(&mut params, &mut rng, Group::P1)
            .scoped("p1", |pb| Decoder::build(pb, cfg, cfg.n_d));
        let p2 = ParamBuilder::new(&mut params, &mut rng, Group::P2)
            .scoped("p2", |pb| Decoder::build(pb, cfg, cfg.n_d));
        let s = ParamBuilder::new(&mut params, &mut rng, Group::Student)
            .scoped("s", |pb| Decoder::build(pb, cfg, cfg.n_s));
        let discriminators = ParamBuilder::new(&mut params, &mut rng, Group::Discriminator)
            .scoped("disc", |pb| DiscriminatorBank::new(pb, cfg.n_d, cfg.t_h, cfg.d_hid));
        Ok(AmlNet {
            config,
            params,
            discriminators,
            encoder,
            p1,
            p2,
            s,
            calls: CallCounter::default(),
        })
    }

    pub fn depth(&self, kind: DecoderKind) -> usize {
        match kind {
            DecoderKind::S => self.config.n_s,
            _ => self.config.n_d,
        }
    }

    /// Scalar parameters owned by a group.
    pub fn param_count(&self, group: Group) -> usize {
        self.params.count_in(&[group])
    }

    /// Decoder stack evaluations since construction or the last reset.
    pub fn decoder_calls(&self, kind: DecoderKind) -> usize {
        self.calls.0[kind.index()].load(Ordering::Relaxed)
    }

    pub fn reset_call_counts(&self) {
        for c in &self.calls.0 {
            c.store(0, Ordering::Relaxed);
        }
    }

    fn decoder(&self, kind: DecoderKind) -> &Decoder {
        match kind {
            DecoderKind::P1 => &self.p1,
            DecoderKind::P2 => &self.p2,
            DecoderKind::S => &self.s,
        }
    }

    fn check_window(&self, w: &ForecastWindow) -> Result<()> {
        let c = &self.config;
        if w.t_l() != c.t_l || w.x_all.rows() != c.t_l + c.t_h || w.x_all.cols() != c.d_x {
            return Err(Error::Contract(format!(
                "window has t_l={}, {} covariate rows of width {}; model expects t_l={}, t_h={}, d_x={}",
                w.t_l(),
                w.x_all.rows(),
                w.x_all.cols(),
                c.t_l,
                c.t_h,
                c.d_x
            )));
        }
        if let Some(y) = &w.y_future {
            if y.len() != c.t_h {
                return Err(Error::Contract(format!(
                    "window carries {} future targets, model horizon is {}",
                    y.len(),
                    c.t_h
                )));
            }
        }
        Ok(())
    }

    fn series_slot(&self, w: &ForecastWindow) -> usize {
        if self.config.use_id_embedding {
            w.series_id
        } else {
            0
        }
    }

    /// Encoder output `[T_l × d_hid]`.
    pub fn encode_graph(&self, g: &mut Graph<'_>, w: &ForecastWindow) -> Result<Var> {
        self.check_window(w)?;
        let t_l = self.config.t_l;
        let covs = w.x_all.slice_rows(0, t_l);
        let mut x = self
            .encoder
            .embedding
            .forward(g, &w.y_past, &covs, self.series_slot(w), 0)?;
        for layer in &self.encoder.layers {
            x = layer.forward(g, x)?;
        }
        Ok(self.encoder.norm.forward(g, x))
    }

    /// P1 with ground truth fed in: row `k` reads the target at step
    /// `T_l + k - 1` and the covariates at `T_l + k`, under a causal mask.
    pub fn p1_teacher_forced_graph(&self, g: &mut Graph<'_>, w: &ForecastWindow, h_e: Var) -> Result<DecoderOutput> {
        self.check_window(w)?;
        let truth = w.truth()?;
        let c = &self.config;
        let mut values = Vec::with_capacity(c.t_h);
        values.push(w.y_past[c.t_l - 1]);
        values.extend_from_slice(&truth[..c.t_h - 1]);
        self.p1_prefix(g, w, &values, h_e, c.t_h)
    }

    /// One P1 evaluation over the first `values.len()` horizon rows.
    fn p1_prefix(&self, g: &mut Graph<'_>, w: &ForecastWindow, values: &[f64], h_e: Var, keep: usize) -> Result<DecoderOutput> {
        let t_l = self.config.t_l;
        let covs = w.x_all.slice_rows(t_l, values.len());
        self.calls.0[DecoderKind::P1.index()].fetch_add(1, Ordering::Relaxed);
        self.p1
            .run(g, values, &covs, self.series_slot(w), t_l, h_e, AttentionMask::Causal, keep)
    }

    /// P2 or S: the last `T_de` inputs followed by zero placeholders over the
    /// horizon, with the true covariates throughout; one pass, no mask.
    pub fn nar_graph(&self, g: &mut Graph<'_>, kind: DecoderKind, w: &ForecastWindow, h_e: Var) -> Result<DecoderOutput> {
        if kind == DecoderKind::P1 {
            return Err(Error::Contract("P1 is autoregressive".into()));
        }
        self.check_window(w)?;
        let c = &self.config;
        let start = c.t_l - c.t_de;
        let mut values = w.y_past[start..].to_vec();
        values.resize(c.t_de + c.t_h, 0.0);
        let covs = w.x_all.slice_rows(start, c.t_de + c.t_h);
        self.calls.0[kind.index()].fetch_add(1, Ordering::Relaxed);
        self.decoder(kind).run(
            g,
            &values,
            &covs,
            self.series_slot(w),
            start,
            h_e,
            AttentionMask::None,
            c.t_h,
        )
    }

    /// Encoder output as a value.
    pub fn encode(&self, w: &ForecastWindow) -> Result<Matrix> {
        let mut g = Graph::inference(&self.params);
        let h = self.encode_graph(&mut g, w)?;
        Ok(g.value(h).clone())
    }

    pub fn decode_p1_teacher_forced(&self, w: &ForecastWindow, h_e: &Matrix) -> Result<(GaussianForecast, Vec<Matrix>)> {
        let mut g = Graph::inference(&self.params);
        let he = g.constant(h_e.clone());
        let out = self.p1_teacher_forced_graph(&mut g, w, he)?;
        Ok((out.forecast(&g)?, out.hidden_values(&g)))
    }

    /// P1 fed its own predicted means: `T_h` sequential decoder evaluations.
    pub fn decode_p1_autoregressive(&self, w: &ForecastWindow, h_e: &Matrix) -> Result<GaussianForecast> {
        self.check_window(w)?;
        let t_h = self.config.t_h;
        let mut values = vec![w.y_past[self.config.t_l - 1]];
        let mut mu = Vec::with_capacity(t_h);
        let mut sigma = Vec::with_capacity(t_h);
        for k in 0..t_h {
            let mut g = Graph::inference(&self.params);
            let he = g.constant(h_e.clone());
            let out = self.p1_prefix(&mut g, w, &values, he, 1)?;
            let m = g.value(out.mu).scalar();
            mu.push(m);
            sigma.push(g.value(out.sigma).scalar());
            if k + 1 < t_h {
                values.push(m);
            }
        }
        GaussianForecast::new(mu, sigma)
    }

    pub fn decode_p2(&self, w: &ForecastWindow, h_e: &Matrix) -> Result<(GaussianForecast, Vec<Matrix>)> {
        self.decode_nar(DecoderKind::P2, w, h_e)
    }

    pub fn decode_s(&self, w: &ForecastWindow, h_e: &Matrix) -> Result<(GaussianForecast, Vec<Matrix>)> {
        self.decode_nar(DecoderKind::S, w, h_e)
    }

    fn decode_nar(&self, kind: DecoderKind, w: &ForecastWindow, h_e: &Matrix) -> Result<(GaussianForecast, Vec<Matrix>)> {
        let mut g = Graph::inference(&self.params);
        let he = g.constant(h_e.clone());
        let out = self.nar_graph(&mut g, kind, w, he)?;
        Ok((out.forecast(&g)?, out.hidden_values(&g)))
    }

    /// Inference forecast in normalized units: P1 autoregressive, P2 and S
    /// single-pass. Also reports which parameter groups were read.
    pub fn forecast_traced(&self, w: &ForecastWindow, kind: DecoderKind) -> Result<(GaussianForecast, BTreeSet<Group>)> {
        let mut g = Graph::inference(&self.params);
        let h = self.encode_graph(&mut g, w)?;
        match kind {
            DecoderKind::P1 => {
                let h_e = g.value(h).clone();
                let mut touched = g.touched_groups().clone();
                touched.insert(Group::P1);
                Ok((self.decode_p1_autoregressive(w, &h_e)?, touched))
            }
            _ => {
                let out = self.nar_graph(&mut g, kind, w, h)?;
                Ok((out.forecast(&g)?, g.touched_groups().clone()))
            }
        }
    }

    pub fn forecast(&self, w: &ForecastWindow, kind: DecoderKind) -> Result<GaussianForecast> {
        Ok(self.forecast_traced(w, kind).map_err(|e| e.within(kind))?.0)
    }

    /// Hidden states of all three decoders (P1 teacher-forced when the window
    /// has targets, otherwise its autoregressive rollout re-fed as inputs).
    pub fn hidden_trace(&self, w: &ForecastWindow) -> Result<HiddenStateTrace> {
        let h_e = self.encode(w)?;
        let p1 = match w.y_future {
            Some(_) => self.decode_p1_teacher_forced(w, &h_e)?.1,
            None => {
                let ar = self.decode_p1_autoregressive(w, &h_e)?;
                let filled = ForecastWindow {
                    y_future: Some(ar.mu),
                    ..w.clone()
                };
                self.decode_p1_teacher_forced(&filled, &h_e)?.1
            }
        };
        Ok(HiddenStateTrace {
            p1,
            p2: self.decode_p2(w, &h_e)?.1,
            s: self.decode_s(w, &h_e)?.1,
        })
    }

    /// `D_{layer,which}(h)` with frozen batch-norm statistics.
    pub fn discriminate(&self, which: Teacher, layer: usize, h: &Matrix) -> Result<f64> {
        let mut g = Graph::inference(&self.params);
        let hv = g.constant(h.clone());
        let (p, _) = self
            .discriminators
            .score(&mut g, which, layer, &[hv], BnMode::Running)?;
        Ok(g.scalar(p[0]))
    }
}
