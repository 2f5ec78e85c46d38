//! Per-layer discriminators that tell a deep decoder's hidden states apart
//! from everyone else's.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Group, ParamBuilder, ParamId};
use crate::tensor::Matrix;

pub const CONV1_CHANNELS: usize = 16;
pub const KERNEL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const LEAKY_SLOPE: f64 = 0.2;

/// The deep decoder whose layers a discriminator treats as "real".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Teacher {
    P1,
    P2,
}

impl Teacher {
    pub const BOTH: [Teacher; 2] = [Teacher::P1, Teacher::P2];

    pub fn other(self) -> Teacher {
        match self {
            Teacher::P1 => Teacher::P2,
            Teacher::P2 => Teacher::P1,
        }
    }
}

/// How batch normalization gets its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the scored batch.
    Batch,
    /// Frozen running averages.
    Running,
}

/// Running batch-norm statistics of one discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    fn fresh() -> Self {
        BnRunning {
            mean: vec![0.0; CONV1_CHANNELS],
            var: vec![1.0; CONV1_CHANNELS],
        }
    }
}

/// Batch statistics observed by one scoring call, for updating the running
/// averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

/// `Conv1d(d_hid→16, k3, s2, p1) → BatchNorm → LeakyReLU(0.2) →
/// Conv1d(16→1, k3, s1, p1) → Linear(L→1) → Sigmoid` over a `[T_h × d_hid]`
/// sequence read as `T_h` positions with `d_hid` channels.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub conv1_weight: ParamId,
    pub conv1_bias: ParamId,
    pub bn_gain: ParamId,
    pub bn_offset: ParamId,
    pub conv2_weight: ParamId,
    pub conv2_bias: ParamId,
    pub linear_weight: ParamId,
    pub linear_bias: ParamId,
    pub t_h: usize,
    pub d_hid: usize,
}

/// Length after the stride-2 convolution.
pub fn conv1_len(t_h: usize) -> usize {
    (t_h + 2 - KERNEL) / 2 + 1
}

impl Discriminator {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, t_h: usize, d_hid: usize) -> Self {
        let l1 = conv1_len(t_h);
        pb.scoped(name, |pb| Discriminator {
            conv1_weight: pb.fan_in("conv1.weight", KERNEL * d_hid, CONV1_CHANNELS),
            conv1_bias: pb.zeros("conv1.bias", 1, CONV1_CHANNELS),
            bn_gain: pb.ones("bn.gain", 1, CONV1_CHANNELS),
            bn_offset: pb.zeros("bn.offset", 1, CONV1_CHANNELS),
            conv2_weight: pb.fan_in("conv2.weight", KERNEL * CONV1_CHANNELS, 1),
            conv2_bias: pb.zeros("conv2.bias", 1, 1),
            linear_weight: pb.fan_in("linear.weight", l1, 1),
            linear_bias: pb.zeros("linear.bias", 1, 1),
            t_h,
            d_hid,
        })
    }

    pub fn params(&self) -> [ParamId; 8] {
        [
            self.conv1_weight,
            self.conv1_bias,
            self.bn_gain,
            self.bn_offset,
            self.conv2_weight,
            self.conv2_bias,
            self.linear_weight,
            self.linear_bias,
        ]
    }

    /// Scores a batch of hidden-state sequences; each output is `1×1` in
    /// `(0, 1)`. In [`BnMode::Batch`] the normalization statistics pool every
    /// position of every sample and are returned.
    pub fn score(
        &self,
        g: &mut Graph<'_>,
        hs: &[Var],
        mode: BnMode,
        running: &BnRunning,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        if hs.is_empty() {
            return Err(Error::Contract("discriminator needs at least one sequence".into()));
        }
        for &h in hs {
            if g.shape(h) != (self.t_h, self.d_hid) {
                return Err(Error::Contract(format!(
                    "discriminator expects [{} × {}] hidden states, got {:?}",
                    self.t_h,
                    self.d_hid,
                    g.shape(h)
                )));
            }
        }
        let l1 = conv1_len(self.t_h);
        let w1 = g.param(self.conv1_weight);
        let b1 = g.param(self.conv1_bias);
        let mut conv = Vec::with_capacity(hs.len());
        for &h in hs {
            let patches = g.im2col(h, KERNEL, 2, 1);
            let c = g.matmul(patches, w1);
            conv.push(g.add_row(c, b1));
        }
        let stacked = g.concat_rows(&conv);
        let (normed, stats) = match mode {
            BnMode::Batch => {
                let mean = g.mean_rows(stacked);
                let neg = g.scale(mean, -1.0);
                let centered = g.add_row(stacked, neg);
                let sq = g.mul(centered, centered);
                let var = g.mean_rows(sq);
                let n = g.shape(stacked).0 as f64;
                let stats = BatchStats {
                    mean: g.value(mean).as_slice().to_vec(),
                    var: g
                        .value(var)
                        .as_slice()
                        .iter()
                        .map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v })
                        .collect(),
                };
                let shifted = g.add_scalar(var, BN_EPS);
                let inv = g.powf(shifted, -0.5);
                (g.mul_row(centered, inv), Some(stats))
            }
            BnMode::Running => {
                let neg_mean = g.constant(Matrix::row_vector(
                    &running.mean.iter().map(|m| -m).collect::<Vec<_>>(),
                ));
                let inv = g.constant(Matrix::row_vector(
                    &running
                        .var
                        .iter()
                        .map(|v| 1.0 / (v + BN_EPS).sqrt())
                        .collect::<Vec<_>>(),
                ));
                let centered = g.add_row(stacked, neg_mean);
                (g.mul_row(centered, inv), None)
            }
        };
        let gain = g.param(self.bn_gain);
        let offset = g.param(self.bn_offset);
        let scaled = g.mul_row(normed, gain);
        let affine = g.add_row(scaled, offset);
        let act = g.leaky_relu(affine, LEAKY_SLOPE);

        let w2 = g.param(self.conv2_weight);
        let b2 = g.param(self.conv2_bias);
        let wl = g.param(self.linear_weight);
        let bl = g.param(self.linear_bias);
        let mut out = Vec::with_capacity(hs.len());
        for k in 0..hs.len() {
            let a = g.slice_rows(act, k * l1, l1);
            let patches = g.im2col(a, KERNEL, 1, 1);
            let c = g.matmul(patches, w2);
            let c = g.add_row(c, b2);
            // [L × 1] → [1 × L] so the linear layer reads the whole sequence
            let row = g.transpose(c);
            let logit = g.matmul(row, wl);
            let logit = g.add(logit, bl);
            out.push(g.sigmoid(logit));
        }
        Ok((out, stats))
    }
}

/// One discriminator per layer of each deep decoder.
#[derive(Clone, Debug)]
pub struct DiscriminatorBank {
    pub p1: Vec<Discriminator>,
    pub p2: Vec<Discriminator>,
    pub running_p1: Vec<BnRunning>,
    pub running_p2: Vec<BnRunning>,
}

impl DiscriminatorBank {
    pub fn new(pb: &mut ParamBuilder<'_>, n_d: usize, t_h: usize, d_hid: usize) -> Self {
        debug_assert_eq!(pb.group(), Group::Discriminator);
        let p1 = (0..n_d)
            .map(|i| Discriminator::new(pb, &format!("p1.{i}"), t_h, d_hid))
            .collect();
        let p2 = (0..n_d)
            .map(|i| Discriminator::new(pb, &format!("p2.{i}"), t_h, d_hid))
            .collect();
        DiscriminatorBank {
            p1,
            p2,
            running_p1: vec![BnRunning::fresh(); n_d],
            running_p2: vec![BnRunning::fresh(); n_d],
        }
    }

    pub fn depth(&self) -> usize {
        self.p1.len()
    }

    /// Discriminator `D_{i,which}` for a zero-based layer index.
    pub fn get(&self, which: Teacher, layer: usize) -> Result<(&Discriminator, &BnRunning)> {
        let (ds, rs) = match which {
            Teacher::P1 => (&self.p1, &self.running_p1),
            Teacher::P2 => (&self.p2, &self.running_p2),
        };
        match (ds.get(layer), rs.get(layer)) {
            (Some(d), Some(r)) => Ok((d, r)),
            _ => Err(Error::Contract(format!(
                "discriminator layer {layer} out of range for depth {}",
                ds.len()
            ))),
        }
    }

    /// Scores a batch with `D_{layer,which}`.
    pub fn score(
        &self,
        g: &mut Graph<'_>,
        which: Teacher,
        layer: usize,
        hs: &[Var],
        mode: BnMode,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        let (d, r) = self.get(which, layer)?;
        d.score(g, hs, mode, r)
    }

    /// Exponential update of the running statistics.
    pub fn update_running(&mut self, which: Teacher, layer: usize, stats: &BatchStats) {
        let r = match which {
            Teacher::P1 => &mut self.running_p1[layer],
            Teacher::P2 => &mut self.running_p2[layer],
        };
        for (m, s) in r.mean.iter_mut().zip(&stats.mean) {
            *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * s;
        }
        for (v, s) in r.var.iter_mut().zip(&stats.var) {
            *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * s;
        }
    }
}
