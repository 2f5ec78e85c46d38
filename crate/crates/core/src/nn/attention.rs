use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Linear, ModelConfig};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMask {
    None,
    /// Query `i` may only attend to keys `0..=i`.
    Causal,
}

/// Query-sparse attention: only the `u` queries whose score distribution is
/// furthest from uniform attend; the rest take the mean of the values.
///
/// Query selection ranks every query against the others, so a later row can
/// change which earlier rows are active. Causal sites therefore always use
/// full attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbSparse {
    pub factor: usize,
}

impl ProbSparse {
    pub fn from_config(cfg: &ModelConfig) -> Option<Self> {
        cfg.use_prob_sparse.then_some(ProbSparse {
            factor: cfg.attn_sampling_factor,
        })
    }

    /// `factor · ceil(ln n)`, at least one and at most `n`.
    pub fn budget(&self, n: usize) -> usize {
        let u = self.factor * (n as f64).ln().ceil() as usize;
        u.clamp(1, n)
    }

    /// Indices of the active queries, ascending.
    ///
    /// Each query is scored against a random subset of keys by
    /// `max(s) - sum(s) / l_k`; sampling is seeded from the shapes and the
    /// head so repeated calls agree.
    pub fn select_queries(&self, q: &Matrix, k: &Matrix, head: usize) -> Vec<usize> {
        let (l_q, l_k) = (q.rows(), k.rows());
        let u = self.budget(l_q);
        if u >= l_q {
            return (0..l_q).collect();
        }
        let samples = self.budget(l_k);
        let seed = ((l_q as u64) << 32) ^ ((l_k as u64) << 16) ^ head as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scored: Vec<(f64, usize)> = (0..l_q)
            .map(|i| {
                let qi = q.row(i);
                let (mut max, mut sum) = (f64::NEG_INFINITY, 0.0);
                for _ in 0..samples {
                    let j = rng.random_range(0..l_k);
                    let s: f64 = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
                    max = max.max(s);
                    sum += s;
                }
                (max - sum / l_k as f64, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut top: Vec<usize> = scored[..u].iter().map(|&(_, i)| i).collect();
        top.sort_unstable();
        top
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_h: usize,
    pub sparse: Option<ProbSparse>,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &ModelConfig, sparse: Option<ProbSparse>) -> Self {
        let d = cfg.d_hid;
        pb.scoped(name, |pb| MultiHeadAttention {
            query: Linear::new(pb, "query", d, d, true),
            key: Linear::new(pb, "key", d, d, true),
            value: Linear::new(pb, "value", d, d, true),
            output: Linear::new(pb, "output", d, d, true),
            n_h: cfg.n_h,
            sparse,
        })
    }

    pub fn width(&self) -> usize {
        self.query.d_in
    }

    /// Attends from `queries` `[l_q × d]` over `keys` `[l_k × d]`, which
    /// also supply the values.
    pub fn forward(&self, g: &mut Graph<'_>, queries: Var, keys: Var, mask: AttentionMask) -> Result<Var> {
        let d = self.width();
        let (l_q, dq) = g.shape(queries);
        let (l_k, dk) = g.shape(keys);
        if dq != d || dk != d {
            return Err(Error::Contract(format!(
                "attention width is {d}, got queries of {dq} and keys of {dk}"
            )));
        }
        if mask == AttentionMask::Causal && l_q != l_k {
            return Err(Error::Contract(format!(
                "causal attention needs equal lengths, got {l_q} queries and {l_k} keys"
            )));
        }
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, keys);
        let v = self.value.forward(g, keys);
        let d_head = d / self.n_h;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_h);
        for h in 0..self.n_h {
            let qh = g.slice_cols(q, h * d_head, d_head);
            let kh = g.slice_cols(k, h * d_head, d_head);
            let vh = g.slice_cols(v, h * d_head, d_head);
            let active = match self.sparse {
                Some(ps) if mask == AttentionMask::None && ps.budget(l_q) < l_q => {
                    Some(ps.select_queries(g.value(qh), g.value(kh), h))
                }
                _ => None,
            };
            let out = match active {
                None => dense_head(g, qh, kh, vh, scale, mask),
                Some(active) => sparse_head(g, qh, kh, vh, scale, &active),
            };
            heads.push(out);
        }
        let merged = g.concat_cols(&heads);
        Ok(self.output.forward(g, merged))
    }
}

fn causal_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = f64::NEG_INFINITY;
        }
    }
    m
}

fn dense_head(g: &mut Graph<'_>, q: Var, k: Var, v: Var, scale: f64, mask: AttentionMask) -> Var {
    let s = g.matmul_t(q, k);
    let mut s = g.scale(s, scale);
    if mask == AttentionMask::Causal {
        let m = g.constant(causal_mask(g.shape(s).0));
        s = g.add(s, m);
    }
    let p = g.softmax_rows(s);
    g.matmul(p, v)
}

fn sparse_head(g: &mut Graph<'_>, q: Var, k: Var, v: Var, scale: f64, active: &[usize]) -> Var {
    let (l_q, _) = g.shape(q);
    let (l_k, _) = g.shape(k);
    let mut select = Matrix::zeros(active.len(), l_q);
    for (r, &i) in active.iter().enumerate() {
        select[(r, i)] = 1.0;
    }
    // lazy queries read the mean of the values
    let mut lazy = Matrix::filled(l_q, l_k, 1.0 / l_k as f64);
    for &i in active {
        lazy.row_mut(i).fill(0.0);
    }
    let scatter = g.constant(select.transpose());
    let select = g.constant(select);
    let lazy = g.constant(lazy);

    let q_active = g.matmul(select, q);
    let s = g.matmul_t(q_active, k);
    let s = g.scale(s, scale);
    let p = g.softmax_rows(s);
    let attended = g.matmul(p, v);
    let spread = g.matmul(scatter, attended);
    let base = g.matmul(lazy, v);
    g.add(base, spread)
}
