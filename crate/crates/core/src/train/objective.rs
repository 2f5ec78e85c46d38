//! Loss graphs of the three optimization phases, shared by the trainer and
//! the gradient checks.

use crate::autograd::{Graph, Var};
use crate::data::ForecastWindow;
use crate::error::Result;
use crate::losses::{
    batch_mean, discriminator_loss_terms, hint_generator_loss, nll_graph, outcome_kd_graph,
    DecoderLosses, DiscTerm, LayerMap,
};
use crate::model::{AmlNet, BnMode, DecoderKind, GaussianForecast};
use crate::tensor::Matrix;

use super::TrainConfig;

/// Teacher forecasts per window, for evaluating the distillation terms
/// against fixed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Teachers {
    pub p1: Vec<GaussianForecast>,
    pub p2: Vec<GaussianForecast>,
}

impl Teachers {
    /// Teacher-forced P1 and one-pass P2 forecasts at the current
    /// parameters, without dropout.
    pub fn compute(model: &AmlNet, batch: &[ForecastWindow]) -> Result<Self> {
        let mut t = Teachers {
            p1: Vec::with_capacity(batch.len()),
            p2: Vec::with_capacity(batch.len()),
        };
        for w in batch {
            let h_e = model.encode(w)?;
            t.p1.push(model.decode_p1_teacher_forced(w, &h_e).map_err(|e| e.within(DecoderKind::P1))?.0);
            t.p2.push(model.decode_p2(w, &h_e).map_err(|e| e.within(DecoderKind::P2))?.0);
        }
        Ok(t)
    }
}

struct Parts {
    nll: Vec<Var>,
    kd: Vec<Var>,
    hidden: Vec<Vec<Var>>,
}

impl Parts {
    fn new(depth: usize) -> Self {
        Parts {
            nll: Vec::new(),
            kd: Vec::new(),
            hidden: vec![Vec::new(); depth],
        }
    }

    fn push_hidden(&mut self, hidden: &[Var]) {
        for (slot, &h) in self.hidden.iter_mut().zip(hidden) {
            slot.push(h);
        }
    }

    fn means(&self, g: &mut Graph<'_>) -> (Var, Var) {
        let nll = batch_mean(g, &self.nll);
        let kd = if self.kd.is_empty() {
            g.constant(Matrix::zeros(1, 1))
        } else {
            batch_mean(g, &self.kd)
        };
        (nll, kd)
    }
}

/// A decoder's total loss node and its component values.
#[derive(Clone, Copy, Debug)]
pub struct DecoderObjective {
    pub total: Var,
    pub losses: DecoderLosses,
}

fn finish(
    g: &mut Graph<'_>,
    model: &AmlNet,
    cfg: &TrainConfig,
    kind: DecoderKind,
    parts: &Parts,
    map: Option<&LayerMap>,
) -> Result<DecoderObjective> {
    let (nll, kd) = parts.means(g);
    let hint = hint_generator_loss(
        g,
        &model.discriminators,
        kind,
        &parts.hidden,
        map,
        cfg.alpha_h,
        BnMode::Batch,
        cfg.non_saturating,
    )?
    .loss;
    let losses = DecoderLosses::new(g.scalar(nll), g.scalar(kd), g.scalar(hint));
    let t = g.add(nll, kd);
    Ok(DecoderObjective {
        total: g.add(t, hint),
        losses,
    })
}

/// P1 and P2 totals: batch-mean NLL, batch-mean outcome distillation from
/// the peer, and the hint loss against the peer's discriminators. Without
/// `frozen`, each teacher is the peer's forecast in this same graph, read
/// as constants.
pub fn generator_objective(
    g: &mut Graph<'_>,
    model: &AmlNet,
    cfg: &TrainConfig,
    batch: &[ForecastWindow],
    frozen: Option<&Teachers>,
) -> Result<(DecoderObjective, DecoderObjective)> {
    let n_d = model.config.n_d;
    let (mut a, mut b) = (Parts::new(n_d), Parts::new(n_d));
    for (i, w) in batch.iter().enumerate() {
        let y = w.truth()?;
        let h_e = model.encode_graph(g, w)?;
        let o1 = model.p1_teacher_forced_graph(g, w, h_e)?;
        let o2 = model.nar_graph(g, DecoderKind::P2, w, h_e)?;
        a.nll.push(nll_graph(g, o1.mu, o1.sigma, y));
        b.nll.push(nll_graph(g, o2.mu, o2.sigma, y));
        if cfg.alpha_o > 0.0 {
            let (f1, f2) = match frozen {
                Some(t) => (t.p1[i].clone(), t.p2[i].clone()),
                None => (
                    o1.forecast(g).map_err(|e| e.within(DecoderKind::P1))?,
                    o2.forecast(g).map_err(|e| e.within(DecoderKind::P2))?,
                ),
            };
            a.kd.push(outcome_kd_graph(g, o1.mu, o1.sigma, &f2, y, cfg.alpha_o));
            b.kd.push(outcome_kd_graph(g, o2.mu, o2.sigma, &f1, y, cfg.alpha_o));
        }
        a.push_hidden(&o1.hidden);
        b.push_hidden(&o2.hidden);
    }
    Ok((
        finish(g, model, cfg, DecoderKind::P1, &a, None)?,
        finish(g, model, cfg, DecoderKind::P2, &b, None)?,
    ))
}

/// S total: NLL, outcome distillation from both teachers, and the hint
/// loss against every discriminator its layers map to.
pub fn student_objective(
    g: &mut Graph<'_>,
    model: &AmlNet,
    cfg: &TrainConfig,
    map: Option<&LayerMap>,
    batch: &[ForecastWindow],
    frozen: Option<&Teachers>,
) -> Result<DecoderObjective> {
    let mut s = Parts::new(model.config.n_s);
    for (i, w) in batch.iter().enumerate() {
        let y = w.truth()?;
        let h_e = model.encode_graph(g, w)?;
        let o = model.nar_graph(g, DecoderKind::S, w, h_e)?;
        s.nll.push(nll_graph(g, o.mu, o.sigma, y));
        if cfg.alpha_o > 0.0 {
            let (f1, f2) = match frozen {
                Some(t) => (t.p1[i].clone(), t.p2[i].clone()),
                None => (
                    model.p1_teacher_forced_graph(g, w, h_e)?.forecast(g).map_err(|e| e.within(DecoderKind::P1))?,
                    model.nar_graph(g, DecoderKind::P2, w, h_e)?.forecast(g).map_err(|e| e.within(DecoderKind::P2))?,
                ),
            };
            let k1 = outcome_kd_graph(g, o.mu, o.sigma, &f1, y, cfg.alpha_o);
            let k2 = outcome_kd_graph(g, o.mu, o.sigma, &f2, y, cfg.alpha_o);
            s.kd.push(g.add(k1, k2));
        }
        s.push_hidden(&o.hidden);
    }
    finish(g, model, cfg, DecoderKind::S, &s, map)
}

/// Summed classification loss of every discriminator on hidden states
/// regenerated in this graph, plus the individual terms.
pub fn discriminator_objective(
    g: &mut Graph<'_>,
    model: &AmlNet,
    map: Option<&LayerMap>,
    batch: &[ForecastWindow],
) -> Result<(Var, Vec<DiscTerm>)> {
    let n_d = model.config.n_d;
    let (mut h1, mut h2, mut hs) = (Parts::new(n_d), Parts::new(n_d), Parts::new(model.config.n_s));
    for w in batch {
        let h_e = model.encode_graph(g, w)?;
        h1.push_hidden(&model.p1_teacher_forced_graph(g, w, h_e)?.hidden);
        h2.push_hidden(&model.nar_graph(g, DecoderKind::P2, w, h_e)?.hidden);
        if map.is_some() {
            hs.push_hidden(&model.nar_graph(g, DecoderKind::S, w, h_e)?.hidden);
        }
    }
    let student = map.map(|m| (hs.hidden.as_slice(), m));
    let terms = discriminator_loss_terms(
        g,
        &model.discriminators,
        &h1.hidden,
        &h2.hidden,
        student,
        BnMode::Batch,
    )?;
    let parts: Vec<Var> = terms.iter().map(|t| t.loss).collect();
    let stacked = g.concat_rows(&parts);
    Ok((g.sum(stacked), terms))
}
