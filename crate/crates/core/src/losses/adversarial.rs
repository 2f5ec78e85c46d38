use super::LayerMap;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{AmlNet, BatchStats, BnMode, DecoderKind, DiscriminatorBank, HiddenStateTrace, Teacher};
use crate::tensor::Matrix;

/// Discriminator outputs are clamped into `[D_CLAMP, 1 - D_CLAMP]` before
/// any logarithm.
pub const D_CLAMP: f64 = 1e-6;

/// Scalar loss node plus the number of discriminator evaluations it used.
#[derive(Clone, Copy, Debug)]
pub struct HintLoss {
    pub loss: Var,
    pub disc_calls: usize,
}

/// Batch mean of `ln D` (`real`) or `ln(1 - D)` (not real).
fn mean_log(g: &mut Graph<'_>, probs: &[Var], real: bool) -> Var {
    let stacked = g.concat_rows(probs);
    let d = g.clamp(stacked, D_CLAMP, 1.0 - D_CLAMP);
    let arg = if real {
        d
    } else {
        let neg = g.scale(d, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let l = g.ln(arg);
    g.mean(l)
}

/// Generator-side term for fooling one discriminator: `ln(1 - D)`, or
/// `-ln D` in the non-saturating variant.
fn fool(g: &mut Graph<'_>, probs: &[Var], non_saturating: bool) -> Var {
    if non_saturating {
        let l = mean_log(g, probs, true);
        g.scale(l, -1.0)
    } else {
        mean_log(g, probs, false)
    }
}

/// Adversarial hint loss of one generator; `hidden[layer][sample]`.
///
/// P1 layer `i` tries to fool `D_{i,P2}` and P2 layer `i` tries to fool
/// `D_{i,P1}`. Student layer `i` tries to fool both discriminators of every
/// teacher layer in its range. Each term is a batch mean, summed over layers
/// and scaled by `alpha_h`. Discriminator parameters are read as constants
/// unless the graph trains them.
#[allow(clippy::too_many_arguments)]
pub fn hint_generator_loss(
    g: &mut Graph<'_>,
    bank: &DiscriminatorBank,
    kind: DecoderKind,
    hidden: &[Vec<Var>],
    map: Option<&LayerMap>,
    alpha_h: f64,
    mode: BnMode,
    non_saturating: bool,
) -> Result<HintLoss> {
    if alpha_h == 0.0 {
        let zero = g.constant(Matrix::zeros(1, 1));
        return Ok(HintLoss {
            loss: zero,
            disc_calls: 0,
        });
    }
    let mut terms = Vec::new();
    let mut calls = 0;
    match kind {
        DecoderKind::P1 | DecoderKind::P2 => {
            if hidden.len() != bank.depth() {
                return Err(Error::Contract(format!(
                    "{kind} trace has {} layers, the bank has {}",
                    hidden.len(),
                    bank.depth()
                )));
            }
            let judge = if kind == DecoderKind::P1 { Teacher::P2 } else { Teacher::P1 };
            for (i, hs) in hidden.iter().enumerate() {
                let (p, _) = bank.score(g, judge, i, hs, mode)?;
                calls += 1;
                terms.push(fool(g, &p, non_saturating));
            }
        }
        DecoderKind::S => {
            let map = map.ok_or_else(|| {
                Error::Config("student hint loss needs a layer map (n_s >= 2) when alpha_h > 0".into())
            })?;
            if hidden.len() != map.n_s || map.n_d != bank.depth() {
                return Err(Error::Contract(format!(
                    "layer map {}→{} does not fit a student trace of {} layers and a bank of {}",
                    map.n_s,
                    map.n_d,
                    hidden.len(),
                    bank.depth()
                )));
            }
            for (i, hs) in hidden.iter().enumerate() {
                for j in map.teachers_of(i + 1) {
                    for judge in Teacher::BOTH {
                        let (p, _) = bank.score(g, judge, j - 1, hs, mode)?;
                        calls += 1;
                        terms.push(fool(g, &p, non_saturating));
                    }
                }
            }
        }
    }
    let total = g.concat_rows(&terms);
    let total = g.sum(total);
    Ok(HintLoss {
        loss: g.scale(total, alpha_h),
        disc_calls: calls,
    })
}

/// Loss of one discriminator together with the batch statistics it saw.
#[derive(Clone, Debug)]
pub struct DiscTerm {
    pub teacher: Teacher,
    /// Zero-based layer.
    pub layer: usize,
    pub loss: Var,
    pub stats: Vec<BatchStats>,
}

/// Classification losses of every discriminator:
///
/// `L_{i,T} = -ln D(h_{i,T}) - ln(1 - D(h_{i,other})) - Σ_{k ∈ inverse(i)} ln(1 - D(h_{k,S}))`
///
/// with batch means per term. Student terms are dropped when `s` is `None`.
pub fn discriminator_loss_terms(
    g: &mut Graph<'_>,
    bank: &DiscriminatorBank,
    p1: &[Vec<Var>],
    p2: &[Vec<Var>],
    s: Option<(&[Vec<Var>], &LayerMap)>,
    mode: BnMode,
) -> Result<Vec<DiscTerm>> {
    let depth = bank.depth();
    if p1.len() != depth || p2.len() != depth {
        return Err(Error::Contract(format!(
            "teacher traces have {} and {} layers, the bank has {depth}",
            p1.len(),
            p2.len()
        )));
    }
    if let Some((hs, map)) = s {
        if hs.len() != map.n_s || map.n_d != depth {
            return Err(Error::Contract("layer map does not fit the student trace".into()));
        }
    }
    let mut out = Vec::with_capacity(2 * depth);
    for teacher in Teacher::BOTH {
        let (real, fake) = match teacher {
            Teacher::P1 => (p1, p2),
            Teacher::P2 => (p2, p1),
        };
        for i in 0..depth {
            let mut stats = Vec::new();
            let (p, st) = bank.score(g, teacher, i, &real[i], mode)?;
            stats.extend(st);
            let mut parts = vec![mean_log(g, &p, true)];
            let (p, st) = bank.score(g, teacher, i, &fake[i], mode)?;
            stats.extend(st);
            parts.push(mean_log(g, &p, false));
            if let Some((hs, map)) = s {
                for &k in map.inverse(i + 1) {
                    let (p, st) = bank.score(g, teacher, i, &hs[k - 1], mode)?;
                    stats.extend(st);
                    parts.push(mean_log(g, &p, false));
                }
            }
            let sum = g.concat_rows(&parts);
            let sum = g.sum(sum);
            out.push(DiscTerm {
                teacher,
                layer: i,
                loss: g.scale(sum, -1.0),
                stats,
            });
        }
    }
    Ok(out)
}

fn trace_vars(g: &mut Graph<'_>, layers: &[Matrix]) -> Vec<Vec<Var>> {
    layers.iter().map(|h| vec![g.constant(h.clone())]).collect()
}

/// Value-level hint losses `(P1, P2, S)` of a single trace, scored with
/// frozen batch-norm statistics.
pub fn hint_generator_losses(
    model: &AmlNet,
    trace: &HiddenStateTrace,
    map: Option<&LayerMap>,
    alpha_h: f64,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::inference(&model.params);
    let bank = &model.discriminators;
    let mut vals = [0.0; 3];
    for (slot, (kind, layers)) in [
        (DecoderKind::P1, &trace.p1),
        (DecoderKind::P2, &trace.p2),
        (DecoderKind::S, &trace.s),
    ]
    .into_iter()
    .enumerate()
    {
        let hs = trace_vars(&mut g, layers);
        let h = hint_generator_loss(&mut g, bank, kind, &hs, map, alpha_h, BnMode::Running, false)?;
        vals[slot] = g.scalar(h.loss);
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Value-level discriminator losses of a single trace, `(teacher, layer, loss)`.
pub fn discriminator_losses(
    model: &AmlNet,
    trace: &HiddenStateTrace,
    map: Option<&LayerMap>,
) -> Result<Vec<(Teacher, usize, f64)>> {
    let mut g = Graph::inference(&model.params);
    let p1 = trace_vars(&mut g, &trace.p1);
    let p2 = trace_vars(&mut g, &trace.p2);
    let s = trace_vars(&mut g, &trace.s);
    let terms = discriminator_loss_terms(
        &mut g,
        &model.discriminators,
        &p1,
        &p2,
        map.map(|m| (s.as_slice(), m)),
        BnMode::Running,
    )?;
    Ok(terms
        .into_iter()
        .map(|t| (t.teacher, t.layer, g.scalar(t.loss)))
        .collect())
}

/// Mean of per-sample scalar nodes.
pub fn batch_mean(g: &mut Graph<'_>, parts: &[Var]) -> Var {
    let stacked = g.concat_rows(parts);
    g.mean(stacked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{random_window, tiny_config};
    use crate::nn::ModelConfig;
    use crate::params::Group;

    fn deep_config() -> ModelConfig {
        ModelConfig {
            n_e: 4,
            n_d: 4,
            n_s: 2,
            ..tiny_config()
        }
    }

    /// Zeroes every discriminator's final linear layer so it outputs ½.
    fn neutralize(model: &mut AmlNet) {
        let bank = model.discriminators.clone();
        for d in bank.p1.iter().chain(&bank.p2) {
            let (r, c) = model.params.get(d.linear_weight).shape();
            *model.params.get_mut(d.linear_weight) = Matrix::zeros(r, c);
        }
    }

    #[test]
    fn half_discriminators_give_three_log_two() {
        let cfg = deep_config();
        let mut m = AmlNet::new(cfg.clone(), 1).unwrap();
        neutralize(&mut m);
        let map = LayerMap::new(4, 2).unwrap();
        let trace = m.hidden_trace(&random_window(&cfg, 2)).unwrap();
        for (teacher, layer, loss) in discriminator_losses(&m, &trace, Some(&map)).unwrap() {
            // every inverse set is a singleton for n_d=4, n_s=2
            assert_eq!(map.inverse(layer + 1).len(), 1);
            assert!((loss - 3.0 * 2f64.ln()).abs() < 1e-12, "{teacher:?} {layer}: {loss}");
        }
        // without the student every loss has two terms
        for (_, _, loss) in discriminator_losses(&m, &trace, None).unwrap() {
            assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hint_losses_are_negative_and_count_calls() {
        let cfg = deep_config();
        let m = AmlNet::new(cfg.clone(), 1).unwrap();
        let map = LayerMap::new(4, 2).unwrap();
        let trace = m.hidden_trace(&random_window(&cfg, 2)).unwrap();
        let (a, b, c) = hint_generator_losses(&m, &trace, Some(&map), 0.5).unwrap();
        assert!(a < 0.0 && b < 0.0 && c < 0.0);
        assert_eq!(hint_generator_losses(&m, &trace, Some(&map), 0.0).unwrap(), (0.0, 0.0, 0.0));

        let mut g = Graph::inference(&m.params);
        let hs = trace_vars(&mut g, &trace.s);
        let h = hint_generator_loss(&mut g, &m.discriminators, DecoderKind::S, &hs, Some(&map), 1.0, BnMode::Running, false)
            .unwrap();
        // layer 1 → teachers 1..=3, layer 2 → teacher 4, two banks each
        assert_eq!(h.disc_calls, 8);
    }

    #[test]
    fn half_discriminators_give_known_hint_values() {
        let cfg = deep_config();
        let mut m = AmlNet::new(cfg.clone(), 1).unwrap();
        neutralize(&mut m);
        let map = LayerMap::new(4, 2).unwrap();
        let trace = m.hidden_trace(&random_window(&cfg, 3)).unwrap();
        let (a, b, c) = hint_generator_losses(&m, &trace, Some(&map), 0.5).unwrap();
        let l = 0.5f64.ln();
        assert!((a - 0.5 * 4.0 * l).abs() < 1e-12);
        assert!((b - 0.5 * 4.0 * l).abs() < 1e-12);
        assert!((c - 0.5 * 8.0 * l).abs() < 1e-12);
    }

    #[test]
    fn student_hint_without_map_is_a_config_error() {
        let cfg = tiny_config();
        let m = AmlNet::new(cfg.clone(), 1).unwrap();
        let trace = m.hidden_trace(&random_window(&cfg, 2)).unwrap();
        assert!(matches!(hint_generator_losses(&m, &trace, None, 0.5), Err(Error::Config(_))));
        assert_eq!(hint_generator_losses(&m, &trace, None, 0.0).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn generator_hint_never_reaches_discriminators() {
        let cfg = deep_config();
        let m = AmlNet::new(cfg.clone(), 1).unwrap();
        let map = LayerMap::new(4, 2).unwrap();
        let trace = m.hidden_trace(&random_window(&cfg, 2)).unwrap();
        let mut g = Graph::new(&m.params, &[Group::Student]);
        let hs: Vec<Vec<Var>> = trace.s.iter().map(|h| vec![g.input(h.clone())]).collect();
        let h = hint_generator_loss(&mut g, &m.discriminators, DecoderKind::S, &hs, Some(&map), 1.0, BnMode::Batch, false)
            .unwrap();
        let grads = g.backward(h.loss);
        for id in m.params.ids_in(&[Group::Discriminator]) {
            assert!(grads.param(id).is_none());
        }
        assert!(grads.wrt(hs[0][0]).unwrap().frobenius_sq() > 0.0);
    }
}
