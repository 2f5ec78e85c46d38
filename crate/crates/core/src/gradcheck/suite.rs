//! Whole-library gradient suite: every graph operation on small inputs and
//! every training objective with respect to the parameters it trains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numeric_gradient, numeric_gradient_at, relative_error, FD_STEP};
use crate::autograd::{Graph, Var};
use crate::data::ForecastWindow;
use crate::error::Result;
use crate::losses::LayerMap;
use crate::model::AmlNet;
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::train::{discriminator_objective, generator_objective, student_objective, Teachers, TrainConfig};

/// Relative error of one analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub label: String,
    pub rel_error: f64,
}

fn seeded(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Differentiates `sum(f(x) ⊙ w)` for a fixed random `w`.
fn check_op(label: &str, x: &Matrix, f: impl Fn(&mut Graph<'_>, Var) -> Var) -> GradCheck {
    let store = ParamStore::new();
    let eval = |g: &mut Graph<'_>, v: Var| {
        let y = f(g, v);
        let (r, c) = g.shape(y);
        let w = g.constant(seeded(r, c, 77));
        let p = g.mul(y, w);
        g.sum(p)
    };
    let dropout_rng = || ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::inference(&store);
    g.enable_dropout(dropout_rng());
    let v = g.input(x.clone());
    let loss = eval(&mut g, v);
    let analytic = g.backward(loss).wrt(v).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
    let numeric = numeric_gradient(x, FD_STEP, |xp| {
        let mut g = Graph::inference(&store);
        g.enable_dropout(dropout_rng());
        let v = g.constant(xp.clone());
        let l = eval(&mut g, v);
        g.scalar(l)
    });
    GradCheck {
        label: format!("op {label}"),
        rel_error: relative_error(analytic.as_slice(), numeric.as_slice()),
    }
}

/// Every differentiable graph operation on a 4×3 input kept away from
/// kinks and clamp bounds.
pub fn op_checks() -> Vec<GradCheck> {
    let x = seeded(4, 3, 1);
    let pos = x.map(|v| v.abs() + 0.3);
    let other = seeded(4, 3, 2);
    let row = seeded(1, 3, 3);
    let square = seeded(3, 3, 4);
    vec![
        check_op("add", &x, |g, v| {
            let c = g.constant(other.clone());
            g.add(v, c)
        }),
        check_op("sub", &x, |g, v| {
            let c = g.constant(other.clone());
            g.sub(c, v)
        }),
        check_op("mul", &x, |g, v| g.mul(v, v)),
        check_op("scale", &x, |g, v| g.scale(v, -1.7)),
        check_op("add_scalar", &x, |g, v| {
            let s = g.add_scalar(v, 0.4);
            g.mul(s, s)
        }),
        check_op("add_row", &x, |g, v| {
            let r = g.slice_rows(v, 1, 1);
            let a = g.add_row(v, r);
            g.mul(a, a)
        }),
        check_op("mul_row", &x, |g, v| {
            let r = g.constant(row.clone());
            let a = g.mul_row(v, r);
            let r2 = g.slice_rows(v, 2, 1);
            g.mul_row(a, r2)
        }),
        check_op("matmul", &x, |g, v| {
            let w = g.constant(square.clone());
            g.matmul(v, w)
        }),
        check_op("matmul_t", &x, |g, v| g.matmul_t(v, v)),
        check_op("transpose", &x, |g, v| {
            let t = g.transpose(v);
            g.matmul(t, v)
        }),
        check_op("softmax_rows", &x, |g, v| g.softmax_rows(v)),
        check_op("layer_norm_rows", &x, |g, v| g.layer_norm_rows(v, 1e-5)),
        check_op("gelu", &x, |g, v| g.gelu(v)),
        check_op("leaky_relu", &x, |g, v| g.leaky_relu(v, 0.2)),
        check_op("sigmoid", &x, |g, v| g.sigmoid(v)),
        check_op("softplus", &x, |g, v| g.softplus(v)),
        check_op("exp", &x, |g, v| g.exp(v)),
        check_op("ln", &pos, |g, v| g.ln(v)),
        check_op("powf", &pos, |g, v| g.powf(v, -1.5)),
        check_op("clamp", &x, |g, v| g.clamp(v, -2.0, 2.0)),
        check_op("sum", &x, |g, v| {
            let s = g.sum(v);
            g.mul(s, s)
        }),
        check_op("mean", &x, |g, v| {
            let s = g.mean(v);
            g.mul(s, s)
        }),
        check_op("mean_rows", &x, |g, v| {
            let m = g.mean_rows(v);
            g.mul(m, m)
        }),
        check_op("slice_rows", &x, |g, v| g.slice_rows(v, 1, 2)),
        check_op("slice_cols", &x, |g, v| g.slice_cols(v, 1, 2)),
        check_op("concat_rows", &x, |g, v| {
            let a = g.slice_rows(v, 0, 1);
            g.concat_rows(&[v, a])
        }),
        check_op("concat_cols", &x, |g, v| {
            let a = g.slice_cols(v, 2, 1);
            g.concat_cols(&[a, v])
        }),
        check_op("im2col", &x, |g, v| {
            let c = g.im2col(v, 3, 2, 1);
            g.mul(c, c)
        }),
        check_op("dropout", &x, |g, v| g.dropout(v, 0.5)),
    ]
}

/// Up to `n` flat indices of a tensor with `len` entries: the first, the
/// last and a seeded spread between.
fn probe_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0, len - 1];
    while idx.len() < n {
        let k = rng.random_range(0..len);
        if !idx.contains(&k) {
            idx.push(k);
        }
    }
    idx.sort_unstable();
    idx
}

/// Compares `loss`'s analytic gradient with respect to every parameter of
/// `groups` against central differences at up to `entries` entries per
/// tensor. `loss` must build the same scalar in any graph.
fn check_params(
    label: &str,
    model: &AmlNet,
    groups: &[Group],
    entries: usize,
    loss: impl Fn(&mut Graph<'_>, &AmlNet) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let analytic = {
        let mut g = Graph::new(&model.params, groups);
        let l = loss(&mut g, model)?;
        g.backward(l).into_params()
    };
    let mut probe = model.clone();
    let mut out = Vec::new();
    for id in model.params.ids_in(groups) {
        let base = model.params.get(id).clone();
        let idx = probe_indices(base.len(), entries, id.index() as u64);
        let a: Vec<f64> = match &analytic[id.index()] {
            Some(m) => idx.iter().map(|&k| m.as_slice()[k]).collect(),
            None => vec![0.0; idx.len()],
        };
        let mut failure = None;
        let n = numeric_gradient_at(&base, &idx, FD_STEP, |m| {
            set(&mut probe, id, m);
            let mut g = Graph::inference(&probe.params);
            match loss(&mut g, &probe) {
                Ok(l) => g.scalar(l),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        });
        set(&mut probe, id, &base);
        if let Some(e) = failure {
            return Err(e);
        }
        out.push(GradCheck {
            label: format!("{label} / {}", model.params.name(id)),
            rel_error: relative_error(&a, &n),
        });
    }
    Ok(out)
}

fn set(model: &mut AmlNet, id: ParamId, value: &Matrix) {
    *model.params.get_mut(id) = value.clone();
}

/// Finite-difference checks of the P1, P2, S and discriminator objectives,
/// each with respect to the groups it trains. Teachers are frozen at the
/// unperturbed parameters, matching their treatment as constants.
pub fn objective_checks(
    model: &AmlNet,
    cfg: &TrainConfig,
    batch: &[ForecastWindow],
    entries: usize,
) -> Result<Vec<GradCheck>> {
    let map = if cfg.alpha_h == 0.0 && model.config.n_s == 1 {
        None
    } else {
        Some(LayerMap::new(model.config.n_d, model.config.n_s)?)
    };
    let teachers = Teachers::compute(model, batch)?;
    let mut out = check_params("L_P1", model, &[Group::Encoder, Group::P1], entries, |g, m| {
        Ok(generator_objective(g, m, cfg, batch, Some(&teachers))?.0.total)
    })?;
    out.extend(check_params("L_P2", model, &[Group::Encoder, Group::P2], entries, |g, m| {
        Ok(generator_objective(g, m, cfg, batch, Some(&teachers))?.1.total)
    })?);
    out.extend(check_params("L_S", model, &[Group::Student], entries, |g, m| {
        Ok(student_objective(g, m, cfg, map.as_ref(), batch, Some(&teachers))?.total)
    })?);
    out.extend(check_params("L_D", model, &[Group::Discriminator], entries, |g, m| {
        Ok(discriminator_objective(g, m, map.as_ref(), batch)?.0)
    })?);
    Ok(out)
}
