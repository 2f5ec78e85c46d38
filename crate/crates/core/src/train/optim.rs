use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam over the parameters of a fixed set of groups, with optional
/// global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub groups: Vec<Group>,
    pub steps: u64,
    ids: Vec<usize>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, groups: &[Group], lr: f64) -> Self {
        let ids = store.ids_in(groups);
        let zeros = || -> Vec<Matrix> {
            ids.iter()
                .map(|&id| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect()
        };
        Adam {
            lr,
            groups: groups.to_vec(),
            steps: 0,
            m: zeros(),
            v: zeros(),
            ids: ids.iter().map(|id| id.index()).collect(),
        }
    }

    /// Parameters this optimizer may change.
    pub fn owns(&self, id: ParamId) -> bool {
        self.ids.binary_search(&id.index()).is_ok()
    }

    /// Global L2 norm of this optimizer's slice of `grads`.
    pub fn grad_norm(&self, grads: &[Option<Matrix>]) -> f64 {
        self.ids
            .iter()
            .filter_map(|&i| grads[i].as_ref())
            .map(Matrix::frobenius_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// One update from store-indexed gradients; parameters without a
    /// gradient are left alone. Returns the norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Matrix>], clip: Option<f64>) -> Result<f64> {
        let norm = self.grad_norm(grads);
        if !norm.is_finite() {
            return Err(Error::Numeric {
                component: format!("gradient of {:?}", self.groups),
            });
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for (k, &i) in self.ids.iter().enumerate() {
            let Some(g) = grads[i].as_ref() else { continue };
            let p = store.get_mut(ids[i]);
            let (m, v) = (self.m[k].as_mut_slice(), self.v[k].as_mut_slice());
            for (((w, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                let gi = gi * scale;
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                *w -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
            }
        }
        Ok(norm)
    }
}
