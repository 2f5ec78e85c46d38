use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which deep-decoder layers each student layer learns from.
///
/// Layers are numbered from 1. Student layer `i` covers teacher layers
/// `j_lo(i)..=j_hi(i)` with
///
/// ```text
/// j_lo(i) = 1 + (i-1)·floor((n_d-1)/(n_S-1))
/// j_hi(i) = min(ceil((n_d-1)/(n_S-1)) + (i-1)·floor((n_d-1)/(n_S-1)), n_d)
/// ```
///
/// except that the last student layer always reaches `n_d`, so every teacher
/// layer is covered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMap {
    pub n_d: usize,
    pub n_s: usize,
    forward: Vec<(usize, usize)>,
    inverse: Vec<Vec<usize>>,
}

impl LayerMap {
    pub fn new(n_d: usize, n_s: usize) -> Result<Self> {
        if n_s == 1 {
            return Err(Error::Config(
                "a single-layer student has no layer mapping (n_s - 1 = 0); use n_s >= 2 or alpha_h = 0"
                    .into(),
            ));
        }
        if n_s == 0 || n_s >= n_d {
            return Err(Error::Config(format!(
                "layer mapping needs 2 <= n_s < n_d, got n_s={n_s}, n_d={n_d}"
            )));
        }
        let step = (n_d - 1) / (n_s - 1);
        let width = (n_d - 1).div_ceil(n_s - 1);
        let forward: Vec<(usize, usize)> = (1..=n_s)
            .map(|i| {
                let lo = 1 + (i - 1) * step;
                let hi = if i == n_s { n_d } else { (width + (i - 1) * step).min(n_d) };
                (lo, hi)
            })
            .collect();
        let inverse: Vec<Vec<usize>> = (1..=n_d)
            .map(|j| {
                (1..=n_s)
                    .filter(|&i| {
                        let (lo, hi) = forward[i - 1];
                        (lo..=hi).contains(&j)
                    })
                    .collect()
            })
            .collect();
        assert!(
            inverse.iter().all(|k| !k.is_empty()),
            "layer map for n_d={n_d}, n_s={n_s} leaves a teacher layer unmapped"
        );
        Ok(LayerMap {
            n_d,
            n_s,
            forward,
            inverse,
        })
    }

    /// Inclusive teacher range of student layer `i` (1-based).
    pub fn forward(&self, i: usize) -> (usize, usize) {
        self.forward[i - 1]
    }

    /// Student layers mapped to teacher layer `j` (1-based), ascending.
    pub fn inverse(&self, j: usize) -> &[usize] {
        &self.inverse[j - 1]
    }

    /// Teacher layers of student layer `i`, 1-based.
    pub fn teachers_of(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        let (lo, hi) = self.forward(i);
        lo..=hi
    }
}
