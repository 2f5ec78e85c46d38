use crate::error::{Error, Result};

/// Targets with magnitude at or below this are left out of MAPE.
pub const MAPE_THRESHOLD: f64 = 1e-6;

/// Mean of `|y - ŷ| / |y|` over steps with `|y| > MAPE_THRESHOLD`; `None`
/// when no step qualifies.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<Option<f64>> {
    let mut acc = MapeAccumulator::default();
    acc.add(y, y_hat)?;
    Ok(acc.value())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapeAccumulator {
    pub sum: f64,
    pub count: usize,
}

impl MapeAccumulator {
    pub fn add(&mut self, y: &[f64], y_hat: &[f64]) -> Result<()> {
        if y.len() != y_hat.len() {
            return Err(Error::Contract(format!(
                "mape over {} targets and {} predictions",
                y.len(),
                y_hat.len()
            )));
        }
        for (&a, &b) in y.iter().zip(y_hat) {
            if a.abs() > MAPE_THRESHOLD {
                self.sum += (a - b).abs() / a.abs();
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}
