use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::GaussianForecast;

fn check_level(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level {rho} is outside (0, 1)")))
    }
}

/// Standard normal inverse CDF.
pub fn standard_normal_quantile(rho: f64) -> Result<f64> {
    check_level(rho)?;
    if rho == 0.5 {
        return Ok(0.0);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(rho))
}

/// `mu_t + z_rho · sigma_t` per step.
pub fn gaussian_quantile(f: &GaussianForecast, rho: f64) -> Result<Vec<f64>> {
    let z = standard_normal_quantile(rho)?;
    Ok(f.mu.iter().zip(&f.sigma).map(|(m, s)| m + z * s).collect())
}

/// Pinball loss of one step.
pub fn pinball(y: f64, y_hat: f64, rho: f64) -> f64 {
    if y > y_hat {
        rho * (y - y_hat)
    } else {
        (1.0 - rho) * (y_hat - y)
    }
}

/// Normalized quantile loss `2·Σ P_rho(y_t, ŷ_t) / Σ |y_t|`.
pub fn quantile_loss(y: &[f64], y_hat: &[f64], rho: f64) -> Result<f64> {
    let mut acc = QuantileAccumulator::new(rho)?;
    acc.add(y, y_hat)?;
    acc.value()
}

/// Running numerator and denominator of [`quantile_loss`], so a loss over
/// many windows is the ratio of sums rather than a mean of ratios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantileAccumulator {
    pub rho: f64,
    pub numerator: f64,
    pub denominator: f64,
}

impl QuantileAccumulator {
    pub fn new(rho: f64) -> Result<Self> {
        check_level(rho)?;
        Ok(QuantileAccumulator {
            rho,
            numerator: 0.0,
            denominator: 0.0,
        })
    }

    pub fn add(&mut self, y: &[f64], y_hat: &[f64]) -> Result<()> {
        if y.len() != y_hat.len() {
            return Err(Error::Contract(format!(
                "quantile loss over {} targets and {} predictions",
                y.len(),
                y_hat.len()
            )));
        }
        for (&a, &b) in y.iter().zip(y_hat) {
            self.numerator += 2.0 * pinball(a, b, self.rho);
            self.denominator += a.abs();
        }
        Ok(())
    }

    pub fn value(&self) -> Result<f64> {
        if self.denominator > 0.0 {
            Ok(self.numerator / self.denominator)
        } else {
            Err(Error::Domain("quantile loss is undefined when every target is zero".into()))
        }
    }
}
