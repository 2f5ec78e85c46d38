use crate::data::ForecastWindow;
use crate::error::{Error, Result};

/// Previous-day forecast: the last `steps_per_day` inputs, repeated to fill
/// the horizon.
pub fn persistence_baseline(w: &ForecastWindow, steps_per_day: usize) -> Result<Vec<f64>> {
    let t_l = w.t_l();
    if steps_per_day == 0 || t_l < steps_per_day {
        return Err(Error::Config(format!(
            "persistence needs t_l >= steps_per_day, got t_l={t_l}, steps_per_day={steps_per_day}"
        )));
    }
    let day = &w.y_past[t_l - steps_per_day..];
    Ok((0..w.t_h()).map(|t| day[t % steps_per_day]).collect())
}
