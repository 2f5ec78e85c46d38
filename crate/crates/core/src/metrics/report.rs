use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    cosine_distance_matrix, dtw, gaussian_quantile, mean_knn_cosine, persistence_baseline,
    MapeAccumulator, QuantileAccumulator,
};
use crate::data::{ForecastWindow, NormStats};
use crate::error::{Error, Result};
use crate::model::{AmlNet, DecoderKind, GaussianForecast};
use crate::parallel::par_map;
use crate::tensor::Matrix;

/// Row label of the previous-day baseline.
pub const PERSISTENCE: &str = "Persistence";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Steps per day for the persistence baseline.
    pub steps_per_day: usize,
    /// Neighbours in the hidden-state continuity score.
    pub knn_k: usize,
    /// Timed passes per decoder; 0 skips timing.
    pub latency_runs: usize,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            steps_per_day: 24,
            knn_k: 6,
            latency_runs: 10,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    /// Sample standard deviation.
    pub std_ms: f64,
    pub runs_ms: Vec<f64>,
}

/// Wall-clock time to forecast every window, `runs` times after one
/// untimed warm-up pass. Runs on the calling thread only; anything else
/// loading the machine skews it.
pub fn measure_latency(
    model: &AmlNet,
    windows: &[ForecastWindow],
    decoder: DecoderKind,
    runs: usize,
) -> Result<LatencyStats> {
    if runs < 2 {
        return Err(Error::Config(format!("latency needs at least 2 runs, got {runs}")));
    }
    let pass = || -> Result<()> {
        for w in windows {
            std::hint::black_box(model.forecast(w, decoder)?);
        }
        Ok(())
    };
    pass()?;
    let mut runs_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        pass()?;
        runs_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = runs_ms.iter().sum::<f64>() / runs as f64;
    let var = runs_ms.iter().map(|r| (r - mean_ms).powi(2)).sum::<f64>() / (runs - 1) as f64;
    Ok(LatencyStats {
        mean_ms,
        std_ms: var.sqrt(),
        runs_ms,
    })
}

/// One model's metrics over a window set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub rho50: Option<f64>,
    pub rho90: Option<f64>,
    pub mape: Option<f64>,
    pub mean_dtw: Option<f64>,
    pub mean_knn_cosine: Option<f64>,
    pub latency_ms: Option<LatencyStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub windows: usize,
    pub knn_k: usize,
    /// Latency was measured one pass at a time on a single thread.
    pub latency_exclusive: bool,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn row(&self, model: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    /// `model,metric,value`, one line per defined metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,metric,value\n");
        for r in &self.rows {
            let mut cells: Vec<(&str, Option<f64>)> = vec![
                ("rho50", r.rho50),
                ("rho90", r.rho90),
                ("mape", r.mape),
                ("mean_dtw", r.mean_dtw),
                ("mean_knn_cosine", r.mean_knn_cosine),
            ];
            if let Some(l) = &r.latency_ms {
                cells.push(("latency_mean_ms", Some(l.mean_ms)));
                cells.push(("latency_std_ms", Some(l.std_ms)));
            }
            for (name, v) in cells {
                if let Some(v) = v {
                    out.push_str(&format!("{},{name},{v:?}\n", r.model));
                }
            }
        }
        out
    }
}

/// One forecast step in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub series_id: usize,
    pub t0: usize,
    pub step: usize,
    pub truth: f64,
    pub mu: f64,
    /// Absent for point forecasts.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub forecasts: Vec<ForecastRecord>,
}

fn stats_for(norm_stats: &[NormStats], series: usize) -> NormStats {
    norm_stats.get(series).copied().unwrap_or(NormStats::IDENTITY)
}

fn truth_in_units(w: &ForecastWindow, st: NormStats) -> Result<Vec<f64>> {
    Ok(w.truth()?.iter().map(|&z| st.denormalize(z)).collect())
}

/// Window without targets, so P1 runs on its own predictions.
fn unlabelled(w: &ForecastWindow) -> ForecastWindow {
    ForecastWindow {
        y_future: None,
        ..w.clone()
    }
}

/// Forecast plus the last-layer hidden states, both at inference.
fn infer(model: &AmlNet, w: &ForecastWindow, kind: DecoderKind) -> Result<(GaussianForecast, Matrix)> {
    let f = model.forecast(w, kind)?;
    let trace = model.hidden_trace(&unlabelled(w))?;
    let layers = match kind {
        DecoderKind::P1 => trace.p1,
        DecoderKind::P2 => trace.p2,
        DecoderKind::S => trace.s,
    };
    let last = layers.into_iter().last().expect("decoders have at least one layer");
    Ok((f, last))
}

struct Accum {
    rho50: QuantileAccumulator,
    rho90: QuantileAccumulator,
    mape: MapeAccumulator,
    dtw_sum: f64,
    knn_sum: f64,
    n: usize,
}

impl Accum {
    fn new() -> Self {
        Accum {
            rho50: QuantileAccumulator::new(0.5).unwrap(),
            rho90: QuantileAccumulator::new(0.9).unwrap(),
            mape: MapeAccumulator::default(),
            dtw_sum: 0.0,
            knn_sum: 0.0,
            n: 0,
        }
    }
}

/// Metrics of each requested decoder and of the persistence baseline over
/// `windows` (normalized), reported in original units.
pub fn evaluate(
    model: &AmlNet,
    windows: &[ForecastWindow],
    norm_stats: &[NormStats],
    decoders: &[DecoderKind],
    dataset: &str,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Contract("evaluation needs at least one window".into()));
    }
    let knn_defined = model.config.t_h > opts.knn_k;
    let mut rows = Vec::new();
    let mut forecasts = Vec::new();
    for &kind in decoders {
        let outputs = par_map(windows, opts.workers, |w| infer(model, w, kind));
        let mut acc = Accum::new();
        for (w, out) in windows.iter().zip(outputs) {
            let (f, hidden) = out?;
            let st = stats_for(norm_stats, w.series_id);
            let f = f.rescaled(st.mean, st.std);
            let y = truth_in_units(w, st)?;
            acc.rho50.add(&y, &gaussian_quantile(&f, 0.5)?)?;
            acc.rho90.add(&y, &gaussian_quantile(&f, 0.9)?)?;
            acc.mape.add(&y, &f.mu)?;
            acc.dtw_sum += dtw(&f.mu, &y)?;
            if knn_defined {
                acc.knn_sum += mean_knn_cosine(&cosine_distance_matrix(&hidden), opts.knn_k)?;
            }
            acc.n += 1;
            for (t, &truth) in y.iter().enumerate() {
                forecasts.push(ForecastRecord {
                    model: kind.to_string(),
                    series_id: w.series_id,
                    t0: w.t0,
                    step: t,
                    truth,
                    mu: f.mu[t],
                    sigma: Some(f.sigma[t]),
                });
            }
        }
        let latency_ms = if opts.latency_runs > 0 {
            Some(measure_latency(model, windows, kind, opts.latency_runs)?)
        } else {
            None
        };
        rows.push(MetricRow {
            model: kind.to_string(),
            rho50: acc.rho50.value().ok(),
            rho90: acc.rho90.value().ok(),
            mape: acc.mape.value(),
            mean_dtw: Some(acc.dtw_sum / acc.n as f64),
            mean_knn_cosine: knn_defined.then(|| acc.knn_sum / acc.n as f64),
            latency_ms,
        });
    }
    let mut acc = Accum::new();
    for w in windows {
        let st = stats_for(norm_stats, w.series_id);
        let p: Vec<f64> = persistence_baseline(w, opts.steps_per_day)?
            .into_iter()
            .map(|z| st.denormalize(z))
            .collect();
        let y = truth_in_units(w, st)?;
        acc.rho50.add(&y, &p)?;
        acc.mape.add(&y, &p)?;
        acc.dtw_sum += dtw(&p, &y)?;
        acc.n += 1;
        for (t, &truth) in y.iter().enumerate() {
            forecasts.push(ForecastRecord {
                model: PERSISTENCE.into(),
                series_id: w.series_id,
                t0: w.t0,
                step: t,
                truth,
                mu: p[t],
                sigma: None,
            });
        }
    }
    rows.push(MetricRow {
        model: PERSISTENCE.into(),
        rho50: acc.rho50.value().ok(),
        rho90: None,
        mape: acc.mape.value(),
        mean_dtw: Some(acc.dtw_sum / acc.n as f64),
        mean_knn_cosine: None,
        latency_ms: None,
    });
    Ok(Evaluation {
        report: MetricReport {
            dataset: dataset.into(),
            windows: windows.len(),
            knn_k: opts.knn_k,
            latency_exclusive: true,
            rows,
        },
        forecasts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDtw {
    pub model: String,
    pub series_id: usize,
    pub t0: usize,
    pub dtw: f64,
}

/// Hidden-state and alignment diagnostics of every decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// Per decoder: window-averaged `[T_h × T_h]` last-layer cosine
    /// distances.
    pub heatmaps: Vec<(DecoderKind, Matrix)>,
    /// Per decoder: mean k-nearest-neighbour cosine distance, `None` when
    /// `T_h <= k`.
    pub knn: Vec<(DecoderKind, Option<f64>)>,
    pub dtw: Vec<WindowDtw>,
    /// Forecast means against the truth, original units.
    pub traces: Vec<ForecastRecord>,
}

pub fn diagnose(
    model: &AmlNet,
    windows: &[ForecastWindow],
    norm_stats: &[NormStats],
    knn_k: usize,
    workers: usize,
) -> Result<Diagnostics> {
    if windows.is_empty() {
        return Err(Error::Contract("diagnostics need at least one window".into()));
    }
    let t_h = model.config.t_h;
    let mut out = Diagnostics {
        heatmaps: Vec::new(),
        knn: Vec::new(),
        dtw: Vec::new(),
        traces: Vec::new(),
    };
    for kind in DecoderKind::ALL {
        let outputs = par_map(windows, workers, |w| infer(model, w, kind));
        let mut heat = Matrix::zeros(t_h, t_h);
        let mut knn_sum = 0.0;
        for (w, o) in windows.iter().zip(outputs) {
            let (f, hidden) = o?;
            let st = stats_for(norm_stats, w.series_id);
            let f = f.rescaled(st.mean, st.std);
            let y = truth_in_units(w, st)?;
            let d = cosine_distance_matrix(&hidden);
            if t_h > knn_k {
                knn_sum += mean_knn_cosine(&d, knn_k)?;
            }
            heat.add_assign(&d);
            out.dtw.push(WindowDtw {
                model: kind.to_string(),
                series_id: w.series_id,
                t0: w.t0,
                dtw: dtw(&f.mu, &y)?,
            });
            for (t, &truth) in y.iter().enumerate() {
                out.traces.push(ForecastRecord {
                    model: kind.to_string(),
                    series_id: w.series_id,
                    t0: w.t0,
                    step: t,
                    truth,
                    mu: f.mu[t],
                    sigma: Some(f.sigma[t]),
                });
            }
        }
        heat.scale_assign(1.0 / windows.len() as f64);
        out.heatmaps.push((kind, heat));
        out.knn
            .push((kind, (t_h > knn_k).then(|| knn_sum / windows.len() as f64)));
    }
    Ok(out)
}
