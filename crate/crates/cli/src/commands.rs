use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use amlnet::config::{PreparedData, RunConfig};
use amlnet::data::ForecastWindow;
use amlnet::metrics::{diagnose, evaluate, gaussian_quantile, Evaluation, ForecastRecord};
use amlnet::model::{AmlNet, Checkpoint, DecoderKind};
use amlnet::parallel::{par_map, worker_count};
use amlnet::train::{TrainEvent, Trainer};
use amlnet::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, MANIFEST_FILE};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const LOSS_CURVES_FILE: &str = "loss_curves.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const KNN_FILE: &str = "knn.csv";
pub const DTW_FILE: &str = "dtw.csv";
pub const TRACES_FILE: &str = "traces.csv";

pub fn heatmap_file(kind: DecoderKind) -> String {
    format!("heatmap_{kind}.csv")
}

/// Reads a run config and applies a `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Creates the run directory. A directory already holding another
/// command's run is refused so artifacts never mix.
fn prepare_out(out: &Path, command: &str) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if out.join(MANIFEST_FILE).exists() {
        let existing = RunManifest::load(out)?;
        if existing.command != command {
            return Err(Error::Config(format!(
                "{} already holds a `{}` run; choose another --out",
                out.display(),
                existing.command
            )));
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Config(format!("writing {}: {e}", path.display()))
}

fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A matrix as headerless CSV rows.
fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:?}"))).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(w: &mut impl Write, path: &Path, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).expect("record serializes");
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Trains from a config and writes the manifest, the resolved config, the
/// epoch history, per-step losses, loss curves and the best checkpoint.
pub fn cmd_train(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let data = cfg.prepare_data(None)?;
    let model_config = cfg.model_config(data.d_x, data.n_series)?;
    let mut trainer = Trainer::from_scratch(model_config, cfg.train_config(), data.norm_stats.clone())?;
    trainer.workers = worker_count();

    prepare_out(out, "train")?;
    let artifacts = [CONFIG_FILE, HISTORY_FILE, LOSSES_FILE, LOSS_CURVES_FILE, CHECKPOINT_FILE];
    RunManifest::new("train", &cfg, artifacts.iter().map(|s| s.to_string()).collect()).write(out)?;
    write_string(&out.join(CONFIG_FILE), &cfg.to_toml())?;

    let (hist_path, loss_path, ckpt_path) = (out.join(HISTORY_FILE), out.join(LOSSES_FILE), out.join(CHECKPOINT_FILE));
    let mut history = create(&hist_path)?;
    let mut losses = create(&loss_path)?;
    trainer.fit(&data.windows.train, &data.windows.validation, |ev| match ev {
        TrainEvent::Step { step, report } => {
            #[derive(Serialize)]
            struct Line<'a> {
                step: u64,
                #[serde(flatten)]
                report: &'a amlnet::losses::LossReport,
            }
            json_line(&mut losses, &loss_path, &Line { step, report })
        }
        TrainEvent::Epoch { record, trainer } => {
            json_line(&mut history, &hist_path, record)?;
            if record.improved {
                trainer.best_checkpoint().save(&ckpt_path)?;
            }
            Ok(())
        }
    })?;
    trainer.best_checkpoint().save(&ckpt_path)?;
    write_records(&out.join(LOSS_CURVES_FILE), &trainer.history)
}

/// Loads the checkpoint and the data it was trained on, normalized with
/// the checkpoint's own statistics.
fn load_for_inference(checkpoint: &Path, cfg: &RunConfig) -> Result<(AmlNet, PreparedData)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = cfg.prepare_data(Some(&ckpt.norm_stats))?;
    let m = &ckpt.model_config;
    for (key, have, want) in [("t_l", m.t_l, cfg.t_l), ("t_h", m.t_h, cfg.t_h), ("covariates", m.d_x, data.d_x)] {
        if have != want {
            return Err(Error::Config(format!(
                "{key}: the checkpoint was trained with {have}, the data config gives {want}"
            )));
        }
    }
    if m.use_id_embedding && data.n_series > m.max_series {
        return Err(Error::Config(format!(
            "n_series: the checkpoint knows {} series, the data has {}",
            m.max_series, data.n_series
        )));
    }
    Ok((ckpt.restore()?, data))
}

fn inference_manifest(command: &str, cfg: &RunConfig, checkpoint: &Path, decoders: &[DecoderKind], artifacts: Vec<String>) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, cfg, artifacts).with_checkpoint(checkpoint)?;
    m.decoders = decoders.iter().map(|d| d.to_string()).collect();
    Ok(m)
}

fn dataset_name(cfg: &RunConfig) -> String {
    match &cfg.csv_path {
        Some(p) if cfg.source == amlnet::config::DataSource::Csv => p.display().to_string(),
        _ => cfg.name.clone(),
    }
}

/// Metric report of the requested decoders plus the persistence baseline
/// on the test windows.
pub fn cmd_evaluate(
    checkpoint: &Path,
    config_path: &Path,
    out: &Path,
    decoders: &[DecoderKind],
    seed: Option<u64>,
) -> Result<Evaluation> {
    let cfg = load_config(config_path, seed)?;
    let decoders = dedup(decoders)?;
    let (model, data) = load_for_inference(checkpoint, &cfg)?;
    prepare_out(out, "evaluate")?;
    let artifacts = [METRICS_JSON, METRICS_CSV, FORECASTS_FILE].iter().map(|s| s.to_string()).collect();
    inference_manifest("evaluate", &cfg, checkpoint, &decoders, artifacts)?.write(out)?;
    let ev = evaluate(
        &model,
        &data.windows.test,
        &data.norm_stats,
        &decoders,
        &dataset_name(&cfg),
        &cfg.eval_options(worker_count()),
    )?;
    write_string(&out.join(METRICS_JSON), &ev.report.to_json())?;
    write_string(&out.join(METRICS_CSV), &ev.report.to_csv())?;
    write_records(&out.join(FORECASTS_FILE), &ev.forecasts)?;
    Ok(ev)
}

fn dedup(decoders: &[DecoderKind]) -> Result<Vec<DecoderKind>> {
    let mut out = Vec::new();
    for &d in decoders {
        if !out.contains(&d) {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("decoders: at least one of P1, P2, S is required".into()));
    }
    Ok(out)
}

/// One forecast step with its central quantiles, original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRecord {
    pub model: String,
    pub series_id: usize,
    pub t0: usize,
    pub step: usize,
    pub truth: f64,
    pub mu: f64,
    pub sigma: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

fn quantile_records(model: &AmlNet, windows: &[ForecastWindow], data: &PreparedData, kind: DecoderKind) -> Result<Vec<QuantileRecord>> {
    let outs = par_map(windows, worker_count(), |w| model.forecast(w, kind));
    let mut rows = Vec::new();
    for (w, f) in windows.iter().zip(outs) {
        let st = data.norm_stats.get(w.series_id).copied().unwrap_or(amlnet::data::NormStats::IDENTITY);
        let f = f?.rescaled(st.mean, st.std);
        let (q10, q50, q90) = (gaussian_quantile(&f, 0.1)?, gaussian_quantile(&f, 0.5)?, gaussian_quantile(&f, 0.9)?);
        for (t, &y) in w.truth()?.iter().enumerate() {
            rows.push(QuantileRecord {
                model: kind.to_string(),
                series_id: w.series_id,
                t0: w.t0,
                step: t,
                truth: st.denormalize(y),
                mu: f.mu[t],
                sigma: f.sigma[t],
                q10: q10[t],
                q50: q50[t],
                q90: q90[t],
            });
        }
    }
    Ok(rows)
}

/// Gaussian forecasts with 10/50/90% quantiles for every test window.
pub fn cmd_forecast(
    checkpoint: &Path,
    config_path: &Path,
    out: &Path,
    decoders: &[DecoderKind],
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let decoders = dedup(decoders)?;
    let (model, data) = load_for_inference(checkpoint, &cfg)?;
    prepare_out(out, "forecast")?;
    inference_manifest("forecast", &cfg, checkpoint, &decoders, vec![FORECASTS_FILE.into()])?.write(out)?;
    let mut rows = Vec::new();
    for &kind in &decoders {
        rows.extend(quantile_records(&model, &data.windows.test, &data, kind)?);
    }
    write_records(&out.join(FORECASTS_FILE), &rows)
}

/// Per-decoder cosine heatmaps, k-NN summary, per-window DTW and
/// forecast-vs-truth traces over the test windows.
pub fn cmd_diagnose(checkpoint: &Path, config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let (model, data) = load_for_inference(checkpoint, &cfg)?;
    prepare_out(out, "diagnose")?;
    let mut artifacts: Vec<String> = DecoderKind::ALL.iter().map(|&k| heatmap_file(k)).collect();
    artifacts.extend([KNN_FILE, DTW_FILE, TRACES_FILE].map(String::from));
    inference_manifest("diagnose", &cfg, checkpoint, &DecoderKind::ALL, artifacts)?.write(out)?;
    let d = diagnose(&model, &data.windows.test, &data.norm_stats, cfg.knn_k, worker_count())?;
    for (kind, m) in &d.heatmaps {
        write_matrix(&out.join(heatmap_file(*kind)), m)?;
    }
    #[derive(Serialize)]
    struct Knn {
        model: String,
        k: usize,
        mean_knn_cosine: Option<f64>,
    }
    let knn: Vec<Knn> = d
        .knn
        .iter()
        .map(|(kind, v)| Knn {
            model: kind.to_string(),
            k: cfg.knn_k,
            mean_knn_cosine: *v,
        })
        .collect();
    write_records(&out.join(KNN_FILE), &knn)?;
    write_records(&out.join(DTW_FILE), &d.dtw)?;
    write_records::<ForecastRecord>(&out.join(TRACES_FILE), &d.traces)
}
