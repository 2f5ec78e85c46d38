//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use amlnet::config::RunConfig;
use amlnet::gradcheck::suite::{objective_checks, op_checks};
use amlnet::gradcheck::FD_TOLERANCE;
use amlnet::losses::{gaussian_kl, nll_loss, LayerMap};
use amlnet::metrics::{dtw, evaluate, quantile_loss, EvalOptions, MetricReport};
use amlnet::model::{AmlNet, DecoderKind, GaussianForecast};
use amlnet::params::Group;
use amlnet::train::Trainer;
use amlnet::Matrix;
use amlnet_cli::{cmd_evaluate, cmd_train};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(&str, bool)], extra: String) -> Self {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let detail = if failed.is_empty() { extra } else { format!("failed: {}; {extra}", failed.join(", ")) };
        Outcome {
            pass: failed.is_empty(),
            detail,
        }
    }
}

fn main() {
    let criteria: [(&str, &str, Duration, fn() -> Outcome); 7] = [
        ("AC1", "loss oracles", Duration::from_secs(60), loss_oracles),
        ("AC2", "gradient checks", Duration::from_secs(300), gradient_checks),
        ("AC3", "structure", Duration::MAX, structure),
        ("AC4", "synthetic run", Duration::from_secs(900), synthetic_run),
        ("AC5", "continuity", Duration::MAX, continuity),
        ("AC6", "latency ordering", Duration::MAX, latency_ordering),
        ("AC7", "reproducibility", Duration::MAX, reproducibility),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let mut out = run();
        let took = t.elapsed();
        if took > budget {
            out.pass = false;
            out.detail = format!("over the {budget:?} budget; {}", out.detail);
        }
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{id} {verdict} {name} ({:.1}s): {}", took.as_secs_f64(), out.detail);
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- AC1

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn log_normal_pdf(x: f64, mu: f64, s: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - (x - mu).powi(2) / (2.0 * s * s)
}

/// Smallest sum of |x_i - y_j| over every monotone alignment path.
fn dtw_brute(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
    let c = (x[i] - y[j]).abs();
    if i == 0 && j == 0 {
        return c;
    }
    let mut best = f64::INFINITY;
    if i > 0 && j > 0 {
        best = best.min(dtw_brute(x, y, i - 1, j - 1));
    }
    if i > 0 {
        best = best.min(dtw_brute(x, y, i - 1, j));
    }
    if j > 0 {
        best = best.min(dtw_brute(x, y, i, j - 1));
    }
    c + best
}

fn loss_oracles() -> Outcome {
    let mus = [-3.0, -1.5, 0.0, 1.5, 3.0];
    let sigmas = [0.3, 0.9, 1.5, 2.2, 3.0];
    let mut kl_err: f64 = 0.0;
    for &m1 in &mus {
        for &s1 in &sigmas {
            for &m2 in &mus {
                for &s2 in &sigmas {
                    let quad = simpson(m1 - 40.0 * s1, m1 + 40.0 * s1, 40_000, |x| {
                        let lp = log_normal_pdf(x, m1, s1);
                        lp.exp() * (lp - log_normal_pdf(x, m2, s2))
                    });
                    kl_err = kl_err.max((gaussian_kl(m1, s1, m2, s2).unwrap() - quad).abs());
                }
            }
        }
    }

    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let at_mean = nll_loss(&GaussianForecast::new(vec![0.3, -1.0], vec![1.0, 1.0]).unwrap(), &[0.3, -1.0]).unwrap();
    let one_off = nll_loss(&GaussianForecast::new(vec![1.0], vec![1.0]).unwrap(), &[0.0]).unwrap();
    let nll_ok = (at_mean - half_log_2pi).abs() < 1e-12
        && (one_off - (half_log_2pi + 0.5)).abs() < 1e-12
        && format!("{at_mean:.4}") == "0.9189"
        && format!("{one_off:.4}") == "1.4189";
    let q_ok = quantile_loss(&[2.0], &[1.0], 0.5).unwrap() == 0.5 && quantile_loss(&[2.0], &[1.0], 0.9).unwrap() == 0.9;

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut dtw_err: f64 = 0.0;
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        dtw_err = dtw_err.max((dtw(&x, &y).unwrap() - dtw_brute(&x, &y, n - 1, m - 1)).abs());
    }
    Outcome::new(
        &[("KL", kl_err <= 1e-6), ("NLL", nll_ok), ("quantile", q_ok), ("DTW", dtw_err <= 1e-12)],
        format!("max KL error {kl_err:.2e} over 625 cases, max DTW error {dtw_err:.1e} over 200 pairs"),
    )
}

// ---------------------------------------------------------------- AC2

fn gradient_checks() -> Outcome {
    let mut checks = op_checks();
    let configs = [
        ("toy", "d_hid = 8\nn_e = 2\nn_d = 2\nn_s = 1\nd_f = 8\nn_h = 2\nalpha_h = 0.0\n"),
        ("full", "d_hid = 8\nn_e = 3\nn_d = 3\nn_s = 2\nd_f = 8\nn_h = 2\nalpha_h = 0.5\n"),
    ];
    for (label, body) in configs {
        let text = format!("t_l = 6\nt_h = 5\nt_total = 200\nval_len = 20\ntest_len = 20\ndropout = 0.0\nalpha_o = 0.3\n{body}");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let data = cfg.prepare_data(None).unwrap();
        let model = AmlNet::new(cfg.model_config(data.d_x, data.n_series).unwrap(), 4).unwrap();
        let batch = vec![data.windows.train[0].clone(), data.windows.train[40].clone()];
        for mut c in objective_checks(&model, &cfg.train_config(), &batch, 3).unwrap() {
            c.label = format!("{label} {}", c.label);
            checks.push(c);
        }
    }
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
    let bad: Vec<&str> = checks.iter().filter(|c| !(c.rel_error <= FD_TOLERANCE)).map(|c| c.label.as_str()).collect();
    Outcome::new(
        &[("all within tolerance", bad.is_empty())],
        format!("{} checks, worst {:.2e} ({}){}", checks.len(), worst.rel_error, worst.label, if bad.is_empty() { String::new() } else { format!(", over: {bad:?}") }),
    )
}

// ---------------------------------------------------------------- AC3

const SMALL: &str = "t_l = 24\nt_h = 12\nt_total = 480\nval_len = 48\ntest_len = 96\nd_hid = 8\nn_e = 4\nn_d = 4\nn_s = 2\nd_f = 8\nn_h = 2\ndropout = 0.1\n";

fn snapshots(t: &Trainer) -> Vec<Vec<Matrix>> {
    Group::ALL.iter().map(|&g| t.model.params.snapshot(&[g])).collect()
}

fn changed_groups(a: &[Vec<Matrix>], b: &[Vec<Matrix>]) -> Vec<Group> {
    Group::ALL.iter().zip(a.iter().zip(b)).filter(|(_, (x, y))| x != y).map(|(&g, _)| g).collect()
}

fn layer_map_exhaustive() -> bool {
    for n_d in 3..=8 {
        for n_s in 2..n_d {
            let m = LayerMap::new(n_d, n_s).unwrap();
            let covered: BTreeSet<usize> = (1..=n_s).flat_map(|i| m.teachers_of(i)).collect();
            if covered != (1..=n_d).collect() {
                return false;
            }
            for j in 1..=n_d {
                let expect: Vec<usize> = (1..=n_s).filter(|&i| m.teachers_of(i).contains(&j)).collect();
                if m.inverse(j) != expect.as_slice() {
                    return false;
                }
            }
        }
    }
    true
}

fn structure() -> Outcome {
    let maps = layer_map_exhaustive();

    let cfg = RunConfig::from_toml_str(SMALL).unwrap();
    let data = cfg.prepare_data(None).unwrap();
    let mc = cfg.model_config(data.d_x, data.n_series).unwrap();
    let mut t = Trainer::from_scratch(mc.clone(), cfg.train_config(), data.norm_stats.clone()).unwrap();
    let batch = &data.windows.train[..4];
    let s0 = snapshots(&t);
    t.generator_phase(batch).unwrap();
    let s1 = snapshots(&t);
    t.student_phase(batch).unwrap();
    let s2 = snapshots(&t);
    t.discriminator_phase(batch).unwrap();
    let s3 = snapshots(&t);
    let phases = changed_groups(&s0, &s1) == [Group::Encoder, Group::P1, Group::P2]
        && changed_groups(&s1, &s2) == [Group::Student]
        && changed_groups(&s2, &s3) == [Group::Discriminator];

    // P1 under teacher forcing: target k feeds row k + 1 and nothing earlier
    let model = &t.model;
    let w = &data.windows.validation[0];
    let h = model.encode(w).unwrap();
    let (base, _) = model.decode_p1_teacher_forced(w, &h).unwrap();
    let mut causal = true;
    for k in 0..mc.t_h {
        let mut w2 = w.clone();
        w2.y_future.as_mut().unwrap()[k] += 1.0;
        let (f, _) = model.decode_p1_teacher_forced(&w2, &h).unwrap();
        causal &= (0..=k).all(|s| f.mu[s] == base.mu[s] && f.sigma[s] == base.sigma[s]);
        if k + 1 < mc.t_h {
            causal &= f.mu[k + 1] != base.mu[k + 1];
        }
    }

    let mut calls = Vec::new();
    for kind in DecoderKind::ALL {
        model.reset_call_counts();
        model.forecast(w, kind).unwrap();
        calls.push(model.decoder_calls(kind));
    }
    let single = calls[1] == 1 && calls[2] == 1;
    Outcome::new(
        &[("layer map", maps), ("phase isolation", phases), ("P1 causality", causal), ("single pass", single)],
        format!("decoder calls per forecast P1/P2/S = {calls:?}"),
    )
}

// ---------------------------------------------------------------- AC4, AC5

const SYNTHETIC: &str = "\
name = \"sine-mix\"
n_series = 2
t_total = 960
data_seed = 7
t_l = 24
t_h = 12
val_len = 120
test_len = 240
train_stride = 2
d_hid = 16
n_e = 3
n_d = 3
n_s = 2
d_f = 16
n_h = 4
t_de = 6
dropout = 0.0
lr_g = 0.001
batch_size = 16
e_max = 30
patience = 30
seed = 7
latency_runs = 0
";

struct Trained {
    val_nll: Vec<f64>,
    best_epoch: usize,
    report: MetricReport,
}

fn train_and_evaluate(dir: &Path, name: &str, extra: &str) -> Trained {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, format!("{SYNTHETIC}{extra}")).unwrap();
    let run = dir.join(name);
    cmd_train(&cfg, &run, None).unwrap();
    let mut val_nll = Vec::new();
    let mut best_epoch = 0;
    for line in std::fs::read_to_string(run.join("history.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        val_nll.push(v["val_s_nll"].as_f64().unwrap());
        best_epoch = v["best_epoch"].as_u64().unwrap() as usize;
    }
    let ev = cmd_evaluate(&run.join("checkpoint.json"), &cfg, &dir.join(format!("{name}-eval")), &[DecoderKind::S], None).unwrap();
    Trained {
        val_nll,
        best_epoch,
        report: ev.report,
    }
}

fn synthetic_runs() -> &'static (Trained, Trained) {
    static RUNS: std::sync::OnceLock<(Trained, Trained)> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let kd = train_and_evaluate(dir.path(), "kd", "alpha_o = 0.1\nalpha_h = 0.5\n");
        let plain = train_and_evaluate(dir.path(), "plain", "alpha_o = 0.0\nalpha_h = 0.0\n");
        (kd, plain)
    })
}

fn metric(r: &MetricReport, model: &str, f: impl Fn(&amlnet::metrics::MetricRow) -> Option<f64>) -> f64 {
    f(r.row(model).unwrap()).unwrap()
}

fn synthetic_run() -> Outcome {
    let (kd, plain) = synthetic_runs();
    let first = kd.val_nll[0];
    let best = kd.val_nll[kd.best_epoch - 1];
    let s = metric(&kd.report, "S", |r| r.rho50);
    let persistence = metric(&kd.report, "Persistence", |r| r.rho50);
    let baseline = metric(&plain.report, "S", |r| r.rho50);
    Outcome::new(
        &[
            ("NLL decrease", best < first),
            ("beats persistence", s < persistence),
            ("within 1.10 of no-KD", s <= 1.10 * baseline),
        ],
        format!(
            "epochs {}, S val NLL {first:.4} -> {best:.4} at epoch {}; test rho50 S {s:.5}, persistence {persistence:.5}, no-KD {baseline:.5}",
            kd.val_nll.len(),
            kd.best_epoch
        ),
    )
}

fn continuity() -> Outcome {
    let (kd, plain) = synthetic_runs();
    let knn = metric(&kd.report, "S", |r| r.mean_knn_cosine);
    let knn_base = metric(&plain.report, "S", |r| r.mean_knn_cosine);
    let d = metric(&kd.report, "S", |r| r.mean_dtw);
    let d_base = metric(&plain.report, "S", |r| r.mean_dtw);
    Outcome::new(
        &[
            ("kNN cosine", knn <= knn_base),
            ("DTW", d <= 1.05 * d_base),
            ("at least 20 windows", kd.report.windows >= 20),
        ],
        format!(
            "{} test windows; mean kNN cosine S {knn:.4} vs no-KD {knn_base:.4}; mean DTW S {d:.4} vs no-KD {d_base:.4}",
            kd.report.windows
        ),
    )
}

// ---------------------------------------------------------------- AC6

fn latency_ordering() -> Outcome {
    let text = "t_l = 40\nt_h = 20\nt_total = 1440\nd_hid = 32\nn_e = 4\nn_d = 4\nn_s = 1\nd_f = 64\nn_h = 4\nalpha_h = 0.0\n";
    let cfg = RunConfig::from_toml_str(text).unwrap();
    let data = cfg.prepare_data(None).unwrap();
    let model = AmlNet::new(cfg.model_config(data.d_x, data.n_series).unwrap(), 1).unwrap();
    let opts = EvalOptions {
        latency_runs: 10,
        workers: 1,
        ..cfg.eval_options(1)
    };
    let ev = evaluate(&model, &data.windows.test, &data.norm_stats, &DecoderKind::ALL, "latency", &opts).unwrap();
    let runs = |m: &str| ev.report.row(m).unwrap().latency_ms.as_ref().unwrap().runs_ms.clone();
    let (p1, p2, s) = (runs("P1"), runs("P2"), runs("S"));
    let ordered = (0..10).all(|i| s[i] < p2[i] && p2[i] < p1[i]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Outcome::new(
        &[("S < P2 < P1 in all 10 runs", ordered && s.len() == 10)],
        format!(
            "{} windows, mean ms S {:.2}, P2 {:.2}, P1 {:.2}",
            data.windows.test.len(),
            mean(&s),
            mean(&p2),
            mean(&p1)
        ),
    )
}

// ---------------------------------------------------------------- AC7

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("{SMALL}train_stride = 6\ne_max = 2\nbatch_size = 16\nlatency_runs = 0\n")).unwrap();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        cmd_train(&cfg, &out, Some(3)).unwrap();
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        files.push((read("history.jsonl"), read("checkpoint.json")));
        let ev = cmd_evaluate(&out.join("checkpoint.json"), &cfg, &dir.path().join(format!("{run}-eval")), &DecoderKind::ALL, None).unwrap();
        reports.push(ev.report);
    }
    Outcome::new(
        &[
            ("history", files[0].0 == files[1].0),
            ("checkpoint", files[0].1 == files[1].1),
            ("metric report", reports[0] == reports[1]),
        ],
        format!("{} history bytes, {} checkpoint bytes", files[0].0.len(), files[0].1.len()),
    )
}
