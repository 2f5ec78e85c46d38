//! Three-phase adversarial mutual-learning optimization, early stopping,
//! resumable state and prediction.

mod config;
mod objective;
mod optim;

pub use config::{TrainConfig, DIVERGENCE_GUARD};
pub use objective::{
    discriminator_objective, generator_objective, student_objective, DecoderObjective, Teachers,
};
pub use optim::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{ForecastWindow, NormStats};
use crate::error::{Error, Result};
use crate::losses::{nll_loss, DecoderLosses, DiscLoss, LayerMap, LossReport};
use crate::metrics::QuantileAccumulator;
use crate::model::{AmlNet, Checkpoint, DecoderKind, GaussianForecast};
use crate::parallel::{par_map, worker_count};
use crate::params::Group;

pub const TRAIN_STATE_VERSION: u32 = 1;

/// Parameter groups of the first phase.
pub const GENERATOR_GROUPS: [Group; 3] = [Group::Encoder, Group::P1, Group::P2];

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: u64,
    /// Mean per-step totals.
    pub train_p1: f64,
    pub train_p2: f64,
    pub train_s: f64,
    pub train_disc: f64,
    /// S-decoder NLL on the validation windows, normalized units.
    pub val_s_nll: f64,
    /// S-decoder median quantile loss on the validation windows, original
    /// units. Early stopping watches this.
    pub val_s_rho50: f64,
    pub improved: bool,
    pub best_epoch: usize,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub format_version: u32,
    pub config: TrainConfig,
    pub current: Checkpoint,
    pub opt_generators: Adam,
    pub opt_student: Adam,
    pub opt_discriminators: Adam,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
    pub finished: bool,
    pub history: Vec<EpochRecord>,
    pub best: Option<Checkpoint>,
}

/// Progress notifications from [`Trainer::fit`].
pub enum TrainEvent<'a> {
    Step { step: u64, report: &'a LossReport },
    Epoch { record: &'a EpochRecord, trainer: &'a Trainer },
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: AmlNet,
    pub norm_stats: Vec<NormStats>,
    map: Option<LayerMap>,
    opt_g: Adam,
    opt_s: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
    pub finished: bool,
    pub history: Vec<EpochRecord>,
    pub best: Option<Checkpoint>,
    /// When set, `(series_id, t0)` of every window that entered a gradient
    /// computation.
    pub gradient_probe: Option<Vec<(usize, usize)>>,
    /// Threads for validation forecasts.
    pub workers: usize,
}

fn layer_map(model: &AmlNet, config: &TrainConfig) -> Result<Option<LayerMap>> {
    if config.alpha_h == 0.0 && model.config.n_s == 1 {
        return Ok(None);
    }
    LayerMap::new(model.config.n_d, model.config.n_s).map(Some)
}

fn guard(component: String, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Numeric { component });
    }
    if v.abs() > DIVERGENCE_GUARD {
        return Err(Error::Divergence { component, value: v });
    }
    Ok(v)
}

fn guard_decoder(kind: DecoderKind, l: &DecoderLosses) -> Result<()> {
    for (name, v) in [
        ("nll", l.nll),
        ("outcome_kd", l.outcome_kd),
        ("hint_kd", l.hint_kd),
        ("total", l.total),
    ] {
        guard(format!("{kind} {name}"), v)?;
    }
    Ok(())
}

impl Trainer {
    pub fn new(model: AmlNet, config: TrainConfig, norm_stats: Vec<NormStats>) -> Result<Self> {
        config.validate(&model.config)?;
        let map = layer_map(&model, &config)?;
        let opt_g = Adam::new(&model.params, &GENERATOR_GROUPS, config.lr_g);
        let opt_s = Adam::new(&model.params, &[Group::Student], config.lr_g);
        let opt_d = Adam::new(&model.params, &[Group::Discriminator], config.lr_d);
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e),
            config,
            model,
            norm_stats,
            map,
            opt_g,
            opt_s,
            opt_d,
            epoch: 0,
            step: 0,
            best_val: None,
            best_epoch: 0,
            stale: 0,
            finished: false,
            history: Vec::new(),
            best: None,
            gradient_probe: None,
            workers: worker_count(),
        })
    }

    /// Fresh model and trainer, both seeded from `config.seed`.
    pub fn from_scratch(
        model_config: crate::nn::ModelConfig,
        config: TrainConfig,
        norm_stats: Vec<NormStats>,
    ) -> Result<Self> {
        let model = AmlNet::new(model_config, config.seed)?;
        Self::new(model, config, norm_stats)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            format_version: TRAIN_STATE_VERSION,
            config: self.config.clone(),
            current: Checkpoint::capture(&self.model, &self.norm_stats),
            opt_generators: self.opt_g.clone(),
            opt_student: self.opt_s.clone(),
            opt_discriminators: self.opt_d.clone(),
            rng: self.rng.clone(),
            epoch: self.epoch,
            step: self.step,
            best_val: self.best_val,
            best_epoch: self.best_epoch,
            stale: self.stale,
            finished: self.finished,
            history: self.history.clone(),
            best: self.best.clone(),
        }
    }

    pub fn resume(state: TrainState) -> Result<Self> {
        if state.format_version != TRAIN_STATE_VERSION {
            return Err(Error::Checkpoint(format!(
                "training state version {} is not supported",
                state.format_version
            )));
        }
        let model = state.current.restore()?;
        let mut t = Self::new(model, state.config, state.current.norm_stats)?;
        t.opt_g = state.opt_generators;
        t.opt_s = state.opt_student;
        t.opt_d = state.opt_discriminators;
        t.rng = state.rng;
        t.epoch = state.epoch;
        t.step = state.step;
        t.best_val = state.best_val;
        t.best_epoch = state.best_epoch;
        t.stale = state.stale;
        t.finished = state.finished;
        t.history = state.history;
        t.best = state.best;
        Ok(t)
    }

    pub fn layer_map(&self) -> Option<&LayerMap> {
        self.map.as_ref()
    }

    /// Optimizer steps taken by `(generators, student, discriminators)`.
    pub fn optimizer_steps(&self) -> (u64, u64, u64) {
        (self.opt_g.steps, self.opt_s.steps, self.opt_d.steps)
    }

    fn fork_rng(&mut self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.random())
    }

    fn training_graph<'a>(model: &'a AmlNet, groups: &[Group], rng: ChaCha8Rng) -> Graph<'a> {
        let mut g = Graph::new(&model.params, groups);
        g.enable_dropout(rng);
        g
    }

    fn check_batch(&self, batch: &[ForecastWindow]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("training batch is empty".into()));
        }
        let c = &self.model.config;
        for w in batch {
            if w.t_l() != c.t_l || w.t_h() != c.t_h {
                return Err(Error::Contract(format!(
                    "batch window has t_l={}, t_h={}; model expects {}, {}",
                    w.t_l(),
                    w.t_h(),
                    c.t_l,
                    c.t_h
                )));
            }
            w.truth()?;
        }
        Ok(())
    }

    /// One iteration: encoder with P1 and P2, then S under the updated
    /// encoder, then the discriminators on freshly regenerated hidden
    /// states. Exactly three optimizer steps.
    pub fn train_step(&mut self, batch: &[ForecastWindow]) -> Result<LossReport> {
        self.check_batch(batch)?;
        if let Some(probe) = &mut self.gradient_probe {
            probe.extend(batch.iter().map(|w| (w.series_id, w.t0)));
        }
        let (p1, p2) = self.generator_phase(batch)?;
        let s = self.student_phase(batch)?;
        let discriminators = self.discriminator_phase(batch)?;
        self.step += 1;
        let report = LossReport {
            p1,
            p2,
            s,
            discriminators,
        };
        report.validate()?;
        Ok(report)
    }

    /// Phase one alone: one step of the encoder, P1 and P2 on `L_P1 + L_P2`.
    pub fn generator_phase(&mut self, batch: &[ForecastWindow]) -> Result<(DecoderLosses, DecoderLosses)> {
        self.check_batch(batch)?;
        let rng = self.fork_rng();
        let mut g = Self::training_graph(&self.model, &GENERATOR_GROUPS, rng);
        let (a, b) = generator_objective(&mut g, &self.model, &self.config, batch, None)?;
        guard_decoder(DecoderKind::P1, &a.losses)?;
        guard_decoder(DecoderKind::P2, &b.losses)?;
        let loss = g.add(a.total, b.total);
        let grads = g.backward(loss).into_params();
        drop(g);
        self.opt_g
            .step(&mut self.model.params, &grads, self.config.grad_clip)?;
        Ok((a.losses, b.losses))
    }

    /// Phase two alone: one step of the student on `L_S`.
    pub fn student_phase(&mut self, batch: &[ForecastWindow]) -> Result<DecoderLosses> {
        self.check_batch(batch)?;
        let rng = self.fork_rng();
        // only the student trains: the encoder output and both teachers
        // enter as constants
        let mut g = Self::training_graph(&self.model, &[Group::Student], rng);
        let s = student_objective(&mut g, &self.model, &self.config, self.map.as_ref(), batch, None)?;
        guard_decoder(DecoderKind::S, &s.losses)?;
        let grads = g.backward(s.total).into_params();
        drop(g);
        self.opt_s
            .step(&mut self.model.params, &grads, self.config.grad_clip)?;
        Ok(s.losses)
    }

    /// Phase three alone: one step of every discriminator, then the
    /// batch-norm running statistics.
    pub fn discriminator_phase(&mut self, batch: &[ForecastWindow]) -> Result<Vec<DiscLoss>> {
        self.check_batch(batch)?;
        let rng = self.fork_rng();
        let mut g = Self::training_graph(&self.model, &[Group::Discriminator], rng);
        let (total, terms) = discriminator_objective(&mut g, &self.model, self.map.as_ref(), batch)?;
        let mut losses = Vec::with_capacity(terms.len());
        for t in &terms {
            let v = guard(
                format!("discriminator {:?} layer {}", t.teacher, t.layer + 1),
                g.scalar(t.loss),
            )?;
            losses.push(DiscLoss {
                teacher: t.teacher,
                layer: t.layer,
                loss: v,
            });
        }
        let grads = g.backward(total).into_params();
        drop(g);
        self.opt_d
            .step(&mut self.model.params, &grads, self.config.grad_clip)?;
        for t in &terms {
            for st in &t.stats {
                self.model.discriminators.update_running(t.teacher, t.layer, st);
            }
        }
        Ok(losses)
    }

    /// S-decoder `(NLL, rho50)` on `windows`: NLL in normalized units, the
    /// quantile loss in original units.
    pub fn validate(&self, windows: &[ForecastWindow]) -> Result<(f64, f64)> {
        if windows.is_empty() {
            return Err(Error::Contract("validation set is empty".into()));
        }
        let model = &self.model;
        let out = par_map(windows, self.workers, |w| model.forecast(w, DecoderKind::S));
        let mut nll = 0.0;
        let mut rho = QuantileAccumulator::new(0.5)?;
        for (w, f) in windows.iter().zip(out) {
            let f = f?;
            let y = w.truth()?;
            nll += nll_loss(&f, y)?;
            let st = self
                .norm_stats
                .get(w.series_id)
                .copied()
                .unwrap_or(NormStats::IDENTITY);
            let truth: Vec<f64> = y.iter().map(|&z| st.denormalize(z)).collect();
            let mu: Vec<f64> = f.mu.iter().map(|&z| st.denormalize(z)).collect();
            rho.add(&truth, &mu)?;
        }
        Ok((nll / windows.len() as f64, rho.value()?))
    }

    /// Runs epochs until `e_max`, or until more than `patience` consecutive
    /// epochs fail to improve the validation loss. Continues a resumed run.
    pub fn fit(
        &mut self,
        train: &[ForecastWindow],
        validation: &[ForecastWindow],
        mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<()> {
        if train.is_empty() || validation.is_empty() {
            return Err(Error::Contract("fit needs nonempty training and validation sets".into()));
        }
        while !self.finished && self.epoch < self.config.e_max {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut self.rng);
            let mut sums = [0.0; 4];
            let mut steps = 0u64;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<ForecastWindow> = chunk.iter().map(|&i| train[i].clone()).collect();
                let report = self.train_step(&batch)?;
                sums[0] += report.p1.total;
                sums[1] += report.p2.total;
                sums[2] += report.s.total;
                sums[3] += report.discriminators.iter().map(|d| d.loss).sum::<f64>();
                steps += 1;
                on_event(TrainEvent::Step {
                    step: self.step,
                    report: &report,
                })?;
            }
            self.epoch += 1;
            let (val_nll, val_rho) = self.validate(validation)?;
            let improved = self.best_val.is_none_or(|b| val_rho < b);
            if improved {
                self.best_val = Some(val_rho);
                self.best_epoch = self.epoch;
                self.stale = 0;
                self.best = Some(Checkpoint::capture(&self.model, &self.norm_stats));
            } else {
                self.stale += 1;
            }
            if self.stale > self.config.patience || self.epoch >= self.config.e_max {
                self.finished = true;
            }
            let n = steps as f64;
            let record = EpochRecord {
                epoch: self.epoch,
                steps,
                train_p1: sums[0] / n,
                train_p2: sums[1] / n,
                train_s: sums[2] / n,
                train_disc: sums[3] / n,
                val_s_nll: val_nll,
                val_s_rho50: val_rho,
                improved,
                best_epoch: self.best_epoch,
            };
            self.history.push(record.clone());
            on_event(TrainEvent::Epoch {
                record: &record,
                trainer: self,
            })?;
        }
        Ok(())
    }

    /// Best checkpoint so far, or the current parameters before any epoch.
    pub fn best_checkpoint(&self) -> Checkpoint {
        self.best
            .clone()
            .unwrap_or_else(|| Checkpoint::capture(&self.model, &self.norm_stats))
    }
}

/// Forecasts in normalized units from a checkpoint; P1 decodes
/// autoregressively, P2 and S in one pass.
pub fn predict(
    checkpoint: &Checkpoint,
    windows: &[ForecastWindow],
    decoder: DecoderKind,
    workers: usize,
) -> Result<Vec<GaussianForecast>> {
    let model = checkpoint.restore()?;
    par_map(windows, workers, |w| model.forecast(w, decoder))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{random_window, tiny_config};
    use crate::nn::ModelConfig;
    use crate::tensor::Matrix;

    fn deep_config() -> ModelConfig {
        ModelConfig {
            n_d: 3,
            n_s: 2,
            n_e: 3,
            ..tiny_config()
        }
    }

    fn batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<ForecastWindow> {
        (0..n)
            .map(|i| {
                let mut w = random_window(cfg, seed + i as u64);
                w.series_id = i % cfg.max_series;
                w.t0 = i;
                w
            })
            .collect()
    }

    fn trainer(cfg: ModelConfig, alpha_o: f64, alpha_h: f64) -> Trainer {
        let tc = TrainConfig {
            alpha_o,
            alpha_h,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut t = Trainer::from_scratch(cfg, tc, Vec::new()).unwrap();
        t.workers = 1;
        t
    }

    fn changed(a: &[Matrix], b: &[Matrix]) -> bool {
        a.iter().zip(b).any(|(x, y)| x != y)
    }

    fn snapshots(t: &Trainer) -> Vec<Vec<Matrix>> {
        Group::ALL.iter().map(|&g| t.model.params.snapshot(&[g])).collect()
    }

    /// Which groups differ between two snapshots, in `Group::ALL` order.
    fn diff(a: &[Vec<Matrix>], b: &[Vec<Matrix>]) -> Vec<Group> {
        Group::ALL
            .iter()
            .zip(a.iter().zip(b))
            .filter(|(_, (x, y))| changed(x, y))
            .map(|(&g, _)| g)
            .collect()
    }

    #[test]
    fn each_phase_updates_exactly_its_partition() {
        let cfg = deep_config();
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        let b = batch(&cfg, 4, 1);
        let s0 = snapshots(&t);
        let bn0 = t.model.discriminators.clone();
        t.generator_phase(&b).unwrap();
        let s1 = snapshots(&t);
        assert_eq!(diff(&s0, &s1), vec![Group::Encoder, Group::P1, Group::P2]);
        t.student_phase(&b).unwrap();
        let s2 = snapshots(&t);
        assert_eq!(diff(&s1, &s2), vec![Group::Student]);
        assert_eq!(t.model.discriminators.running_p1, bn0.running_p1);
        t.discriminator_phase(&b).unwrap();
        let s3 = snapshots(&t);
        assert_eq!(diff(&s2, &s3), vec![Group::Discriminator]);
        assert_ne!(t.model.discriminators.running_p1, bn0.running_p1);
        assert_eq!(t.optimizer_steps(), (1, 1, 1));
    }

    #[test]
    fn one_step_moves_the_student_and_takes_three_optimizer_steps() {
        let cfg = deep_config();
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        let s_before = t.model.params.snapshot(&[Group::Student]);
        let r = t.train_step(&batch(&cfg, 4, 2)).unwrap();
        let s_after = t.model.params.snapshot(&[Group::Student]);
        let delta: f64 = s_before
            .iter()
            .zip(&s_after)
            .map(|(a, b)| a.zip_map(b, |x, y| x - y).frobenius_sq())
            .sum();
        assert!(delta > 0.0);
        assert_eq!(t.optimizer_steps(), (1, 1, 1));
        assert_eq!(r.discriminators.len(), 2 * cfg.n_d);
        assert!((r.s.total - (r.s.nll + r.s.outcome_kd + r.s.hint_kd)).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_reduce_to_likelihood_training() {
        let cfg = deep_config();
        let b = batch(&cfg, 3, 3);
        let mut t = trainer(cfg.clone(), 0.0, 0.0);
        let mut reference = t.model.clone();
        let r = t.train_step(&b).unwrap();
        assert_eq!((r.p1.outcome_kd, r.p1.hint_kd, r.s.outcome_kd, r.s.hint_kd), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.p2.total, r.p2.nll);

        // plain mean-NLL steps with the same optimizer settings
        let tc = &t.config;
        let mut opt_g = Adam::new(&reference.params, &GENERATOR_GROUPS, tc.lr_g);
        let mut opt_s = Adam::new(&reference.params, &[Group::Student], tc.lr_g);
        let grads = {
            let mut g = Graph::new(&reference.params, &GENERATOR_GROUPS);
            let mut parts = Vec::new();
            for w in &b {
                let y = w.truth().unwrap();
                let h = reference.encode_graph(&mut g, w).unwrap();
                let o1 = reference.p1_teacher_forced_graph(&mut g, w, h).unwrap();
                let o2 = reference.nar_graph(&mut g, DecoderKind::P2, w, h).unwrap();
                let a = crate::losses::nll_graph(&mut g, o1.mu, o1.sigma, y);
                let c = crate::losses::nll_graph(&mut g, o2.mu, o2.sigma, y);
                parts.push((a, c));
            }
            let a: Vec<_> = parts.iter().map(|p| p.0).collect();
            let c: Vec<_> = parts.iter().map(|p| p.1).collect();
            let la = crate::losses::batch_mean(&mut g, &a);
            let lc = crate::losses::batch_mean(&mut g, &c);
            let l = g.add(la, lc);
            g.backward(l).into_params()
        };
        opt_g.step(&mut reference.params, &grads, tc.grad_clip).unwrap();
        let grads = {
            let mut g = Graph::new(&reference.params, &[Group::Student]);
            let mut parts = Vec::new();
            for w in &b {
                let h = reference.encode_graph(&mut g, w).unwrap();
                let o = reference.nar_graph(&mut g, DecoderKind::S, w, h).unwrap();
                parts.push(crate::losses::nll_graph(&mut g, o.mu, o.sigma, w.truth().unwrap()));
            }
            let l = crate::losses::batch_mean(&mut g, &parts);
            g.backward(l).into_params()
        };
        opt_s.step(&mut reference.params, &grads, tc.grad_clip).unwrap();
        let non_disc = [Group::Encoder, Group::P1, Group::P2, Group::Student];
        assert_eq!(t.model.params.snapshot(&non_disc), reference.params.snapshot(&non_disc));
        // the discriminators still trained
        assert_ne!(
            t.model.params.snapshot(&[Group::Discriminator]),
            reference.params.snapshot(&[Group::Discriminator])
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = ModelConfig {
            dropout: 0.1,
            ..deep_config()
        };
        let b = batch(&cfg, 5, 4);
        let go = || {
            let mut t = trainer(cfg.clone(), 0.1, 0.5);
            (0..3).map(|_| t.train_step(&b).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn non_finite_and_divergent_losses_name_the_component() {
        let cfg = deep_config();
        let b = batch(&cfg, 2, 5);
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        let id = t.model.params.find("p1.head.bias").unwrap();
        t.model.params.get_mut(id).as_mut_slice()[0] = f64::NAN;
        let e = t.train_step(&b).unwrap_err();
        assert!(e.is_numeric());
        assert!(e.to_string().contains("P1"), "{e}");

        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        let id = t.model.params.find("p2.head.bias").unwrap();
        t.model.params.get_mut(id).as_mut_slice()[0] = 1e5;
        match t.train_step(&b).unwrap_err() {
            Error::Divergence { component, value } => {
                assert!(component.starts_with("P2"), "{component}");
                assert!(value > DIVERGENCE_GUARD);
            }
            other => panic!("expected divergence, got {other}"),
        }
        // nothing was applied
        assert_eq!(t.optimizer_steps(), (0, 0, 0));
    }

    #[test]
    fn contract_errors_for_bad_batches() {
        let cfg = deep_config();
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        assert!(matches!(t.train_step(&[]), Err(Error::Contract(_))));
        let mut w = random_window(&cfg, 1);
        w.y_future = None;
        assert!(matches!(t.train_step(&[w]), Err(Error::Mode(_))));
    }

    fn fit_run(e_max: usize, patience: usize) -> Trainer {
        let cfg = deep_config();
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        t.config.e_max = e_max;
        t.config.patience = patience;
        t.fit(&batch(&cfg, 6, 10), &batch(&cfg, 2, 50), |_| Ok(())).unwrap();
        t
    }

    #[test]
    fn early_stopping_bounds() {
        for patience in [0, 1] {
            let t = fit_run(6, patience);
            let n = t.history.len();
            assert!(n <= 6);
            assert!(n <= t.best_epoch + patience + 1);
            if n < 6 {
                assert_eq!(n, t.best_epoch + patience + 1);
            }
            let best = t.history.iter().map(|r| r.val_s_rho50).fold(f64::INFINITY, f64::min);
            assert_eq!(t.best_val, Some(best));
            assert_eq!(t.history[t.best_epoch - 1].val_s_rho50, best);
        }
    }

    #[test]
    fn resuming_reproduces_the_history() {
        let full = fit_run(4, 10);
        let cfg = deep_config();
        let (train, val) = (batch(&cfg, 6, 10), batch(&cfg, 2, 50));
        let mut first = trainer(cfg, 0.1, 0.5);
        first.config.e_max = 2;
        first.fit(&train, &val, |_| Ok(())).unwrap();
        let state: TrainState = serde_json::from_str(&serde_json::to_string(&first.state()).unwrap()).unwrap();
        let mut second = Trainer::resume(state).unwrap();
        second.workers = 1;
        second.config.e_max = 4;
        second.finished = false;
        second.fit(&train, &val, |_| Ok(())).unwrap();
        assert_eq!(second.history, full.history);
        assert_eq!(second.model.params, full.model.params);
    }

    #[test]
    fn gradients_only_see_training_windows() {
        let cfg = deep_config();
        let train = batch(&cfg, 5, 10);
        let val: Vec<ForecastWindow> = batch(&cfg, 3, 60)
            .into_iter()
            .map(|mut w| {
                w.t0 += 1000;
                w
            })
            .collect();
        let mut t = trainer(cfg, 0.1, 0.5);
        t.config.e_max = 2;
        t.gradient_probe = Some(Vec::new());
        t.fit(&train, &val, |_| Ok(())).unwrap();
        let seen = t.gradient_probe.unwrap();
        assert_eq!(seen.len(), 2 * train.len());
        assert!(seen.iter().all(|&(_, t0)| t0 < 1000));
    }

    #[test]
    fn prediction_contracts() {
        let cfg = deep_config();
        let mut t = trainer(cfg.clone(), 0.1, 0.5);
        t.train_step(&batch(&cfg, 3, 7)).unwrap();
        let ckpt = t.best_checkpoint();
        let ws = batch(&cfg, 3, 70);
        let a = predict(&ckpt, &ws, DecoderKind::S, 2).unwrap();
        assert_eq!(a, predict(&ckpt, &ws, DecoderKind::S, 1).unwrap());
        let m = ckpt.restore().unwrap();
        let (_, touched) = m.forecast_traced(&ws[0], DecoderKind::S).unwrap();
        assert_eq!(touched.into_iter().collect::<Vec<_>>(), vec![Group::Encoder, Group::Student]);
        m.reset_call_counts();
        m.forecast(&ws[0], DecoderKind::P1).unwrap();
        assert_eq!(m.decoder_calls(DecoderKind::P1), cfg.t_h);
        m.forecast(&ws[0], DecoderKind::P2).unwrap();
        assert_eq!(m.decoder_calls(DecoderKind::P2), 1);
        let before = m.params.clone();
        predict(&ckpt, &ws, DecoderKind::P1, 1).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn single_layer_student_trains_without_hints() {
        let cfg = tiny_config();
        assert_eq!(cfg.n_s, 1);
        let mut t = trainer(cfg.clone(), 0.1, 0.0);
        assert!(t.layer_map().is_none());
        let r = t.train_step(&batch(&cfg, 2, 8)).unwrap();
        // without a map the discriminators see no student terms
        assert_eq!(r.discriminators.len(), 2 * cfg.n_d);
        let tc = TrainConfig {
            alpha_h: 0.5,
            ..TrainConfig::default()
        };
        assert!(matches!(Trainer::from_scratch(cfg, tc, Vec::new()), Err(Error::Config(_))));
    }
}
