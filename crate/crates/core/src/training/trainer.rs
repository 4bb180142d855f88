use std::collections::VecDeque;
use std::fs;
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;

use super::config::{BaselineKind, ExperimentConfig};
use super::data::{model_shape, ExampleSource};
use super::metrics::{MetricsWriter, TrainingMetrics, METRICS_SCHEMA};
use super::optim::{adam_step, adam_update, AdamConfig};
use crate::error::{Error, Result};
use crate::estimators::{estimate_example, gradient_variance_probe, DiagnosticRecord, EstimatorSettings};
use crate::glimpse::{Environment, ToyWorld};
use crate::model::checkpoint::{AdamState, Checkpoint, TrainerState};
use crate::model::{argmax, classify, AttentionModel, GlimpseModel, Sampler, ThetaCoefficients, Trajectory};
use crate::rng::{rollout_index, substream};

/// Updates per abort window, and the most degenerate updates it may hold.
const DEGENERATE_WINDOW: usize = 1000;
const DEGENERATE_LIMIT: usize = 100;

// θ and η live in the model independently of the environment type.
type Params = ToyWorld;

fn theta(model: &AttentionModel) -> &crate::diffnet::ParameterVector {
    GlimpseModel::<Params>::theta(model)
}

fn eta(model: &AttentionModel) -> &crate::diffnet::ParameterVector {
    GlimpseModel::<Params>::eta(model)
}

/// What one batch contributed, before any parameter change.
#[derive(Debug, Clone, Default)]
struct BatchStats {
    used: usize,
    skipped: usize,
    train_error: f64,
    f_hat: f64,
    lm_hat: f64,
    ess: f64,
    scale_entropy: f64,
}

/// Running sums since the last flush.
#[derive(Debug, Clone, Default, PartialEq)]
struct Accumulator {
    updates: f64,
    train_error: f64,
    f_hat: f64,
    lm_hat: f64,
    ess: f64,
    scale_entropy: f64,
}

impl Accumulator {
    fn add(&mut self, s: &BatchStats) {
        if s.used == 0 {
            return;
        }
        self.updates += 1.0;
        self.train_error += s.train_error;
        self.f_hat += s.f_hat;
        self.lm_hat += s.lm_hat;
        self.ess += s.ess;
        self.scale_entropy += s.scale_entropy;
    }

    fn to_vec(&self) -> Vec<f64> {
        vec![
            self.updates,
            self.train_error,
            self.f_hat,
            self.lm_hat,
            self.ess,
            self.scale_entropy,
        ]
    }

    fn from_slice(v: &[f64]) -> Result<Self> {
        match *v {
            [updates, train_error, f_hat, lm_hat, ess, scale_entropy] => Ok(Self {
                updates,
                train_error,
                f_hat,
                lm_hat,
                ess,
                scale_entropy,
            }),
            _ => Err(Error::config(format!(
                "checkpoint accumulators have {} entries, expected 6",
                v.len()
            ))),
        }
    }
}

struct ExampleOutcome {
    theta: Vec<f64>,
    eta: Option<Vec<f64>>,
    diagnostics: DiagnosticRecord,
    /// Mean `log p(y|a)` over the estimator's samples.
    mean_log_likelihood: f64,
    context: Vec<f64>,
    /// An on-policy prior rollout for training error, entropy and exploration.
    prior: Trajectory,
    index: usize,
}

struct Batch {
    outcomes: Vec<ExampleOutcome>,
    stats: BatchStats,
}

/// Wake-sleep trainer for an [`AttentionModel`] over an example source.
pub struct Trainer<'s, S: ExampleSource> {
    config: ExperimentConfig,
    source: &'s S,
    model: AttentionModel,
    update: u64,
    baseline: f64,
    /// Linear baseline `w·context + c`, stored as `[w; c]`.
    baseline_net: Vec<f64>,
    adam_theta: AdamState,
    adam_eta: AdamState,
    adam_baseline: AdamState,
    degenerate: VecDeque<bool>,
    acc: Accumulator,
    pool: rayon::ThreadPool,
    started: Instant,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("cannot start worker threads: {e}")))
}

impl<'s, S: ExampleSource> Trainer<'s, S> {
    /// A fresh run: parameters initialised from the config seed.
    pub fn new(config: ExperimentConfig, source: &'s S) -> Result<Self> {
        config.validate()?;
        if source.is_empty() {
            return Err(Error::config("training source is empty"));
        }
        let model = AttentionModel::new(model_shape(&config, source), config.seed)?;
        let mut t = Self::with_model(config, source, model)?;
        if t.config.train.baseline == BaselineKind::Network {
            let mut rng = substream(t.config.seed, "init", 2);
            let scale = 1.0 / (t.baseline_net.len() as f64).sqrt();
            let n = t.baseline_net.len();
            t.baseline_net[..n - 1]
                .iter_mut()
                .for_each(|w| *w = scale * (2.0 * rng.random::<f64>() - 1.0));
        }
        Ok(t)
    }

    /// Starts training from given parameters (update 0).
    pub fn with_model(config: ExperimentConfig, source: &'s S, model: AttentionModel) -> Result<Self> {
        config.validate()?;
        Checkpoint::from_model(&model).check_shape(&model_shape(&config, source))?;
        let baseline_len = match config.train.baseline {
            BaselineKind::MovingAverage => 0,
            BaselineKind::Network => source.context_dim() + 1,
        };
        Ok(Self {
            pool: thread_pool(config.threads)?,
            adam_theta: AdamState::new(theta(&model).len()),
            adam_eta: AdamState::new(eta(&model).len()),
            adam_baseline: AdamState::new(baseline_len),
            baseline_net: vec![0.0; baseline_len],
            config,
            source,
            model,
            update: 0,
            baseline: 0.0,
            degenerate: VecDeque::new(),
            acc: Accumulator::default(),
            started: Instant::now(),
        })
    }

    /// Continues a run from a training checkpoint. The run's own config is
    /// used, with `overrides` applied on top.
    pub fn resume(checkpoint: Checkpoint, source: &'s S, overrides: &[String]) -> Result<Self> {
        let state = checkpoint
            .trainer
            .clone()
            .ok_or_else(|| Error::config("checkpoint carries no trainer state"))?;
        let config = ExperimentConfig::from_toml_str(&state.config, overrides)?;
        if config.seed != state.seed {
            return Err(Error::config("the seed of a resumed run cannot change"));
        }
        checkpoint.check_shape(&model_shape(&config, source))?;
        let mut t = Self::with_model(config, source, checkpoint.model()?)?;
        if state.baseline_net.len() != t.baseline_net.len() {
            return Err(Error::config("checkpoint baseline does not match train.baseline"));
        }
        t.update = state.update;
        t.baseline = state.baseline;
        t.baseline_net = state.baseline_net;
        t.adam_theta = state.adam_theta;
        t.adam_eta = state.adam_eta;
        t.adam_baseline = state.adam_baseline;
        t.degenerate = state.degenerate_window.into();
        t.acc = Accumulator::from_slice(&state.accumulators)?;
        Ok(t)
    }

    pub fn model(&self) -> &AttentionModel {
        &self.model
    }

    pub fn into_model(self) -> AttentionModel {
        self.model
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Last completed update.
    pub fn update(&self) -> u64 {
        self.update
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.trainer = Some(TrainerState {
            seed: self.config.seed,
            update: self.update,
            baseline: self.baseline,
            baseline_net: self.baseline_net.clone(),
            adam_theta: self.adam_theta.clone(),
            adam_eta: self.adam_eta.clone(),
            adam_baseline: self.adam_baseline.clone(),
            degenerate_window: self.degenerate.iter().copied().collect(),
            accumulators: self.acc.to_vec(),
            config: self.config.to_toml(),
        });
        ck
    }

    fn adam(&self) -> AdamConfig {
        let t = &self.config.train;
        AdamConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }

    fn batch_indices(&self, update: u64) -> Vec<usize> {
        let mut rng = substream(self.config.seed, "batch", update);
        (0..self.config.train.batch_size)
            .map(|_| rng.random_range(0..self.source.len()))
            .collect()
    }

    fn baseline_for(&self, context: &[f64]) -> f64 {
        match self.config.train.baseline {
            BaselineKind::MovingAverage => self.baseline,
            BaselineKind::Network => {
                let (w, c) = self.baseline_net.split_at(context.len());
                w.iter().zip(context).map(|(w, x)| w * x).sum::<f64>() + c[0]
            }
        }
    }

    fn settings(&self, update: u64) -> EstimatorSettings {
        let tag = self.config.train.estimator;
        EstimatorSettings {
            temperature: self.config.temperature_at(update),
            with_wake_q: tag.uses_inference(),
            ..EstimatorSettings::new(tag, self.config.train.samples)
        }
    }

    /// Estimator output for one example with the resample-then-skip policy:
    /// degenerate or non-finite estimates are redrawn once, then dropped.
    fn example(&self, update: u64, slot: usize, index: usize, stream: &str) -> Result<Option<ExampleOutcome>> {
        let env = self.source.env(index)?;
        let label = self.source.label(index);
        let mut rng = substream(self.config.seed, stream, rollout_index(update, slot as u64));
        let mut settings = self.settings(update);
        settings.baseline = self.baseline_for(env.context());
        let mut estimate = None;
        for attempt in 0..2 {
            match estimate_example(&self.model, &env, label, &settings, &mut rng) {
                Ok(e) => {
                    estimate = Some(e);
                    break;
                }
                Err(e @ (Error::DegenerateWeights(_) | Error::Numerical(_))) => {
                    warn!("update {update}, example {index}: {e} (attempt {})", attempt + 1);
                }
                Err(e) => return Err(e),
            }
        }
        let Some(estimate) = estimate else {
            return Ok(None);
        };
        let prior = self.model.rollout(&env, label, Sampler::Prior, 1.0, &mut rng)?;
        let mean_log_likelihood =
            estimate.trajectories.iter().map(|t| t.log_likelihood).sum::<f64>() / estimate.trajectories.len() as f64;
        Ok(Some(ExampleOutcome {
            theta: estimate.theta.map(|g| g.grad).unwrap_or_default(),
            eta: estimate.eta.map(|g| g.grad),
            diagnostics: estimate.diagnostics,
            mean_log_likelihood,
            context: env.context().to_vec(),
            prior,
            index,
        }))
    }

    fn run_batch(&self, update: u64) -> Result<Batch> {
        let indices = self.batch_indices(update);
        let results: Vec<Result<Option<ExampleOutcome>>> = self.pool.install(|| {
            indices
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| self.example(update, slot, i, "rollout"))
                .collect()
        });
        let mut outcomes = Vec::with_capacity(results.len());
        let mut stats = BatchStats::default();
        for r in results {
            match r? {
                Some(o) => outcomes.push(o),
                None => stats.skipped += 1,
            }
        }
        let n = outcomes.len() as f64;
        stats.used = outcomes.len();
        for o in &outcomes {
            let label = self.source.label(o.index);
            stats.train_error += f64::from(u8::from(argmax(&o.prior.class_log_probs) != label)) / n;
            stats.f_hat += o.diagnostics.bounds.f_hat / n;
            stats.lm_hat += o.diagnostics.bounds.lm_hat / n;
            stats.ess += o.diagnostics.ess / n;
            let steps = o.prior.scale_entropies.len().max(1) as f64;
            stats.scale_entropy += o.prior.scale_entropies.iter().sum::<f64>() / steps / n;
        }
        Ok(Batch { outcomes, stats })
    }

    /// Gradient of the exploration bonuses, summed over the batch (not yet
    /// divided by the batch size).
    fn exploration_gradient(&self, outcomes: &[ExampleOutcome]) -> Result<Option<Vec<f64>>> {
        let x = &self.config.exploration;
        if x.entropy_weight == 0.0 && x.coverage_weight == 0.0 {
            return Ok(None);
        }
        // Coverage bonus −‖μ̄ − 0‖², μ̄ the batch-mean location-head mean.
        let mut sum = [0.0; 2];
        let mut count = 0usize;
        for m in outcomes.iter().flat_map(|o| o.prior.location_means.iter().flatten()) {
            sum[0] += m[0];
            sum[1] += m[1];
            count += 1;
        }
        let location_mean = (count > 0 && x.coverage_weight > 0.0).then(|| {
            // ∂/∂μ_{b,n} of −‖μ̄‖² is −2μ̄/(B·N); one example's share is that times B.
            let steps = count as f64 / outcomes.len() as f64;
            let scale = -2.0 * x.coverage_weight / (count as f64 * steps);
            [scale * sum[0], scale * sum[1]]
        });
        let coefs = ThetaCoefficients {
            entropy: x.entropy_weight,
            location_mean,
            ..ThetaCoefficients::default()
        };
        let grads: Vec<Result<Vec<f64>>> = self.pool.install(|| {
            outcomes
                .par_iter()
                .map(|o| {
                    let env = self.source.env(o.index)?;
                    let mut g = vec![0.0; theta(&self.model).len()];
                    self.model.backward_theta(&env, &o.prior, &coefs, &mut g)?;
                    Ok(g)
                })
                .collect()
        });
        let mut total = vec![0.0; theta(&self.model).len()];
        for g in grads {
            total.iter_mut().zip(g?).for_each(|(t, v)| *t += v);
        }
        Ok(Some(total))
    }

    fn apply(&mut self, batch: &Batch) -> Result<()> {
        let n = batch.outcomes.len();
        if n == 0 {
            return Ok(());
        }
        let scale = 1.0 / n as f64;
        let dim = theta(&self.model).len();
        let mut direction = vec![0.0; dim];
        for o in &batch.outcomes {
            direction.iter_mut().zip(&o.theta).for_each(|(d, g)| *d += g);
        }
        if let Some(extra) = self.exploration_gradient(&batch.outcomes)? {
            direction.iter_mut().zip(extra).for_each(|(d, g)| *d += g);
        }
        let adam = self.adam();
        {
            // θ ascends the estimate; the optimizer descends.
            let p = GlimpseModel::<Params>::theta_mut(&mut self.model);
            p.grads_mut()
                .iter_mut()
                .zip(&direction)
                .for_each(|(g, d)| *g = -d * scale);
            adam_step(p, &mut self.adam_theta, &adam);
        }
        if self.config.train.estimator.uses_inference() {
            let mut kl_grad = vec![0.0; eta(&self.model).len()];
            for g in batch.outcomes.iter().filter_map(|o| o.eta.as_ref()) {
                kl_grad.iter_mut().zip(g).for_each(|(k, v)| *k += v);
            }
            let p = GlimpseModel::<Params>::eta_mut(&mut self.model);
            p.grads_mut().iter_mut().zip(&kl_grad).for_each(|(g, k)| *g = k * scale);
            adam_step(p, &mut self.adam_eta, &adam);
        }
        if self.config.train.estimator == crate::estimators::EstimatorTag::VarCv {
            self.update_baseline(&batch.outcomes);
        }
        Ok(())
    }

    fn update_baseline(&mut self, outcomes: &[ExampleOutcome]) {
        let n = outcomes.len() as f64;
        match self.config.train.baseline {
            BaselineKind::MovingAverage => {
                let target = outcomes.iter().map(|o| o.mean_log_likelihood).sum::<f64>() / n;
                let d = self.config.train.baseline_decay;
                self.baseline = d * self.baseline + (1.0 - d) * target;
            }
            BaselineKind::Network => {
                // least squares on the mean log-likelihood of each example
                let mut grad = vec![0.0; self.baseline_net.len()];
                for o in outcomes {
                    let residual = (self.baseline_for(&o.context) - o.mean_log_likelihood) / n;
                    let (w, c) = grad.split_at_mut(o.context.len());
                    w.iter_mut().zip(&o.context).for_each(|(g, x)| *g += residual * x);
                    c[0] += residual;
                }
                let cfg = AdamConfig {
                    lr: self.config.train.baseline_lr,
                    ..self.adam()
                };
                adam_update(&mut self.baseline_net, &grad, &mut self.adam_baseline, &cfg);
            }
        }
    }

    fn track_degenerate(&mut self, update: u64, stats: &BatchStats) -> Result<()> {
        self.degenerate.push_back(stats.skipped > 0);
        if self.degenerate.len() > DEGENERATE_WINDOW {
            self.degenerate.pop_front();
        }
        let bad = self.degenerate.iter().filter(|d| **d).count();
        if bad > DEGENERATE_LIMIT {
            return Err(Error::TrainingAborted(format!(
                "{bad} of the last {} updates (through update {update}) had degenerate importance weights; \
                 try a lower exploration temperature or learning rate",
                self.degenerate.len()
            )));
        }
        Ok(())
    }

    /// One wake-sleep update with index `update` (1-based). Returns the
    /// batch statistics measured before the parameter change.
    ///
    /// Fails with `TrainingAborted` once too many recent updates were
    /// degenerate; the update itself has been applied by then.
    pub fn train_step(&mut self, update: u64) -> Result<TrainingMetrics> {
        let batch = self.run_batch(update)?;
        self.apply(&batch)?;
        self.acc.add(&batch.stats);
        self.update = update;
        self.track_degenerate(update, &batch.stats)?;
        Ok(self.row(update, &batch.stats, None))
    }

    fn row(&self, update: u64, s: &BatchStats, grad_variance: Option<f64>) -> TrainingMetrics {
        TrainingMetrics {
            schema: METRICS_SCHEMA,
            update,
            train_error: s.train_error,
            f_hat: s.f_hat,
            lm_hat: s.lm_hat,
            ess: s.ess,
            grad_variance,
            scale_entropy: s.scale_entropy,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Variance of the batch-mean θ estimate at the current parameters, on
    /// the batch of `update`, from `probe_resamples` independent redraws.
    pub fn probe_variance(&self, update: u64) -> Result<Option<f64>> {
        let resamples = self.config.metrics.probe_resamples;
        if resamples < 2 {
            return Ok(None);
        }
        let indices = self.batch_indices(update);
        let b = indices.len();
        let probe = gradient_variance_probe(resamples, |r| {
            let results: Vec<Result<Option<ExampleOutcome>>> = self.pool.install(|| {
                indices
                    .par_iter()
                    .enumerate()
                    .map(|(slot, &i)| self.example(update, r as usize * b + slot, i, "probe"))
                    .collect()
            });
            let mut mean = vec![0.0; theta(&self.model).len()];
            let mut ess = 0.0;
            let mut used = 0.0;
            for o in results.into_iter().filter_map(|r| r.transpose()) {
                let o = o?;
                mean.iter_mut().zip(&o.theta).for_each(|(m, g)| *m += g);
                ess += o.diagnostics.ess;
                used += 1.0;
            }
            if used == 0.0 {
                return Err(Error::DegenerateWeights(b));
            }
            mean.iter_mut().for_each(|m| *m /= used);
            Ok((mean, ess / used))
        });
        match probe {
            Ok(p) => Ok(Some(p.variance)),
            Err(Error::DegenerateWeights(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn flush(&mut self, writer: &mut MetricsWriter, update: u64) -> Result<()> {
        let a = std::mem::take(&mut self.acc);
        let n = a.updates.max(1.0);
        let stats = BatchStats {
            used: 1,
            skipped: 0,
            train_error: a.train_error / n,
            f_hat: a.f_hat / n,
            lm_hat: a.lm_hat / n,
            ess: a.ess / n,
            scale_entropy: a.scale_entropy / n,
        };
        let gv = self.probe_variance(update)?;
        let row = self.row(update, &stats, gv);
        info!(
            "update {update}: train error {:.4}, F̂ {:.4}, L̂_M {:.4}, ESS {:.3}",
            row.train_error, row.f_hat, row.lm_hat, row.ess
        );
        writer.write(&row)
    }

    fn save(&self) -> Result<()> {
        self.checkpoint().save(&self.config.checkpoint_path())
    }

    /// Trains to the update budget, or stops after update `stop_at` (which
    /// then behaves like an interruption: a checkpoint is written and the
    /// partial flush window is kept for [`Trainer::resume`]).
    ///
    /// A fresh run first writes a row for update 0, measured without
    /// changing the parameters.
    pub fn run(&mut self, stop_at: Option<u64>) -> Result<Vec<TrainingMetrics>> {
        fs::create_dir_all(&self.config.output_dir)?;
        let path = self.config.metrics_path();
        let budget = self.config.train.updates;
        let end = stop_at.map_or(budget, |s| s.min(budget));
        let mut writer = if self.update == 0 {
            let mut w = MetricsWriter::create(&path)?;
            let batch = self.run_batch(0)?;
            self.acc.add(&batch.stats);
            self.flush(&mut w, 0)?;
            w
        } else {
            MetricsWriter::resume(&path, self.update)?
        };
        let flush_every = self.config.metrics.flush_every;
        let checkpoint_every = self.config.metrics.checkpoint_every;
        for u in self.update + 1..=end {
            match self.train_step(u) {
                Ok(_) => {}
                Err(e @ Error::TrainingAborted(_)) => {
                    self.save()?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
            if u % flush_every == 0 || u == budget {
                self.flush(&mut writer, u)?;
            }
            if u % checkpoint_every == 0 {
                self.save()?;
            }
        }
        self.save()?;
        drop(writer);
        super::metrics::read_metrics(&path)
    }
}

/// Classification error rate: the fraction of (at most `max_examples`, 0 =
/// all) examples whose `classify` argmax over `rollouts` prior rollouts
/// differs from the label. Example `i` uses substream `(seed, "eval", i)`.
pub fn evaluate<S: ExampleSource>(
    model: &AttentionModel,
    source: &S,
    rollouts: usize,
    seed: u64,
    max_examples: usize,
) -> Result<f64> {
    let n = if max_examples == 0 {
        source.len()
    } else {
        max_examples.min(source.len())
    };
    if n == 0 {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    let wrong: Vec<Result<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let env = source.env(i)?;
            let mut rng = substream(seed, "eval", i as u64);
            let (class, _) = classify(model, &env, rollouts, &mut rng)?;
            Ok(class != source.label(i))
        })
        .collect();
    let mut errors = 0usize;
    for w in wrong {
        errors += usize::from(w?);
    }
    Ok(errors as f64 / n as f64)
}
