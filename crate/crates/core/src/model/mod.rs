//! Glimpse policies: the recurrent prediction network with its inference
//! network, an exact tabular policy for toy worlds, and trajectory rollouts.

mod attention;
pub mod checkpoint;
mod tabular;

use std::any::Any;
use std::sync::Arc;

use rand::Rng;

pub use attention::{AttentionModel, InferenceNetwork, ModelShape, PredictionNetwork};
pub use tabular::TabularModel;

use crate::diffnet::{DistributionParams, ParameterVector};
use crate::error::{Error, Result};
use crate::glimpse::{Action, Environment};

/// Which distribution actions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// The prediction network's own policy `p(a | I, θ)`.
    Prior,
    /// The label-aware inference network `q(a | y, I, η)`.
    Inference,
}

/// One glimpse sequence with every log term the estimators need.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub label: usize,
    pub actions: Vec<Action>,
    pub observations: Vec<Vec<f64>>,
    /// `log p(a_n | a_{1:n-1}, I, θ)` per step.
    pub prior_step_log_probs: Vec<f64>,
    /// `log q(a_n | y, a_{1:n-1}, I, η)` per step, at temperature 1.
    pub inference_step_log_probs: Vec<f64>,
    /// Per-step log-probability under the distribution actually sampled from
    /// (prior or inference network, after temperature scaling).
    pub proposal_step_log_probs: Vec<f64>,
    pub log_prior: f64,
    pub log_inference: f64,
    /// Log-density of the importance-sampling proposal; equals `log_prior`
    /// for untempered prior rollouts.
    pub log_proposal: f64,
    /// `log p(y | a, I, θ)` for `label`.
    pub log_likelihood: f64,
    pub class_log_probs: Vec<f64>,
    /// Entropy of the prior's scale distribution at each step.
    pub scale_entropies: Vec<f64>,
    /// Entropy of the prior's whole action distribution at each step — the
    /// quantity the `entropy` coefficient of a θ backward pass differentiates.
    pub policy_entropies: Vec<f64>,
    /// Mean of the prior's location head at each step (continuous locations).
    pub location_means: Vec<Option<[f64; 2]>>,
    pub sampler: Sampler,
    pub temperature: f64,
    pub(crate) cache: Option<Arc<dyn Any + Send + Sync>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Log importance weight `log p(a) + log p(y|a) − log proposal(a)`.
    pub fn log_weight(&self) -> f64 {
        self.log_prior + self.log_likelihood - self.log_proposal
    }

    pub(crate) fn finish(mut self) -> Result<Self> {
        self.log_prior = self.prior_step_log_probs.iter().sum();
        self.log_inference = self.inference_step_log_probs.iter().sum();
        self.log_proposal = self.proposal_step_log_probs.iter().sum();
        let terms = [
            self.log_prior,
            self.log_inference,
            self.log_proposal,
            self.log_likelihood,
        ];
        // −∞ is a legitimate zero probability; NaN and +∞ are not.
        if terms.iter().any(|t| t.is_nan() || *t == f64::INFINITY) {
            return Err(Error::Numerical(format!("non-finite trajectory log terms {terms:?}")));
        }
        Ok(self)
    }
}

/// Output-gradient weights for one θ backward pass over a trajectory: the
/// pass accumulates the gradient of
/// `likelihood·log p(y|a) + prior·log p(a) + entropy·Σ_n H[scale/location
/// heads] + location_mean·Σ_n μ_n`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThetaCoefficients {
    pub likelihood: f64,
    pub prior: f64,
    pub entropy: f64,
    pub location_mean: Option<[f64; 2]>,
}

impl ThetaCoefficients {
    pub fn new(likelihood: f64, prior: f64) -> Self {
        Self {
            likelihood,
            prior,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.likelihood == 0.0
            && self.prior == 0.0
            && self.entropy == 0.0
            && self.location_mean.is_none_or(|m| m == [0.0, 0.0])
    }
}

/// A stochastic glimpse policy with a classifier and a proposal network.
pub trait GlimpseModel<E: Environment + ?Sized>: Sync {
    fn glimpses(&self) -> usize;
    fn classes(&self) -> usize;
    /// Prediction-side parameters θ.
    fn theta(&self) -> &ParameterVector;
    fn theta_mut(&mut self) -> &mut ParameterVector;
    /// Inference-side parameters η.
    fn eta(&self) -> &ParameterVector;
    fn eta_mut(&mut self) -> &mut ParameterVector;

    /// Scores a fixed action sequence, with `sampler`/`temperature` naming the
    /// proposal used for `log_proposal`.
    fn evaluate(
        &self,
        env: &E,
        label: usize,
        actions: &[Action],
        sampler: Sampler,
        temperature: f64,
    ) -> Result<Trajectory>;

    fn rollout<R: Rng + ?Sized>(
        &self,
        env: &E,
        label: usize,
        sampler: Sampler,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Trajectory>;

    /// Accumulates θ-gradients weighted by `coefs` into `grads`.
    fn backward_theta(&self, env: &E, traj: &Trajectory, coefs: &ThetaCoefficients, grads: &mut [f64]) -> Result<()>;

    /// Accumulates `coef · ∂ log q(a | y) / ∂η` into `grads`.
    fn backward_eta(&self, env: &E, traj: &Trajectory, coef: f64, grads: &mut [f64]) -> Result<()>;

    fn rollout_prior<R: Rng + ?Sized>(&self, env: &E, label: usize, rng: &mut R) -> Result<Trajectory> {
        self.rollout(env, label, Sampler::Prior, 1.0, rng)
    }

    fn rollout_proposal<R: Rng + ?Sized>(&self, env: &E, label: usize, rng: &mut R) -> Result<Trajectory> {
        self.rollout(env, label, Sampler::Inference, 1.0, rng)
    }
}

/// Averages `p(y | a, I, θ)` over `rollouts` prior rollouts; returns the
/// argmax class and the averaged distribution.
pub fn classify<E, M, R>(model: &M, env: &E, rollouts: usize, rng: &mut R) -> Result<(usize, Vec<f64>)>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
    R: Rng + ?Sized,
{
    if rollouts == 0 {
        return Err(Error::domain("classification needs at least one rollout"));
    }
    let mut avg = vec![0.0; model.classes()];
    for _ in 0..rollouts {
        let t = model.rollout_prior(env, 0, rng)?;
        for (a, lp) in avg.iter_mut().zip(&t.class_log_probs) {
            *a += lp.exp();
        }
    }
    avg.iter_mut().for_each(|a| *a /= rollouts as f64);
    let best = argmax(&avg);
    Ok((best, avg))
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled copy of a head distribution.
pub fn temperature_scaled(dist: &DistributionParams, tau: f64) -> Result<DistributionParams> {
    dist.temperature_scaled(tau)
}
