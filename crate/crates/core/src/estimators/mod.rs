//! Gradient estimators over sampled glimpse trajectories, importance weights
//! and their diagnostics.
//!
//! Sign conventions: θ estimates are gradients of the objective being
//! maximised (the variational bound or the marginal log-likelihood); wake-q
//! estimates are gradients of `KL(p(a|y) ‖ q(a|y))`, which is minimised.

mod probe;

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use probe::{gradient_variance_probe, VarianceProbe};

use crate::diffnet::{log_sum_exp, softmax};
use crate::error::{Error, Result};
use crate::glimpse::Environment;
use crate::model::{GlimpseModel, Sampler, ThetaCoefficients, Trajectory};

/// Returned by [`bound_estimates`] in place of `-inf`.
pub const LOG_ZERO_SENTINEL: f64 = -1e30;

/// Importance weights of `M` trajectories, held in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeightSet {
    log_raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl ImportanceWeightSet {
    /// Normalises log-weights with log-sum-exp. Fails with
    /// [`Error::DegenerateWeights`] when every weight is zero or any is NaN
    /// or `+inf`.
    pub fn from_log_weights(log_raw: Vec<f64>) -> Result<Self> {
        if log_raw.is_empty() {
            return Err(Error::domain("at least one sample is required"));
        }
        if log_raw.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::DegenerateWeights(log_raw.len()));
        }
        let lse = log_sum_exp(&log_raw);
        if lse == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights(log_raw.len()));
        }
        let normalized = log_raw.iter().map(|w| (w - lse).exp()).collect();
        Ok(Self { log_raw, normalized })
    }

    pub fn len(&self) -> usize {
        self.log_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_raw.is_empty()
    }

    pub fn log_raw(&self) -> &[f64] {
        &self.log_raw
    }

    /// `w⁽ᵐ⁾`; may underflow where `log_raw` does not.
    pub fn raw(&self) -> Vec<f64> {
        self.log_raw.iter().map(|w| w.exp()).collect()
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }
}

/// `log w = log p(a) + log p(y|a) − log proposal(a)` for each trajectory.
pub fn importance_weights(trajs: &[Trajectory]) -> Result<ImportanceWeightSet> {
    ImportanceWeightSet::from_log_weights(trajs.iter().map(Trajectory::log_weight).collect())
}

/// Effective sample size `1 / Σ ŵ²`.
pub fn ess(weights: &ImportanceWeightSet) -> f64 {
    1.0 / weights.normalized.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    /// Mean of `log w⁽ᵐ⁾`.
    pub f_hat: f64,
    /// `log` of the mean of `w⁽ᵐ⁾`.
    pub lm_hat: f64,
}

/// Both bound estimates in nats. A zero weight drives `f_hat` to
/// [`LOG_ZERO_SENTINEL`] with a warning.
pub fn bound_estimates(weights: &ImportanceWeightSet) -> BoundEstimates {
    let m = weights.len() as f64;
    let mut f_hat = weights.log_raw.iter().sum::<f64>() / m;
    if f_hat == f64::NEG_INFINITY {
        warn!("zero importance weight: F-hat replaced by sentinel {LOG_ZERO_SENTINEL}");
        f_hat = LOG_ZERO_SENTINEL;
    }
    let lm_hat = log_sum_exp(&weights.log_raw) - m.ln();
    BoundEstimates { f_hat, lm_hat }
}

/// Per-example diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub ess: f64,
    pub mean_log_weight: f64,
    pub bounds: BoundEstimates,
    pub gradient_variance: Option<f64>,
}

impl DiagnosticRecord {
    pub fn from_weights(weights: &ImportanceWeightSet) -> Self {
        let bounds = bound_estimates(weights);
        Self {
            ess: ess(weights),
            mean_log_weight: bounds.f_hat,
            bounds,
            gradient_variance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "VAR")]
    Var,
    #[serde(rename = "VAR+c")]
    VarCv,
    #[serde(rename = "WSRAM")]
    Wsram,
    #[serde(rename = "WSRAM+c")]
    WsramCv,
    #[serde(rename = "WSRAM+q")]
    WsramQ,
    #[serde(rename = "WSRAM+q+c")]
    WsramQCv,
    #[serde(rename = "WAKE-Q")]
    WakeQ,
    #[serde(rename = "WAKE-Q+c")]
    WakeQCv,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 8] = [
        EstimatorTag::Var,
        EstimatorTag::VarCv,
        EstimatorTag::Wsram,
        EstimatorTag::WsramCv,
        EstimatorTag::WsramQ,
        EstimatorTag::WsramQCv,
        EstimatorTag::WakeQ,
        EstimatorTag::WakeQCv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Var => "VAR",
            EstimatorTag::VarCv => "VAR+c",
            EstimatorTag::Wsram => "WSRAM",
            EstimatorTag::WsramCv => "WSRAM+c",
            EstimatorTag::WsramQ => "WSRAM+q",
            EstimatorTag::WsramQCv => "WSRAM+q+c",
            EstimatorTag::WakeQ => "WAKE-Q",
            EstimatorTag::WakeQCv => "WAKE-Q+c",
        }
    }

    pub fn is_variational(self) -> bool {
        matches!(self, EstimatorTag::Var | EstimatorTag::VarCv)
    }

    pub fn has_control_variate(self) -> bool {
        matches!(
            self,
            EstimatorTag::VarCv | EstimatorTag::WsramCv | EstimatorTag::WsramQCv | EstimatorTag::WakeQCv
        )
    }

    /// Whether samples come from the inference network.
    pub fn uses_inference(self) -> bool {
        matches!(
            self,
            EstimatorTag::WsramQ | EstimatorTag::WsramQCv | EstimatorTag::WakeQ | EstimatorTag::WakeQCv
        )
    }

    /// Whether the estimate is for η rather than θ.
    pub fn is_wake_q(self) -> bool {
        matches!(self, EstimatorTag::WakeQ | EstimatorTag::WakeQCv)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown estimator tag {s:?}")))
    }
}

/// A gradient estimate aligned with θ or η.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub tag: EstimatorTag,
    pub samples: usize,
}

impl GradientEstimate {
    fn new(grad: Vec<f64>, tag: EstimatorTag, samples: usize) -> Result<Self> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "{tag} gradient coordinate {i} is {}",
                grad[i]
            )));
        }
        Ok(Self { grad, tag, samples })
    }
}

fn require_samples(trajs: &[Trajectory]) -> Result<()> {
    if trajs.is_empty() {
        Err(Error::domain("estimators need M ≥ 1 samples"))
    } else {
        Ok(())
    }
}

fn require_prior_samples(trajs: &[Trajectory]) -> Result<()> {
    require_samples(trajs)?;
    if trajs.iter().any(|t| t.sampler != Sampler::Prior) {
        return Err(Error::domain("the variational estimator needs prior samples"));
    }
    Ok(())
}

fn require_matching(trajs: &[Trajectory], weights: &ImportanceWeightSet) -> Result<()> {
    require_samples(trajs)?;
    if weights.len() != trajs.len() {
        return Err(Error::Dimension {
            context: "importance weights",
            expected: trajs.len(),
            actual: weights.len(),
        });
    }
    Ok(())
}

fn theta_sum<E, M, F>(model: &M, env: &E, trajs: &[Trajectory], coefs: F) -> Result<Vec<f64>>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
    F: Fn(usize, &Trajectory) -> ThetaCoefficients,
{
    let mut grad = vec![0.0; model.theta().len()];
    for (m, t) in trajs.iter().enumerate() {
        model.backward_theta(env, t, &coefs(m, t), &mut grad)?;
    }
    Ok(grad)
}

fn eta_sum<E, M>(model: &M, env: &E, trajs: &[Trajectory], coefs: &[f64]) -> Result<Vec<f64>>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    let mut grad = vec![0.0; model.eta().len()];
    for (t, c) in trajs.iter().zip(coefs) {
        model.backward_eta(env, t, *c, &mut grad)?;
    }
    Ok(grad)
}

/// `(1/M) Σ [∇log p(y|a) + log p(y|a) ∇log p(a)]` over prior samples.
pub fn variational_gradient<E, M>(model: &M, env: &E, trajs: &[Trajectory]) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    variational_inner(model, env, trajs, 0.0, EstimatorTag::Var)
}

/// As [`variational_gradient`] with `log p(y|a) − baseline` in the
/// score-function term.
pub fn variational_gradient_cv<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    baseline: f64,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    variational_inner(model, env, trajs, baseline, EstimatorTag::VarCv)
}

fn variational_inner<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    baseline: f64,
    tag: EstimatorTag,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    require_prior_samples(trajs)?;
    let inv = 1.0 / trajs.len() as f64;
    let grad = theta_sum(model, env, trajs, |_, t| {
        ThetaCoefficients::new(inv, inv * (t.log_likelihood - baseline))
    })?;
    GradientEstimate::new(grad, tag, trajs.len())
}

/// `Σ ŵ [∇log p(y|a) + ∇log p(a)]`.
pub fn wsram_theta_gradient<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    weights: &ImportanceWeightSet,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    require_matching(trajs, weights)?;
    let w = weights.normalized();
    let grad = theta_sum(model, env, trajs, |m, _| ThetaCoefficients::new(w[m], w[m]))?;
    let tag = if trajs[0].sampler == Sampler::Inference {
        EstimatorTag::WsramQ
    } else {
        EstimatorTag::Wsram
    };
    GradientEstimate::new(grad, tag, trajs.len())
}

/// Self-normalised prior/proposal ratios `v̂⁽ᵐ⁾ ∝ p(a⁽ᵐ⁾)/proposal(a⁽ᵐ⁾)`.
pub fn prior_ratio_weights(trajs: &[Trajectory]) -> Vec<f64> {
    softmax(&trajs.iter().map(|t| t.log_prior - t.log_proposal).collect::<Vec<_>>())
}

/// As [`wsram_theta_gradient`] with prior-score coefficient `ŵ − v̂`.
pub fn wsram_theta_gradient_cv<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    weights: &ImportanceWeightSet,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    require_matching(trajs, weights)?;
    let w = weights.normalized();
    let v = prior_ratio_weights(trajs);
    let grad = theta_sum(model, env, trajs, |m, _| ThetaCoefficients::new(w[m], w[m] - v[m]))?;
    let tag = if trajs[0].sampler == Sampler::Inference {
        EstimatorTag::WsramQCv
    } else {
        EstimatorTag::WsramCv
    };
    GradientEstimate::new(grad, tag, trajs.len())
}

/// Per-sample η coefficients of the KL gradient: `−ŵ`, or `−(ŵ − 1/M)` with
/// the control variate.
pub fn wake_q_coefficients(weights: &ImportanceWeightSet, control_variate: bool) -> Vec<f64> {
    let b = if control_variate {
        1.0 / weights.len() as f64
    } else {
        0.0
    };
    weights.normalized().iter().map(|w| -(w - b)).collect()
}

/// Estimate of `∇_η KL(p(a|y) ‖ q(a|y))`: `−Σ ŵ ∇log q(a)`.
pub fn wake_q_gradient<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    weights: &ImportanceWeightSet,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    require_matching(trajs, weights)?;
    let grad = eta_sum(model, env, trajs, &wake_q_coefficients(weights, false))?;
    GradientEstimate::new(grad, EstimatorTag::WakeQ, trajs.len())
}

/// `−Σ (ŵ − 1/M) ∇log q(a)`.
pub fn wake_q_gradient_cv<E, M>(
    model: &M,
    env: &E,
    trajs: &[Trajectory],
    weights: &ImportanceWeightSet,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    require_matching(trajs, weights)?;
    let grad = eta_sum(model, env, trajs, &wake_q_coefficients(weights, true))?;
    GradientEstimate::new(grad, EstimatorTag::WakeQCv, trajs.len())
}

/// What one example contributes under an estimator.
#[derive(Debug, Clone)]
pub struct ExampleEstimate {
    pub theta: Option<GradientEstimate>,
    pub eta: Option<GradientEstimate>,
    pub weights: ImportanceWeightSet,
    pub diagnostics: DiagnosticRecord,
    pub trajectories: Vec<Trajectory>,
}

/// Sampling settings for [`estimate_example`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub tag: EstimatorTag,
    pub samples: usize,
    /// Proposal temperature for importance-sampled estimators. Variational
    /// estimators always sample the untempered prior.
    pub temperature: f64,
    /// Score-function baseline for VAR+c.
    pub baseline: f64,
    /// Also compute the η update for WSRAM+q variants.
    pub with_wake_q: bool,
}

impl EstimatorSettings {
    pub fn new(tag: EstimatorTag, samples: usize) -> Self {
        Self {
            tag,
            samples,
            temperature: 1.0,
            baseline: 0.0,
            with_wake_q: false,
        }
    }
}

/// Draws `M` trajectories for one example and evaluates the estimator.
///
/// VAR variants sample the prior at temperature 1; WSRAM and WSRAM+c sample
/// the (tempered) prior; the `+q` and wake-q variants sample the (tempered)
/// inference network. For `WSRAM+q` and `WSRAM+q+c` with `with_wake_q`, the
/// same trajectories and weights also give the η update (wake-q with the
/// control variate exactly when the θ estimator has one).
pub fn estimate_example<E, M, R>(
    model: &M,
    env: &E,
    label: usize,
    settings: &EstimatorSettings,
    rng: &mut R,
) -> Result<ExampleEstimate>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
    R: Rng + ?Sized,
{
    let tag = settings.tag;
    if settings.samples == 0 {
        return Err(Error::domain("estimators need M ≥ 1 samples"));
    }
    let (sampler, temperature) = if tag.is_variational() {
        (Sampler::Prior, 1.0)
    } else if tag.uses_inference() {
        (Sampler::Inference, settings.temperature)
    } else {
        (Sampler::Prior, settings.temperature)
    };
    let trajectories = (0..settings.samples)
        .map(|_| model.rollout(env, label, sampler, temperature, rng))
        .collect::<Result<Vec<_>>>()?;
    let weights = importance_weights(&trajectories)?;
    let theta = match tag {
        EstimatorTag::Var => Some(variational_gradient(model, env, &trajectories)?),
        EstimatorTag::VarCv => Some(variational_gradient_cv(model, env, &trajectories, settings.baseline)?),
        EstimatorTag::Wsram | EstimatorTag::WsramQ => Some(wsram_theta_gradient(model, env, &trajectories, &weights)?),
        EstimatorTag::WsramCv | EstimatorTag::WsramQCv => {
            Some(wsram_theta_gradient_cv(model, env, &trajectories, &weights)?)
        }
        EstimatorTag::WakeQ | EstimatorTag::WakeQCv => None,
    };
    let eta = match tag {
        EstimatorTag::WakeQ => Some(wake_q_gradient(model, env, &trajectories, &weights)?),
        EstimatorTag::WakeQCv => Some(wake_q_gradient_cv(model, env, &trajectories, &weights)?),
        EstimatorTag::WsramQ if settings.with_wake_q => Some(wake_q_gradient(model, env, &trajectories, &weights)?),
        EstimatorTag::WsramQCv if settings.with_wake_q => {
            Some(wake_q_gradient_cv(model, env, &trajectories, &weights)?)
        }
        _ => None,
    };
    let diagnostics = DiagnosticRecord::from_weights(&weights);
    Ok(ExampleEstimate {
        theta,
        eta,
        weights,
        diagnostics,
        trajectories,
    })
}
