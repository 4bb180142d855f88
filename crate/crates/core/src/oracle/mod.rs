//! Exact answers by enumerating every action sequence (and every tuple of
//! sequences) of a discrete world.

mod suite;

use rayon::prelude::*;

pub use suite::{random_world, run_identity_suite, Fault, IdentityResult, SuiteReport};

use crate::diffnet::log_sum_exp;
use crate::error::{Error, Result};
use crate::estimators::{
    importance_weights, variational_gradient, variational_gradient_cv, wake_q_gradient, wake_q_gradient_cv,
    wsram_theta_gradient, wsram_theta_gradient_cv, EstimatorTag,
};
use crate::glimpse::{prefix_node, prefix_node_count, sequence_choices, Environment};
use crate::model::{GlimpseModel, Sampler, ThetaCoefficients, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub sequences: u128,
    pub tuples: u128,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            sequences: 1_000_000,
            tuples: 10_000_000,
        }
    }
}

/// One enumerated action sequence.
#[derive(Debug, Clone)]
pub struct EnumeratedSequence {
    /// Choice indices (cell-major: `cell · scales + scale`).
    pub choices: Vec<usize>,
    pub prior: f64,
    pub likelihood: f64,
    pub joint: f64,
    pub posterior: f64,
    /// Scored with the inference network as proposal at temperature 1.
    pub trajectory: Trajectory,
}

/// Everything exact about one (model, world, label).
#[derive(Debug, Clone)]
pub struct EnumerationReport {
    pub sequences: Vec<EnumeratedSequence>,
    pub log_marginal: f64,
    pub variational_bound: f64,
    /// `KL(p(a|y) ‖ q(a|y))`; `+inf` when q misses posterior mass.
    pub kl: f64,
    /// `−Σ p(a|y) log q(a|y)`, the part of the KL that depends on η.
    pub cross_entropy: f64,
}

fn branching<E: Environment + ?Sized>(env: &E) -> Result<usize> {
    env.action_space()
        .choices()
        .ok_or_else(|| Error::domain("exact enumeration needs a discrete action space"))
}

fn check_budget(needed: u128, budget: u128) -> Result<()> {
    if needed > budget {
        Err(Error::Budget { needed, budget })
    } else {
        Ok(())
    }
}

fn count(b: usize, n: usize) -> u128 {
    (b as u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

/// Scores every sequence with `sampler` as the proposal.
fn score_all<E, M>(
    model: &M,
    env: &E,
    label: usize,
    sampler: Sampler,
    temperature: f64,
    budget: &Budget,
) -> Result<Vec<Trajectory>>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let b = branching(env)?;
    let n = model.glimpses();
    check_budget(count(b, n), budget.sequences)?;
    let space = env.action_space();
    (0..b.pow(n as u32))
        .into_par_iter()
        .map(|code| {
            let actions: Vec<_> = sequence_choices(b, n, code)
                .into_iter()
                .map(|c| space.action_at(c).expect("choice in range"))
                .collect();
            model.evaluate(env, label, &actions, sampler, temperature)
        })
        .collect()
}

pub fn enumerate<E, M>(model: &M, env: &E, label: usize, budget: &Budget) -> Result<EnumerationReport>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let b = branching(env)?;
    let n = model.glimpses();
    let trajs = score_all(model, env, label, Sampler::Inference, 1.0, budget)?;
    let log_joint: Vec<f64> = trajs.iter().map(|t| t.log_prior + t.log_likelihood).collect();
    let log_marginal = log_sum_exp(&log_joint);
    let mut variational_bound = 0.0;
    let mut kl = 0.0;
    let mut cross_entropy = 0.0;
    let sequences = trajs
        .into_iter()
        .zip(&log_joint)
        .enumerate()
        .map(|(code, (t, lj))| {
            let prior = t.log_prior.exp();
            let posterior = (lj - log_marginal).exp();
            if prior > 0.0 {
                variational_bound += prior * t.log_likelihood;
            }
            if posterior > 0.0 {
                kl += posterior * (lj - log_marginal - t.log_inference);
                cross_entropy -= posterior * t.log_inference;
            }
            EnumeratedSequence {
                choices: sequence_choices(b, n, code),
                prior,
                likelihood: t.log_likelihood.exp(),
                joint: lj.exp(),
                posterior,
                trajectory: t,
            }
        })
        .collect();
    Ok(EnumerationReport {
        sequences,
        log_marginal,
        variational_bound,
        kl: if kl.is_nan() { f64::INFINITY } else { kl },
        cross_entropy,
    })
}

pub fn exact_marginal<E, M>(model: &M, env: &E, label: usize) -> Result<f64>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    Ok(enumerate(model, env, label, &Budget::default())?.log_marginal)
}

fn weighted_theta<E, M>(
    model: &M,
    env: &E,
    report: &EnumerationReport,
    coefs: impl Fn(&EnumeratedSequence) -> ThetaCoefficients,
) -> Result<Vec<f64>>
where
    E: Environment + ?Sized,
    M: GlimpseModel<E>,
{
    let mut grad = vec![0.0; model.theta().len()];
    for s in &report.sequences {
        let c = coefs(s);
        if !c.is_zero() {
            model.backward_theta(env, &s.trajectory, &c, &mut grad)?;
        }
    }
    Ok(grad)
}

/// `∇ℓ = Σ p(a|y) [∇log p(y|a) + ∇log p(a)]`.
pub fn exact_grad_marginal<E, M>(model: &M, env: &E, label: usize) -> Result<Vec<f64>>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let report = enumerate(model, env, label, &Budget::default())?;
    weighted_theta(model, env, &report, |s| {
        ThetaCoefficients::new(s.posterior, s.posterior)
    })
}

/// `F = Σ p(a) log p(y|a)` and `∇F = Σ p(a) [∇log p(y|a) + log p(y|a) ∇log p(a)]`.
pub fn exact_variational_bound_and_grad<E, M>(model: &M, env: &E, label: usize) -> Result<(f64, Vec<f64>)>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let report = enumerate(model, env, label, &Budget::default())?;
    let grad = weighted_theta(model, env, &report, |s| {
        if s.prior > 0.0 {
            ThetaCoefficients::new(s.prior, s.prior * s.trajectory.log_likelihood)
        } else {
            ThetaCoefficients::default()
        }
    })?;
    Ok((report.variational_bound, grad))
}

pub fn exact_kl<E, M>(model: &M, env: &E, label: usize) -> Result<f64>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    Ok(enumerate(model, env, label, &Budget::default())?.kl)
}

/// `∇_η KL = −Σ p(a|y) ∇_η log q(a|y)`.
pub fn exact_kl_grad<E, M>(model: &M, env: &E, label: usize) -> Result<Vec<f64>>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let report = enumerate(model, env, label, &Budget::default())?;
    let mut grad = vec![0.0; model.eta().len()];
    for s in &report.sequences {
        if s.posterior > 0.0 {
            model.backward_eta(env, &s.trajectory, -s.posterior, &mut grad)?;
        }
    }
    Ok(grad)
}

/// Posterior conditionals `p(c | prefix, y)` for every prefix node, in node
/// order; prefixes of zero posterior mass get a uniform row.
pub fn posterior_node_conditionals(report: &EnumerationReport, branching: usize, glimpses: usize) -> Vec<Vec<f64>> {
    let nodes = prefix_node_count(branching, glimpses);
    let mut mass = vec![vec![0.0; branching]; nodes];
    for s in &report.sequences {
        for d in 0..glimpses {
            mass[prefix_node(branching, &s.choices[..d])][s.choices[d]] += s.posterior;
        }
    }
    mass.into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|m| m / total).collect()
            } else {
                vec![1.0 / branching as f64; branching]
            }
        })
        .collect()
}

/// Exact expectation of `estimator` over all `m`-tuples of independent
/// proposal samples, weighted by their joint proposal probability.
pub fn tuple_expectation<E, M, F>(
    model: &M,
    env: &E,
    label: usize,
    sampler: Sampler,
    m: usize,
    budget: &Budget,
    estimator: F,
) -> Result<Vec<f64>>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
    F: Fn(&[Trajectory]) -> Result<Vec<f64>> + Sync,
{
    if m == 0 {
        return Err(Error::domain("tuples need M ≥ 1"));
    }
    let trajs = score_all(model, env, label, sampler, 1.0, budget)?;
    let k = trajs.len();
    check_budget(count(k, m), budget.tuples)?;
    let live: Vec<usize> = (0..k).filter(|&i| trajs[i].log_proposal > f64::NEG_INFINITY).collect();
    let total = live.len().pow((m - 1) as u32);
    // Parallel over the first sample; partial sums reduced in index order.
    let partials: Vec<Option<Vec<f64>>> = live
        .par_iter()
        .map(|&first| -> Result<Option<Vec<f64>>> {
            let mut acc: Option<Vec<f64>> = None;
            let mut tuple = Vec::with_capacity(m);
            for rest in 0..total {
                tuple.clear();
                tuple.push(trajs[first].clone());
                let mut log_prob = trajs[first].log_proposal;
                let mut code = rest;
                for _ in 1..m {
                    let t = &trajs[live[code % live.len()]];
                    code /= live.len();
                    log_prob += t.log_proposal;
                    tuple.push(t.clone());
                }
                let prob = log_prob.exp();
                if prob == 0.0 {
                    continue;
                }
                let value = estimator(&tuple)?;
                let acc = acc.get_or_insert_with(|| vec![0.0; value.len()]);
                for (a, v) in acc.iter_mut().zip(value) {
                    *a += prob * v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut out: Option<Vec<f64>> = None;
    for p in partials.into_iter().flatten() {
        match out.as_mut() {
            Some(o) => o.iter_mut().zip(p).for_each(|(a, b)| *a += b),
            None => out = Some(p),
        }
    }
    out.ok_or_else(|| Error::domain("proposal assigns zero probability to every sequence"))
}

/// Exact expectation of a tagged estimator with `m` samples. VAR and WSRAM
/// variants without `+q` sample the prior; the rest sample the inference
/// network. Wake-q tags return η-gradients, the others θ-gradients.
pub fn estimator_expectation<E, M>(
    model: &M,
    env: &E,
    label: usize,
    tag: EstimatorTag,
    m: usize,
    baseline: f64,
    budget: &Budget,
) -> Result<Vec<f64>>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let sampler = if tag.uses_inference() {
        Sampler::Inference
    } else {
        Sampler::Prior
    };
    tuple_expectation(model, env, label, sampler, m, budget, |tuple| {
        let grad = match tag {
            EstimatorTag::Var => variational_gradient(model, env, tuple)?,
            EstimatorTag::VarCv => variational_gradient_cv(model, env, tuple, baseline)?,
            EstimatorTag::Wsram | EstimatorTag::WsramQ => {
                wsram_theta_gradient(model, env, tuple, &importance_weights(tuple)?)?
            }
            EstimatorTag::WsramCv | EstimatorTag::WsramQCv => {
                wsram_theta_gradient_cv(model, env, tuple, &importance_weights(tuple)?)?
            }
            EstimatorTag::WakeQ => wake_q_gradient(model, env, tuple, &importance_weights(tuple)?)?,
            EstimatorTag::WakeQCv => wake_q_gradient_cv(model, env, tuple, &importance_weights(tuple)?)?,
        };
        Ok(grad.grad)
    })
}

/// Exact `L_M = E[log (1/M) Σ w⁽ᵐ⁾]` under the given proposal.
pub fn exact_lm_bound<E, M>(
    model: &M,
    env: &E,
    label: usize,
    sampler: Sampler,
    m: usize,
    budget: &Budget,
) -> Result<f64>
where
    E: Environment + Sync + ?Sized,
    M: GlimpseModel<E>,
{
    let v = tuple_expectation(model, env, label, sampler, m, budget, |tuple| {
        let w: Vec<f64> = tuple.iter().map(Trajectory::log_weight).collect();
        Ok(vec![log_sum_exp(&w) - (tuple.len() as f64).ln()])
    })?;
    Ok(v[0])
}
