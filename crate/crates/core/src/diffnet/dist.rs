use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Parameters of an action distribution produced by a head.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionParams {
    Categorical { logits: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

/// A value in the support of a [`DistributionParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Index(usize),
    Point(Vec<f64>),
}

/// Numerically stable `log Σ exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws an index from unnormalized log-probabilities by inversion.
pub fn sample_index<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl DistributionParams {
    pub fn categorical(logits: Vec<f64>) -> Self {
        DistributionParams::Categorical { logits }
    }

    pub fn gaussian(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        DistributionParams::Gaussian { mean, log_std }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionParams::Categorical { logits } => {
                if logits.is_empty() {
                    return Err(Error::domain("categorical with no choices"));
                }
                if logits.iter().any(|l| !l.is_finite()) {
                    return Err(Error::domain("categorical logits must be finite"));
                }
            }
            DistributionParams::Gaussian { mean, log_std } => {
                if mean.len() != log_std.len() {
                    return Err(Error::Dimension {
                        context: "gaussian log-std",
                        expected: mean.len(),
                        actual: log_std.len(),
                    });
                }
                if mean.iter().chain(log_std).any(|v| !v.is_finite()) {
                    return Err(Error::domain("gaussian parameters must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Number of outcomes (categorical) or dimension (gaussian).
    pub fn dim(&self) -> usize {
        match self {
            DistributionParams::Categorical { logits } => logits.len(),
            DistributionParams::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            DistributionParams::Categorical { logits } => Some(softmax(logits)),
            DistributionParams::Gaussian { .. } => None,
        }
    }

    pub fn log_prob(&self, action: &Sample) -> Result<f64> {
        match (self, action) {
            (DistributionParams::Categorical { logits }, Sample::Index(i)) => {
                if *i >= logits.len() {
                    return Err(Error::domain(format!(
                        "categorical index {i} out of range 0..{}",
                        logits.len()
                    )));
                }
                Ok(logits[*i] - log_sum_exp(logits))
            }
            (DistributionParams::Gaussian { mean, log_std }, Sample::Point(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Dimension {
                        context: "gaussian action",
                        expected: mean.len(),
                        actual: x.len(),
                    });
                }
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(x)
                    .map(|((m, ls), xi)| {
                        let z = (xi - m) * (-ls).exp();
                        -0.5 * z * z - ls - HALF_LOG_TWO_PI
                    })
                    .sum())
            }
            _ => Err(Error::domain("action does not match the distribution variant")),
        }
    }

    /// Gradient of `log_prob(action)` with respect to the head output
    /// (logits for categorical, mean for gaussian; log-std is not learned).
    pub fn log_prob_grad(&self, action: &Sample) -> Result<Vec<f64>> {
        match (self, action) {
            (DistributionParams::Categorical { logits }, Sample::Index(i)) => {
                if *i >= logits.len() {
                    return Err(Error::domain(format!(
                        "categorical index {i} out of range 0..{}",
                        logits.len()
                    )));
                }
                let mut g: Vec<f64> = softmax(logits).into_iter().map(|p| -p).collect();
                g[*i] += 1.0;
                Ok(g)
            }
            (DistributionParams::Gaussian { mean, log_std }, Sample::Point(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Dimension {
                        context: "gaussian action",
                        expected: mean.len(),
                        actual: x.len(),
                    });
                }
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(x)
                    .map(|((m, ls), xi)| (xi - m) * (-2.0 * ls).exp())
                    .collect())
            }
            _ => Err(Error::domain("action does not match the distribution variant")),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        match self {
            DistributionParams::Categorical { logits } => Sample::Index(sample_index(logits, rng)),
            DistributionParams::Gaussian { mean, log_std } => Sample::Point(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * z
                    })
                    .collect(),
            ),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            DistributionParams::Categorical { logits } => {
                let lp = log_softmax(logits);
                -lp.iter()
                    .map(|l| if l.is_finite() { l.exp() * l } else { 0.0 })
                    .sum::<f64>()
            }
            DistributionParams::Gaussian { log_std, .. } => log_std.iter().map(|ls| 0.5 + HALF_LOG_TWO_PI + ls).sum(),
        }
    }

    /// Gradient of [`entropy`](Self::entropy) with respect to the head output.
    /// Zero for the gaussian head, whose spread is fixed.
    pub fn entropy_grad(&self) -> Vec<f64> {
        match self {
            DistributionParams::Categorical { logits } => {
                let lp = log_softmax(logits);
                let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                lp.iter().map(|l| -l.exp() * (l + h)).collect()
            }
            DistributionParams::Gaussian { mean, .. } => vec![0.0; mean.len()],
        }
    }

    /// Raises the temperature: logits divided by `tau`, standard deviations
    /// multiplied by `tau`.
    pub fn temperature_scaled(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("temperature must be positive, got {tau}")));
        }
        Ok(match self {
            DistributionParams::Categorical { logits } => DistributionParams::Categorical {
                logits: logits.iter().map(|l| l / tau).collect(),
            },
            DistributionParams::Gaussian { mean, log_std } => DistributionParams::Gaussian {
                mean: mean.clone(),
                log_std: log_std.iter().map(|ls| ls + tau.ln()).collect(),
            },
        })
    }
}
