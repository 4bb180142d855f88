//! Per-estimator gradient variance and ESS on a fixed batch.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::data::ExampleSource;
use crate::error::{Error, Result};
use crate::estimators::{estimate_example, gradient_variance_probe, EstimatorSettings, EstimatorTag};
use crate::model::{AttentionModel, GlimpseModel};
use crate::rng::{rollout_index, substream};

/// Prior rollouts per example used to fit the VAR+c baseline.
pub const PILOT_ROLLOUTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub tag: EstimatorTag,
    /// Mean per-coordinate variance of the batch-mean gradient estimate (θ
    /// for θ estimators, η for wake-q).
    pub variance: f64,
    pub std_error: f64,
    pub mean_ess: f64,
    pub resamples: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub batch: Vec<usize>,
    pub rows: Vec<DiagnosticRow>,
}

impl DiagnosticReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fixed batch of {} examples: {:?}", self.batch.len(), self.batch);
        let _ = writeln!(
            out,
            "{:<10} {:>14} {:>12} {:>9} {:>9}",
            "estimator", "variance", "std err", "mean ESS", "resamples"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>14.6e} {:>12.3e} {:>9.4} {:>9}",
                r.tag.as_str(),
                r.variance,
                r.std_error,
                r.mean_ess,
                r.resamples
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, tag: EstimatorTag) -> Option<&DiagnosticRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }
}

/// Runs the variance probe for every tag on one batch of `batch_size`
/// training examples drawn from `(seed, "probe-batch", 0)`, at temperature 1.
///
/// Resample `r` of example slot `j` draws from `(seed, "probe",
/// rollout_index(r, j))` for every tag. The VAR+c baseline of each example
/// is the mean log-likelihood of [`PILOT_ROLLOUTS`] independent prior
/// rollouts.
pub fn diagnose<S: ExampleSource>(
    model: &AttentionModel,
    source: &S,
    config: &ExperimentConfig,
    tags: &[EstimatorTag],
    resamples: usize,
) -> Result<DiagnosticReport> {
    if source.is_empty() {
        return Err(Error::config("diagnose needs a non-empty training split"));
    }
    let seed = config.seed;
    let mut rng = substream(seed, "probe-batch", 0);
    let batch: Vec<usize> = (0..config.train.batch_size)
        .map(|_| rng.random_range(0..source.len()))
        .collect();
    let baselines = batch
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let env = source.env(i)?;
            let label = source.label(i);
            let mut rng = substream(seed, "probe-baseline", slot as u64);
            let mut total = 0.0;
            for _ in 0..PILOT_ROLLOUTS {
                total += model.rollout_prior(&env, label, &mut rng)?.log_likelihood;
            }
            Ok(total / PILOT_ROLLOUTS as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut rows = Vec::with_capacity(tags.len());
    for &tag in tags {
        let probe = gradient_variance_probe(resamples, |r| {
            let per_example = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let env = source.env(i)?;
                    let settings = EstimatorSettings {
                        baseline: baselines[slot],
                        ..EstimatorSettings::new(tag, config.train.samples)
                    };
                    let mut rng = substream(seed, "probe", rollout_index(r, slot as u64));
                    let e = estimate_example(model, &env, source.label(i), &settings, &mut rng)?;
                    let grad = match tag.is_wake_q() {
                        true => e.eta,
                        false => e.theta,
                    }
                    .map(|g| g.grad)
                    .ok_or_else(|| Error::Internal(format!("{tag} produced no gradient")))?;
                    Ok((grad, e.diagnostics.ess))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = per_example.len() as f64;
            let mut mean = vec![0.0; per_example[0].0.len()];
            let mut ess = 0.0;
            for (g, e) in &per_example {
                mean.iter_mut().zip(g).for_each(|(m, v)| *m += v / n);
                ess += e / n;
            }
            Ok((mean, ess))
        })?;
        rows.push(DiagnosticRow {
            tag,
            variance: probe.variance,
            std_error: probe.std_error,
            mean_ess: probe.mean_ess,
            resamples,
            samples: config.train.samples,
        });
    }
    Ok(DiagnosticReport { batch, rows })
}
