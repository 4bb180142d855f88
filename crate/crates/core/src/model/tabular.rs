use rand::Rng;

use super::{GlimpseModel, Sampler, ThetaCoefficients, Trajectory};
use crate::diffnet::{log_softmax, sample_index, DistributionParams, LayoutBuilder, ParameterVector};
use crate::error::{Error, Result};
use crate::glimpse::{prefix_node, prefix_node_count, sequence_code, Action, ActionSpace, Environment, ToyWorld};

fn table_logits(p: f64) -> f64 {
    p.max(1e-300).ln()
}

/// A policy with one free logit per (prefix node, choice), one per
/// (action sequence, class) and one per (label, prefix node, choice) for the
/// proposal. Initialised from a toy world's tables it reproduces them
/// exactly, which makes it the reference model for enumeration checks.
#[derive(Debug, Clone)]
pub struct TabularModel {
    cells: usize,
    scales: usize,
    glimpses: usize,
    classes: usize,
    theta: ParameterVector,
    eta: ParameterVector,
}

impl TabularModel {
    pub fn from_world(world: &ToyWorld) -> Self {
        let b = world.branching();
        let nodes = world.prefix_nodes();
        let mut tb = LayoutBuilder::new();
        tb.push("prior", nodes * b);
        tb.push("likelihood", world.tables().likelihood.len() * world.classes());
        let mut theta = tb.build();
        let mut values = world.tables().prior.iter().flatten().copied().collect::<Vec<_>>();
        values.extend(world.tables().likelihood.iter().flatten());
        for (dst, p) in theta.values_mut().iter_mut().zip(values) {
            *dst = table_logits(p);
        }

        let mut eb = LayoutBuilder::new();
        eb.push("proposal", world.classes() * nodes * b);
        let mut eta = eb.build();
        let q = (0..world.classes()).flat_map(|y| (0..nodes).flat_map(move |n| world.proposal_row(y, n)));
        for (dst, p) in eta.values_mut().iter_mut().zip(q) {
            *dst = table_logits(p);
        }
        Self {
            cells: world.cells(),
            scales: world.scales(),
            glimpses: world.glimpses(),
            classes: world.classes(),
            theta,
            eta,
        }
    }

    /// Overwrites the proposal distribution of `label` at prefix `node`.
    pub fn set_proposal(&mut self, label: usize, node: usize, probs: &[f64]) -> Result<()> {
        if label >= self.classes || node >= self.nodes() || probs.len() != self.branching() {
            return Err(Error::domain(format!("no proposal row for label {label}, node {node}")));
        }
        let row = self.proposal_row(label, node);
        for (dst, p) in self.eta.values_mut()[row].iter_mut().zip(probs) {
            *dst = table_logits(*p);
        }
        Ok(())
    }

    fn branching(&self) -> usize {
        self.cells * self.scales
    }

    fn nodes(&self) -> usize {
        prefix_node_count(self.branching(), self.glimpses)
    }

    fn prior_row(&self, node: usize) -> std::ops::Range<usize> {
        let b = self.branching();
        node * b..(node + 1) * b
    }

    fn likelihood_row(&self, code: usize) -> std::ops::Range<usize> {
        let start = self.nodes() * self.branching() + code * self.classes;
        start..start + self.classes
    }

    fn proposal_row(&self, label: usize, node: usize) -> std::ops::Range<usize> {
        let b = self.branching();
        let start = (label * self.nodes() + node) * b;
        start..start + b
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            cells: self.cells,
            scales: self.scales,
        }
    }

    fn check_env(&self, env: &ToyWorld, label: usize) -> Result<()> {
        if env.cells() != self.cells
            || env.scales() != self.scales
            || env.glimpses() != self.glimpses
            || env.classes() != self.classes
        {
            return Err(Error::config("toy world shape differs from the tabular model"));
        }
        if label >= self.classes {
            return Err(Error::domain(format!("label {label} ≥ class count {}", self.classes)));
        }
        Ok(())
    }

    fn scale_entropy(&self, logits: &[f64]) -> f64 {
        let lp = log_softmax(logits);
        let mut marginal = vec![0.0; self.scales];
        for (i, l) in lp.iter().enumerate() {
            marginal[i % self.scales] += l.exp();
        }
        -marginal.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    fn run<F>(
        &self,
        env: &ToyWorld,
        label: usize,
        sampler: Sampler,
        temperature: f64,
        mut choose: F,
    ) -> Result<Trajectory>
    where
        F: FnMut(usize, &[f64]) -> Result<usize>,
    {
        self.check_env(env, label)?;
        if !(temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let b = self.branching();
        let theta = self.theta.values();
        let eta = self.eta.values();
        let space = self.action_space();
        let mut choices = Vec::with_capacity(self.glimpses);
        let mut traj = Trajectory {
            label,
            actions: Vec::new(),
            observations: Vec::new(),
            prior_step_log_probs: Vec::new(),
            inference_step_log_probs: Vec::new(),
            proposal_step_log_probs: Vec::new(),
            log_prior: 0.0,
            log_inference: 0.0,
            log_proposal: 0.0,
            log_likelihood: 0.0,
            class_log_probs: Vec::new(),
            scale_entropies: Vec::new(),
            policy_entropies: Vec::new(),
            location_means: Vec::new(),
            sampler,
            temperature,
            cache: None,
        };
        for step in 0..self.glimpses {
            let node = prefix_node(b, &choices);
            let prior = &theta[self.prior_row(node)];
            let inference = &eta[self.proposal_row(label, node)];
            let source = match sampler {
                Sampler::Prior => prior,
                Sampler::Inference => inference,
            };
            let tempered: Vec<f64> = source.iter().map(|l| l / temperature).collect();
            let c = choose(step, &tempered)?;
            if c >= b {
                return Err(Error::domain(format!("choice {c} out of range for {b} choices")));
            }
            traj.prior_step_log_probs.push(log_softmax(prior)[c]);
            traj.inference_step_log_probs.push(log_softmax(inference)[c]);
            traj.proposal_step_log_probs.push(log_softmax(&tempered)[c]);
            traj.scale_entropies.push(self.scale_entropy(prior));
            traj.policy_entropies
                .push(DistributionParams::categorical(prior.to_vec()).entropy());
            traj.location_means.push(None);
            let action = space
                .action_at(c)
                .ok_or_else(|| Error::Internal(format!("no action for choice {c}")))?;
            traj.observations.push(env.glimpse(&action));
            traj.actions.push(action);
            choices.push(c);
        }
        traj.class_log_probs = log_softmax(&theta[self.likelihood_row(sequence_code(b, &choices))]);
        traj.log_likelihood = traj.class_log_probs[label];
        traj.finish()
    }

    fn choices_of(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        let space = self.action_space();
        traj.actions
            .iter()
            .map(|a| {
                space
                    .index_of(a)
                    .ok_or_else(|| Error::domain(format!("action {a:?} outside the toy world")))
            })
            .collect()
    }
}

fn add_score(grads: &mut [f64], logits: &[f64], choice: usize, coef: f64) {
    let lp = log_softmax(logits);
    for (i, (g, l)) in grads.iter_mut().zip(lp).enumerate() {
        let onehot = if i == choice { 1.0 } else { 0.0 };
        *g += coef * (onehot - l.exp());
    }
}

impl GlimpseModel<ToyWorld> for TabularModel {
    fn glimpses(&self) -> usize {
        self.glimpses
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut ParameterVector {
        &mut self.theta
    }

    fn eta(&self) -> &ParameterVector {
        &self.eta
    }

    fn eta_mut(&mut self) -> &mut ParameterVector {
        &mut self.eta
    }

    fn evaluate(
        &self,
        env: &ToyWorld,
        label: usize,
        actions: &[Action],
        sampler: Sampler,
        temperature: f64,
    ) -> Result<Trajectory> {
        if actions.len() != self.glimpses {
            return Err(Error::Dimension {
                context: "action sequence",
                expected: self.glimpses,
                actual: actions.len(),
            });
        }
        let space = self.action_space();
        self.run(env, label, sampler, temperature, |step, _| {
            space
                .index_of(&actions[step])
                .ok_or_else(|| Error::domain(format!("action {:?} outside the toy world", actions[step])))
        })
    }

    fn rollout<R: Rng + ?Sized>(
        &self,
        env: &ToyWorld,
        label: usize,
        sampler: Sampler,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Trajectory> {
        self.run(env, label, sampler, temperature, |_, logits| {
            Ok(sample_index(logits, rng))
        })
    }

    fn backward_theta(
        &self,
        env: &ToyWorld,
        traj: &Trajectory,
        coefs: &ThetaCoefficients,
        grads: &mut [f64],
    ) -> Result<()> {
        self.check_env(env, traj.label)?;
        if grads.len() != self.theta.len() {
            return Err(Error::Dimension {
                context: "θ gradient buffer",
                expected: self.theta.len(),
                actual: grads.len(),
            });
        }
        let b = self.branching();
        let choices = self.choices_of(traj)?;
        let theta = self.theta.values();
        if coefs.likelihood != 0.0 {
            let row = self.likelihood_row(sequence_code(b, &choices));
            add_score(&mut grads[row.clone()], &theta[row], traj.label, coefs.likelihood);
        }
        for d in 0..choices.len() {
            let row = self.prior_row(prefix_node(b, &choices[..d]));
            if coefs.prior != 0.0 {
                add_score(&mut grads[row.clone()], &theta[row.clone()], choices[d], coefs.prior);
            }
            if coefs.entropy != 0.0 {
                // Entropy of the whole choice distribution at this node.
                let dist = DistributionParams::categorical(theta[row.clone()].to_vec());
                for (g, e) in grads[row].iter_mut().zip(dist.entropy_grad()) {
                    *g += coefs.entropy * e;
                }
            }
        }
        Ok(())
    }

    fn backward_eta(&self, env: &ToyWorld, traj: &Trajectory, coef: f64, grads: &mut [f64]) -> Result<()> {
        self.check_env(env, traj.label)?;
        if grads.len() != self.eta.len() {
            return Err(Error::Dimension {
                context: "η gradient buffer",
                expected: self.eta.len(),
                actual: grads.len(),
            });
        }
        let b = self.branching();
        let choices = self.choices_of(traj)?;
        for d in 0..choices.len() {
            let row = self.proposal_row(traj.label, prefix_node(b, &choices[..d]));
            add_score(&mut grads[row.clone()], &self.eta.values()[row], choices[d], coef);
        }
        Ok(())
    }
}
