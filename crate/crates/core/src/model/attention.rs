use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GlimpseModel, Sampler, ThetaCoefficients, Trajectory};
use crate::diffnet::{log_softmax, DistributionParams, Layer, LayerSpec, LayoutBuilder, ParameterVector, Sample, Tape};
use crate::error::{Error, Result};
use crate::glimpse::{Action, ActionSpace, Environment, Location};
use crate::rng::substream;

/// Sizes of the prediction and inference networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub action_space: ActionSpace,
    pub context_dim: usize,
    pub glimpse_dim: usize,
    /// First recurrent layer (reads glimpses, feeds the classifier).
    pub bottom_width: usize,
    /// Second recurrent layer (seeded by the context, feeds the action heads).
    pub top_width: usize,
    pub inference_width: usize,
    pub classes: usize,
    pub glimpses: usize,
    /// Fixed log standard deviation of each location coordinate.
    pub location_log_std: f64,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.context_dim,
            self.glimpse_dim,
            self.bottom_width,
            self.top_width,
            self.inference_width,
            self.classes,
            self.glimpses,
            self.action_space.scales(),
        ];
        if dims.contains(&0) {
            return Err(Error::config(format!("model dimensions must be positive: {self:?}")));
        }
        if let ActionSpace::Discrete { cells: 0, .. } = self.action_space {
            return Err(Error::config("discrete action space needs at least one cell"));
        }
        if !self.location_log_std.is_finite() {
            return Err(Error::config("location log-std must be finite"));
        }
        Ok(())
    }

    fn location_dim(&self) -> usize {
        match self.action_space {
            ActionSpace::Continuous { .. } => 2,
            ActionSpace::Discrete { cells, .. } => cells,
        }
    }

    /// Length of the action code appended to each glimpse.
    fn encoding_dim(&self) -> usize {
        self.location_dim() + self.action_space.scales()
    }

    fn location_head(&self, input: usize) -> LayerSpec {
        match self.action_space {
            ActionSpace::Continuous { .. } => LayerSpec::gaussian_head(input, 2),
            ActionSpace::Discrete { cells, .. } => LayerSpec::categorical_head(input, cells),
        }
    }

    fn encode(&self, action: &Action) -> Vec<f64> {
        let mut code = vec![0.0; self.encoding_dim()];
        match action.location {
            Location::Point([x, y]) => {
                code[0] = x.clamp(-1.0, 1.0);
                code[1] = y.clamp(-1.0, 1.0);
            }
            Location::Cell(c) => code[c] = 1.0,
        }
        code[self.location_dim() + action.scale] = 1.0;
        code
    }

    fn location_dist(&self, head: Vec<f64>) -> DistributionParams {
        match self.action_space {
            ActionSpace::Continuous { .. } => DistributionParams::gaussian(head, vec![self.location_log_std; 2]),
            ActionSpace::Discrete { .. } => DistributionParams::categorical(head),
        }
    }
}

fn split_action(action: &Action) -> (Sample, Sample) {
    let loc = match action.location {
        Location::Point(p) => Sample::Point(p.to_vec()),
        Location::Cell(c) => Sample::Index(c),
    };
    (loc, Sample::Index(action.scale))
}

fn join_action(location: Sample, scale: Sample) -> Result<Action> {
    let scale = match scale {
        Sample::Index(s) => s,
        Sample::Point(_) => return Err(Error::Internal("scale head produced a point".into())),
    };
    Ok(match location {
        Sample::Point(p) if p.len() == 2 => Action::point(p[0], p[1], scale),
        Sample::Index(c) => Action::cell(c, scale),
        Sample::Point(_) => return Err(Error::Internal("location sample must be 2-d".into())),
    })
}

/// Location and scale distributions produced from one hidden state.
#[derive(Debug, Clone)]
struct Heads {
    location: DistributionParams,
    scale: DistributionParams,
    location_tape: Tape,
    scale_tape: Tape,
}

impl Heads {
    fn log_prob(&self, loc: &Sample, scale: &Sample) -> Result<f64> {
        Ok(self.location.log_prob(loc)? + self.scale.log_prob(scale)?)
    }
}

fn run_heads(shape: &ModelShape, location: &Layer, scale: &Layer, values: &[f64], state: &[f64]) -> Result<Heads> {
    let (loc_out, _, location_tape) = location.forward(values, state, None)?;
    let (scale_out, _, scale_tape) = scale.forward(values, state, None)?;
    Ok(Heads {
        location: shape.location_dist(loc_out),
        scale: DistributionParams::categorical(scale_out),
        location_tape,
        scale_tape,
    })
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// The attention policy and classifier, parameters θ.
///
/// The context view only seeds the top layer's initial state; the classifier
/// reads only the bottom layer's final state.
#[derive(Debug, Clone)]
pub struct PredictionNetwork {
    params: ParameterVector,
    context: Layer,
    bottom: Layer,
    top: Layer,
    location: Layer,
    scale: Layer,
    classifier: Layer,
}

impl PredictionNetwork {
    fn new(shape: &ModelShape) -> Result<Self> {
        let mut b = LayoutBuilder::new();
        let mut layer =
            |name: &str, spec: LayerSpec| -> Result<Layer> { Layer::new(spec, b.push(name, spec.param_count())) };
        let context = layer(
            "context",
            LayerSpec::dense(shape.context_dim, shape.top_width, crate::diffnet::Activation::Relu),
        )?;
        let bottom = layer(
            "bottom",
            LayerSpec::recurrent(shape.glimpse_dim + shape.encoding_dim(), shape.bottom_width),
        )?;
        let top = layer("top", LayerSpec::recurrent(shape.bottom_width, shape.top_width))?;
        let location = layer("location", shape.location_head(shape.top_width))?;
        let scale = layer(
            "scale",
            LayerSpec::categorical_head(shape.top_width, shape.action_space.scales()),
        )?;
        let classifier = layer(
            "classifier",
            LayerSpec::dense(shape.bottom_width, shape.classes, crate::diffnet::Activation::Identity),
        )?;
        Ok(Self {
            params: b.build(),
            context,
            bottom,
            top,
            location,
            scale,
            classifier,
        })
    }

    fn layers(&self) -> [&Layer; 6] {
        [
            &self.context,
            &self.bottom,
            &self.top,
            &self.location,
            &self.scale,
            &self.classifier,
        ]
    }

    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        self.params
            .layout()
            .iter()
            .zip(self.layers())
            .map(|(s, l)| (s.name.clone(), l.spec))
            .collect()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }
}

/// The label-conditioned proposal network, parameters η. It reads the
/// prediction network's top-layer state but never sends gradients into θ.
#[derive(Debug, Clone)]
pub struct InferenceNetwork {
    params: ParameterVector,
    cell: Layer,
    location: Layer,
    scale: Layer,
}

impl InferenceNetwork {
    fn new(shape: &ModelShape) -> Result<Self> {
        let mut b = LayoutBuilder::new();
        let mut layer =
            |name: &str, spec: LayerSpec| -> Result<Layer> { Layer::new(spec, b.push(name, spec.param_count())) };
        let cell = layer(
            "cell",
            LayerSpec::recurrent(shape.top_width + shape.classes, shape.inference_width),
        )?;
        let location = layer("location", shape.location_head(shape.inference_width))?;
        let scale = layer(
            "scale",
            LayerSpec::categorical_head(shape.inference_width, shape.action_space.scales()),
        )?;
        Ok(Self {
            params: b.build(),
            cell,
            location,
            scale,
        })
    }

    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        self.params
            .layout()
            .iter()
            .zip([&self.cell, &self.location, &self.scale])
            .map(|(s, l)| (s.name.clone(), l.spec))
            .collect()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// Forward-pass record kept with a trajectory so backward passes need not
/// recompute it.
#[derive(Debug)]
struct ForwardCache {
    instance: u64,
    generation: u64,
    context: Tape,
    bottom: Vec<Tape>,
    top: Vec<Tape>,
    prior: Vec<Heads>,
    classifier: Option<Tape>,
    cell: Vec<Tape>,
    inference: Vec<Heads>,
}

/// Prediction network plus inference network.
#[derive(Debug)]
pub struct AttentionModel {
    shape: ModelShape,
    prediction: PredictionNetwork,
    inference: InferenceNetwork,
    instance: u64,
    generation: u64,
}

impl Clone for AttentionModel {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            prediction: self.prediction.clone(),
            inference: self.inference.clone(),
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl AttentionModel {
    /// Builds both networks with zero parameters.
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let prediction = PredictionNetwork::new(&shape)?;
        let inference = InferenceNetwork::new(&shape)?;
        Ok(Self {
            shape,
            prediction,
            inference,
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    /// Glorot-uniform weights and zero biases from the `init` substreams of
    /// `seed` (index 0 for θ, 1 for η).
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        let mut rng = substream(seed, "init", 0);
        let p = &mut model.prediction;
        let layers: Vec<Layer> = p.layers().into_iter().cloned().collect();
        for layer in &layers {
            layer.init(p.params.values_mut(), &mut rng);
        }
        let mut rng = substream(seed, "init", 1);
        let q = &mut model.inference;
        for layer in [q.cell.clone(), q.location.clone(), q.scale.clone()] {
            layer.init(q.params.values_mut(), &mut rng);
        }
        Ok(model)
    }

    pub fn from_parts(shape: ModelShape, theta: &[f64], eta: &[f64]) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        for (dst, src, what) in [
            (model.prediction.params.values_mut(), theta, "θ"),
            (model.inference.params.values_mut(), eta, "η"),
        ] {
            if dst.len() != src.len() {
                return Err(Error::config(format!(
                    "{what} has {} values, shape needs {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        Ok(model)
    }

    /// Rewrites η so that `q(a | y) = p(a)` for every label: the inference
    /// cell passes the (non-negative) top-layer state through and the heads
    /// copy the prediction heads. Needs `inference_width == top_width`.
    pub fn mimic_prior_with_inference(&mut self) -> Result<()> {
        let s = &self.shape;
        if s.inference_width != s.top_width {
            return Err(Error::config("mimicking the prior needs inference_width == top_width"));
        }
        let width = s.inference_width;
        let fan_in = width + s.top_width + s.classes;
        let q = &mut self.inference;
        let p = &self.prediction;
        let values = q.params.values_mut();
        values.iter_mut().for_each(|v| *v = 0.0);
        let cell = q.cell.offset;
        for i in 0..width {
            values[cell + i * fan_in + width + i] = 1.0;
        }
        for (dst, src) in [(&q.location, &p.location), (&q.scale, &p.scale)] {
            let range = src.param_range();
            values[dst.param_range()].copy_from_slice(&p.params.values()[range]);
        }
        self.generation += 1;
        Ok(())
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn prediction(&self) -> &PredictionNetwork {
        &self.prediction
    }

    pub fn inference(&self) -> &InferenceNetwork {
        &self.inference
    }

    fn check_env<E: Environment + ?Sized>(&self, env: &E, label: usize) -> Result<()> {
        let s = &self.shape;
        if env.action_space() != s.action_space {
            return Err(Error::config(format!(
                "environment action space {:?} does not match model {:?}",
                env.action_space(),
                s.action_space
            )));
        }
        if env.context_dim() != s.context_dim {
            return Err(Error::Dimension {
                context: "environment context",
                expected: s.context_dim,
                actual: env.context_dim(),
            });
        }
        if env.glimpse_dim() != s.glimpse_dim {
            return Err(Error::Dimension {
                context: "environment glimpse",
                expected: s.glimpse_dim,
                actual: env.glimpse_dim(),
            });
        }
        if label >= s.classes {
            return Err(Error::domain(format!("label {label} ≥ class count {}", s.classes)));
        }
        Ok(())
    }

    fn forward<E, F>(
        &self,
        env: &E,
        label: usize,
        sampler: Sampler,
        temperature: f64,
        mut choose: F,
    ) -> Result<Trajectory>
    where
        E: Environment + ?Sized,
        F: FnMut(usize, &DistributionParams, &DistributionParams) -> Result<Action>,
    {
        self.check_env(env, label)?;
        if !(temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let s = &self.shape;
        let p = &self.prediction;
        let q = &self.inference;
        let pv = p.params.values();
        let qv = q.params.values();
        let n_steps = s.glimpses;

        let (mut top_state, _, context_tape) = p.context.forward(pv, env.context(), None)?;
        let mut bottom_state = vec![0.0; s.bottom_width];
        let mut cell_state = vec![0.0; s.inference_width];
        let mut label_code = vec![0.0; s.classes];
        label_code[label] = 1.0;

        let mut traj = Trajectory {
            label,
            actions: Vec::with_capacity(n_steps),
            observations: Vec::with_capacity(n_steps),
            prior_step_log_probs: Vec::with_capacity(n_steps),
            inference_step_log_probs: Vec::with_capacity(n_steps),
            proposal_step_log_probs: Vec::with_capacity(n_steps),
            log_prior: 0.0,
            log_inference: 0.0,
            log_proposal: 0.0,
            log_likelihood: 0.0,
            class_log_probs: Vec::new(),
            scale_entropies: Vec::with_capacity(n_steps),
            policy_entropies: Vec::with_capacity(n_steps),
            location_means: Vec::with_capacity(n_steps),
            sampler,
            temperature,
            cache: None,
        };
        let mut cache = ForwardCache {
            instance: self.instance,
            generation: self.generation,
            context: context_tape,
            bottom: Vec::with_capacity(n_steps),
            top: Vec::with_capacity(n_steps),
            prior: Vec::with_capacity(n_steps),
            classifier: None,
            cell: Vec::with_capacity(n_steps),
            inference: Vec::with_capacity(n_steps),
        };

        for step in 0..n_steps {
            let prior = run_heads(s, &p.location, &p.scale, pv, &top_state)?;
            let mut cell_input = top_state.clone();
            cell_input.extend_from_slice(&label_code);
            let (next_cell, _, cell_tape) = q.cell.forward(qv, &cell_input, Some(&cell_state))?;
            cell_state = next_cell;
            let inference = run_heads(s, &q.location, &q.scale, qv, &cell_state)?;

            let source = match sampler {
                Sampler::Prior => &prior,
                Sampler::Inference => &inference,
            };
            let (loc_dist, scale_dist) = if temperature == 1.0 {
                (source.location.clone(), source.scale.clone())
            } else {
                (
                    source.location.temperature_scaled(temperature)?,
                    source.scale.temperature_scaled(temperature)?,
                )
            };
            let action = choose(step, &loc_dist, &scale_dist)?;
            s.action_space.validate(&action)?;
            let (loc, scale) = split_action(&action);
            traj.prior_step_log_probs.push(prior.log_prob(&loc, &scale)?);
            traj.inference_step_log_probs.push(inference.log_prob(&loc, &scale)?);
            traj.proposal_step_log_probs
                .push(loc_dist.log_prob(&loc)? + scale_dist.log_prob(&scale)?);
            traj.scale_entropies.push(prior.scale.entropy());
            traj.policy_entropies
                .push(prior.location.entropy() + prior.scale.entropy());
            traj.location_means.push(match &prior.location {
                DistributionParams::Gaussian { mean, .. } => Some([mean[0], mean[1]]),
                DistributionParams::Categorical { .. } => None,
            });

            let observation = env.glimpse(&action);
            let mut input = observation.clone();
            input.extend(s.encode(&action));
            let (next_bottom, _, bottom_tape) = p.bottom.forward(pv, &input, Some(&bottom_state))?;
            bottom_state = next_bottom;
            let (next_top, _, top_tape) = p.top.forward(pv, &bottom_state, Some(&top_state))?;
            top_state = next_top;

            traj.actions.push(action);
            traj.observations.push(observation);
            cache.bottom.push(bottom_tape);
            cache.top.push(top_tape);
            cache.prior.push(prior);
            cache.cell.push(cell_tape);
            cache.inference.push(inference);
        }

        let (logits, _, classifier_tape) = p.classifier.forward(pv, &bottom_state, None)?;
        traj.class_log_probs = log_softmax(&logits);
        traj.log_likelihood = traj.class_log_probs[label];
        cache.classifier = Some(classifier_tape);
        traj.cache = Some(Arc::new(cache));
        traj.finish()
    }

    fn cached(&self, traj: &Trajectory) -> Option<Arc<dyn std::any::Any + Send + Sync>> {
        let cache = traj.cache.as_ref()?;
        let c = cache.downcast_ref::<ForwardCache>()?;
        (c.instance == self.instance && c.generation == self.generation).then(|| Arc::clone(cache))
    }

    fn cache_for<E: Environment + ?Sized>(
        &self,
        env: &E,
        traj: &Trajectory,
    ) -> Result<Arc<dyn std::any::Any + Send + Sync>> {
        if let Some(c) = self.cached(traj) {
            return Ok(c);
        }
        let fresh = self.evaluate(env, traj.label, &traj.actions, traj.sampler, traj.temperature)?;
        fresh
            .cache
            .ok_or_else(|| Error::Internal("forward pass produced no cache".into()))
    }
}

impl<E: Environment + ?Sized> GlimpseModel<E> for AttentionModel {
    fn glimpses(&self) -> usize {
        self.shape.glimpses
    }

    fn classes(&self) -> usize {
        self.shape.classes
    }

    fn theta(&self) -> &ParameterVector {
        &self.prediction.params
    }

    fn theta_mut(&mut self) -> &mut ParameterVector {
        self.generation += 1;
        &mut self.prediction.params
    }

    fn eta(&self) -> &ParameterVector {
        &self.inference.params
    }

    fn eta_mut(&mut self) -> &mut ParameterVector {
        self.generation += 1;
        &mut self.inference.params
    }

    fn evaluate(
        &self,
        env: &E,
        label: usize,
        actions: &[Action],
        sampler: Sampler,
        temperature: f64,
    ) -> Result<Trajectory> {
        if actions.len() != self.shape.glimpses {
            return Err(Error::Dimension {
                context: "action sequence",
                expected: self.shape.glimpses,
                actual: actions.len(),
            });
        }
        self.forward(env, label, sampler, temperature, |step, _, _| Ok(actions[step]))
    }

    fn rollout<R: Rng + ?Sized>(
        &self,
        env: &E,
        label: usize,
        sampler: Sampler,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Trajectory> {
        self.forward(env, label, sampler, temperature, |_, loc, scale| {
            join_action(loc.sample(rng), scale.sample(rng))
        })
    }

    fn backward_theta(&self, env: &E, traj: &Trajectory, coefs: &ThetaCoefficients, grads: &mut [f64]) -> Result<()> {
        let p = &self.prediction;
        if grads.len() != p.params.len() {
            return Err(Error::Dimension {
                context: "θ gradient buffer",
                expected: p.params.len(),
                actual: grads.len(),
            });
        }
        if coefs.is_zero() {
            return Ok(());
        }
        let any = self.cache_for(env, traj)?;
        let cache = any
            .downcast_ref::<ForwardCache>()
            .ok_or_else(|| Error::Internal("foreign trajectory cache".into()))?;
        let s = &self.shape;
        let pv = p.params.values();
        let n_steps = traj.actions.len();

        let mut d_top: Vec<Vec<f64>> = vec![vec![0.0; s.top_width]; n_steps + 1];
        let mut d_bottom = vec![0.0; s.bottom_width];
        if coefs.likelihood != 0.0 {
            let mut d_logits: Vec<f64> = traj
                .class_log_probs
                .iter()
                .map(|lp| -coefs.likelihood * lp.exp())
                .collect();
            d_logits[traj.label] += coefs.likelihood;
            let tape = cache
                .classifier
                .as_ref()
                .ok_or_else(|| Error::Internal("classifier tape missing".into()))?;
            d_bottom = p.classifier.backward(tape, &d_logits, pv, grads)?.input;
        }

        for step in (0..n_steps).rev() {
            let top = p.top.backward(&cache.top[step], &d_top[step + 1], pv, grads)?;
            add_into(&mut d_top[step], top.state.as_deref().unwrap_or_default());
            add_into(&mut d_bottom, &top.input);
            let bottom = p.bottom.backward(&cache.bottom[step], &d_bottom, pv, grads)?;
            d_bottom = bottom.state.unwrap_or_default();

            let heads = &cache.prior[step];
            let (loc, scale) = split_action(&traj.actions[step]);
            let mut d_loc = vec![0.0; heads.location.dim()];
            let mut d_scale = vec![0.0; heads.scale.dim()];
            if coefs.prior != 0.0 {
                for (d, g) in d_loc.iter_mut().zip(heads.location.log_prob_grad(&loc)?) {
                    *d += coefs.prior * g;
                }
                for (d, g) in d_scale.iter_mut().zip(heads.scale.log_prob_grad(&scale)?) {
                    *d += coefs.prior * g;
                }
            }
            if coefs.entropy != 0.0 {
                for (d, g) in d_loc.iter_mut().zip(heads.location.entropy_grad()) {
                    *d += coefs.entropy * g;
                }
                for (d, g) in d_scale.iter_mut().zip(heads.scale.entropy_grad()) {
                    *d += coefs.entropy * g;
                }
            }
            if let (Some(m), DistributionParams::Gaussian { .. }) = (coefs.location_mean, &heads.location) {
                d_loc[0] += m[0];
                d_loc[1] += m[1];
            }
            let gl = p.location.backward(&heads.location_tape, &d_loc, pv, grads)?;
            let gs = p.scale.backward(&heads.scale_tape, &d_scale, pv, grads)?;
            add_into(&mut d_top[step], &gl.input);
            add_into(&mut d_top[step], &gs.input);
        }
        p.context.backward(&cache.context, &d_top[0], pv, grads)?;
        Ok(())
    }

    fn backward_eta(&self, env: &E, traj: &Trajectory, coef: f64, grads: &mut [f64]) -> Result<()> {
        let q = &self.inference;
        if grads.len() != q.params.len() {
            return Err(Error::Dimension {
                context: "η gradient buffer",
                expected: q.params.len(),
                actual: grads.len(),
            });
        }
        if coef == 0.0 {
            return Ok(());
        }
        let any = self.cache_for(env, traj)?;
        let cache = any
            .downcast_ref::<ForwardCache>()
            .ok_or_else(|| Error::Internal("foreign trajectory cache".into()))?;
        let qv = q.params.values();
        let mut d_cell = vec![0.0; self.shape.inference_width];
        for step in (0..traj.actions.len()).rev() {
            let heads = &cache.inference[step];
            let (loc, scale) = split_action(&traj.actions[step]);
            let d_loc: Vec<f64> = heads.location.log_prob_grad(&loc)?.iter().map(|g| coef * g).collect();
            let d_scale: Vec<f64> = heads.scale.log_prob_grad(&scale)?.iter().map(|g| coef * g).collect();
            add_into(
                &mut d_cell,
                &q.location.backward(&heads.location_tape, &d_loc, qv, grads)?.input,
            );
            add_into(
                &mut d_cell,
                &q.scale.backward(&heads.scale_tape, &d_scale, qv, grads)?.input,
            );
            d_cell = q
                .cell
                .backward(&cache.cell[step], &d_cell, qv, grads)?
                .state
                .unwrap_or_default();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glimpse::{GlimpseSensor, Image, ToyWorld};

    pub(crate) fn toy_shape(world: &ToyWorld) -> ModelShape {
        ModelShape {
            action_space: world.action_space(),
            context_dim: world.context_dim(),
            glimpse_dim: world.glimpse_dim(),
            bottom_width: 5,
            top_width: 4,
            inference_width: 4,
            classes: world.classes(),
            glimpses: world.glimpses(),
            location_log_std: 0.1f64.ln(),
        }
    }

    fn image_setup() -> (GlimpseSensor, Image, ModelShape) {
        let sensor = GlimpseSensor {
            scales: vec![4, 8],
            retina: 4,
            low_res_side: 4,
            grid: None,
        };
        let img = Image::new(16, 16, (0..256).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()).unwrap();
        let shape = ModelShape {
            action_space: sensor.action_space(),
            context_dim: 16,
            glimpse_dim: 16,
            bottom_width: 6,
            top_width: 5,
            inference_width: 5,
            classes: 3,
            glimpses: 3,
            location_log_std: 0.1f64.ln(),
        };
        (sensor, img, shape)
    }

    #[test]
    fn rollouts_are_deterministic_and_replayable() {
        let (sensor, img, shape) = image_setup();
        let model = AttentionModel::new(shape, 3).unwrap();
        let env = sensor.env(&img).unwrap();
        let a = model.rollout_prior(&env, 1, &mut substream(1, "r", 0)).unwrap();
        let b = model.rollout_prior(&env, 1, &mut substream(1, "r", 0)).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.log_prior, b.log_prior);
        assert!((a.log_prior - a.prior_step_log_probs.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(a.log_proposal, a.log_prior);

        let replay = model.evaluate(&env, 1, &a.actions, Sampler::Prior, 1.0).unwrap();
        assert!((replay.log_prior - a.log_prior).abs() < 1e-12);
        assert!((replay.log_likelihood - a.log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn mimicking_inference_matches_prior() {
        let (sensor, img, shape) = image_setup();
        let mut model = AttentionModel::new(shape, 4).unwrap();
        model.mimic_prior_with_inference().unwrap();
        let env = sensor.env(&img).unwrap();
        for i in 0..20 {
            let t = model
                .rollout_proposal(&env, i % 3, &mut substream(2, "r", i as u64))
                .unwrap();
            assert!((t.log_proposal - t.log_prior).abs() < 1e-9);
            assert!((t.log_inference - t.log_prior).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_policy_is_deterministic() {
        let world = ToyWorld::uniform(3, 2, 1, 2).unwrap();
        let mut shape = toy_shape(&world);
        shape.action_space = ActionSpace::Continuous { scales: 2 };
        let sensor = GlimpseSensor {
            scales: vec![4, 8],
            retina: 2,
            low_res_side: 2,
            grid: None,
        };
        shape.glimpse_dim = 4;
        shape.context_dim = 4;
        shape.location_log_std = -30.0;
        let mut model = AttentionModel::zeros(shape).unwrap();
        // scale head bias strongly prefers scale 1; location mean bias (0.25, -0.5)
        let scale = model.prediction.params.slice("scale").unwrap();
        let loc = model.prediction.params.slice("location").unwrap();
        let theta = <AttentionModel as GlimpseModel<ToyWorld>>::theta_mut(&mut model).values_mut();
        theta[scale.end - 1] = 800.0;
        theta[loc.end - 2] = 0.25;
        theta[loc.end - 1] = -0.5;
        let img = Image::black(8, 8);
        let env = sensor.env(&img).unwrap();
        let a = model.rollout_prior(&env, 0, &mut substream(0, "d", 0)).unwrap();
        let b = model.rollout_prior(&env, 0, &mut substream(0, "d", 1)).unwrap();
        assert_eq!(a.actions[0].scale, 1);
        let Location::Point(p) = a.actions[0].location else {
            panic!()
        };
        assert!((p[0] - 0.25).abs() < 1e-9 && (p[1] + 0.5).abs() < 1e-9);
        assert_eq!(a.actions[0].scale, b.actions[0].scale);
        // at the exact mean the log-prior is the Gaussian peak; scale log-prob ≈ 0
        let peak = model
            .evaluate(&env, 0, &[Action::point(0.25, -0.5, 1)], Sampler::Prior, 1.0)
            .unwrap();
        let mode = -2.0 * (-30.0 + 0.5 * (2.0 * std::f64::consts::PI).ln());
        assert!((peak.log_prior - mode).abs() < 1e-6);
    }

    #[test]
    fn classifier_ignores_context() {
        let base = ToyWorld::uniform(2, 2, 2, 3).unwrap();
        let feats: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.3, 1.0 - i as f64 * 0.2]).collect();
        let w1 = base.clone().with_features(feats.clone(), vec![0.5, -1.0, 2.0]).unwrap();
        let w2 = base.with_features(feats, vec![-3.0, 0.7, 0.1]).unwrap();
        let model = AttentionModel::new(toy_shape(&w1), 9).unwrap();
        let actions = [Action::cell(1, 0), Action::cell(0, 1)];
        let t1 = model.evaluate(&w1, 0, &actions, Sampler::Prior, 1.0).unwrap();
        let t2 = model.evaluate(&w2, 0, &actions, Sampler::Prior, 1.0).unwrap();
        assert_eq!(t1.class_log_probs, t2.class_log_probs);
        assert_ne!(t1.prior_step_log_probs, t2.prior_step_log_probs);
    }

    #[test]
    fn stale_cache_is_not_reused() {
        let world = ToyWorld::random(2, 1, 2, 2, 1.0, 1).unwrap();
        let mut model = AttentionModel::new(toy_shape(&world), 2).unwrap();
        let t = model.rollout_prior(&world, 0, &mut substream(0, "s", 0)).unwrap();
        let n = <AttentionModel as GlimpseModel<ToyWorld>>::theta(&model).len();
        <AttentionModel as GlimpseModel<ToyWorld>>::theta_mut(&mut model).values_mut()[0] += 0.5;
        let mut from_stale = vec![0.0; n];
        model
            .backward_theta(&world, &t, &ThetaCoefficients::new(1.0, 1.0), &mut from_stale)
            .unwrap();
        let fresh = model.evaluate(&world, 0, &t.actions, Sampler::Prior, 1.0).unwrap();
        let mut from_fresh = vec![0.0; n];
        model
            .backward_theta(&world, &fresh, &ThetaCoefficients::new(1.0, 1.0), &mut from_fresh)
            .unwrap();
        assert_eq!(from_stale, from_fresh);
    }
}
