use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    RecurrentCell,
    CategoricalHead,
    GaussianHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            input_dim,
            output_dim,
            activation,
        }
    }

    /// `h' = relu(W_h h + W_x x + b)`.
    pub fn recurrent(input_dim: usize, state_dim: usize) -> Self {
        Self {
            kind: LayerKind::RecurrentCell,
            input_dim,
            output_dim: state_dim,
            activation: Activation::Relu,
        }
    }

    /// Linear map producing the logits of `choices` outcomes.
    pub fn categorical_head(input_dim: usize, choices: usize) -> Self {
        Self {
            kind: LayerKind::CategoricalHead,
            input_dim,
            output_dim: choices,
            activation: Activation::Identity,
        }
    }

    /// Linear map producing a Gaussian mean of dimension `dim`.
    pub fn gaussian_head(input_dim: usize, dim: usize) -> Self {
        Self {
            kind: LayerKind::GaussianHead,
            input_dim,
            output_dim: dim,
            activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(format!(
                "layer dims must be positive, got {}→{}",
                self.input_dim, self.output_dim
            )));
        }
        match self.kind {
            LayerKind::CategoricalHead | LayerKind::GaussianHead if self.activation != Activation::Identity => {
                Err(Error::config("distribution heads use the identity activation"))
            }
            LayerKind::RecurrentCell if self.activation == Activation::Softmax => {
                Err(Error::config("recurrent cells cannot use softmax"))
            }
            _ => Ok(()),
        }
    }

    /// Width of the weight matrix rows: recurrent cells act on `[state; input]`.
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::RecurrentCell => self.input_dim + self.output_dim,
            _ => self.input_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.output_dim * self.fan_in() + self.output_dim
    }
}

/// A layer bound to a region of a parameter vector.
///
/// Weights are stored row-major (`output_dim × fan_in`) followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub offset: usize,
}

/// Everything `backward` needs to replay one forward call.
#[derive(Debug, Clone)]
pub struct Tape {
    offset: usize,
    spec: LayerSpec,
    /// `[state; input]` for recurrent cells, `input` otherwise.
    joined_input: Vec<f64>,
    pre_activation: Vec<f64>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradients with respect to a layer's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub input: Vec<f64>,
    pub state: Option<Vec<f64>>,
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

impl Layer {
    pub fn new(spec: LayerSpec, offset: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, offset })
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.spec.param_count()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, values: &mut [f64], rng: &mut R) {
        let fan_in = self.spec.fan_in();
        let rows = self.spec.output_dim;
        let limit = (6.0 / (fan_in + rows) as f64).sqrt();
        let weights = self.offset..self.offset + rows * fan_in;
        for w in &mut values[weights.clone()] {
            *w = rng.random_range(-limit..=limit);
        }
        for b in &mut values[weights.end..weights.end + rows] {
            *b = 0.0;
        }
    }

    pub fn weights<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        let n = self.spec.output_dim * self.spec.fan_in();
        &values[self.offset..self.offset + n]
    }

    pub fn bias<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        let n = self.spec.output_dim * self.spec.fan_in();
        &values[self.offset + n..self.offset + n + self.spec.output_dim]
    }

    pub fn forward(
        &self,
        values: &[f64],
        input: &[f64],
        state: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>, Tape)> {
        let spec = self.spec;
        if input.len() != spec.input_dim {
            return Err(Error::Dimension {
                context: "layer input",
                expected: spec.input_dim,
                actual: input.len(),
            });
        }
        if values.len() < self.offset + spec.param_count() {
            return Err(Error::Dimension {
                context: "layer parameters",
                expected: self.offset + spec.param_count(),
                actual: values.len(),
            });
        }
        let joined_input = match (spec.kind, state) {
            (LayerKind::RecurrentCell, Some(s)) => {
                if s.len() != spec.output_dim {
                    return Err(Error::Dimension {
                        context: "recurrent state",
                        expected: spec.output_dim,
                        actual: s.len(),
                    });
                }
                let mut joined = Vec::with_capacity(s.len() + input.len());
                joined.extend_from_slice(s);
                joined.extend_from_slice(input);
                joined
            }
            (LayerKind::RecurrentCell, None) => return Err(Error::config("recurrent cell requires a state")),
            _ => input.to_vec(),
        };

        let fan_in = spec.fan_in();
        let weights = self.weights(values);
        let bias = self.bias(values);
        let mut pre = bias.to_vec();
        for (row, p) in weights.chunks_exact(fan_in).zip(pre.iter_mut()) {
            *p += row.iter().zip(&joined_input).map(|(w, x)| w * x).sum::<f64>();
        }
        let mut output = pre.clone();
        match spec.activation {
            Activation::Relu => output.iter_mut().for_each(|o| *o = o.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(&mut output),
        }
        let new_state = (spec.kind == LayerKind::RecurrentCell).then(|| output.clone());
        let tape = Tape {
            offset: self.offset,
            spec,
            joined_input,
            pre_activation: pre,
            output: output.clone(),
        };
        Ok((output, new_state, tape))
    }

    /// Accumulates parameter gradients for `output_grad` into `grads` and
    /// returns the gradient with respect to the layer inputs.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64], values: &[f64], grads: &mut [f64]) -> Result<InputGrads> {
        if tape.offset != self.offset || tape.spec != self.spec {
            return Err(Error::Internal(format!(
                "tape recorded at offset {} replayed on layer at offset {}",
                tape.offset, self.offset
            )));
        }
        let spec = self.spec;
        if output_grad.len() != spec.output_dim {
            return Err(Error::Dimension {
                context: "layer output gradient",
                expected: spec.output_dim,
                actual: output_grad.len(),
            });
        }
        if grads.len() < self.offset + spec.param_count() {
            return Err(Error::Internal("gradient buffer shorter than parameters".into()));
        }

        let pre_grad: Vec<f64> = match spec.activation {
            Activation::Identity => output_grad.to_vec(),
            Activation::Relu => output_grad
                .iter()
                .zip(&tape.pre_activation)
                .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
                .collect(),
            Activation::Softmax => {
                let s = &tape.output;
                let dot: f64 = s.iter().zip(output_grad).map(|(a, b)| a * b).sum();
                s.iter().zip(output_grad).map(|(si, gi)| si * (gi - dot)).collect()
            }
        };

        let fan_in = spec.fan_in();
        let n_weights = spec.output_dim * fan_in;
        let weights = self.weights(values);
        let mut joined_grad = vec![0.0; fan_in];
        {
            let (wgrad, rest) = grads[self.offset..].split_at_mut(n_weights);
            let bgrad = &mut rest[..spec.output_dim];
            for (r, &d) in pre_grad.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                bgrad[r] += d;
                let wrow = &weights[r * fan_in..(r + 1) * fan_in];
                let grow = &mut wgrad[r * fan_in..(r + 1) * fan_in];
                for ((g, x), (jg, w)) in grow
                    .iter_mut()
                    .zip(&tape.joined_input)
                    .zip(joined_grad.iter_mut().zip(wrow))
                {
                    *g += d * x;
                    *jg += d * w;
                }
            }
        }

        Ok(match spec.kind {
            LayerKind::RecurrentCell => {
                let input = joined_grad.split_off(spec.output_dim);
                InputGrads {
                    input,
                    state: Some(joined_grad),
                }
            }
            _ => InputGrads {
                input: joined_grad,
                state: None,
            },
        })
    }
}
