//! Minimal differentiable substrate: flat parameter storage, fixed-shape
//! layers with replayable tapes, and distribution heads.
//!
//! Gradients are accumulated additively; callers zero them between estimator
//! invocations.

mod dist;
mod fd;
mod layer;
mod params;

pub use dist::{log_softmax, log_sum_exp, sample_index, softmax, DistributionParams, Sample};
pub use fd::finite_difference_gradient;
pub use layer::{Activation, InputGrads, Layer, LayerKind, LayerSpec, Tape};
pub use params::{LayoutBuilder, ParameterVector, Slice};
