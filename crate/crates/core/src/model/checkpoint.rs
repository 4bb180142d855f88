//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "WSRAMCK\0"
//! version      u32      1
//! header_len   u64
//! header       JSON     { shape, prediction_layers, inference_layers, trainer }
//! block_count  u32
//! blocks       block_count × (name_len: u16, name: utf-8, len: u64, len × f64)
//! ```
//!
//! The JSON header carries the model shape, the layer table of both networks
//! (checked against the shape on load) and, for training checkpoints, the
//! integer trainer state. Every real number lives in a named `f64` block so it
//! round-trips bit-exactly: `theta`, `eta`, and for training checkpoints
//! `baseline`, `baseline_net`, `adam.{theta,eta,baseline}.{m,v}` and
//! `accumulators`.
//!
//! Random state is not stored as generator words: every stream the trainer
//! draws from is derived from `(seed, update, example)`, so the seed plus the
//! update counter reproduce it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{AttentionModel, GlimpseModel, ModelShape};
use crate::diffnet::LayerSpec;
use crate::error::{Error, Result};
use crate::glimpse::ImageEnv;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSRAMCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First and second Adam moments plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Everything besides the parameters needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub seed: u64,
    pub update: u64,
    /// Moving-average log-likelihood baseline.
    pub baseline: f64,
    /// Parameters of the optional learned baseline (empty when unused).
    pub baseline_net: Vec<f64>,
    pub adam_theta: AdamState,
    pub adam_eta: AdamState,
    pub adam_baseline: AdamState,
    /// Degenerate-batch flags of the current abort window, oldest first.
    pub degenerate_window: Vec<bool>,
    /// Running sums of the metrics since the last flush.
    pub accumulators: Vec<f64>,
    /// The experiment config the run was started with (TOML).
    pub config: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub shape: ModelShape,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub trainer: Option<TrainerState>,
}

#[derive(Serialize, Deserialize)]
struct TrainerHeader {
    seed: u64,
    update: u64,
    adam_steps: [u64; 3],
    degenerate_window: Vec<bool>,
    config: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: ModelShape,
    prediction_layers: Vec<(String, LayerSpec)>,
    inference_layers: Vec<(String, LayerSpec)>,
    trainer: Option<TrainerHeader>,
}

impl Checkpoint {
    pub fn from_model(model: &AttentionModel) -> Self {
        Self {
            shape: model.shape().clone(),
            theta: GlimpseModel::<ImageEnv>::theta(model).values().to_vec(),
            eta: GlimpseModel::<ImageEnv>::eta(model).values().to_vec(),
            trainer: None,
        }
    }

    pub fn model(&self) -> Result<AttentionModel> {
        AttentionModel::from_parts(self.shape.clone(), &self.theta, &self.eta)
    }

    /// Configuration error unless the stored shape equals `expected`.
    pub fn check_shape(&self, expected: &ModelShape) -> Result<()> {
        if &self.shape != expected {
            return Err(Error::config(format!(
                "checkpoint shape {:?} does not match configured shape {:?}",
                self.shape, expected
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let skeleton = AttentionModel::zeros(self.shape.clone())?;
        let mut blocks: Vec<(&str, &[f64])> = vec![("theta", &self.theta), ("eta", &self.eta)];
        let baseline;
        let trainer = match &self.trainer {
            Some(t) => {
                baseline = [t.baseline];
                blocks.extend([
                    ("baseline", &baseline[..]),
                    ("baseline_net", &t.baseline_net[..]),
                    ("adam.theta.m", &t.adam_theta.m[..]),
                    ("adam.theta.v", &t.adam_theta.v[..]),
                    ("adam.eta.m", &t.adam_eta.m[..]),
                    ("adam.eta.v", &t.adam_eta.v[..]),
                    ("adam.baseline.m", &t.adam_baseline.m[..]),
                    ("adam.baseline.v", &t.adam_baseline.v[..]),
                    ("accumulators", &t.accumulators[..]),
                ]);
                Some(TrainerHeader {
                    seed: t.seed,
                    update: t.update,
                    adam_steps: [t.adam_theta.step, t.adam_eta.step, t.adam_baseline.step],
                    degenerate_window: t.degenerate_window.clone(),
                    config: t.config.clone(),
                })
            }
            None => None,
        };
        let header = Header {
            shape: self.shape.clone(),
            prediction_layers: skeleton.prediction().layer_specs(),
            inference_layers: skeleton.inference().layer_specs(),
            trainer,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(json.len() as u64)?;
        out.extend_from_slice(&json);
        out.write_u32::<LittleEndian>(blocks.len() as u32)?;
        for (name, values) in blocks {
            out.write_u16::<LittleEndian>(name.len() as u16)?;
            out.extend_from_slice(name.as_bytes());
            out.write_u64::<LittleEndian>(values.len() as u64)?;
            for v in values {
                out.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(out)
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Internal(message) => Error::input_format(path, message),
            other => other,
        })
    }

    /// Parses a checkpoint; malformed bytes are reported as `Internal` with
    /// a message (`load` attaches the path).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Internal(format!("malformed checkpoint: {m}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = r
            .read_u64::<LittleEndian>()
            .map_err(|_| bad("truncated header length"))? as usize;
        let start = r.position() as usize;
        let json = bytes.get(start..start + len).ok_or_else(|| bad("truncated header"))?;
        r.set_position((start + len) as u64);
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;

        let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated block count"))?;
        let mut blocks = BTreeMap::new();
        for _ in 0..count {
            let n = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated block name"))? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name).map_err(|_| bad("truncated block name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("block name not utf-8"))?;
            let len = r
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated block length"))? as usize;
            if len > bytes.len() / 8 {
                return Err(bad("block longer than file"));
            }
            let mut values = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut values)
                .map_err(|_| bad("truncated block"))?;
            blocks.insert(name, values);
        }

        let skeleton = AttentionModel::zeros(header.shape.clone())?;
        if skeleton.prediction().layer_specs() != header.prediction_layers
            || skeleton.inference().layer_specs() != header.inference_layers
        {
            return Err(Error::config("checkpoint layer table does not match its model shape"));
        }
        let mut take = |name: &str| blocks.remove(name).ok_or_else(|| bad(&format!("missing block {name}")));
        let theta = take("theta")?;
        let eta = take("eta")?;
        let trainer = match header.trainer {
            Some(t) => {
                let baseline = take("baseline")?;
                Some(TrainerState {
                    seed: t.seed,
                    update: t.update,
                    baseline: *baseline.first().ok_or_else(|| bad("empty baseline"))?,
                    baseline_net: take("baseline_net")?,
                    adam_theta: AdamState {
                        m: take("adam.theta.m")?,
                        v: take("adam.theta.v")?,
                        step: t.adam_steps[0],
                    },
                    adam_eta: AdamState {
                        m: take("adam.eta.m")?,
                        v: take("adam.eta.v")?,
                        step: t.adam_steps[1],
                    },
                    adam_baseline: AdamState {
                        m: take("adam.baseline.m")?,
                        v: take("adam.baseline.v")?,
                        step: t.adam_steps[2],
                    },
                    degenerate_window: t.degenerate_window,
                    accumulators: take("accumulators")?,
                    config: t.config,
                })
            }
            None => None,
        };
        let ck = Self {
            shape: header.shape,
            theta,
            eta,
            trainer,
        };
        ck.model()?;
        Ok(ck)
    }
}
