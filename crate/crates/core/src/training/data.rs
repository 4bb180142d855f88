//! Training and test example sources built from an experiment config.

use rand::Rng;

use super::config::{DataKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::glimpse::{
    generate_translated_scaled, glyph_digits, read_mnist_dir, ActionSpace, Dataset, DigitPlacer, Environment,
    GlimpseSensor, ImageEnv, LabeledExample, ToyWorld,
};
use crate::model::ModelShape;
use crate::rng::substream;

/// Indexed labelled environments.
pub trait ExampleSource: Sync {
    type Env<'a>: Environment + Sync
    where
        Self: 'a;

    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, index: usize) -> usize;
    fn env(&self, index: usize) -> Result<Self::Env<'_>>;
    fn classes(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn context_dim(&self) -> usize;
    fn glimpse_dim(&self) -> usize;
}

/// Canvas images seen through a glimpse sensor.
#[derive(Debug, Clone)]
pub struct ImageSource {
    pub sensor: GlimpseSensor,
    pub examples: Vec<LabeledExample>,
    pub classes: usize,
}

impl ExampleSource for ImageSource {
    type Env<'a> = ImageEnv<'a>;

    fn len(&self) -> usize {
        self.examples.len()
    }

    fn label(&self, index: usize) -> usize {
        self.examples[index].label
    }

    fn env(&self, index: usize) -> Result<ImageEnv<'_>> {
        self.sensor.env(&self.examples[index].image)
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn action_space(&self) -> ActionSpace {
        self.sensor.action_space()
    }

    fn context_dim(&self) -> usize {
        self.sensor.low_res_side * self.sensor.low_res_side
    }

    fn glimpse_dim(&self) -> usize {
        self.sensor.retina * self.sensor.retina
    }
}

/// A fixed list of toy worlds; world `i` carries label `i mod classes`.
#[derive(Debug, Clone)]
pub struct ToySource {
    pub worlds: Vec<ToyWorld>,
    pub classes: usize,
}

impl ToySource {
    pub fn random(
        worlds: usize,
        cells: usize,
        scales: usize,
        glimpses: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    ) -> Result<Self> {
        if worlds == 0 {
            return Err(Error::config("toy data needs at least one world"));
        }
        let worlds = (0..worlds)
            .map(|i| {
                let world_seed = substream(seed, "toy-data", i as u64).random::<u64>();
                ToyWorld::random(cells, scales, glimpses, classes, spread, world_seed)
            })
            .collect::<Result<_>>()?;
        Ok(Self { worlds, classes })
    }
}

impl ExampleSource for ToySource {
    type Env<'a> = &'a ToyWorld;

    fn len(&self) -> usize {
        self.worlds.len()
    }

    fn label(&self, index: usize) -> usize {
        index % self.classes
    }

    fn env(&self, index: usize) -> Result<&ToyWorld> {
        Ok(&self.worlds[index])
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn action_space(&self) -> ActionSpace {
        self.worlds[0].action_space()
    }

    fn context_dim(&self) -> usize {
        self.worlds[0].context_dim()
    }

    fn glimpse_dim(&self) -> usize {
        self.worlds[0].glimpse_dim()
    }
}

/// Train and test splits of one kind.
#[derive(Debug, Clone)]
pub enum ExperimentData {
    Images { train: ImageSource, test: ImageSource },
    Toy { train: ToySource, test: ToySource },
}

fn place(config: &ExperimentConfig, source: &[LabeledExample], count: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    let [lo, hi] = config.data.scale_range;
    let placer = DigitPlacer::new(config.data.canvas, (lo, hi))?;
    generate_translated_scaled(source, &placer, count, seed)
}

/// Seed of the held-out split, distinct from the training split's.
fn test_seed(seed: u64) -> u64 {
    substream(seed, "dataset-test", 0).random()
}

fn image_source(config: &ExperimentConfig, examples: Vec<LabeledExample>, classes: usize) -> ImageSource {
    ImageSource {
        sensor: config.glimpse_sensor(),
        examples,
        classes,
    }
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let d = &config.data;
        let required = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| Error::config(format!("data.{what} is required for data.kind = {:?}", d.kind)))
        };
        let (train, test, classes) = match d.kind {
            DataKind::Toy => {
                let t = &d.toy;
                let source = ToySource::random(
                    t.worlds,
                    t.cells,
                    t.scales,
                    config.model.glimpses,
                    t.classes,
                    t.feature_spread,
                    config.seed,
                )?;
                // The toy task is fitting: the worlds are both splits.
                return Ok(Self::Toy {
                    train: source.clone(),
                    test: source,
                });
            }
            DataKind::Dataset => {
                let train = Dataset::read(&required(&d.train, "train")?)?;
                let test = Dataset::read(&required(&d.test, "test")?)?;
                if (train.height, train.width) != (test.height, test.width) {
                    return Err(Error::config("train and test datasets differ in image size"));
                }
                let classes = train.classes.max(test.classes);
                (train.examples, test.examples, classes)
            }
            DataKind::Mnist => {
                let dir = required(&d.mnist_dir, "mnist_dir")?;
                let train = read_mnist_dir(&dir, true)?;
                let test = read_mnist_dir(&dir, false)?;
                (
                    place(config, &train, d.train_count, config.seed)?,
                    place(config, &test, d.test_count, test_seed(config.seed))?,
                    10,
                )
            }
            DataKind::Glyphs => {
                let train = glyph_digits(d.glyphs_per_class, config.seed);
                let test = glyph_digits(d.glyphs_per_class, test_seed(config.seed));
                (
                    place(config, &train, d.train_count, config.seed)?,
                    place(config, &test, d.test_count, test_seed(config.seed))?,
                    10,
                )
            }
        };
        if train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        Ok(Self::Images {
            train: image_source(config, train, classes),
            test: image_source(config, test, classes),
        })
    }
}

/// The network shape a config implies for a given source.
pub fn model_shape<S: ExampleSource>(config: &ExperimentConfig, source: &S) -> ModelShape {
    let m = &config.model;
    ModelShape {
        action_space: source.action_space(),
        context_dim: source.context_dim(),
        glimpse_dim: source.glimpse_dim(),
        bottom_width: m.bottom_width,
        top_width: m.top_width,
        inference_width: m.inference_width,
        classes: source.classes(),
        glimpses: m.glimpses,
        location_log_std: m.location_std.ln(),
    }
}
