//! Images, glimpse actions and observations, the translated-scaled digit
//! generator, and enumerable toy worlds.

mod dataset;
mod glyphs;
mod image;
mod mnist;
mod resample;
mod sensor;
mod toy;

pub use dataset::{generate_translated_scaled, Dataset, DigitPlacer, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use glyphs::glyph_digits;
pub use image::{Image, LabeledExample};
pub use mnist::{read_idx_images, read_idx_labels, read_idx_pair, read_mnist_dir, write_idx_pair};
pub use resample::area_resample;
pub use sensor::{
    extract_glimpse, low_res_view, Action, ActionSpace, Environment, GlimpseObservation, GlimpseSensor, ImageEnv,
    Location,
};
pub use toy::{make_toy_world, prefix_node, prefix_node_count, sequence_choices, sequence_code, ToyTables, ToyWorld};
