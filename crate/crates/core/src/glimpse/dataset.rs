//! Translated-scaled digit generation and the on-disk dataset container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "WSRAMDS\0"
//! version    u32      1
//! height     u32      canvas rows
//! width      u32      canvas columns
//! count      u32      number of examples
//! classes    u32      number of classes
//! examples   count × (label: u8, pixels: height·width bytes, row-major, 0–255)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use super::image::{Image, LabeledExample};
use super::resample::area_resample;
use crate::error::{Error, Result};
use crate::rng::substream;

pub const CONTAINER_MAGIC: &[u8; 8] = b"WSRAMDS\0";
pub const CONTAINER_VERSION: u32 = 1;

/// Places source digits on a black square canvas at a random scale and
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitPlacer {
    pub canvas: usize,
    pub scale_range: (f64, f64),
}

/// Rejection sampling gives up after this many oversized draws.
const MAX_SCALE_DRAWS: usize = 1000;

impl DigitPlacer {
    pub fn new(canvas: usize, scale_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = scale_range;
        if canvas == 0 || !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::config(format!(
                "invalid canvas {canvas} or scale range [{lo}, {hi}]"
            )));
        }
        Ok(Self { canvas, scale_range })
    }

    fn scaled_side(digit: &Image, scale: f64) -> (usize, usize) {
        let h = ((digit.height() as f64 * scale).round() as usize).max(1);
        let w = ((digit.width() as f64 * scale).round() as usize).max(1);
        (h, w)
    }

    /// Rescales `digit` by `scale` and pastes it with its top-left corner at
    /// `(row, col)`.
    pub fn place_at(&self, digit: &Image, scale: f64, row: usize, col: usize) -> Result<Image> {
        let (h, w) = Self::scaled_side(digit, scale);
        if row + h > self.canvas || col + w > self.canvas {
            return Err(Error::domain(format!(
                "{h}×{w} digit at ({row}, {col}) leaves the {0}×{0} canvas",
                self.canvas
            )));
        }
        let pixels = area_resample(digit.pixels(), digit.height(), digit.width(), h, w);
        let mut canvas = Image::black(self.canvas, self.canvas);
        for r in 0..h {
            for c in 0..w {
                canvas.set(row + r, col + c, pixels[r * w + c].clamp(0.0, 1.0));
            }
        }
        Ok(canvas)
    }

    /// Uniform scale in the range (redrawn while the digit would not fit),
    /// then a uniform position with the digit fully inside the canvas.
    pub fn place<R: Rng + ?Sized>(&self, digit: &Image, rng: &mut R) -> Result<Image> {
        let (lo, hi) = self.scale_range;
        for _ in 0..MAX_SCALE_DRAWS {
            let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let (h, w) = Self::scaled_side(digit, scale);
            if h > self.canvas || w > self.canvas {
                continue;
            }
            let row = rng.random_range(0..=self.canvas - h);
            let col = rng.random_range(0..=self.canvas - w);
            return self.place_at(digit, scale, row, col);
        }
        Err(Error::config(format!(
            "no scale in [{lo}, {hi}] fits a {}px digit on a {}px canvas",
            digit.height(),
            self.canvas
        )))
    }
}

/// Generates `count` examples. Example `i` draws from substream
/// `(seed, "dataset", i)`: a class uniformly among those present in `source`,
/// then a source digit of that class uniformly, then its placement.
pub fn generate_translated_scaled(
    source: &[LabeledExample],
    placer: &DigitPlacer,
    count: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let classes = source.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, e) in source.iter().enumerate() {
        by_class[e.label].push(i);
    }
    let present: Vec<usize> = (0..classes).filter(|c| !by_class[*c].is_empty()).collect();
    if present.is_empty() && count > 0 {
        return Err(Error::config("no source digits to place"));
    }
    (0..count)
        .map(|i| {
            let mut rng = substream(seed, "dataset", i as u64);
            let class = present[rng.random_range(0..present.len())];
            let pick = by_class[class][rng.random_range(0..by_class[class].len())];
            Ok(LabeledExample {
                image: placer.place(&source[pick].image, &mut rng)?,
                label: class,
            })
        })
        .collect()
}

/// An in-memory dataset read from or written to the container format.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        for e in &examples {
            if e.image.height() != height || e.image.width() != width {
                return Err(Error::Dimension {
                    context: "dataset image",
                    expected: height * width,
                    actual: e.image.height() * e.image.width(),
                });
            }
            if e.label >= classes {
                return Err(Error::domain(format!("label {} ≥ class count {classes}", e.label)));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for e in &self.examples {
            h[e.label] += 1;
        }
        h
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CONTAINER_MAGIC)?;
        out.write_u32::<LittleEndian>(CONTAINER_VERSION)?;
        out.write_u32::<LittleEndian>(self.height as u32)?;
        out.write_u32::<LittleEndian>(self.width as u32)?;
        out.write_u32::<LittleEndian>(self.examples.len() as u32)?;
        out.write_u32::<LittleEndian>(self.classes as u32)?;
        for e in &self.examples {
            out.write_u8(e.label as u8)?;
            out.write_all(&e.image.to_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let bad = |m: &str| Error::input_format(path, m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CONTAINER_MAGIC {
            return Err(bad("not a dataset container (bad magic)"));
        }
        let mut header = [0u32; 5];
        for h in &mut header {
            *h = input.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        }
        let [version, height, width, count, classes] = header.map(|v| v as usize);
        if version as u32 != CONTAINER_VERSION {
            return Err(bad(&format!("unsupported container version {version}")));
        }
        let mut examples = Vec::with_capacity(count);
        let mut pixels = vec![0u8; height * width];
        for _ in 0..count {
            let label = usize::from(input.read_u8().map_err(|_| bad("truncated example"))?);
            input.read_exact(&mut pixels).map_err(|_| bad("truncated example"))?;
            examples.push(LabeledExample {
                image: Image::from_bytes(height, width, &pixels)?,
                label,
            });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after the last example"));
        }
        Self::new(height, width, classes, examples).map_err(|e| bad(&e.to_string()))
    }
}
