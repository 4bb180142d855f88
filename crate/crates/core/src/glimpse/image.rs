use crate::error::{Error, Result};

/// A grayscale image with pixel values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension {
                context: "image pixels",
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn black(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|b| f64::from(*b) / 255.0).collect())
    }

    /// Quantizes to 0–255 with rounding.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    /// Pixel at signed coordinates; zero outside the image.
    pub fn get_padded(&self, row: i64, col: i64) -> f64 {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            0.0
        } else {
            self.pixels[row as usize * self.width + col as usize]
        }
    }
}

/// A labeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    pub label: usize,
}
