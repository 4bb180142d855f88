//! Procedural 28×28 digit glyphs, a stand-in source when MNIST files are not
//! at hand (tests, fixtures, smoke runs).

use rand::Rng;

use super::image::{Image, LabeledExample};
use super::resample::area_resample;
use crate::rng::substream;

/// 5×7 bitmap font, one row per string, `#` lit.
const FONT: [[&str; 7]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "],
];

fn bitmap(digit: usize) -> Vec<f64> {
    FONT[digit]
        .iter()
        .flat_map(|row| row.bytes().map(|b| if b == b'#' { 1.0 } else { 0.0 }))
        .collect()
}

/// `per_class` jittered renderings of each digit 0–9, ordered by class.
pub fn glyph_digits(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut out = Vec::with_capacity(per_class * 10);
    for digit in 0..10 {
        let base = bitmap(digit);
        for v in 0..per_class {
            let mut rng = substream(seed, "glyph", (digit * per_class + v) as u64);
            let h = rng.random_range(16..=22);
            let w = rng.random_range(10..=16);
            let ink = rng.random_range(0.7..=1.0);
            let glyph = area_resample(&base, 7, 5, h, w);
            let top = rng.random_range(0..=28 - h);
            let left = rng.random_range(0..=28 - w);
            let mut img = Image::black(28, 28);
            for r in 0..h {
                for c in 0..w {
                    img.set(top + r, left + c, (glyph[r * w + c] * ink).clamp(0.0, 1.0));
                }
            }
            out.push(LabeledExample {
                image: img,
                label: digit,
            });
        }
    }
    out
}
