//! Reader and writer for the IDX files MNIST is distributed in.
//!
//! Images: magic `0x00000803`, count, rows, cols (big-endian u32), then
//! `count·rows·cols` bytes. Labels: magic `0x00000801`, count, then bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use super::image::{Image, LabeledExample};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(path: &Path, bytes: &[u8], words: usize, magic: u32) -> Result<Vec<usize>> {
    if bytes.len() < 4 * words {
        return Err(Error::input_format(path, "file shorter than its IDX header"));
    }
    let found = BigEndian::read_u32(&bytes[0..4]);
    if found != magic {
        return Err(Error::input_format(
            path,
            format!("bad IDX magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    Ok((1..words)
        .map(|i| BigEndian::read_u32(&bytes[4 * i..4 * i + 4]) as usize)
        .collect())
}

pub fn read_idx_images(path: &Path) -> Result<Vec<Image>> {
    let bytes = fs::read(path)?;
    let dims = header(path, &bytes, 4, IMAGES_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(Error::input_format(
            path,
            format!("expected {} pixel bytes, found {}", count * rows * cols, body.len()),
        ));
    }
    body.chunks_exact(rows * cols)
        .map(|chunk| Image::from_bytes(rows, cols, chunk))
        .collect()
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let dims = header(path, &bytes, 2, LABELS_MAGIC)?;
    let body = &bytes[8..];
    if body.len() != dims[0] {
        return Err(Error::input_format(
            path,
            format!("expected {} labels, found {}", dims[0], body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Loads paired image and label files, requiring 28×28 digits.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<Vec<LabeledExample>> {
    let imgs = read_idx_images(images)?;
    let labs = read_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(Error::input_format(
            labels,
            format!("{} labels for {} images", labs.len(), imgs.len()),
        ));
    }
    if let Some(img) = imgs.iter().find(|i| i.height() != 28 || i.width() != 28) {
        return Err(Error::input_format(
            images,
            format!("source digits must be 28×28, found {}×{}", img.height(), img.width()),
        ));
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .map(|(image, label)| LabeledExample {
            image,
            label: usize::from(label),
        })
        .collect())
}

/// Locates `{train,t10k}-{images-idx3,labels-idx1}-ubyte` in `dir`.
pub fn read_mnist_dir(dir: &Path, train: bool) -> Result<Vec<LabeledExample>> {
    let prefix = if train { "train" } else { "t10k" };
    read_idx_pair(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn write_idx_pair(images: &Path, labels: &Path, examples: &[LabeledExample]) -> Result<()> {
    let (rows, cols) = examples
        .first()
        .map(|e| (e.image.height(), e.image.width()))
        .unwrap_or((28, 28));
    let mut img = Vec::with_capacity(16 + examples.len() * rows * cols);
    img.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    img.write_u32::<BigEndian>(examples.len() as u32)?;
    img.write_u32::<BigEndian>(rows as u32)?;
    img.write_u32::<BigEndian>(cols as u32)?;
    let mut lab = Vec::with_capacity(8 + examples.len());
    lab.write_u32::<BigEndian>(LABELS_MAGIC)?;
    lab.write_u32::<BigEndian>(examples.len() as u32)?;
    for e in examples {
        img.write_all(&e.image.to_bytes())?;
        lab.push(e.label as u8);
    }
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}
