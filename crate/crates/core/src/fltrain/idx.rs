//! IDX (MNIST) file reader. Accepts raw or gzip-compressed files.
//!
//! Layout: big-endian `u32` magic (2051 images, 2049 labels), big-endian
//! `u32` dimensions, then unsigned bytes.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use crate::channel::RngStream;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Locations of an IDX train/test pair and how many samples to keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxSource {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub train_subsample: usize,
    pub test_subsample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len().checked_div(self.rows * self.cols).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "expected {} pixel bytes, found {}",
            n * rows * cols,
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn read_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_images(&read_all(path.as_ref())?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_labels(&read_all(path.as_ref())?)
}

/// Pair images with labels, scale pixels to `[0, 1]`, and keep a random
/// subsample of `keep` items (all of them when `keep` is 0 or too large).
pub fn to_dataset(images: &IdxImages, labels: &[u8], keep: usize, rng: &mut RngStream) -> Result<Dataset> {
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let n = images.len();
    let px = images.rows * images.cols;
    let idx: Vec<usize> = if keep == 0 || keep >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng.rng_mut(), n, keep).into_vec()
    };
    Ok(Dataset::new(
        idx.into_iter()
            .map(|i| Sample {
                features: images.pixels[i * px..(i + 1) * px].iter().map(|&p| p as f64 / 255.0).collect(),
                label: labels[i] as usize,
            })
            .collect(),
    ))
}
