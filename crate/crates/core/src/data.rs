//! IDX ingestion, normalization, stratified splitting and seeded batching.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::nn::Tensor2D;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;
pub const MNIST_TRAIN_SIZE: usize = 60_000;
pub const VALIDATION_SIZE: usize = 6_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX file has {extra} trailing bytes after the declared payload")]
    TrailingBytes { extra: usize },
    #[error("unsupported image dimensions {rows}x{cols}, expected 28x28")]
    BadDimensions { rows: u32, cols: u32 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside 0..=9")]
    BadLabel(u8),
}

fn read_header(bytes: &[u8], magic: u32, header_len: usize) -> Result<(), IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let found = BigEndian::read_u32(&bytes[..4]);
    if found != magic {
        return Err(IdxError::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], expected: usize) -> Result<(), IdxError> {
    match bytes.len() {
        n if n < expected => Err(IdxError::Truncated {
            expected,
            actual: n,
        }),
        n if n > expected => Err(IdxError::TrailingBytes { extra: n - expected }),
        _ => Ok(()),
    }
}

/// Parses an image file into `(count, raw pixels)`; pixels are row-major,
/// one 784-byte block per image.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<u8>), IdxError> {
    read_header(bytes, IMAGE_MAGIC, 16)?;
    let count = BigEndian::read_u32(&bytes[4..8]) as usize;
    let rows = BigEndian::read_u32(&bytes[8..12]);
    let cols = BigEndian::read_u32(&bytes[12..16]);
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(IdxError::BadDimensions { rows, cols });
    }
    check_payload(bytes, 16 + count * PIXELS)?;
    Ok((count, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    read_header(bytes, LABEL_MAGIC, 8)?;
    let count = BigEndian::read_u32(&bytes[4..8]) as usize;
    check_payload(bytes, 8 + count)?;
    Ok(bytes[8..].to_vec())
}

/// Serializes images in IDX format. Used to build fixtures.
pub fn encode_idx_images(count: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; 16];
    BigEndian::write_u32(&mut out[0..4], IMAGE_MAGIC);
    BigEndian::write_u32(&mut out[4..8], count as u32);
    BigEndian::write_u32(&mut out[8..12], IMAGE_SIDE as u32);
    BigEndian::write_u32(&mut out[12..16], IMAGE_SIDE as u32);
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; 8];
    BigEndian::write_u32(&mut out[0..4], LABEL_MAGIC);
    BigEndian::write_u32(&mut out[4..8], labels.len() as u32);
    out.extend_from_slice(labels);
    out
}

pub fn normalize(pixel: u8) -> f64 {
    pixel as f64 / 255.0
}

/// Images with labels. Pixels are kept as bytes and normalized to `[0, 1]`
/// when gathered into a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self, IdxError> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(IdxError::CountMismatch {
                images: pixels.len() / PIXELS,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(IdxError::BadLabel(bad));
        }
        Ok(Self { pixels, labels })
    }

    pub fn from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Self, IdxError> {
        let (count, pixels) = parse_idx_images(image_bytes)?;
        let labels = parse_idx_labels(label_bytes)?;
        if count != labels.len() {
            return Err(IdxError::CountMismatch {
                images: count,
                labels: labels.len(),
            });
        }
        Self::new(pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Normalized `indices.len() × 784` batch and its labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor2D, Vec<u8>) {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend(self.raw_image(i).iter().map(|&p| normalize(p)));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let images = Tensor2D::from_vec(indices.len(), PIXELS, data).expect("batch shape");
        (images, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            pixels.extend_from_slice(self.raw_image(i));
        }
        Self {
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Reads a file, transparently inflating gzip (`1f 8b` prefix).
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads one of the standard MNIST file pairs from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = read_maybe_gzip(&locate(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = read_maybe_gzip(&locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    Ok(Dataset::from_idx(&images, &labels)?)
}

/// Stratified split into `(train, validation)` index lists with exactly
/// `val_count` validation samples. Per-class quotas use largest remainders.
pub fn stratified_split_indices(
    labels: &[u8],
    val_count: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    if val_count > n {
        return Err(Error::Split(format!(
            "cannot hold out {val_count} of {n} samples"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }

    let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * val_count / n.max(1)).collect();
    let mut remaining = val_count - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..CLASSES).collect();
    // largest fractional part first; ties by class index
    order.sort_by_key(|&c| std::cmp::Reverse((by_class[c].len() * val_count) % n.max(1)));
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..quotas[class]]);
        train.extend_from_slice(&members[quotas[class]..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// The standard 54,000 / 6,000 split of the MNIST training set.
pub fn split(train: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if train.len() != MNIST_TRAIN_SIZE {
        return Err(Error::Split(format!(
            "expected {MNIST_TRAIN_SIZE} training samples, got {}",
            train.len()
        )));
    }
    let (t, v) = stratified_split_indices(train.labels(), VALIDATION_SIZE, seed)?;
    Ok((train.subset(&t), train.subset(&v)))
}

/// Seeded per-epoch shuffles. Epoch `e` draws from ChaCha stream `e`, so the
/// sequence of permutations depends only on the seed.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            batch_size,
            cursor: 0,
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}
