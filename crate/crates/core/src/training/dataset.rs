//! Readers for the standard MNIST (IDX) and CIFAR-10 (binary) archives.
//!
//! Files are validated structurally: magic numbers, declared counts and
//! exact byte lengths. Both readers accept gzip-compressed copies.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::Mnist => 1,
            Self::Cifar10 => 3,
        }
    }

    pub fn side(self) -> usize {
        match self {
            Self::Mnist => 28,
            Self::Cifar10 => 32,
        }
    }

    pub fn samples_per_image(self) -> usize {
        self.side() * self.side() * self.channels()
    }

    /// `(train, test)` sizes of the standard distribution.
    pub fn split_sizes(self) -> (usize, usize) {
        match self {
            Self::Mnist => (60_000, 10_000),
            Self::Cifar10 => (50_000, 10_000),
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Self::Mnist => 1,
            Self::Cifar10 => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(Self::Mnist),
            2 => Some(Self::Cifar10),
            _ => None,
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            _ => Err(contract(format!(
                "unknown dataset {s:?}; expected mnist or cifar10"
            ))),
        }
    }
}

/// A compact set of same-shaped 8-bit images, stored `H×W×C` per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(contract(format!(
                "{} bytes is not a whole number of {height}x{width}x{channels} images",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.samples_per_image()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn samples_per_image(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn bytes(&self, i: usize) -> &[u8] {
        let per = self.samples_per_image();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Image {
        Image::from_bytes(self.height, self.width, self.channels, self.bytes(i))
            .expect("shape checked on construction")
    }

    pub fn images(&self, range: std::ops::Range<usize>) -> Vec<Image> {
        range.map(|i| self.image(i)).collect()
    }

    /// The first `n` images (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.samples_per_image()].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: ImageSet,
    pub test: ImageSet,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| corrupt(path, format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::DatasetCorrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads an IDX3 unsigned-byte image file of any image count.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 16 {
        return Err(corrupt(path, "shorter than the IDX header"));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    if word(0) != 0x0000_0803 {
        return Err(corrupt(
            path,
            format!("IDX magic {:#010x}, expected 0x00000803", word(0)),
        ));
    }
    let (count, rows, cols) = (word(1), word(2), word(3));
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(corrupt(
            path,
            format!(
                "header declares {count} images of {rows}x{cols} ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    ImageSet::new(rows, cols, 1, bytes[16..].to_vec())
}

/// Writes `set` (single channel) as an uncompressed IDX3 file.
pub fn write_idx_images(path: impl AsRef<Path>, set: &ImageSet) -> Result<()> {
    let (h, w, c) = set.shape();
    if c != 1 {
        return Err(contract("IDX image files hold single-channel images"));
    }
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for v in [0x0803u32, set.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Reads one CIFAR-10 binary batch (label byte + planar RGB per record).
pub fn read_cifar_batch(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(corrupt(
            path,
            format!(
                "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                bytes.len()
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * 3072);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        if record[0] > 9 {
            return Err(corrupt(
                path,
                format!("label byte {} outside 0..=9", record[0]),
            ));
        }
        let planes = &record[1..];
        for p in 0..1024 {
            for c in 0..3 {
                pixels.push(planes[c * 1024 + p]);
            }
        }
    }
    ImageSet::new(32, 32, 3, pixels)
}

fn find(root: &Path, dirs: &[&str], names: &[&str]) -> Result<PathBuf> {
    for dir in dirs {
        for name in names {
            for suffix in ["", ".gz"] {
                let p = root.join(dir).join(format!("{name}{suffix}"));
                if p.is_file() {
                    return Ok(p);
                }
            }
        }
    }
    Err(Error::DatasetMissing {
        path: root.join(dirs[0]).join(names[0]),
    })
}

fn expect_count(set: ImageSet, expected: usize, path: &Path) -> Result<ImageSet> {
    if set.len() != expected {
        return Err(corrupt(
            path,
            format!("{} images, expected {expected}", set.len()),
        ));
    }
    Ok(set)
}

/// Loads the train and test splits in file order.
///
/// MNIST is looked up as `train-images-idx3-ubyte` and
/// `t10k-images-idx3-ubyte` (optionally `.gz`) under `root`, `root/mnist`
/// or `root/MNIST/raw`; CIFAR-10 as `data_batch_{1..5}.bin` and
/// `test_batch.bin` under `root/cifar-10-batches-bin` or `root`.
pub fn ingest_dataset(kind: DatasetKind, root: impl AsRef<Path>) -> Result<Splits> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::DatasetMissing {
            path: root.to_path_buf(),
        });
    }
    let (n_train, n_test) = kind.split_sizes();
    match kind {
        DatasetKind::Mnist => {
            let dirs = [".", "mnist", "MNIST/raw"];
            let train_path = find(
                root,
                &dirs,
                &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
            )?;
            let test_path = find(
                root,
                &dirs,
                &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
            )?;
            let check = |set: ImageSet, n: usize, p: &Path| -> Result<ImageSet> {
                if set.shape() != (28, 28, 1) {
                    return Err(corrupt(
                        p,
                        format!("images are {:?}, expected 28x28", set.shape()),
                    ));
                }
                expect_count(set, n, p)
            };
            Ok(Splits {
                train: check(read_idx_images(&train_path)?, n_train, &train_path)?,
                test: check(read_idx_images(&test_path)?, n_test, &test_path)?,
            })
        }
        DatasetKind::Cifar10 => {
            let dirs = ["cifar-10-batches-bin", "."];
            let mut pixels = Vec::with_capacity(n_train * 3072);
            for b in 1..=5 {
                let p = find(root, &dirs, &[&format!("data_batch_{b}.bin")])?;
                let set = expect_count(read_cifar_batch(&p)?, 10_000, &p)?;
                pixels.extend_from_slice(&set.pixels);
            }
            let test_path = find(root, &dirs, &["test_batch.bin"])?;
            Ok(Splits {
                train: ImageSet::new(32, 32, 3, pixels)?,
                test: expect_count(read_cifar_batch(&test_path)?, n_test, &test_path)?,
            })
        }
    }
}
