use std::fmt;

use crate::error::{contract, Result};
use crate::semantic_kb::IndexGrid;

/// A sequence of bits in transmission order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitStream(Vec<bool>);

impl BitStream {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn with_capacity(n: usize) -> Self {
        Self(Vec::with_capacity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.0
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_field(&mut self, value: u64, width: usize) {
        for b in (0..width).rev() {
            self.0.push((value >> b) & 1 == 1);
        }
    }

    /// Reads a `width`-bit big-endian field starting at bit `at`.
    pub fn read_field(&self, at: usize, width: usize) -> u64 {
        self.0[at..at + width]
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }
}

impl From<Vec<bool>> for BitStream {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl fmt::Display for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Field width for indices into a codebook of `k` vectors: `ceil(log2 k)`.
pub fn bits_per_index(k: usize) -> Result<usize> {
    if k < 2 {
        return Err(contract(format!(
            "codebook size must be at least 2, got {k}"
        )));
    }
    Ok((usize::BITS - (k - 1).leading_zeros()) as usize)
}

/// Fixed-width big-endian serialization of the grid in raster order.
pub fn indices_to_bits(grid: &IndexGrid, k: usize) -> Result<BitStream> {
    let width = bits_per_index(k)?;
    if let Some(slot) = grid.erased().iter().position(|&e| e) {
        return Err(contract(format!("cannot serialize erased slot {slot}")));
    }
    grid.check_range(k)?;
    let mut out = BitStream::with_capacity(grid.slots() * width);
    for &z in grid.indices() {
        out.push_field(z as u64, width);
    }
    Ok(out)
}

/// Inverse of [`indices_to_bits`]. Field values that reach past `k` (only
/// possible when `k` is not a power of two) wrap modulo `k`.
pub fn bits_to_indices(bits: &BitStream, k: usize, rows: usize, cols: usize) -> Result<IndexGrid> {
    let width = bits_per_index(k)?;
    let slots = rows * cols;
    if bits.len() != slots * width {
        return Err(contract(format!(
            "bitstream holds {} bits, {slots} slots of {width} bits need {}",
            bits.len(),
            slots * width
        )));
    }
    let indices = (0..slots)
        .map(|s| (bits.read_field(s * width, width) % k as u64) as u32)
        .collect();
    IndexGrid::new(rows, cols, indices)
}
