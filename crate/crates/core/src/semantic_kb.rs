//! The semantic knowledge shared by sender and receiver: a codebook of
//! learned vectors, nearest-vector quantization, index lookup with erasure
//! imputation, and a portable file format carrying a content digest.
//!
//! File layout (all integers and floats little-endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `DJSCKB1\0`                         |
//! | 4                | `K`, number of vectors (`u32`)            |
//! | 4                | `J`, vector dimension (`u32`)             |
//! | `4·K·J`          | vectors, row-major `f32`                  |
//! | 32               | SHA-256 of every preceding byte           |

use std::fs;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{contract, hex, Error, Result};

pub const KB_MAGIC: &[u8; 8] = b"DJSCKB1\0";
/// Magic, `K` and `J`.
pub const KB_HEADER_LEN: usize = 16;
pub const KB_DIGEST_LEN: usize = 32;

/// `K` semantic vectors of dimension `J`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCodebook {
    size: usize,
    dim: usize,
    vectors: Vec<f32>,
    content_hash: [u8; 32],
}

impl SemanticCodebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(contract(format!(
                "codebook needs K, J >= 1, got K={size}, J={dim}"
            )));
        }
        if size > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(contract(
                "codebook dimensions exceed the 32-bit file fields",
            ));
        }
        if vectors.len() != size * dim {
            return Err(contract(format!(
                "codebook buffer holds {} values, K={size} x J={dim} needs {}",
                vectors.len(),
                size * dim
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(contract(format!("codebook entry {pos} is not finite")));
        }
        let content_hash = digest(&header_and_payload(size, dim, &vectors));
        Ok(Self {
            size,
            dim,
            vectors,
            content_hash,
        })
    }

    /// Entries drawn i.i.d. uniform on `[-1/K, 1/K]`.
    pub fn random<R: Rng + ?Sized>(size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / size.max(1) as f32;
        let vectors = (0..size * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self::new(size, dim, vectors)
    }

    /// Number of vectors, `K`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Vector dimension, `J`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.content_hash
    }

    pub fn content_hash_hex(&self) -> String {
        hex(&self.content_hash)
    }

    pub fn into_vectors(self) -> Vec<f32> {
        self.vectors
    }
}

/// Codebook indices for a `rows × cols` grid of latent slots, with a flag
/// per slot marking indices lost in transit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexGrid {
    rows: usize,
    cols: usize,
    indices: Vec<u32>,
    erased: Vec<bool>,
}

impl IndexGrid {
    pub fn new(rows: usize, cols: usize, indices: Vec<u32>) -> Result<Self> {
        let erased = vec![false; indices.len()];
        Self::with_erasures(rows, cols, indices, erased)
    }

    pub fn with_erasures(
        rows: usize,
        cols: usize,
        indices: Vec<u32>,
        erased: Vec<bool>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(contract(format!(
                "index grid needs positive sides, got {rows}x{cols}"
            )));
        }
        if indices.len() != rows * cols || erased.len() != rows * cols {
            return Err(contract(format!(
                "index grid {rows}x{cols} given {} indices and {} erasure flags",
                indices.len(),
                erased.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            indices,
            erased,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn slots(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn erased(&self) -> &[bool] {
        &self.erased
    }

    pub fn erased_count(&self) -> usize {
        self.erased.iter().filter(|&&e| e).count()
    }

    pub fn has_erasures(&self) -> bool {
        self.erased.iter().any(|&e| e)
    }

    /// Checks that every surviving index addresses one of `k` vectors.
    pub fn check_range(&self, k: usize) -> Result<()> {
        match self
            .indices
            .iter()
            .zip(&self.erased)
            .position(|(&z, &e)| !e && z as usize >= k)
        {
            Some(slot) => Err(contract(format!(
                "index {} at slot {slot} is outside [0, {k})",
                self.indices[slot]
            ))),
            None => Ok(()),
        }
    }
}

/// Real vectors of dimension `dim` on a `rows × cols` grid, slot-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    values: Vec<f32>,
}

impl LatentGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(contract(format!(
                "latent grid needs positive sides, got {rows}x{cols}x{dim}"
            )));
        }
        if values.len() != rows * cols * dim {
            return Err(contract(format!(
                "latent grid {rows}x{cols}x{dim} given {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract("latent grid holds non-finite values"));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> usize {
        self.rows * self.cols
    }

    pub fn slot(&self, d: usize) -> &[f32] {
        &self.values[d * self.dim..(d + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Accumulated in `f64`.
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the row nearest to `query`; the lowest index wins ties.
pub(crate) fn nearest_row(vectors: &[f32], dim: usize, query: &[f32]) -> u32 {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (k, row) in vectors.chunks_exact(dim).enumerate() {
        let d = squared_distance(query, row);
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    best as u32
}

/// Replaces each latent slot by the index of its nearest semantic vector.
pub fn quantize(latent: &LatentGrid, kb: &SemanticCodebook) -> Result<IndexGrid> {
    if latent.dim != kb.dim {
        return Err(contract(format!(
            "latent dimension {} differs from codebook dimension {}",
            latent.dim, kb.dim
        )));
    }
    let indices = latent
        .values
        .chunks_exact(latent.dim)
        .map(|x| nearest_row(&kb.vectors, kb.dim, x))
        .collect();
    IndexGrid::new(latent.rows, latent.cols, indices)
}

/// Retrieves the semantic vector for every slot; erased slots receive the
/// component-wise mean of the codebook.
pub fn lookup(indices: &IndexGrid, kb: &SemanticCodebook) -> Result<LatentGrid> {
    indices.check_range(kb.size)?;
    let fill = if indices.has_erasures() {
        impute_mean(kb)
    } else {
        Vec::new()
    };
    let mut values = Vec::with_capacity(indices.slots() * kb.dim);
    for (&z, &erased) in indices.indices.iter().zip(&indices.erased) {
        if erased {
            values.extend_from_slice(&fill);
        } else {
            values.extend_from_slice(kb.row(z as usize));
        }
    }
    Ok(LatentGrid {
        rows: indices.rows,
        cols: indices.cols,
        dim: kb.dim,
        values,
    })
}

/// Component-wise mean of all `K` semantic vectors.
pub fn impute_mean(kb: &SemanticCodebook) -> Vec<f32> {
    mean_of_rows(&kb.vectors, kb.dim)
}

pub(crate) fn mean_of_rows(vectors: &[f32], dim: usize) -> Vec<f32> {
    let mut acc = vec![0f64; dim];
    let mut count = 0usize;
    for row in vectors.chunks_exact(dim) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
        count += 1;
    }
    acc.into_iter().map(|a| (a / count as f64) as f32).collect()
}

fn header_and_payload(size: usize, dim: usize, vectors: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(KB_HEADER_LEN + vectors.len() * 4 + KB_DIGEST_LEN);
    out.extend_from_slice(KB_MAGIC);
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Canonical byte serialization, including the trailing digest.
pub fn encode_kb(kb: &SemanticCodebook) -> Vec<u8> {
    let mut bytes = header_and_payload(kb.size, kb.dim, &kb.vectors);
    bytes.extend_from_slice(&kb.content_hash);
    bytes
}

pub fn decode_kb(bytes: &[u8]) -> Result<SemanticCodebook> {
    if bytes.len() < KB_MAGIC.len() {
        return Err(Error::Truncated {
            expected: (KB_HEADER_LEN + KB_DIGEST_LEN) as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[..6] != KB_MAGIC[..6] {
        return Err(Error::BadMagic);
    }
    if bytes[6..8] != KB_MAGIC[6..8] {
        return Err(Error::UnsupportedVersion(bytes[6]));
    }
    if bytes.len() < KB_HEADER_LEN {
        return Err(Error::Truncated {
            expected: (KB_HEADER_LEN + KB_DIGEST_LEN) as u64,
            actual: bytes.len() as u64,
        });
    }
    let size = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload_len = size as u64 * dim as u64 * 4;
    let expected = KB_HEADER_LEN as u64 + payload_len + KB_DIGEST_LEN as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let body_end = bytes.len() - KB_DIGEST_LEN;
    let computed = digest(&bytes[..body_end]);
    let stored: [u8; 32] = bytes[body_end..].try_into().unwrap();
    if computed != stored {
        return Err(Error::HashMismatch {
            stored: hex(&stored),
            computed: hex(&computed),
        });
    }
    let vectors = bytes[KB_HEADER_LEN..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SemanticCodebook::new(size, dim, vectors)
}

pub fn save_kb(kb: &SemanticCodebook, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_kb(kb))?;
    Ok(())
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<SemanticCodebook> {
    decode_kb(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn kb(rows: &[&[f32]]) -> SemanticCodebook {
        let dim = rows[0].len();
        SemanticCodebook::new(rows.len(), dim, rows.concat()).unwrap()
    }

    /// Exhaustive scan in f64 with explicit lowest-index tie-breaking.
    fn brute_force(latent: &LatentGrid, kb: &SemanticCodebook) -> Vec<u32> {
        (0..latent.slots())
            .map(|d| {
                let x = latent.slot(d);
                let dists: Vec<f64> = (0..kb.size())
                    .map(|k| {
                        x.iter()
                            .zip(kb.row(k))
                            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                            .sum()
                    })
                    .collect();
                let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                dists.iter().position(|&v| v == min).unwrap() as u32
            })
            .collect()
    }

    #[test]
    fn exact_match_selects_that_row() {
        let book = kb(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.5, -0.5]]);
        let latent = LatentGrid::new(1, 1, 2, vec![0.5, -0.5]).unwrap();
        assert_eq!(quantize(&latent, &book).unwrap().indices(), &[3]);
    }

    #[test]
    fn single_vector_codebook_always_selects_zero() {
        let book = kb(&[&[3.0, -1.0]]);
        let latent =
            LatentGrid::new(2, 2, 2, vec![1.0, 2.0, -5.0, 0.0, 100.0, 7.0, 0.0, 0.0]).unwrap();
        assert_eq!(quantize(&latent, &book).unwrap().indices(), &[0, 0, 0, 0]);
    }

    #[test]
    fn random_latent_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let book = SemanticCodebook::random(8, 4, &mut rng).unwrap();
        let values = (0..16).map(|_| rng.gen_range(-0.2f32..0.2)).collect();
        let latent = LatentGrid::new(2, 2, 4, values).unwrap();
        let got = quantize(&latent, &book).unwrap();
        assert_eq!(got.indices(), brute_force(&latent, &book).as_slice());
        assert!(!got.has_erasures());
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let book = kb(&[&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]]);
        let latent = LatentGrid::new(1, 2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(quantize(&latent, &book).unwrap().indices(), &[0, 0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let book = kb(&[&[1.0, 0.0]]);
        let latent = LatentGrid::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(quantize(&latent, &book), Err(Error::Contract(_))));
    }

    #[test]
    fn lookup_retrieves_rows_and_imputes_erased_slots() {
        let book = kb(&[&[0.0, 2.0], &[2.0, 0.0], &[4.0, 4.0]]);
        let grid = IndexGrid::new(1, 2, vec![0, 0]).unwrap();
        let q = lookup(&grid, &book).unwrap();
        assert_eq!(q.values(), &[0.0, 2.0, 0.0, 2.0]);

        let grid = IndexGrid::with_erasures(1, 3, vec![2, 7, 1], vec![false, true, false]).unwrap();
        let q = lookup(&grid, &book).unwrap();
        assert_eq!(q.slot(0), book.row(2));
        assert_eq!(q.slot(1), impute_mean(&book).as_slice());
        assert_eq!(q.slot(2), book.row(1));
    }

    #[test]
    fn lookup_rejects_out_of_range_index() {
        let book = kb(&[&[0.0], &[1.0]]);
        let grid = IndexGrid::new(1, 1, vec![2]).unwrap();
        assert!(matches!(lookup(&grid, &book), Err(Error::Contract(_))));
    }

    #[test]
    fn quantize_then_lookup_returns_nearest_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let book = SemanticCodebook::random(16, 3, &mut rng).unwrap();
        let values = (0..3 * 9).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
        let latent = LatentGrid::new(3, 3, 3, values).unwrap();
        let q = lookup(&quantize(&latent, &book).unwrap(), &book).unwrap();
        for (d, &z) in brute_force(&latent, &book).iter().enumerate() {
            assert_eq!(q.slot(d), book.row(z as usize));
        }
    }

    #[test]
    fn mean_imputation_examples() {
        assert_eq!(
            impute_mean(&kb(&[&[0.0, 2.0], &[2.0, 0.0]])),
            vec![1.0, 1.0]
        );
        assert_eq!(
            impute_mean(&kb(&[&[0.25, -3.0, 9.5]])),
            vec![0.25, -3.0, 9.5]
        );
    }

    fn pairwise_sum(v: &[f64]) -> f64 {
        if v.len() <= 2 {
            return v.iter().sum();
        }
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }

    #[test]
    fn mean_imputation_matches_pairwise_oracle_at_published_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let book = SemanticCodebook::random(512, 256, &mut rng).unwrap();
        let got = impute_mean(&book);
        for (j, &g) in got.iter().enumerate() {
            let column: Vec<f64> = (0..512).map(|k| book.row(k)[j] as f64).collect();
            let want = pairwise_sum(&column) / 512.0;
            let scale = column.iter().map(|v| v.abs()).sum::<f64>() / 512.0;
            assert!(((g as f64) - want).abs() <= 1e-6 * scale, "column {j}");
        }
    }

    #[test]
    fn file_round_trip_and_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let book = SemanticCodebook::random(512, 256, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.djsckb");
        save_kb(&book, &path).unwrap();
        let len = fs::metadata(&path).unwrap().len();
        assert_eq!(len, (KB_HEADER_LEN + 512 * 256 * 4 + KB_DIGEST_LEN) as u64);
        let back = load_kb(&path).unwrap();
        assert_eq!(back, book);
        assert_eq!(back.content_hash(), book.content_hash());
    }

    #[test]
    fn corrupt_files_fail_with_distinct_errors() {
        let book = kb(&[&[0.5, 1.5], &[-2.0, 3.0]]);
        let good = encode_kb(&book);

        let mut flipped = good.clone();
        flipped[KB_HEADER_LEN + 3] ^= 0x01;
        assert!(matches!(
            decode_kb(&flipped),
            Err(Error::HashMismatch { .. })
        ));

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_kb(&magic), Err(Error::BadMagic)));

        let mut version = good.clone();
        version[6] = b'2';
        assert!(matches!(
            decode_kb(&version),
            Err(Error::UnsupportedVersion(b'2'))
        ));

        assert!(matches!(
            decode_kb(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            decode_kb(&good[..10]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = kb(&[&[0.5, 1.5]]);
        let b = kb(&[&[0.5, 1.25]]);
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), kb(&[&[0.5, 1.5]]).content_hash());
    }

    fn distinct_book(k: usize, dim: usize, seed: u64) -> SemanticCodebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SemanticCodebook::random(k, dim, &mut rng).unwrap()
    }

    proptest! {
        #[test]
        fn quantizer_is_idempotent_on_codebook_rows(
            seed in any::<u64>(),
            k in 2usize..40,
            picks in proptest::collection::vec(any::<u32>(), 6),
        ) {
            let book = distinct_book(k, 5, seed);
            let z: Vec<u32> = picks.iter().map(|p| p % k as u32).collect();
            let grid = IndexGrid::new(2, 3, z).unwrap();
            let back = quantize(&lookup(&grid, &book).unwrap(), &book).unwrap();
            prop_assert_eq!(back, grid);
        }

        #[test]
        fn quantizer_is_nearest_neighbor_optimal(seed in any::<u64>(), k in 1usize..=64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let book = SemanticCodebook::random(k, 4, &mut rng).unwrap();
            let values = (0..4 * 4).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
            let latent = LatentGrid::new(2, 2, 4, values).unwrap();
            let z = quantize(&latent, &book).unwrap();
            for d in 0..latent.slots() {
                let chosen = squared_distance(latent.slot(d), book.row(z.indices()[d] as usize));
                for r in 0..k {
                    prop_assert!(chosen <= squared_distance(latent.slot(d), book.row(r)));
                }
            }
        }

        #[test]
        fn imputation_is_permutation_invariant(seed in any::<u64>(), k in 1usize..50) {
            let book = distinct_book(k, 3, seed);
            let mut rows: Vec<Vec<f32>> = (0..k).map(|r| book.row(r).to_vec()).collect();
            rows.reverse();
            rows.rotate_left(k / 3);
            let shuffled = SemanticCodebook::new(k, 3, rows.concat()).unwrap();
            let (a, b) = (impute_mean(&book), impute_mean(&shuffled));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-7 * (1.0 + x.abs()));
            }
        }

        // Shifts by dyadic constants are exact in f32 for values of this
        // magnitude, so the distances themselves are invariant.
        #[test]
        fn quantizer_is_translation_invariant(seed in any::<u64>(), shift in -8i32..8) {
            let c = shift as f32 * 0.5;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let step = |rng: &mut ChaCha8Rng| rng.gen_range(-64i32..64) as f32 / 64.0;
            let book_vals: Vec<f32> = (0..10 * 3).map(|_| step(&mut rng)).collect();
            let lat_vals: Vec<f32> = (0..4 * 3).map(|_| step(&mut rng)).collect();
            let book = SemanticCodebook::new(10, 3, book_vals.clone()).unwrap();
            let latent = LatentGrid::new(2, 2, 3, lat_vals.clone()).unwrap();
            let shifted_book = SemanticCodebook::new(10, 3, book_vals.iter().map(|v| v + c).collect()).unwrap();
            let shifted = LatentGrid::new(2, 2, 3, lat_vals.iter().map(|v| v + c).collect()).unwrap();
            prop_assert_eq!(quantize(&latent, &book).unwrap(), quantize(&shifted, &shifted_book).unwrap());
        }
    }
}
