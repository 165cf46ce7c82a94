//! Checkpoint directory: `params.bin`, `kb.djsckb`, `train_report.csv`,
//! `config.snapshot`.
//!
//! `params.bin` layout (little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `DJSCPAR1`                          |
//! | 4     | dataset tag (1 MNIST, 2 CIFAR-10)         |
//! | 12    | in_channels, hidden_width, image_side     |
//! | 4     | codebook size `K`                         |
//! | 32    | SHA-256 content hash of the paired KB     |
//! | 4     | tensor count `T`                          |
//! | ...   | `T` × (u32 length, f32 values)            |
//! | 32    | SHA-256 of everything above               |

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, CodecParameters};
use crate::error::{hex, Error, Result};
use crate::semantic_kb::{load_kb, save_kb, SemanticCodebook};

use super::dataset::DatasetKind;
use super::trainer::TrainReport;

pub const PARAMS_FILE: &str = "params.bin";
pub const KB_FILE: &str = "kb.djsckb";
pub const REPORT_FILE: &str = "train_report.csv";
pub const SNAPSHOT_FILE: &str = "config.snapshot";

const PARAMS_MAGIC: &[u8; 8] = b"DJSCPAR1";

/// Everything needed to run the trained codec.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dataset: DatasetKind,
    pub codec: CodecConfig,
    pub params: CodecParameters<f32>,
    pub kb: SemanticCodebook,
    /// Hash of the codebook the networks were trained with.
    pub trained_kb_hash: [u8; 32],
}

impl Checkpoint {
    pub fn new(
        dataset: DatasetKind,
        codec: CodecConfig,
        params: CodecParameters<f32>,
        kb: SemanticCodebook,
    ) -> Self {
        let trained_kb_hash = kb.content_hash();
        Self {
            dataset,
            codec,
            params,
            kb,
            trained_kb_hash,
        }
    }

    /// Refuses to proceed if the codebook differs from the training one.
    pub fn verify_kb(&self) -> Result<()> {
        if self.kb.content_hash() != self.trained_kb_hash {
            return Err(Error::KbDesync {
                expected: hex(&self.trained_kb_hash),
                actual: self.kb.content_hash_hex(),
            });
        }
        Ok(())
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn encode_params(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    for v in [
        ck.dataset.tag(),
        ck.codec.in_channels as u32,
        ck.codec.hidden_width as u32,
        ck.codec.image_side as u32,
        ck.kb.size() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ck.trained_kb_hash);
    let tensors = ck.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(bad(self.path, "unexpected end of parameter file"));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct ParamsHeader {
    dataset: DatasetKind,
    codec: CodecConfig,
    k: usize,
    kb_hash: [u8; 32],
}

fn decode_params(bytes: &[u8], path: &Path) -> Result<(ParamsHeader, CodecParameters<f32>)> {
    if bytes.len() < PARAMS_MAGIC.len() + 32 {
        return Err(bad(path, "file too short"));
    }
    if &bytes[..8] != PARAMS_MAGIC {
        return Err(bad(path, "not a parameter file (bad magic)"));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != stored {
        return Err(bad(path, "content hash mismatch"));
    }
    let mut c = Cursor {
        bytes: body,
        at: 8,
        path,
    };
    let tag = c.u32()?;
    let dataset = DatasetKind::from_tag(tag)
        .ok_or_else(|| bad(path, format!("unknown dataset tag {tag}")))?;
    let codec = CodecConfig::new(c.u32()? as usize, c.u32()? as usize, c.u32()? as usize)
        .map_err(|e| bad(path, e.to_string()))?;
    let k = c.u32()? as usize;
    let kb_hash: [u8; 32] = c.take(32)?.try_into().unwrap();
    let count = c.u32()? as usize;
    let mut params = CodecParameters::<f32>::zeroed(&codec);
    let expected: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if count != expected.len() {
        return Err(bad(
            path,
            format!(
                "{count} tensors stored, architecture has {}",
                expected.len()
            ),
        ));
    }
    let mut loaded = Vec::with_capacity(count);
    for (i, &len) in expected.iter().enumerate() {
        let n = c.u32()? as usize;
        if n != len {
            return Err(bad(
                path,
                format!("tensor {i} holds {n} values, architecture needs {len}"),
            ));
        }
        let raw = c.take(n * 4)?;
        loaded.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect::<Vec<f32>>(),
        );
    }
    if c.at != body.len() {
        return Err(bad(path, "trailing bytes after tensors"));
    }
    let mut it = loaded.into_iter();
    params.for_each_tensor_mut(|dst| *dst = it.next().expect("counted above"));
    Ok((
        ParamsHeader {
            dataset,
            codec,
            k,
            kb_hash,
        },
        params,
    ))
}

/// Writes the checkpoint files into `dir`, creating it if needed.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    ck: &Checkpoint,
    report: Option<&TrainReport>,
    config_snapshot: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(PARAMS_FILE), encode_params(ck))?;
    save_kb(&ck.kb, dir.join(KB_FILE))?;
    if let Some(r) = report {
        r.write_csv(dir.join(REPORT_FILE))?;
    }
    if let Some(s) = config_snapshot {
        fs::write(dir.join(SNAPSHOT_FILE), s)?;
    }
    Ok(())
}

/// Loads the networks and the knowledge base; fails with
/// [`Error::KbDesync`] when the codebook on disk is not the one the
/// networks were trained with.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(|e| bad(&path, e.to_string()))?;
    let (header, params) = decode_params(&bytes, &path)?;
    let kb = load_kb(dir.join(KB_FILE))?;
    let ck = Checkpoint {
        dataset: header.dataset,
        codec: header.codec,
        params,
        kb,
        trained_kb_hash: header.kb_hash,
    };
    ck.verify_kb()?;
    if ck.kb.size() != header.k || ck.kb.dim() != ck.codec.hidden_width {
        return Err(bad(
            &path,
            "knowledge base shape does not match the networks",
        ));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let codec = CodecConfig::new(1, 8, 8).unwrap();
        let params = CodecParameters::init(&codec, &mut rng);
        let kb = SemanticCodebook::random(16, 8, &mut rng).unwrap();
        Checkpoint::new(DatasetKind::Mnist, codec, params, kb)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        save_checkpoint(
            dir.path(),
            &ck,
            Some(&TrainReport::default()),
            Some("seed = 1\n"),
        )
        .unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.kb, ck.kb);
        assert_eq!(back.codec, ck.codec);
        assert_eq!(back.dataset, DatasetKind::Mnist);
        assert!(dir.path().join(SNAPSHOT_FILE).is_file());
    }

    #[test]
    fn swapped_knowledge_base_is_desynchronized() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        save_checkpoint(dir.path(), &ck, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        save_kb(
            &SemanticCodebook::random(16, 8, &mut rng).unwrap(),
            dir.path().join(KB_FILE),
        )
        .unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::KbDesync { .. }));
        assert!(err.to_string().contains("knowledge base desynchronized"));
    }

    #[test]
    fn corrupted_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &sample(), None, None).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[100] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Checkpoint { .. })
        ));
        fs::remove_file(&p).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Checkpoint { .. })
        ));
    }
}
