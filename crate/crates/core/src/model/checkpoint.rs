//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADMS2S01"            8-byte magic carrying the format version
//! u64                   length of the header text in bytes
//! header text           model config as key=value lines, then one
//!                       "param <name> <d0>x<d1>..." line per parameter
//! f64 * n               parameter values in declaration order
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ModelConfig, Seq2SeqModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADMS2S01";
const FAMILY: &[u8; 6] = b"ADMS2S";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0:?} (expected \"01\")")]
    Version(String),
    #[error("checkpoint is truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("checkpoint header is invalid: {0}")]
    Header(String),
    #[error("checkpoint parameters disagree with its config: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn header(model: &Seq2SeqModel) -> String {
    let mut text = model.config.to_text();
    for (_, name, value) in model.params.iter() {
        let _ = writeln!(text, "param {name} {}", shape_str(value.shape()));
    }
    text
}

/// Exact size in bytes of the checkpoint of `model`.
pub fn checkpoint_size(model: &Seq2SeqModel) -> usize {
    16 + header(model).len() + 8 * Seq2SeqModel::param_count(&model.config)
}

pub fn write_checkpoint(model: &Seq2SeqModel) -> Vec<u8> {
    let header = header(model);
    let mut out = Vec::with_capacity(16 + header.len() + 8 * model.params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, _, value) in model.params.iter() {
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn need(bytes: &[u8], needed: usize) -> Result<(), CheckpointError> {
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Seq2SeqModel> {
    if bytes.len() >= FAMILY.len() && &bytes[..FAMILY.len()] == FAMILY {
        need(bytes, MAGIC.len())?;
        if &bytes[..MAGIC.len()] != MAGIC {
            let version = String::from_utf8_lossy(&bytes[FAMILY.len()..MAGIC.len()]).into_owned();
            return Err(CheckpointError::Version(version).into());
        }
    } else {
        return Err(CheckpointError::BadMagic.into());
    }
    need(bytes, 16)?;
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .ok_or(CheckpointError::Header("header length overflows".into()))?;
    need(bytes, body)?;
    let text = std::str::from_utf8(&bytes[16..body])
        .map_err(|_| CheckpointError::Header("header is not UTF-8".into()))?;

    let (params, cfg_lines): (Vec<&str>, Vec<&str>) =
        text.lines().partition(|l| l.starts_with("param "));
    let config = ModelConfig::from_text(&cfg_lines.join("\n")).map_err(|e| match e {
        Error::Config(msg) => CheckpointError::Header(msg),
        other => CheckpointError::Header(other.to_string()),
    })?;
    let mut model =
        Seq2SeqModel::new(config, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let ids: Vec<_> = model.params.ids().collect();
    if params.len() != ids.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "header lists {} parameters, config implies {}",
            params.len(),
            ids.len()
        ))
        .into());
    }
    for (&id, line) in ids.iter().zip(&params) {
        let expected = format!(
            "param {} {}",
            model.params.name(id),
            shape_str(model.params.value(id).shape())
        );
        if *line != expected {
            return Err(CheckpointError::ShapeMismatch(format!(
                "found {line:?}, expected {expected:?}"
            ))
            .into());
        }
    }

    let total = 8 * model.params.scalar_count();
    need(bytes, body + total)?;
    if bytes.len() > body + total {
        return Err(CheckpointError::TrailingBytes(bytes.len() - body - total).into());
    }
    let mut chunks = bytes[body..].chunks_exact(8);
    for id in ids {
        for v in model.params.value_mut(id).data_mut() {
            *v = f64::from_le_bytes(
                chunks
                    .next()
                    .expect("length checked")
                    .try_into()
                    .expect("8"),
            );
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Seq2SeqModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Seq2SeqModel> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::model::tests::tiny;

    fn err(bytes: &[u8]) -> CheckpointError {
        match read_checkpoint(bytes) {
            Err(Error::Checkpoint(e)) => e,
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Mqt), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, m.config);
        for ((_, n1, a), (_, n2, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &crate::tensor::Tensor| {
                t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            assert_eq!(bits(a), bits(b));
        }
        let src = [1, 4, 5, 2];
        let tgt = [1, 6, 2];
        assert_eq!(
            m.loss(&src, &tgt).unwrap().to_bits(),
            back.loss(&src, &tgt).unwrap().to_bits()
        );
    }

    #[test]
    fn size_matches_layout() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Aqt), 1).unwrap();
        let bytes = write_checkpoint(&m);
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let params = Seq2SeqModel::param_count(&m.config);
        assert_eq!(bytes.len(), 8 + 8 + header_len + 8 * params);
        assert_eq!(bytes.len(), checkpoint_size(&m));
    }

    #[test]
    fn damaged_files_give_distinct_errors() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Sa), 1).unwrap();
        let bytes = write_checkpoint(&m);

        assert!(matches!(
            err(&bytes[..bytes.len() - 3]),
            CheckpointError::Truncated { .. }
        ));
        assert!(matches!(
            err(&bytes[..12]),
            CheckpointError::Truncated { .. }
        ));
        assert_eq!(err(b"GARBAGE!........"), CheckpointError::BadMagic);

        let mut v = bytes.clone();
        v[6..8].copy_from_slice(b"02");
        assert_eq!(err(&v), CheckpointError::Version("02".into()));

        let mut v = bytes.clone();
        v.push(0);
        assert_eq!(err(&v), CheckpointError::TrailingBytes(1));

        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + header_len]).unwrap();
        let edited = header.replace("target_vocab=11", "target_vocab=12");
        let mut v = Vec::new();
        v.extend_from_slice(MAGIC);
        v.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        v.extend_from_slice(edited.as_bytes());
        v.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(err(&v), CheckpointError::ShapeMismatch(_)));
    }
}
