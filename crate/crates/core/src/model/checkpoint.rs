//! Binary checkpoint format.
//!
//! ```text
//! "TAPT"                      4 bytes
//! version                     u32 LE
//! header length               u32 LE
//! header                      compact JSON {"config":{..},"normalization":bool}
//! for each group in GROUP_NAMES order:
//!     count                   u64 LE
//!     values                  count x f64 LE
//! if normalization:
//!     mean, std               as groups above
//! crc32                       u32 LE over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ZScoreStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamTensors, GROUP_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TAPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model plus the input normalization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub normalization: Option<ZScoreStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    normalization: bool,
}

fn put_array(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.params.check_against(&ckpt.config)?;
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        normalization: ckpt.normalization.is_some(),
    })
    .map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * ckpt.params.num_values() + 8 * 21);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in ckpt.params.tensors() {
        put_array(&mut out, t);
    }
    if let Some(stats) = &ckpt.normalization {
        if stats.mean.len() != ckpt.config.input_features || stats.std.len() != ckpt.config.input_features {
            return Err(Error::shape("normalization width differs from model input width"));
        }
        put_array(&mut out, &stats.mean);
        put_array(&mut out, &stats.std);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn array(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let n = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if n != expected as u64 {
            return Err(Error::Checkpoint(format!(
                "{what}: {n} values stored, config implies {expected}"
            )));
        }
        let bytes = self.take(8 * expected, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Checkpoint(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;

    let mut params = ModelParams::zeros(&header.config);
    for (gi, (_, dst)) in params.tensors_mut().into_iter().enumerate() {
        let values = r.array(GROUP_NAMES[gi], dst.len())?;
        dst.copy_from_slice(&values);
    }
    let normalization = if header.normalization {
        let w = header.config.input_features;
        Some(ZScoreStats {
            mean: r.array("normalization mean", w)?,
            std: r.array("normalization std", w)?,
        })
    } else {
        None
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        normalization,
    })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Checkpoint {
    /// Refuse inputs whose width the stored model cannot consume.
    pub fn ensure_input_width(&self, width: usize) -> Result<()> {
        if width != self.config.input_features {
            return Err(Error::Config(format!(
                "checkpoint expects {} input features, data has {width}",
                self.config.input_features
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::QueryMode;

    fn sample(norm: bool) -> Checkpoint {
        let config = ModelConfig::tiny(QueryMode::All);
        let w = config.input_features;
        Checkpoint {
            params: ModelParams::build(&config).unwrap(),
            normalization: norm.then(|| ZScoreStats {
                mean: (0..w).map(|i| i as f64 * 0.1).collect(),
                std: vec![1.5; w],
            }),
            config,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for norm in [false, true] {
            let c = sample(norm);
            let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
            assert_eq!(back.config, c.config);
            assert_eq!(back.normalization, c.normalization);
            for ((_, a), (_, b)) in back.params.tensors().iter().zip(c.params.tensors()) {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&sample(true)).unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn corruption_and_version_rejected() {
        let mut bytes = encode_checkpoint(&sample(false)).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));

        let mut v2 = encode_checkpoint(&sample(false)).unwrap();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(Error::Checkpoint(m)) if m.contains("version 2")));
        assert!(matches!(decode_checkpoint(b"PK\x03\x04...."), Err(Error::Checkpoint(m)) if m.contains("magic")));
    }

    #[test]
    fn width_guard() {
        let c = sample(false);
        assert!(c.ensure_input_width(6).is_ok());
        assert!(matches!(c.ensure_input_width(57), Err(Error::Config(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tapt");
        let c = sample(true);
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
