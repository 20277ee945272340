//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "THCMCKPT"
//! version      u32
//! header_len   u64
//! header       JSON: config, vocab, history, next_epoch, best_temperature,
//!              stopping, adam_step
//! n_tensors    u32
//! per tensor:  name_len u32, name (UTF-8), rows u64, cols u64,
//!              rows·cols f64 values in row-major order
//! ```
//!
//! Tensor names are `best/<name>`, `last/<name>`, `adam_m/<name>` and
//! `adam_v/<name>` for every name in [`TENSOR_NAMES`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, EarlyStopping, EpochRecord, LabelVocab, ModelParams, TrainConfig, TrainState, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"THCMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const GROUPS: [&str; 4] = ["best", "last", "adam_m", "adam_v"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    vocab: LabelVocab,
    history: Vec<EpochRecord>,
    next_epoch: usize,
    best_temperature: f64,
    stopping: EarlyStopping,
    adam_step: u64,
}

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: state.config.clone(),
        vocab: state.vocab.clone(),
        history: state.history.clone(),
        next_epoch: state.next_epoch,
        best_temperature: state.best_temperature,
        stopping: state.stopping.clone(),
        adam_step: state.adam.step,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);

    let groups: [Vec<&Matrix>; 4] = [
        state.best.tensors().to_vec(),
        state.last.tensors().to_vec(),
        state.adam.m.iter().collect(),
        state.adam.v.iter().collect(),
    ];
    out.extend_from_slice(&((GROUPS.len() * TENSOR_NAMES.len()) as u32).to_le_bytes());
    for (group, tensors) in GROUPS.iter().zip(&groups) {
        if tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::Checkpoint(format!(
                "group {group} has {} tensors",
                tensors.len()
            )));
        }
        for (name, m) in TENSOR_NAMES.iter().zip(tensors) {
            let full = format!("{group}/{name}");
            out.extend_from_slice(&(full.len() as u32).to_le_bytes());
            out.extend_from_slice(full.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = c.len()?;
    let header: Header =
        serde_json::from_slice(c.take(header_len)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let count = c.u32()? as usize;
    if count != GROUPS.len() * TENSOR_NAMES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            GROUPS.len() * TENSOR_NAMES.len()
        )));
    }
    let mut groups: Vec<Vec<Matrix>> = vec![Vec::new(); GROUPS.len()];
    for (g, group) in GROUPS.iter().enumerate() {
        for name in TENSOR_NAMES {
            let name_len = c.u32()? as usize;
            let found = std::str::from_utf8(c.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let expected = format!("{group}/{name}");
            if found != expected {
                return Err(Error::Checkpoint(format!("expected tensor {expected}, found {found}")));
            }
            let rows = c.len()?;
            let cols = c.len()?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
            let raw = c.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            groups[g].push(Matrix::from_vec(rows, cols, data)?);
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    let mut it = groups.into_iter();
    let dropout = header.config.dropout;
    let best = ModelParams::from_tensors(it.next().expect("group"), dropout)?;
    let last = ModelParams::from_tensors(it.next().expect("group"), dropout)?;
    let m = it.next().expect("group");
    let v = it.next().expect("group");
    for ((a, b), p) in m.iter().zip(&v).zip(last.tensors()) {
        if a.shape() != p.shape() || b.shape() != p.shape() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
    }
    if best.head.n_labels() != header.vocab.len() {
        return Err(Error::Checkpoint(
            "label vocabulary does not match the output head".into(),
        ));
    }
    Ok(TrainState {
        adam: Adam {
            lr: header.config.lr,
            weight_decay: header.config.weight_decay,
            step: header.adam_step,
            m,
            v,
        },
        config: header.config,
        vocab: header.vocab,
        best,
        last,
        stopping: header.stopping,
        best_temperature: header.best_temperature,
        history: header.history,
        next_epoch: header.next_epoch,
    })
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState {
        let config = TrainConfig {
            text_dim: 12,
            proj_dim: 4,
            pool_hidden: 3,
            embed_dim: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let vocab: LabelVocab = vec!["401.9".to_string(), "428.0".to_string()].into();
        let mut s = TrainState::new(config, vocab).unwrap();
        s.last.head.b_o.set(0, 1, 0.1 + 0.2);
        s.adam.m[3].set(0, 0, f64::MIN_POSITIVE);
        s.adam.step = 7;
        s.history.push(EpochRecord {
            epoch: 0,
            temperature: 1.0,
            loss: 1.0 / 3.0,
            focal: 0.25,
            acyclicity: 1e-300,
            sparsity: 2.0,
            valid_acyclicity: 0.5,
            valid_precision: 0.1,
            valid_recall: 0.7,
            improved: true,
        });
        s.next_epoch = 1;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = state();
        let bytes = encode_checkpoint(&s).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode_checkpoint(&state()).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes;
        bad[8] = 99;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &state()).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), state());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
