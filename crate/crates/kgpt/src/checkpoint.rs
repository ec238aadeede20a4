//! Binary checkpoint container.
//!
//! ```text
//! KGPTCKPT\n
//! u64 LE length, JSON header {version, config, metadata}
//! u64 LE length, vocabulary in the text format of `vocab_file`
//! u64 LE length, JSON shape manifest [{name, shape}, ...]
//! f32 LE payload, tensors in manifest order, row-major
//! ```

use std::path::Path;

use kgpt_core::model::Model;
use kgpt_core::numerics::{ParamSet, Tensor};
use kgpt_core::training::{Checkpoint, TrainConfig, TrainingMetadata, CHECKPOINT_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::{io, vocab_file};

pub const MAGIC: &[u8; 9] = b"KGPTCKPT\n";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        version: ckpt.version,
        config: ckpt.config.clone(),
        metadata: ckpt.metadata.clone(),
    };
    let manifest: Vec<ShapeEntry> = ckpt
        .model
        .params
        .iter()
        .map(|(n, t)| ShapeEntry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let mut out = MAGIC.to_vec();
    section(
        &mut out,
        &serde_json::to_vec(&header).expect("serializable header"),
    );
    section(&mut out, vocab_file::render(&ckpt.vocab).as_bytes());
    section(
        &mut out,
        &serde_json::to_vec(&manifest).expect("serializable manifest"),
    );
    for (_, t) in ckpt.model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("unexpected end of file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn section(&mut self) -> Result<&'a [u8], String> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| "section length overflows")?;
        self.take(len)
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint, CliError> {
    let fail = |msg: String| CliError::Format {
        path: path.into(),
        msg,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(fail)? != MAGIC {
        return Err(fail("not a kgpt checkpoint".into()));
    }
    let header: Header = serde_json::from_slice(r.section().map_err(fail)?)
        .map_err(|e| fail(format!("header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let vocab_text = std::str::from_utf8(r.section().map_err(fail)?)
        .map_err(|e| fail(format!("vocabulary: {e}")))?;
    let vocab = vocab_file::parse(vocab_text, path)?;
    let manifest: Vec<ShapeEntry> = serde_json::from_slice(r.section().map_err(fail)?)
        .map_err(|e| fail(format!("manifest: {e}")))?;
    let mut params = ParamSet::new();
    for entry in manifest {
        let n: usize = entry.shape.iter().product();
        let raw = r.take(n * 4).map_err(fail)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(entry.name, Tensor::new(&entry.shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::from_params(header.config.model.clone(), params)?;
    Ok(Checkpoint {
        version: header.version,
        config: header.config,
        vocab,
        model,
        metadata: header.metadata,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    io::write_atomic(path, &encode(ckpt))
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    decode(&io::read_bytes(path)?, path)
}

/// Equality that compares every float by bit pattern.
pub fn bitwise_equal(a: &Checkpoint, b: &Checkpoint) -> bool {
    let floats_equal =
        a.model
            .params
            .iter()
            .zip(b.model.params.iter())
            .all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            });
    a.model.params.len() == b.model.params.len()
        && floats_equal
        && a.version == b.version
        && a.vocab == b.vocab
        && serde_json::to_vec(&a.config).ok() == serde_json::to_vec(&b.config).ok()
        && a.metadata.epoch == b.metadata.epoch
        && a.metadata.steps == b.metadata.steps
        && a.metadata.val_bleu.map(f64::to_bits) == b.metadata.val_bleu.map(f64::to_bits)
}
