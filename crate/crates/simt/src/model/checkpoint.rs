//! Self-describing checkpoint container: a JSON header (config, vocabularies,
//! arbitrary trainer state) followed by named f64 arrays. Little-endian
//! throughout; save -> load round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::net::SimtModel;
use super::ModelConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"SIMTCKP1";

/// Generic named-array container.
#[derive(Debug, Clone)]
pub struct Container {
    pub json: serde_json::Value,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        let json = serde_json::to_vec(&self.json)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&(self.arrays.len() as u64).to_le_bytes())?;
        for (name, shape, data) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &dim in shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Container> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let json_len = read_u64(&mut r)? as usize;
        let mut json_buf = vec![0u8; json_len];
        r.read_exact(&mut json_buf)?;
        let json = serde_json::from_slice(&json_buf)
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        let n_arrays = read_u64(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Checkpoint("non-utf8 array name".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            arrays.push((name, shape, data));
        }
        Ok(Container { json, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        Container::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn json_field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .json
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header field {key:?}")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("field {key:?}: {e}")))
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn header(model: &SimtModel, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<serde_json::Value> {
    #[derive(Serialize)]
    struct Header<'a> {
        config: &'a ModelConfig,
        src_vocab: &'a Vocabulary,
        tgt_vocab: &'a Vocabulary,
    }
    serde_json::to_value(Header {
        config: &model.config,
        src_vocab,
        tgt_vocab,
    })
    .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))
}

impl SimtModel {
    pub fn to_container(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<Container> {
        Ok(Container {
            json: header(self, src_vocab, tgt_vocab)?,
            arrays: self
                .parameters()
                .into_iter()
                .map(|(name, t)| (name, t.shape(), t.to_vec()))
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<()> {
        self.to_container(src_vocab, tgt_vocab)?.save(path)
    }

    /// Rebuild a model (and its vocabularies) from a container produced by
    /// [`SimtModel::to_container`]. Extra arrays (trainer state) are ignored.
    pub fn from_container(c: &Container) -> Result<(SimtModel, Vocabulary, Vocabulary)> {
        let config: ModelConfig = c.json_field("config")?;
        let mut src_vocab: Vocabulary = c.json_field("src_vocab")?;
        let mut tgt_vocab: Vocabulary = c.json_field("tgt_vocab")?;
        src_vocab.reindex();
        tgt_vocab.reindex();
        let frozen = config.backbone_frozen;
        let mut model = SimtModel::new(ModelConfig { backbone_frozen: false, ..config }, 0)?;
        model.config.backbone_frozen = frozen;
        let mut expected: std::collections::HashMap<String, crate::ndgrad::Tensor> =
            model.parameters().into_iter().collect();
        for (name, shape, data) in &c.arrays {
            let Some(t) = expected.remove(name) else {
                if name.starts_with("state.") {
                    continue; // trainer-owned arrays
                }
                return Err(Error::Checkpoint(format!("unexpected array {name:?}")));
            };
            if t.shape() != *shape {
                return Err(Error::Checkpoint(format!(
                    "array {name:?} has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            t.set_data(data);
        }
        if !expected.is_empty() {
            let mut missing: Vec<&String> = expected.keys().collect();
            missing.sort();
            return Err(Error::Checkpoint(format!("missing arrays: {missing:?}")));
        }
        if frozen {
            model.freeze_backbone();
        }
        Ok((model, src_vocab, tgt_vocab))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(SimtModel, Vocabulary, Vocabulary)> {
        SimtModel::from_container(&Container::load(path)?)
    }
}
