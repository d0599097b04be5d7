//! Binary checkpoint format: magic, version, config entries, vocabulary,
//! then every parameter tensor in double precision, all little endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ingest::{IngestError, Vocabulary};
use crate::model::{ModelConfig, ModelError, SqlNetModel, WhereColFormula};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"SQNCKPT1";
const VERSION: u32 = 1;
// single-field length cap so corrupt headers fail fast instead of allocating
const MAX_FIELD: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("missing config entry {0}")]
    MissingConfig(&'static str),
    #[error("bad config value for {key}: {value:?}")]
    BadConfig { key: &'static str, value: String },
    #[error("checkpoint does not match the model: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Everything needed to rebuild a model: flat config entries, the vocabulary
/// in index order, and the full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub vocab: Vec<String>,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    /// Captures the model state plus caller-supplied run settings. Model
    /// hyperparameters override colliding keys in `extra`.
    pub fn from_model(model: &SqlNetModel, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut config = extra.clone();
        let c = &model.config;
        config.insert("d".to_string(), c.d.to_string());
        config.insert("d_emb".to_string(), c.d_emb.to_string());
        config.insert("n_cond".to_string(), c.n_cond.to_string());
        config.insert("alpha".to_string(), c.alpha.to_string());
        config.insert("max_value_len".to_string(), c.max_value_len.to_string());
        config.insert("formula".to_string(), c.formula.as_str().to_string());

        let params = model
            .store
            .iter()
            .map(|(_, p)| SavedParam {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                trainable: p.trainable,
                data: p.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            config,
            vocab: model.vocab.tokens().to_vec(),
            params,
        }
    }

    fn config_usize(&self, key: &'static str) -> Result<usize, CkptError> {
        let raw = self
            .config
            .get(key)
            .ok_or(CkptError::MissingConfig(key))?;
        raw.parse().map_err(|_| CkptError::BadConfig {
            key,
            value: raw.clone(),
        })
    }

    /// Rebuilds the model with every tensor and trainability flag restored
    /// bit for bit.
    pub fn into_model(&self) -> Result<SqlNetModel, CkptError> {
        let alpha_raw = self
            .config
            .get("alpha")
            .ok_or(CkptError::MissingConfig("alpha"))?;
        let formula_raw = self
            .config
            .get("formula")
            .ok_or(CkptError::MissingConfig("formula"))?;
        let config = ModelConfig {
            d: self.config_usize("d")?,
            d_emb: self.config_usize("d_emb")?,
            n_cond: self.config_usize("n_cond")?,
            alpha: alpha_raw.parse().map_err(|_| CkptError::BadConfig {
                key: "alpha",
                value: alpha_raw.clone(),
            })?,
            max_value_len: self.config_usize("max_value_len")?,
            formula: WhereColFormula::parse(formula_raw).ok_or(CkptError::BadConfig {
                key: "formula",
                value: formula_raw.clone(),
            })?,
        };

        let vocab = Vocabulary::from_tokens(self.vocab.clone())?;
        let emb = self
            .params
            .iter()
            .find(|p| p.name == "embedding")
            .ok_or_else(|| CkptError::ParamMismatch("no embedding tensor".to_string()))?;
        let embedding = Tensor::from_vec(emb.rows, emb.cols, emb.data.clone());

        let mut model = SqlNetModel::new(config, vocab, embedding, 0)?;
        if model.store.len() != self.params.len() {
            return Err(CkptError::ParamMismatch(format!(
                "model has {} tensors, checkpoint has {}",
                model.store.len(),
                self.params.len()
            )));
        }
        for saved in &self.params {
            let id = model.store.id_of(&saved.name).ok_or_else(|| {
                CkptError::ParamMismatch(format!("unknown tensor {:?}", saved.name))
            })?;
            let value = model.store.value_mut(id);
            if value.shape() != (saved.rows, saved.cols) {
                return Err(CkptError::ParamMismatch(format!(
                    "tensor {:?} is {:?} in the model but {:?} in the checkpoint",
                    saved.name,
                    value.shape(),
                    (saved.rows, saved.cols)
                )));
            }
            value.data_mut().copy_from_slice(&saved.data);
            model.store.set_trainable(id, saved.trainable);
        }
        Ok(model)
    }
}

fn io_err<'a>(action: &'static str, path: &'a Path) -> impl FnOnce(io::Error) -> CkptError + 'a {
    move |source| CkptError::Io {
        action,
        path: path.display().to_string(),
        source,
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_str(r: &mut impl Read, what: &str) -> Result<String, CkptError> {
    let len = get_u32(r).map_err(|e| CkptError::Corrupt(format!("{what} length: {e}")))?;
    if len > MAX_FIELD {
        return Err(CkptError::Corrupt(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| CkptError::Corrupt(format!("{what}: {e}")))?;
    String::from_utf8(buf).map_err(|_| CkptError::Corrupt(format!("{what} is not utf-8")))
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CkptError> {
    let file = File::create(path).map_err(io_err("create", path))?;
    let mut w = BufWriter::new(file);
    let inner = (|| -> io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;

        put_u32(&mut w, ckpt.config.len() as u32)?;
        for (k, v) in &ckpt.config {
            put_str(&mut w, k)?;
            put_str(&mut w, v)?;
        }

        put_u32(&mut w, ckpt.vocab.len() as u32)?;
        for token in &ckpt.vocab {
            put_str(&mut w, token)?;
        }

        put_u32(&mut w, ckpt.params.len() as u32)?;
        for p in &ckpt.params {
            put_str(&mut w, &p.name)?;
            put_u32(&mut w, p.rows as u32)?;
            put_u32(&mut w, p.cols as u32)?;
            w.write_all(&[p.trainable as u8])?;
            for v in &p.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    inner.map_err(io_err("write", path))
}

pub fn load(path: &Path) -> Result<Checkpoint, CkptError> {
    let file = File::open(path).map_err(io_err("open", path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err("read", path))?;
    if &magic != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let version = get_u32(&mut r).map_err(io_err("read", path))?;
    if version != VERSION {
        return Err(CkptError::BadVersion(version));
    }

    let n_config = get_u32(&mut r).map_err(|e| CkptError::Corrupt(format!("config count: {e}")))?;
    let mut config = BTreeMap::new();
    for _ in 0..n_config {
        let k = get_str(&mut r, "config key")?;
        let v = get_str(&mut r, "config value")?;
        config.insert(k, v);
    }

    let n_vocab = get_u32(&mut r).map_err(|e| CkptError::Corrupt(format!("vocab count: {e}")))?;
    if n_vocab > MAX_FIELD {
        return Err(CkptError::Corrupt(format!("vocab count {n_vocab} is implausible")));
    }
    let mut vocab = Vec::with_capacity(n_vocab as usize);
    for _ in 0..n_vocab {
        vocab.push(get_str(&mut r, "vocab token")?);
    }

    let n_params = get_u32(&mut r).map_err(|e| CkptError::Corrupt(format!("param count: {e}")))?;
    let mut params = Vec::with_capacity(n_params.min(4096) as usize);
    for _ in 0..n_params {
        let name = get_str(&mut r, "param name")?;
        let rows = get_u32(&mut r).map_err(|e| CkptError::Corrupt(format!("rows of {name:?}: {e}")))?;
        let cols = get_u32(&mut r).map_err(|e| CkptError::Corrupt(format!("cols of {name:?}: {e}")))?;
        if rows > MAX_FIELD || cols > MAX_FIELD || (rows as u64) * (cols as u64) > MAX_FIELD as u64 {
            return Err(CkptError::Corrupt(format!("tensor {name:?} shape {rows}x{cols} is implausible")));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|e| CkptError::Corrupt(format!("flag of {name:?}: {e}")))?;
        let len = rows as usize * cols as usize;
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|e| CkptError::Corrupt(format!("data of {name:?}: {e}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(SavedParam {
            name,
            rows: rows as usize,
            cols: cols as usize,
            trainable: flag[0] != 0,
            data,
        });
    }

    // trailing garbage means the file was not produced by this writer
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => {}
        Ok(_) => return Err(CkptError::Corrupt("trailing bytes after parameters".to_string())),
        Err(e) => return Err(io_err("read", path)(e)),
    }

    Ok(Checkpoint { config, vocab, params })
}
