//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SLLMCKPT"  u32 version
//! u32 len, model config JSON          u8[32] SHA-256 of that JSON
//! u8 has_day, u32 last_day
//! u32 n_params, then per parameter:   name, u32 ndim, u64 dims.., f64 values..
//! u32 n_contexts, then per user:      name, h tensor, c tensor
//! ```
//!
//! Names are `u32 len` plus UTF-8 bytes. Values are stored as raw bit
//! patterns, so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_at, Error, Result};
use crate::model::{ContextTable, LanguageModel, ModelConfig, UserContext};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"SLLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: LanguageModel,
    /// Last day the parameters were trained on.
    pub last_day: Option<u32>,
    pub contexts: ContextTable,
}

/// SHA-256 of the canonical JSON of a model configuration.
pub fn config_hash(config: &ModelConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(format!("{:x}", Sha256::digest(&json)))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    put_u32(
        w,
        u32::try_from(b.len()).map_err(|_| Error::Contract("field too large".into()))?,
    )?;
    Ok(w.write_all(b)?)
}

fn put_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(model: LanguageModel, last_day: Option<u32>, contexts: ContextTable) -> Self {
        Checkpoint {
            model,
            last_day,
            contexts,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let json = serde_json::to_vec(&self.model.config)?;
        w.write_all(MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        put_bytes(&mut w, &json)?;
        w.write_all(&Sha256::digest(&json))?;
        w.write_all(&[u8::from(self.last_day.is_some())])?;
        put_u32(&mut w, self.last_day.unwrap_or(0))?;
        put_u32(&mut w, self.model.params.len() as u32)?;
        for (_, name, t) in self.model.params.iter() {
            put_bytes(&mut w, name.as_bytes())?;
            put_tensor(&mut w, t)?;
        }
        put_u32(&mut w, self.contexts.len() as u32)?;
        for ctx in self.contexts.iter() {
            put_bytes(&mut w, ctx.user.as_bytes())?;
            put_tensor(&mut w, &ctx.h)?;
            put_tensor(&mut w, &ctx.c)?;
        }
        Ok(w.flush()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| io_at(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Reader { r }.checkpoint()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| io_at(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Checkpoint { msg, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }
}

struct Reader<R> {
    r: R,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        msg: msg.into(),
    }
}

impl<R: Read> Reader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| bad("truncated file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        let mut buf = Vec::new();
        (&mut self.r).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(bad("truncated file"));
        }
        Ok(buf)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?).map_err(|_| bad("name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(bad(format!("{ndim}-dimensional tensor")));
        }
        let shape = (0..ndim)
            .map(|_| Ok(self.u64()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("tensor too large"))?;
        let data = (0..n)
            .map(|_| Ok(f64::from_bits(self.u64()?)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }

    fn checkpoint(&mut self) -> Result<Checkpoint> {
        if &self.exact::<8>()? != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = self.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let json = self.bytes()?;
        if self.exact::<32>()? != Sha256::digest(&json).as_slice() {
            return Err(bad("config hash mismatch"));
        }
        let config: ModelConfig = serde_json::from_slice(&json)?;
        let has_day = self.exact::<1>()?[0] != 0;
        let day = self.u32()?;
        let mut model = LanguageModel::new(config, 0)?;
        let n = self.u32()? as usize;
        if n != model.params.len() {
            return Err(bad(format!(
                "{n} parameters, the model has {}",
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = self.string()?;
            if name != model.params.name(id) {
                return Err(bad(format!(
                    "expected parameter {}, found {name}",
                    model.params.name(id)
                )));
            }
            let t = self.tensor()?;
            model
                .params
                .set(id, t)
                .map_err(|e| bad(format!("{name}: {e}")))?;
        }
        let mut contexts = ContextTable::new(model.config.upper_hidden_dim);
        for _ in 0..self.u32()? {
            let user = self.string()?;
            let (h, c) = (self.tensor()?, self.tensor()?);
            if h.len() != contexts.dim() || c.len() != contexts.dim() {
                return Err(bad(format!("context of {user} has the wrong size")));
            }
            contexts.set(UserContext { user, h, c });
        }
        let mut rest = [0u8; 1];
        if self.r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            model,
            last_day: has_day.then_some(day),
            contexts,
        })
    }
}
