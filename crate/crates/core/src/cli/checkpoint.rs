//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TFUS" | version u32 | tensor count u32
//! per tensor: name (u32 length + UTF-8) | dtype u8 | rank u32 | dims u64.. | payload offset u64
//! text count u32 | per text: key (u32 length + UTF-8) | value (u64 length + UTF-8)
//! payload: f32 values of every tensor, row-major, in table order
//! CRC32 of all preceding bytes, u32
//! ```
//!
//! The `config` text echoes the configuration the file was trained from.

use std::fs;
use std::path::{Path, PathBuf};

use crate::numkernel::{Parameters, Tensor};

pub const MAGIC: &[u8; 4] = b"TFUS";
pub const VERSION: u32 = 1;
/// The only payload type written.
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CheckpointError::Format(msg.into()))
}

/// Named tensors plus named texts (configuration echo, vocabularies).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub texts: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn from_params(params: &impl Parameters, texts: Vec<(String, String)>) -> Self {
        Self {
            tensors: params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            texts,
        }
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.texts.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut names: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return format_err("tensor named twice");
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.numel() as u64;
        }
        out.extend_from_slice(&(self.texts.len() as u32).to_le_bytes());
        for (k, v) in &self.texts {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        for (_, t) in &self.tensors {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Verifies the checksum before reading anything else.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 4 + 4 {
            return format_err("file too short");
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return format_err("missing TFUS magic");
        }
        let version = r.u32()?;
        if version != VERSION {
            return format_err(format!("unsupported version {version}"));
        }
        let n = r.u32()? as usize;
        let mut table = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string(r_len32)?;
            if r.take(1)?[0] != DTYPE_F32 {
                return format_err(format!("{name}: unknown dtype"));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            table.push((name, shape, offset));
        }
        let m = r.u32()? as usize;
        let mut texts = Vec::with_capacity(m);
        for _ in 0..m {
            let k = r.string(r_len32)?;
            let v = r.string(r_len64)?;
            texts.push((k, v));
        }
        let payload = &body[r.pos..];
        let mut tensors = Vec::with_capacity(n);
        let mut expected_offset = 0usize;
        for (name, shape, offset) in table {
            let numel: usize = shape.iter().product();
            if offset != expected_offset || offset + 4 * numel > payload.len() {
                return format_err(format!("{name}: payload offset {offset} out of place"));
            }
            let data = payload[offset..offset + 4 * numel]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("four bytes"))))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Format(format!("{name}: {e}")))?;
            if tensors.iter().any(|(n, _)| *n == name) {
                return format_err(format!("{name} appears twice"));
            }
            tensors.push((name, t));
            expected_offset += 4 * numel;
        }
        if expected_offset != payload.len() {
            return format_err("trailing payload bytes");
        }
        Ok(Self { tensors, texts })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn r_len32(r: &mut Reader<'_>) -> Result<usize> {
    r.u32().map(|v| v as usize)
}

fn r_len64(r: &mut Reader<'_>) -> Result<usize> {
    r.u64().map(|v| v as usize)
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return format_err("truncated header");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn string(&mut self, len: fn(&mut Reader<'a>) -> Result<usize>) -> Result<String> {
        let n = len(self)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("text is not UTF-8".into()))
    }
}
