//! File formats: tensors, checkpoints, masks and configs. Every integer and
//! float is little-endian.
//!
//! Tensor file:
//!
//! ```text
//! "CMPC" | version u32 = 1 | dtype u8 (0 f32, 1 f64) | ndim u32 | dims u64 × ndim | payload
//! ```
//!
//! Checkpoint:
//!
//! ```text
//! "CMPK" | version u32 = 1 | layout sha256 [32] | seed u64 |
//!   repeat { name_len u32 | name utf-8 | tensor file }
//! ```
//!
//! The layout digest covers the ordered `(name, shape)` list, so a
//! checkpoint can be matched against a configuration before any payload is
//! read.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::pipeline::{config_digest, param_layout, store_digest, Config, ConfigError};
use crate::tensor::{ParamStore, Tensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"CMPC";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMPK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated {what}: needed {needed} more bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(usize),
    #[error("checkpoint layout does not match the configuration: {0}")]
    LayoutMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("tokens: {0}")]
    Tokens(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.display().to_string(),
        source,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(fs_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(fs_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            c => Err(IoError::UnsupportedDtype(c)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(IoError::Truncated {
                what,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(IoError::UnsupportedVersion(v));
        }
        Ok(())
    }
}

/// Appends the tensor file encoding of `t` to `out`. `F32` rounds each value.
pub fn encode_tensor_into(t: &Tensor, dtype: Dtype, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * dtype.size());
    for &v in t.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::new();
    encode_tensor_into(t, dtype, &mut out);
    out
}

fn decode_from(r: &mut Reader) -> Result<(Tensor, Dtype)> {
    r.magic(TENSOR_MAGIC)?;
    r.version()?;
    let dtype = Dtype::from_code(r.u8("dtype")?)?;
    let ndim = r.u32("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim.min(64));
    for _ in 0..ndim {
        shape.push(r.u64("dims")? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or(IoError::Truncated {
            what: "payload",
            needed: usize::MAX,
            available: r.remaining(),
        })?;
    let bytes = r.take(count, "payload")?;
    let data = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype))
}

/// Parses one tensor file occupying all of `bytes`.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    let mut r = Reader::new(bytes);
    let out = decode_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(IoError::TrailingBytes(r.remaining()));
    }
    Ok(out)
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    write_file(path, &encode_tensor(t, dtype))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Ok(decode_tensor(&read_file(path)?)?.0)
}

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&store_digest(store));
    out.extend_from_slice(&store.seed().to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor_into(t, Dtype::F64, &mut out);
    }
    out
}

/// Parses a checkpoint and checks its digest against its own contents.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let digest: [u8; 32] = r.take(32, "layout digest")?.try_into().expect("32 bytes");
    let mut store = ParamStore::new(r.u64("seed")?);
    while r.remaining() > 0 {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| IoError::Checkpoint("parameter name is not utf-8".into()))?
            .to_string();
        let (t, _) = decode_from(&mut r)?;
        store
            .insert(name.clone(), t)
            .map_err(|_| IoError::Checkpoint(format!("duplicate parameter `{name}`")))?;
    }
    if store_digest(&store) != digest {
        return Err(IoError::Checkpoint("layout digest does not match the stored tensors".into()));
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    write_file(path, &encode_checkpoint(store))
}

/// Reads a checkpoint and rejects it unless its layout is exactly the one
/// `cfg` implies; the first differing entry is named.
pub fn load_checkpoint(path: &Path, cfg: &Config) -> Result<ParamStore> {
    let store = decode_checkpoint(&read_file(path)?)?;
    check_layout(&store, cfg)?;
    Ok(store)
}

pub fn check_layout(store: &ParamStore, cfg: &Config) -> Result<()> {
    if store_digest(store) == config_digest(cfg) {
        return Ok(());
    }
    let layout = param_layout(cfg);
    for spec in &layout {
        match store.get(&spec.name) {
            Err(_) => return Err(IoError::LayoutMismatch(format!("missing `{}`", spec.name))),
            Ok(t) if t.shape() != spec.shape.as_slice() => {
                return Err(IoError::LayoutMismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = store.names().find(|n| !layout.iter().any(|s| s.name == *n)) {
        return Err(IoError::LayoutMismatch(format!("unexpected `{extra}`")));
    }
    Err(IoError::LayoutMismatch("parameter order differs".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskFormat {
    Pgm,
    RawLogits,
}

impl std::str::FromStr for MaskFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm" => Ok(MaskFormat::Pgm),
            "raw-logits" => Ok(MaskFormat::RawLogits),
            other => Err(format!("unknown mask format `{other}` (pgm, raw-logits)")),
        }
    }
}

/// Binary P5 image, maxval 255, foreground 255.
pub fn encode_pgm(mask: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = *mask.shape() else {
        return Err(IoError::Mask(format!("expected a 2-D mask, got shape {:?}", mask.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in mask.data() {
        out.push(match v {
            0.0 => 0,
            1.0 => 255,
            _ => return Err(IoError::Mask(format!("value {v} is not binary"))),
        });
    }
    Ok(out)
}

/// Parses a P5 image; pixels above half of maxval are foreground.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::Mask("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(IoError::BadMagic {
            expected: "P5".into(),
            found: fields[0].clone(),
        });
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| IoError::Mask(format!("bad PGM header field `{}`", fields[i])))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 255 {
        return Err(IoError::Mask(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let available = bytes.len().saturating_sub(pos);
    if available < w * h {
        return Err(IoError::Truncated {
            what: "PGM pixels",
            needed: w * h,
            available,
        });
    }
    let data = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| if 2 * b as usize > maxval { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::new(vec![h, w], data)?)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&read_file(path)?)
}

/// Thresholds logits at 0, i.e. `σ(z) > 0.5`.
pub fn binarize_logits(logits: &Tensor) -> Tensor {
    logits.map(|z| if z > 0.0 { 1.0 } else { 0.0 })
}

/// Writes a mask (`Pgm`, binary values) or raw logits (`RawLogits`, f64).
pub fn write_mask(t: &Tensor, path: &Path, format: MaskFormat) -> Result<()> {
    match format {
        MaskFormat::Pgm => write_file(path, &encode_pgm(t)?),
        MaskFormat::RawLogits => write_tensor(path, t, Dtype::F64),
    }
}

/// Reads a PGM mask, or a tensor file of logits or mask values.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = decode_tensor(&bytes)?.0;
        if t.rank() != 2 {
            return Err(IoError::Mask(format!("expected a 2-D tensor, got shape {:?}", t.shape())));
        }
        Ok(t)
    } else {
        decode_pgm(&bytes)
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    Ok(Config::from_toml(&text)?)
}

pub fn load_tokens(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| IoError::Tokens(format!("{}: `{t}` is not a token id", path.display())))
        })
        .collect()
}
