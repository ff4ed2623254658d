//! TTAC v1 logit file format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic       4 bytes   "TTAC"
//! version     u32       1
//! n_examples  u64
//! n_augs      u32
//! n_classes   u32
//! aug_names   n_augs × (u32 byte length, UTF-8 bytes)
//! labels      n_examples × u32
//! logits      n_examples × n_augs × n_classes × f32, (example, aug, class) order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{LogitTensor, TensorError};

pub const MAGIC: [u8; 4] = *b"TTAC";
pub const VERSION: u32 = 1;
/// Refuses augmentation names whose declared length exceeds this.
const MAX_NAME_LEN: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"TTAC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported TTAC version {0}, expected {VERSION}")]
    UnsupportedVersion(u32),
    #[error("file truncated in section `{section}`")]
    Truncated { section: &'static str },
    #[error("{0} unexpected bytes after the logit payload")]
    TrailingBytes(u64),
    #[error("augmentation name {index} is not valid UTF-8")]
    InvalidName { index: usize },
    #[error("augmentation name {index} declares implausible length {len}")]
    NameTooLong { index: usize, len: u32 },
    #[error("dimension {name} = {value} does not fit the file format")]
    DimensionOverflow { name: &'static str, value: u64 },
    #[error("logit {value} at example {example} does not fit in f32")]
    Unrepresentable { example: usize, value: f64 },
    #[error("invalid tensor: {0}")]
    Invalid(#[from] TensorError),
}

/// Fixed header fields plus augmentation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogitFileHeader {
    pub version: u32,
    pub n_examples: u64,
    pub n_augs: u32,
    pub n_classes: u32,
    pub aug_names: Vec<String>,
}

impl LogitFileHeader {
    /// Header length in bytes.
    pub fn encoded_len(&self) -> usize {
        24 + self.aug_names.iter().map(|n| 4 + n.len()).sum::<usize>()
    }

    pub fn payload_len(&self) -> u64 {
        4 * self.n_examples + 4 * self.n_examples * self.n_augs as u64 * self.n_classes as u64
    }
}

fn read_section<R: Read>(r: &mut R, buf: &mut [u8], section: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => FormatError::Truncated { section }.into(),
        _ => e.into(),
    })
}

fn read_u32<R: Read>(r: &mut R, section: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_section(r, &mut b, section)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, section: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_section(r, &mut b, section)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses the header, leaving `r` positioned at the label section.
pub fn read_header_from<R: Read>(r: &mut R) -> Result<LogitFileHeader> {
    let mut magic = [0u8; 4];
    read_section(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let n_examples = read_u64(r, "n_examples")?;
    let n_augs = read_u32(r, "n_augs")?;
    let n_classes = read_u32(r, "n_classes")?;
    let mut aug_names = Vec::with_capacity(n_augs.min(1024) as usize);
    for index in 0..n_augs as usize {
        let len = read_u32(r, "aug_names")?;
        if len > MAX_NAME_LEN {
            return Err(FormatError::NameTooLong { index, len }.into());
        }
        let mut bytes = vec![0u8; len as usize];
        read_section(r, &mut bytes, "aug_names")?;
        aug_names.push(String::from_utf8(bytes).map_err(|_| FormatError::InvalidName { index })?);
    }
    Ok(LogitFileHeader {
        version,
        n_examples,
        n_augs,
        n_classes,
        aug_names,
    })
}

pub fn read_header(path: impl AsRef<Path>) -> Result<LogitFileHeader> {
    read_header_from(&mut BufReader::new(File::open(path)?))
}

/// Parses and validates a complete TTAC document.
pub fn decode_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<LogitTensor<T>> {
    let header = read_header_from(r)?;
    let n = usize::try_from(header.n_examples).map_err(|_| FormatError::DimensionOverflow {
        name: "n_examples",
        value: header.n_examples,
    })?;
    let (m, k) = (header.n_augs as usize, header.n_classes as usize);
    let cells = n
        .checked_mul(m)
        .and_then(|x| x.checked_mul(k))
        .ok_or(FormatError::DimensionOverflow {
            name: "n_examples × n_augs × n_classes",
            value: header.n_examples,
        })?;

    let mut label_bytes = vec![0u8; n * 4];
    read_section(r, &mut label_bytes, "labels")?;
    let labels = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();

    let mut logit_bytes = vec![0u8; cells * 4];
    read_section(r, &mut logit_bytes, "logits")?;
    let logits = logit_bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FormatError::TrailingBytes(rest.len() as u64).into());
    }
    LogitTensor::with_aug_names(n, k, logits, labels, header.aug_names)
        .map_err(|e| FormatError::Invalid(e).into())
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<LogitTensor<T>> {
    decode_tensor(&mut BufReader::new(File::open(path)?))
}

/// Serializes a tensor; identical tensors give identical bytes.
pub fn encode_tensor<T: Scalar, W: Write>(tensor: &LogitTensor<T>, w: &mut W) -> Result<()> {
    let dim = |name: &'static str, v: usize| {
        u32::try_from(v).map_err(|_| FormatError::DimensionOverflow { name, value: v as u64 })
    };
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensor.n_examples() as u64).to_le_bytes())?;
    w.write_all(&dim("n_augs", tensor.n_augs())?.to_le_bytes())?;
    w.write_all(&dim("n_classes", tensor.n_classes())?.to_le_bytes())?;
    for name in tensor.aug_names() {
        w.write_all(&dim("aug name length", name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    for &y in tensor.labels() {
        w.write_all(&dim("label", y)?.to_le_bytes())?;
    }
    let per_example = tensor.n_augs() * tensor.n_classes();
    for (i, z) in tensor.logits().iter().enumerate() {
        let v = z.as_f64();
        let f = v as f32;
        if !f.is_finite() {
            return Err(FormatError::Unrepresentable {
                example: i / per_example,
                value: v,
            }
            .into());
        }
        w.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor<T: Scalar>(tensor: &LogitTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_tensor(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}
