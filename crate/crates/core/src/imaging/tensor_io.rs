//! The `G2IM` container.
//!
//! ```text
//! magic      4 bytes  "G2IM"
//! version    u16 LE   1
//! count      u32 LE
//! count x {
//!   name_len u16 LE, name bytes (UTF-8)
//!   label    i32 LE   (-1 when absent)
//!   ndims    u8       3
//!   rows, cols, channels   u32 LE each
//!   values   rows*cols*channels f32 LE, channel-major then row-major
//! }
//! n_channel_names u16 LE, then per name: len u16 LE + UTF-8 bytes
//! ```

use std::fs;
use std::path::Path;

use super::{ImageSet, ImagingError, Tensor3};

pub const MAGIC: [u8; 4] = *b"G2IM";
pub const VERSION: u16 = 1;

/// A named tensor with an integer tag (class label for images, -1 otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub label: i32,
    pub tensor: Tensor3,
}

/// Raw container contents; record shapes may differ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub records: Vec<TensorRecord>,
    pub channel_names: Vec<String>,
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<(), ImagingError> {
    let len = u16::try_from(s.len())
        .map_err(|_| ImagingError::ShapeOverflow(format!("{what} of {} bytes exceeds u16", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32, ImagingError> {
    u32::try_from(v).map_err(|_| ImagingError::ShapeOverflow(format!("{what} {v} exceeds u32")))
}

impl TensorFile {
    pub fn find(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ImagingError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&to_u32(self.records.len(), "record count")?.to_le_bytes());
        for record in &self.records {
            put_str(&mut out, &record.name, "record name")?;
            out.extend_from_slice(&record.label.to_le_bytes());
            out.push(3);
            let (rows, cols, channels) = record.tensor.shape();
            for (v, what) in [(rows, "rows"), (cols, "cols"), (channels, "channels")] {
                out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
            }
            out.reserve(record.tensor.as_slice().len() * 4);
            for v in record.tensor.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let n_names = u16::try_from(self.channel_names.len())
            .map_err(|_| ImagingError::ShapeOverflow("more than 65535 channel names".into()))?;
        out.extend_from_slice(&n_names.to_le_bytes());
        for name in &self.channel_names {
            put_str(&mut out, name, "channel name")?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImagingError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cursor.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(ImagingError::BadMagic(magic));
        }
        let version = cursor.u16("version")?;
        if version != VERSION {
            return Err(ImagingError::UnsupportedVersion(version));
        }
        let count = cursor.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = cursor.string("record name")?;
            let label = i32::from_le_bytes(cursor.take(4, "label")?.try_into().expect("4 bytes"));
            let ndims = cursor.take(1, "dims")?[0];
            if ndims != 3 {
                return Err(ImagingError::Malformed(format!("expected 3 dims, found {ndims}")));
            }
            let rows = cursor.u32("rows")? as usize;
            let cols = cursor.u32("cols")? as usize;
            let channels = cursor.u32("channels")? as usize;
            let n_bytes = rows
                .checked_mul(cols)
                .and_then(|v| v.checked_mul(channels))
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| ImagingError::ShapeOverflow(format!("{rows}x{cols}x{channels}")))?;
            let raw = cursor.take(n_bytes, "tensor values")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            records.push(TensorRecord { name, label, tensor: Tensor3::from_vec(rows, cols, channels, data)? });
        }
        let n_names = cursor.u16("channel name count")? as usize;
        let channel_names = (0..n_names).map(|_| cursor.string("channel name")).collect::<Result<_, _>>()?;
        if cursor.pos != bytes.len() {
            return Err(ImagingError::Malformed(format!("{} trailing bytes", bytes.len() - cursor.pos)));
        }
        Ok(Self { records, channel_names })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ImagingError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ImagingError::TruncatedFile(what))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ImagingError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ImagingError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String, ImagingError> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ImagingError::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn write_tensor_file(file: &TensorFile, path: &Path) -> Result<(), ImagingError> {
    let bytes = file.to_bytes()?;
    fs::write(path, bytes).map_err(|source| ImagingError::Io { path: path.into(), source })
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile, ImagingError> {
    let bytes = fs::read(path).map_err(|source| ImagingError::Io { path: path.into(), source })?;
    TensorFile::from_bytes(&bytes)
}

pub fn write_tensor(set: &ImageSet, path: &Path) -> Result<(), ImagingError> {
    write_tensor_file(&set.to_file(), path)
}

pub fn read_tensor(path: &Path) -> Result<ImageSet, ImagingError> {
    ImageSet::from_file(read_tensor_file(path)?)
}
