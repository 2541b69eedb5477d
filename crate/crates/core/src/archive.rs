//! Versioned binary container used for checkpoints and replay snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "APRLARCH"
//! version    u32
//! kind       u16 length + utf-8 bytes
//! count      u32
//! table      count × { name: u16 length + utf-8, dtype: u8, ndim: u8, dims: ndim × u64 }
//! payload    arrays in table order, densely packed
//! ```
//!
//! dtype codes: 0 = f32, 1 = f64, 2 = u64, 3 = u8.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"APRLARCH";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an archive (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("archive kind is `{found}`, expected `{expected}`")]
    Kind { found: String, expected: String },
    #[error("archive truncated")]
    Truncated,
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("entry `{0}` has an unexpected type or shape")]
    Type(String),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn code(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::F64(_) => 1,
            ArrayData::U64(_) => 2,
            ArrayData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Ordered collection of named arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    kind: String,
    entries: Vec<Entry>,
}

impl Archive {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ArchiveError> {
        if self.kind != kind {
            return Err(ArchiveError::Kind {
                found: self.kind.clone(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor<f32>) {
        self.push(name, t.shape().to_vec(), ArrayData::F32(t.data().to_vec()));
    }

    pub fn push_f32s(&mut self, name: impl Into<String>, v: &[f32]) {
        self.push(name, vec![v.len()], ArrayData::F32(v.to_vec()));
    }

    pub fn push_f64s(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, vec![v.len()], ArrayData::F64(v.to_vec()));
    }

    pub fn push_u64s(&mut self, name: impl Into<String>, v: &[u64]) {
        self.push(name, vec![v.len()], ArrayData::U64(v.to_vec()));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: u64) {
        self.push_u64s(name, &[v]);
    }

    pub fn push_f64(&mut self, name: impl Into<String>, v: f64) {
        self.push_f64s(name, &[v]);
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, v: &[u8]) {
        self.push(name, vec![v.len()], ArrayData::U8(v.to_vec()));
    }

    pub fn push_str(&mut self, name: impl Into<String>, s: &str) {
        self.push_bytes(name, s.as_bytes());
    }

    /// Appends every entry of `other` under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: Archive) {
        for e in other.entries {
            self.entries.push(Entry {
                name: format!("{prefix}.{}", e.name),
                ..e
            });
        }
    }

    /// Entries under `prefix.` with the prefix stripped.
    pub fn sub(&self, prefix: &str) -> Archive {
        let p = format!("{prefix}.");
        Archive {
            kind: self.kind.clone(),
            entries: self
                .entries
                .iter()
                .filter_map(|e| {
                    e.name.strip_prefix(&p).map(|n| Entry {
                        name: n.to_string(),
                        ..e.clone()
                    })
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Entry, ArchiveError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ArchiveError::Missing(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor<f32>, ArchiveError> {
        let e = self.get(name)?;
        match &e.data {
            ArrayData::F32(v) => Tensor::new(e.shape.clone(), v.clone())
                .map_err(|err| ArchiveError::Corrupt(format!("{name}: {err}"))),
            _ => Err(ArchiveError::Type(name.to_string())),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<Vec<f32>, ArchiveError> {
        match &self.get(name)?.data {
            ArrayData::F32(v) => Ok(v.clone()),
            _ => Err(ArchiveError::Type(name.to_string())),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>, ArchiveError> {
        match &self.get(name)?.data {
            ArrayData::F64(v) => Ok(v.clone()),
            _ => Err(ArchiveError::Type(name.to_string())),
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64, ArchiveError> {
        single(self.f64s(name)?, name)
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>, ArchiveError> {
        match &self.get(name)?.data {
            ArrayData::U64(v) => Ok(v.clone()),
            _ => Err(ArchiveError::Type(name.to_string())),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64, ArchiveError> {
        single(self.u64s(name)?, name)
    }

    pub fn bytes(&self, name: &str) -> Result<Vec<u8>, ArchiveError> {
        match &self.get(name)?.data {
            ArrayData::U8(v) => Ok(v.clone()),
            _ => Err(ArchiveError::Type(name.to_string())),
        }
    }

    pub fn string(&self, name: &str) -> Result<String, ArchiveError> {
        String::from_utf8(self.bytes(name)?).map_err(|_| ArchiveError::Type(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.push(e.data.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for e in &self.entries {
            match &e.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind = r.string()?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let code = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            table.push((name, code, shape));
        }
        let mut entries = Vec::with_capacity(table.len());
        for (name, code, shape) in table {
            let n: usize = shape.iter().product();
            let data = match code {
                0 => ArrayData::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => ArrayData::F64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => ArrayData::U64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                3 => ArrayData::U8(r.take(n)?.to_vec()),
                other => return Err(ArchiveError::Corrupt(format!("dtype code {other}"))),
            };
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(ArchiveError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { kind, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), ArchiveError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn single<T: Copy>(v: Vec<T>, name: &str) -> Result<T, ArchiveError> {
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(ArchiveError::Type(name.to_string())),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self.pos.checked_add(n).ok_or(ArchiveError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ArchiveError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ArchiveError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ArchiveError::Corrupt("utf-8".into()))
    }
}
