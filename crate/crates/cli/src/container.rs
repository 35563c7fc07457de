//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SCSCTNS1"  u32 count
//! per entry:  u16 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!             u8 rank, rank x u32 extents, row-major payload
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use scsc_core::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SCSCTNS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(code: u8) -> CliResult<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(CliError::Format(format!("unknown dtype code {}", other))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor,
}

/// Ordered, uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<Entry>,
}

impl TensorContainer {
    pub fn new() -> Self {
        TensorContainer::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> CliResult<()> {
        self.insert_as(name, DType::F64, tensor)
    }

    /// Adds an entry stored with `dtype` on disk. `F32` entries are rounded
    /// to single precision immediately so that memory and file agree.
    pub fn insert_as(&mut self, name: impl Into<String>, dtype: DType, tensor: Tensor) -> CliResult<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(CliError::Usage(format!("entry name too long ({} bytes)", name.len())));
        }
        if self.get(&name).is_some() {
            return Err(CliError::Usage(format!("duplicate entry name {:?}", name)));
        }
        let tensor = match dtype {
            DType::F64 => tensor,
            DType::F32 => tensor.map(|v| v as f32 as f64),
        };
        self.entries.push(Entry { name, dtype, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn require(&self, name: &str) -> CliResult<&Tensor> {
        self.get(name)
            .ok_or_else(|| CliError::Format(format!("missing entry {:?}", name)))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u16).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.dtype.code(), e.tensor.rank() as u8])?;
            for &d in e.tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(e.tensor.len() * e.dtype.width());
            match e.dtype {
                DType::F64 => e.tensor.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => e
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::Format("bad magic, not a tensor container".into()));
        }
        let count = r.u32()?;
        let mut out = TensorContainer::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CliError::Format("entry name is not UTF-8".into()))?
                .to_string();
            let head = r.take(2)?;
            let dtype = DType::from_code(head[0])?;
            let rank = head[1] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.width()).map(|b| (n, b)));
            let (n, nbytes) = n.ok_or_else(|| CliError::Format(format!("entry {:?} is too large", name)))?;
            let payload = r.take(nbytes)?;
            let data: Vec<f64> = match dtype {
                DType::F64 => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                DType::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            debug_assert_eq!(data.len(), n);
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| CliError::Format(format!("entry {:?}: {}", name, e)))?;
            if out.get(&name).is_some() {
                return Err(CliError::Format(format!("duplicate entry name {:?}", name)));
            }
            out.entries.push(Entry { name, dtype, tensor });
        }
        if r.pos != bytes.len() {
            return Err(CliError::Format(format!(
                "{} trailing bytes after last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Format("container is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
