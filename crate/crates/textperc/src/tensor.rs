//! The `.tpt` tensor container.
//!
//! Layout (little-endian): magic `TPTN`, `u32` version (1), `u32` rank,
//! `rank × u32` dims, `u8` dtype (0 = f32, 1 = u8, 2 = i32), then the
//! row-major payload. Nothing may follow the payload.

use std::fs;
use std::path::Path;

use textperc_core::Grid;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TPTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    I32 = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            2 => Some(DType::I32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 | DType::I32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("bad magic at byte 0 (expected \"TPTN\")")]
    BadMagic,
    #[error("unsupported version {version} at byte {offset}")]
    Version { version: u32, offset: usize },
    #[error("unknown dtype code {code} at byte {offset}")]
    DType { code: u8, offset: usize },
    #[error("file truncated at byte {offset}: {needed} more bytes expected")]
    Truncated { offset: usize, needed: usize },
    #[error("{extra} trailing bytes after payload at byte {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("dims {dims:?} overflow the element count")]
    Overflow { dims: Vec<usize> },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let count = element_count(&dims)?;
        if count != data.len() {
            return Err(TensorError::Shape(format!("dims {dims:?} hold {count} elements, data has {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 4 * self.dims.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.data.dtype() as u8);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let offset = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(TensorError::Version { version, offset });
        }
        let rank = r.u32()? as usize;
        // every dim needs 4 bytes, so a huge rank fails as truncation here
        r.need(rank.saturating_mul(4))?;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let offset = r.pos;
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code).ok_or(TensorError::DType { code, offset })?;
        let count = element_count(&dims)?;
        let payload = r.take(count.checked_mul(dtype.size()).ok_or_else(|| TensorError::Overflow { dims: dims.clone() })?)?;
        if r.pos != bytes.len() {
            return Err(TensorError::Trailing { offset: r.pos, extra: bytes.len() - r.pos });
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::I32 => TensorData::I32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Self { dims, data })
    }

    /// Wraps an `H × W × C` grid; single-channel grids become rank 2.
    pub fn from_grid_f32(g: &Grid<f32>) -> Self {
        Self { dims: grid_dims(g), data: TensorData::F32(g.data.clone()) }
    }

    pub fn from_grid_u8(g: &Grid<u8>) -> Self {
        Self { dims: grid_dims(g), data: TensorData::U8(g.data.clone()) }
    }

    pub fn from_grid_i32(g: &Grid<i32>) -> Self {
        Self { dims: grid_dims(g), data: TensorData::I32(g.data.clone()) }
    }

    /// `(height, width, channels)` of a rank-2 or rank-3 tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.dims[..] {
            [h, w] => Ok((h, w, 1)),
            [h, w, c] => Ok((h, w, c)),
            _ => Err(TensorError::Shape(format!("expected rank 2 or 3, got dims {:?}", self.dims))),
        }
    }

    pub fn to_grid_f32(&self) -> Result<Grid<f32>, TensorError> {
        let (h, w, c) = self.hwc()?;
        match &self.data {
            TensorData::F32(v) => Ok(Grid::from_vec(w, h, c, v.clone()).expect("element count checked")),
            other => Err(TensorError::Shape(format!("expected f32 data, got {:?}", other.dtype()))),
        }
    }

    pub fn to_grid_u8(&self) -> Result<Grid<u8>, TensorError> {
        let (h, w, c) = self.hwc()?;
        match &self.data {
            TensorData::U8(v) => Ok(Grid::from_vec(w, h, c, v.clone()).expect("element count checked")),
            other => Err(TensorError::Shape(format!("expected u8 data, got {:?}", other.dtype()))),
        }
    }

    pub fn to_grid_i32(&self) -> Result<Grid<i32>, TensorError> {
        let (h, w, c) = self.hwc()?;
        match &self.data {
            TensorData::I32(v) => Ok(Grid::from_vec(w, h, c, v.clone()).expect("element count checked")),
            other => Err(TensorError::Shape(format!("expected i32 data, got {:?}", other.dtype()))),
        }
    }
}

fn grid_dims<T>(g: &Grid<T>) -> Vec<usize> {
    if g.channels == 1 {
        vec![g.height, g.width]
    } else {
        vec![g.height, g.width, g.channels]
    }
}

fn element_count(dims: &[usize]) -> Result<usize, TensorError> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| TensorError::Overflow { dims: dims.to_vec() })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<(), TensorError> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            Err(TensorError::Truncated { offset: self.bytes.len(), needed: n - left })
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        self.need(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: String, source: TensorError },
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorFileError> {
    let bytes = fs::read(path).map_err(|source| TensorFileError::Io { path: path.display().to_string(), source })?;
    Tensor::decode(&bytes).map_err(|source| TensorFileError::Format { path: path.display().to_string(), source })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), TensorFileError> {
    fs::write(path, t.encode()).map_err(|source| TensorFileError::Io { path: path.display().to_string(), source })
}
