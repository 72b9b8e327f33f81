//! Flat little-endian `f32` array files.
//!
//! Layout: the 4-byte magic `EGC1`, a `u32` rank, `rank` `u32` dimensions,
//! then `product(dims)` little-endian `f32` values in row-major order. All
//! integers are little-endian. Rank-2 arrays (gaze, IMU, maps) therefore
//! carry exactly a 16-byte header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EGC1";
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct F32Array {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl F32Array {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                what: format!("array data for dims {dims:?}"),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn from_map(map: &Array2<f64>) -> Self {
        let (h, w) = map.dim();
        Self {
            dims: vec![h, w],
            data: map.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_map(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected a rank-2 map, found dims {:?}",
                self.dims
            )));
        }
        let data = self.data.iter().map(|&v| v as f64).collect();
        Array2::from_shape_vec((self.dims[0], self.dims[1]), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    /// Reads one array from the stream, leaving the reader positioned after it.
    pub fn read_from<R: Read>(mut input: R, what: &str) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            what: what.to_string(),
            reason,
        };
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| corrupt(format!("missing header: {e}")))?;
        if &magic != MAGIC {
            return Err(corrupt(format!("bad magic {magic:?}")));
        }
        let rank = read_u32(&mut input).map_err(|e| corrupt(e.to_string()))?;
        if rank > MAX_RANK {
            return Err(corrupt(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(read_u32(&mut input).map_err(|e| corrupt(e.to_string()))? as usize);
        }
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 4];
        input.read_exact(&mut bytes).map_err(|_| Error::LengthMismatch {
            what: format!("{what} payload"),
            expected: count,
            actual: 0,
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let array = Self::read_from(&mut reader, &path.display().to_string())?;
        let mut rest = Vec::new();
        reader
            .read_to_end(&mut rest)
            .map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(Error::LengthMismatch {
                what: format!("{} payload", path.display()),
                expected: array.data.len(),
                actual: array.data.len() + rest.len() / 4,
            });
        }
        Ok(array)
    }
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
