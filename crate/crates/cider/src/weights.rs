//! Binary weights container.
//!
//! Layout (all integers little-endian u32, floats little-endian f32):
//!
//! ```text
//! magic  "CIDRW001" (8 bytes)
//! count  u32                      number of layers
//! per layer:
//!   name_len u32, name UTF-8
//!   rank     u32, dims u32[rank]
//!   data     f32[product(dims)]
//! ```

use crate::error::{CiderError, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"CIDRW001";

/// One named tensor with its logical dims (e.g. `[out, in, kh, kw]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Entry {
    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Contents of a weights file, keyed by layer name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightsFile {
    pub entries: BTreeMap<String, Entry>,
}

impl WeightsFile {
    pub fn new() -> Self {
        WeightsFile::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) {
        debug_assert_eq!(
            dims.iter().map(|&d| d as usize).product::<usize>(),
            data.len()
        );
        self.entries.insert(name.into(), Entry { dims, data });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(entry.dims.len() as u32).to_le_bytes())?;
            for &d in &entry.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for &v in &entry.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| CiderError::Format("weights file truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(CiderError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let count = read_u32(&mut r)? as usize;
        if count > 10_000 {
            return Err(CiderError::Format(format!("implausible layer count {count}")));
        }
        let mut out = WeightsFile::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(CiderError::Format(format!("implausible name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| CiderError::Format("weights file truncated in layer name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| CiderError::Format("layer name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(CiderError::Format(format!("implausible rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r)?);
            }
            let numel: usize = dims.iter().map(|&d| d as usize).product();
            if numel > 100_000_000 {
                return Err(CiderError::Format(format!("implausible tensor size {numel}")));
            }
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf).map_err(|_| {
                CiderError::Format(format!("weights file truncated in '{name}' data"))
            })?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CiderError::Format(format!("layer '{name}' contains NaN/Inf")));
            }
            out.entries.insert(name, Entry { dims, data });
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path.as_ref())?;
        self.write_to(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| CiderError::Format("weights file truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}
