//! Binary dataset files and a CSV debug export.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   "D2DPA1"          6 bytes
//! version u32               currently 1
//! count   u64               number of instance records
//! seed    u64
//! record* { n u32, h [f64; n*n] row-major, sigma2 f64,
//!           weights [f64; n], pmax f64, topology_id u32 }
//! crc     u32               CRC-32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::netgen::{ChannelInstance, Dataset};
use crate::{Error, Matrix, Result};

pub const MAGIC: &[u8; 6] = b"D2DPA1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 6 + 4 + 8 + 8;

pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&dataset.seed.to_le_bytes());
    for (inst, id) in dataset.instances.iter().zip(&dataset.topology_ids) {
        buf.extend_from_slice(&(inst.n() as u32).to_le_bytes());
        for v in inst.h().as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&inst.sigma2().to_le_bytes());
        for w in inst.weights() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf.extend_from_slice(&inst.pmax().to_le_bytes());
        buf.extend_from_slice(&id.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("record overruns payload at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing D2DPA1 magic".into()));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: payload, pos: 6 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u64()?;
    let seed = r.u64()?;
    let mut ds = Dataset::empty(seed);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let h = r.f64s(n * n)?;
        let sigma2 = r.f64()?;
        let weights = r.f64s(n)?;
        let pmax = r.f64()?;
        let id = r.u32()?;
        let h = Matrix::from_vec(n, n, h).expect("n*n values read");
        ds.instances.push(ChannelInstance::new(h, sigma2, weights, pmax)?);
        ds.topology_ids.push(id);
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            payload.len() - r.pos
        )));
    }
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(dataset);
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// One row per gain entry: `instance,topology,rx,tx,h,sigma2,pmax`.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "instance,topology,rx,tx,h,sigma2,pmax")?;
    for (k, (inst, id)) in dataset.instances.iter().zip(&dataset.topology_ids).enumerate() {
        let n = inst.n();
        for i in 0..n {
            for j in 0..n {
                writeln!(
                    out,
                    "{k},{id},{i},{j},{:e},{:e},{}",
                    inst.h()[(i, j)],
                    inst.sigma2(),
                    inst.pmax()
                )?;
            }
        }
    }
    Ok(())
}
