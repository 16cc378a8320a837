//! Flat binary parameter checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"RCCKPT\0\0"
//! version u32
//! meta    u64 length + UTF-8 bytes (free-form, JSON by convention)
//! count   u32
//! per tensor:
//!   name    u32 length + UTF-8 bytes
//!   ndim    u32, dims u64 * ndim
//!   frozen  u8 (0 none, 1 all, 2 per-element bytes follow)
//!   data    f64 bit patterns
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RCCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u64).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for nt in &self.tensors {
            if nt.frozen.len() != nt.tensor.len() {
                return Err(Error::structural(format!(
                    "freeze flags of `{}` do not match its size",
                    nt.name
                )));
            }
            w.write_all(&(nt.name.len() as u32).to_le_bytes())?;
            w.write_all(nt.name.as_bytes())?;
            let shape = nt.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            if nt.frozen.iter().all(|&f| !f) {
                w.write_all(&[0])?;
            } else if nt.frozen.iter().all(|&f| f) {
                w.write_all(&[1])?;
            } else {
                w.write_all(&[2])?;
                let flags: Vec<u8> = nt.frozen.iter().map(|&f| f as u8).collect();
                w.write_all(&flags)?;
            }
            for v in nt.tensor.data() {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::data("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let meta = read_string(&mut r, meta_len)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let frozen = match tag[0] {
                0 => vec![false; n],
                1 => vec![true; n],
                2 => {
                    let mut flags = vec![0u8; n];
                    r.read_exact(&mut flags)?;
                    flags.into_iter().map(|f| f != 0).collect()
                }
                t => return Err(Error::data(format!("bad freeze tag {t} for `{name}`"))),
            };
            let mut buf = vec![0u8; 8 * n];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            tensors.push(NamedTensor {
                name,
                tensor: Tensor::from_vec(&shape, data)?,
                frozen,
            });
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let f = std::fs::File::open(path)?;
        Checkpoint::read_from(std::io::BufReader::new(f))
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::data("checkpoint string is not UTF-8"))
}
