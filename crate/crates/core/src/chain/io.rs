//! Chain persistence.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "EVCH"
//! version      u32      1
//! n            u64      number of draws
//! total_dim    u64
//! n_blocks     u32
//! per block:   name_len u32, name (UTF-8), offset u64, width u64
//! burn_in      u64
//! seed         u64
//! independence u8       0 = joint, 1 = block-independent
//! draws        n * total_dim f64, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::chain::{BlockLayout, ChainSample, Independence};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVCH";
pub const VERSION: u32 = 1;

pub fn write_chain<W: Write>(chain: &ChainSample, mut out: W) -> Result<()> {
    let layout = chain.layout();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(chain.len() as u64).to_le_bytes())?;
    out.write_all(&(layout.total_dim() as u64).to_le_bytes())?;
    out.write_all(&(layout.len() as u32).to_le_bytes())?;
    for b in layout.blocks() {
        out.write_all(&(b.name.len() as u32).to_le_bytes())?;
        out.write_all(b.name.as_bytes())?;
        out.write_all(&(b.offset as u64).to_le_bytes())?;
        out.write_all(&(b.width as u64).to_le_bytes())?;
    }
    out.write_all(&(chain.burn_in_discarded as u64).to_le_bytes())?;
    out.write_all(&chain.seed.to_le_bytes())?;
    out.write_all(&[match chain.independence() {
        Independence::Joint => 0u8,
        Independence::BlockIndependent => 1u8,
    }])?;
    for x in chain.raw() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
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

pub fn read_chain<R: Read>(mut r: R) -> Result<ChainSample> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a chain file (bad magic bytes)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported chain file version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let total_dim = read_u64(&mut r)? as usize;
    let n_blocks = read_u32(&mut r)? as usize;
    let mut spec = Vec::with_capacity(n_blocks);
    let mut expected_offset = 0;
    for _ in 0..n_blocks {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Data("block name is not UTF-8".into()))?;
        let offset = read_u64(&mut r)? as usize;
        let width = read_u64(&mut r)? as usize;
        if offset != expected_offset {
            return Err(Error::Data(format!("block `{name}` is not contiguous")));
        }
        expected_offset += width;
        spec.push((name, width));
    }
    let layout = BlockLayout::new(spec)?;
    if layout.total_dim() != total_dim {
        return Err(Error::Data("layout does not cover the declared dimension".into()));
    }
    let burn_in = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let independence = match flag[0] {
        0 => Independence::Joint,
        1 => Independence::BlockIndependent,
        f => return Err(Error::Data(format!("bad independence flag {f}"))),
    };
    let mut bytes = vec![0u8; n * total_dim * 8];
    r.read_exact(&mut bytes)?;
    let draws = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ChainSample::new(layout, draws, burn_in, seed)?.with_independence(independence))
}

pub fn save_chain(chain: &ChainSample, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_chain(chain, std::io::BufWriter::new(f))
}

pub fn load_chain(path: &Path) -> Result<ChainSample> {
    let f = std::fs::File::open(path)?;
    read_chain(std::io::BufReader::new(f))
}

/// CSV export with a `block[index]` header row.
pub fn write_csv<W: Write>(chain: &ChainSample, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(chain.layout().column_names())?;
    for row in chain.rows() {
        w.write_record(row.iter().map(|x| format!("{x:?}")))?;
    }
    w.flush()?;
    Ok(())
}
