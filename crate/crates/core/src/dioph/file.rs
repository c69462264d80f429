//! Binary cache file, little-endian throughout:
//!
//! ```text
//! "DIOC" | version u16 | M u32 | P u32 | R u32 | x-hash u64
//! x values (P*M u32) | admitted u64
//! n u64 | n * (P u64 r, i64 count)        all entries
//! n u64 | n * (P u64 r, i64 count)        frontier entries
//! CRC32 u32 of every preceding byte
//! ```

use std::path::Path;

use super::{x_hash, DioCache};
use crate::error::{Error, Result};

pub const CACHE_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"DIOC";

fn put_entries(out: &mut Vec<u8>, r: &[u64], counts: &[i64], p: usize) {
    out.extend_from_slice(&(counts.len() as u64).to_le_bytes());
    for (row, c) in r.chunks_exact(p).zip(counts) {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.to_le_bytes());
    }
}

pub(crate) fn encode(c: &DioCache) -> Vec<u8> {
    let p = c.x.len();
    let m = c.x[0].len();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&c.budget.to_le_bytes());
    out.extend_from_slice(&c.x_hash.to_le_bytes());
    for row in &c.x {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&c.admitted.to_le_bytes());
    put_entries(&mut out, &c.r, &c.counts, p);
    put_entries(&mut out, &c.frontier_r, &c.frontier_counts, p);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::CacheTruncated(format!("file ends inside {what}")))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice has length N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }

    fn entries(&mut self, p: usize, what: &str) -> Result<(Vec<u64>, Vec<i64>)> {
        let n = self.u64(what)? as usize;
        let need = n.saturating_mul((p + 1) * 8);
        if self.buf.len().saturating_sub(self.pos) < need {
            return Err(Error::CacheTruncated(format!("{what} section shorter than {n} records")));
        }
        let mut r = Vec::with_capacity(n * p);
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..p {
                r.push(self.u64(what)?);
            }
            counts.push(i64::from_le_bytes(self.take(what)?));
        }
        Ok((r, counts))
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<DioCache> {
    if buf.len() < 4 + 2 + 4 {
        return Err(Error::CacheTruncated("file shorter than header".into()));
    }
    if &buf[..4] != MAGIC {
        return Err(Error::CacheTruncated("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != CACHE_FORMAT_VERSION {
        return Err(Error::CacheVersion { found: version, expected: CACHE_FORMAT_VERSION });
    }
    let (body, footer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CacheChecksum { stored, computed });
    }

    let mut rd = Reader { buf: body, pos: 6 };
    let m = rd.u32("header")? as usize;
    let p = rd.u32("header")? as usize;
    let budget = rd.u32("header")?;
    let hash = rd.u64("header")?;
    if m == 0 || p == 0 {
        return Err(Error::CacheTruncated("header declares an empty cache".into()));
    }
    if body.len().saturating_sub(rd.pos) < m.saturating_mul(p).saturating_mul(4) {
        return Err(Error::CacheTruncated("file ends inside covariate vectors".into()));
    }
    let mut x = Vec::with_capacity(p);
    for _ in 0..p {
        let row: Result<Vec<u32>> = (0..m).map(|_| rd.u32("covariate vectors")).collect();
        x.push(row?);
    }
    if x_hash(&x) != hash {
        return Err(Error::CacheMismatch("stored x-hash disagrees with stored covariates".into()));
    }
    let admitted = rd.u64("admitted count")?;
    let (r, counts) = rd.entries(p, "entry")?;
    let (frontier_r, frontier_counts) = rd.entries(p, "frontier")?;
    if rd.pos != body.len() {
        return Err(Error::CacheTruncated(format!(
            "{} trailing bytes after frontier section",
            body.len() - rd.pos
        )));
    }
    Ok(DioCache { x, budget, x_hash: hash, admitted, r, counts, frontier_r, frontier_counts })
}

pub fn save_cache(c: &DioCache, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(c))?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<DioCache> {
    decode(&std::fs::read(path)?)
}
