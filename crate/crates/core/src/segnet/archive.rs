//! Little-endian weight archive.
//!
//! Layout: magic `MADW`, `u32` version, then records until end of file, each a
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims and the `f32`
//! payload. A record cut short is an error.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MADW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    records: Vec<Record>,
}

impl WeightArchive {
    /// Names must be unique and every payload must match its dims.
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Record {
                    name: r.name.clone(),
                    detail: "duplicate name".into(),
                });
            }
            let numel: usize = r.dims.iter().product();
            if numel != r.values.len() {
                return Err(Error::Record {
                    name: r.name.clone(),
                    detail: format!("dims {:?} hold {numel} values, payload has {}", r.dims, r.values.len()),
                });
            }
        }
        Ok(WeightArchive { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for r in &self.records {
            put_u32(&mut out, r.name.len() as u32);
            out.extend_from_slice(r.name.as_bytes());
            put_u32(&mut out, r.dims.len() as u32);
            for &d in &r.dims {
                put_u32(&mut out, d as u32);
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4, "magic")? != MAGIC {
            return Err(format_err("not a weight archive (bad magic)"));
        }
        let version = rd.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        let mut records = Vec::new();
        while rd.pos < bytes.len() {
            let len = rd.u32("name length")? as usize;
            let name = String::from_utf8(rd.take(len, "name")?.to_vec())
                .map_err(|_| format_err("record name is not UTF-8"))?;
            let rank = rd.u32("rank")? as usize;
            let dims = (0..rank)
                .map(|_| rd.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| format_err(format!("record `{name}` dims overflow")))?;
            let payload = rd.take(numel.checked_mul(4).ok_or_else(|| format_err("payload overflow"))?, "payload")?;
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(Record { name, dims, values });
        }
        WeightArchive::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::format("weight archive", detail)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
