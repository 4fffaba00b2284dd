use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EPRGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned binary container: JSON metadata plus named `f64` sections.
///
/// Layout: magic, `u32` version, `u64` header length, header JSON, then
/// every section's values as little-endian `f64`, then a SHA-256 over all
/// preceding bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub sections: Vec<(String, Vec<f64>)>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    meta: serde_json::Value,
    sections: Vec<(String, usize)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.sections.push((name.into(), values));
    }

    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Parse(format!("checkpoint has no section {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            sections: self.sections.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
        };
        let hjson = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut buf = Vec::with_capacity(64 + hjson.len() + 8 * self.sections.iter().map(|s| s.1.len()).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        buf.extend_from_slice(&hjson);
        for (_, v) in &self.sections {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum("checkpoint content hash mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
        let header: Header =
            serde_json::from_slice(&body[20..hend]).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        let mut data = &body[hend..];
        let total: usize = header.sections.iter().map(|s| s.1).sum();
        if data.len() != total * 8 {
            return Err(Error::Parse(format!(
                "checkpoint payload holds {} bytes, header declares {}",
                data.len(),
                total * 8
            )));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        for (name, len) in header.sections {
            let (chunk, rest) = data.split_at(len * 8);
            let values = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push((name, values));
            data = rest;
        }
        Ok(Self {
            meta: header.meta,
            sections,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
