//! Versioned binary containers and small file helpers shared by the
//! checkpoint, snapshot and dataset formats.
//!
//! Layout: 4-byte magic, `u32` format version, `u64` header length, UTF-8
//! JSON header, then named sections of little-endian `f64` values whose
//! names and lengths are listed in the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Envelope<H> {
    sections: Vec<(String, usize)>,
    header: H,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never observes a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_container<H: Serialize>(
    magic: &[u8; 4],
    version: u32,
    header: &H,
    sections: &[(&str, &[f64])],
) -> Result<Vec<u8>> {
    let env = Envelope {
        sections: sections.iter().map(|(n, v)| (n.to_string(), v.len())).collect(),
        header,
    };
    let json = serde_json::to_vec(&env)?;
    let payload: usize = sections.iter().map(|(_, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in sections {
        for v in values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container<H: Serialize>(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
    header: &H,
    sections: &[(&str, &[f64])],
) -> Result<()> {
    write_atomic(path, &encode_container(magic, version, header, sections)?)
}

/// Decoded container: the typed header and sections in file order.
#[derive(Debug, Clone)]
pub struct Container<H> {
    pub header: H,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl<H> Container<H> {
    pub fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing section '{name}'")))?;
        Ok(self.sections.remove(pos).1)
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }
}

pub fn decode_container<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 4],
    version: u32,
) -> Result<Container<H>> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::Format(format!("format version {found}, expected {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(Error::Format("truncated header".into()));
    }
    let env: Envelope<H> = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Format(format!("corrupt header: {e}")))?;
    let mut data = &body[hlen..];
    let expected: usize = env.sections.iter().map(|(_, n)| n * 8).sum();
    if data.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header describes {expected}",
            data.len()
        )));
    }
    let mut sections = Vec::with_capacity(env.sections.len());
    for (name, n) in env.sections {
        let (chunk, rest) = data.split_at(n * 8);
        let values = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        sections.push((name, values));
        data = rest;
    }
    Ok(Container { header: env.header, sections })
}

pub fn read_container<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
) -> Result<Container<H>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, magic, version)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn hash_f64s<'a>(chunks: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for chunk in chunks {
        for v in chunk {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
