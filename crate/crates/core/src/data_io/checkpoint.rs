use std::fs;
use std::io::Write;
use std::path::Path;

use super::tensor_file::{decode_tensor, encode_tensor, StoredTensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A JSON header plus an ordered list of named tensors.
///
/// Layout: magic, `u32` version, `u32` header length, header bytes, `u32`
/// entry count, then per entry a `u16` name length, the UTF-8 name, a `u64`
/// byte length and an encoded tensor file. Integers are little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    pub entries: Vec<(String, StoredTensor)>,
}

impl Container {
    pub fn new(header: serde_json::Value) -> Self {
        Container {
            header,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: impl Into<StoredTensor>) {
        self.entries.push((name.into(), tensor.into()));
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<StoredTensor> {
        let i = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry '{name}'")))?;
        Ok(self.entries.remove(i).1)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            let n = u16::try_from(name.len()).map_err(|_| Error::invalid("entry name too long"))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let bytes = encode_tensor(tensor)?;
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(origin.to_string()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = r.u32()? as usize;
        let header = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Format(format!("{origin}: entry name is not UTF-8")))?
                .to_string();
            let len = usize::try_from(r.u64()?).map_err(|_| Error::Format(format!("{origin}: entry too large")))?;
            let tensor = decode_tensor(r.take(len)?, &format!("{origin}:{name}"))?;
            entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{origin}: trailing bytes")));
        }
        Ok(Container { header, entries })
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// failed write never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("{}: truncated", self.origin)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
