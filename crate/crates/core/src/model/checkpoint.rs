//! Binary container: magic, version byte, length-prefixed descriptor text,
//! then little-endian f64 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Network;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RLH1";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Serializes a descriptor and a flat value list.
pub fn encode(descriptor: &str, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 1 + 4 + descriptor.len() + 8 + 8 * values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<f64>)> {
    if bytes.len() < 5 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::VersionMismatch("not a reluhead container (bad magic)".into()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "container version {}, this build reads {CHECKPOINT_VERSION}",
            bytes[4]
        )));
    }
    let corrupt = |m: &str| Error::CorruptPayload(m.to_string());
    let mut pos = 5;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let dlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    let descriptor = std::str::from_utf8(take(&mut pos, dlen)?)
        .map_err(|_| corrupt("descriptor is not UTF-8"))?
        .to_string();
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
    let remaining = (bytes.len() - pos) as u64;
    if count.checked_mul(8) != Some(remaining) {
        return Err(Error::CorruptPayload(format!(
            "header declares {count} values, payload holds {remaining} bytes"
        )));
    }
    let values = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((descriptor, values))
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let values: Vec<f64> = self.params().iter().flat_map(|p| p.data().iter().copied()).collect();
        encode(&self.descriptor(), &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
        let (descriptor, values) = decode(bytes)?;
        let mut net = Network::from_descriptor(&descriptor)?;
        let expected = net.param_count();
        if values.len() != expected {
            return Err(Error::CorruptPayload(format!(
                "architecture needs {expected} parameters, payload has {}",
                values.len()
            )));
        }
        let mut rest = values.as_slice();
        for p in net.params_mut() {
            let (head, tail) = rest.split_at(p.len());
            p.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(net)
    }
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &net.to_bytes())
}

pub fn load(path: &Path) -> Result<Network> {
    Network::from_bytes(&fs::read(path)?)
}
