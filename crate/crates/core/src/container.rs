//! Binary container shared by dataset files and model checkpoints:
//!
//! ```text
//! magic    8 bytes   "CLOSUQ01"
//! hlen     u64 LE    length of the JSON header in bytes
//! header   hlen      UTF-8 JSON object with at least `kind`, `schema_version`, `payload_len`
//! payload  8*n       little-endian f64 values, n = payload_len
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLOSUQ01";

pub fn write<H: Serialize>(
    path: &Path,
    kind: &str,
    schema_version: u32,
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let mut value = serde_json::to_value(header)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("container header must be a JSON object".into()))?;
    obj.insert("kind".into(), Value::from(kind));
    obj.insert("schema_version".into(), Value::from(schema_version));
    obj.insert("payload_len".into(), Value::from(payload.len() as u64));
    let header_bytes = serde_json::to_vec(&value)?;

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a container, checking its kind and schema version, and returns the
/// typed header with the payload.
pub fn read<H: DeserializeOwned>(path: &Path, kind: &str, schema_version: u32) -> Result<(H, Vec<f64>)> {
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let hlen = u64::from_le_bytes(len);
    if hlen > 1 << 30 {
        return Err(fmt(format!("implausible header length {hlen}")));
    }
    let mut header_bytes = vec![0u8; hlen as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Value = serde_json::from_slice(&header_bytes)?;

    let found_kind = header.get("kind").and_then(Value::as_str).unwrap_or("");
    if found_kind != kind {
        return Err(fmt(format!("expected a {kind} file, found {found_kind:?}")));
    }
    let found_version = header
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| fmt("missing schema_version".into()))? as u32;
    if found_version != schema_version {
        return Err(Error::SchemaVersion {
            found: found_version,
            expected: schema_version,
        });
    }
    let n = header
        .get("payload_len")
        .and_then(Value::as_u64)
        .ok_or_else(|| fmt("missing payload_len".into()))? as usize;

    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes", rest.len())));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let typed = serde_json::from_value(header)?;
    Ok((typed, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Header {
        name: String,
    }

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let payload = vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0];
        write(&path, "thing", 2, &Header { name: "a".into() }, &payload).unwrap();
        let (h, p): (Header, Vec<f64>) = read(&path, "thing", 2).unwrap();
        assert_eq!(h.name, "a");
        let bits: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn wrong_kind_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write(&path, "thing", 2, &Header { name: "a".into() }, &[1.0]).unwrap();
        assert!(matches!(read::<Header>(&path, "other", 2), Err(Error::Format { .. })));
        assert!(matches!(
            read::<Header>(&path, "thing", 3),
            Err(Error::SchemaVersion { found: 2, expected: 3 })
        ));
    }
}
