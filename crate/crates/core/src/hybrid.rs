//! Binary container: 8-byte magic, LE u32 version, LE u64 header length,
//! JSON header, then LE f64 values to end of stream.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write<W: Write, H: Serialize>(
    mut out: W,
    magic: &[u8; 8],
    version: u32,
    header: &H,
    values: &[f64],
) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    out.write_all(magic)?;
    out.write_all(&version.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut payload = Vec::with_capacity(values.len() * 8);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn read<R: Read, H: DeserializeOwned>(mut input: R, magic: &[u8; 8], version: u32) -> Result<(H, Vec<f64>)> {
    let mut got = [0u8; 8];
    input.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
    }
    let mut u32_buf = [0u8; 4];
    input.read_exact(&mut u32_buf)?;
    let found = u32::from_le_bytes(u32_buf);
    if found != version {
        return Err(Error::Format(format!("unsupported version {found}")));
    }
    let mut u64_buf = [0u8; 8];
    input.read_exact(&mut u64_buf)?;
    let len = usize::try_from(u64::from_le_bytes(u64_buf)).map_err(|_| Error::Format("header too large".into()))?;
    let mut header = Vec::new();
    input.by_ref().take(len as u64).read_to_end(&mut header)?;
    if header.len() != len {
        return Err(Error::Format("truncated header".into()));
    }
    let header: H = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let mut buf = Vec::new();
        write(&mut buf, b"TESTFMT\0", 3, &vec!["a", "b"], &[1.5, -0.0, f64::MAX]).unwrap();
        let (h, v): (Vec<String>, Vec<f64>) = read(&buf[..], b"TESTFMT\0", 3).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), [1.5f64, -0.0, f64::MAX].map(f64::to_bits));
        assert!(read::<_, Vec<String>>(&buf[..], b"OTHERFMT", 3).is_err());
        assert!(read::<_, Vec<String>>(&buf[..], b"TESTFMT\0", 4).is_err());
        assert!(read::<_, Vec<String>>(&buf[..buf.len() - 3], b"TESTFMT\0", 3).is_err());
    }
}
