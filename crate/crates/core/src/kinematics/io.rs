//! Little-endian binary flow files: `IFLX`, u32 version, u32 H, u32 W, then
//! `H*W*2` f32 values row-major with dx, dy interleaved per pixel.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IFLX";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn forward_file_name(t: usize) -> String {
    format!("flow_fwd_{t:06}.bin")
}

/// Backward file `t` holds the field for the pair `t+1 -> t`.
pub fn backward_file_name(t: usize) -> String {
    format!("flow_bwd_{t:06}.bin")
}

pub fn encode_flow(flow: &Array3<f64>) -> Vec<u8> {
    let (h, w, c) = flow.dim();
    assert_eq!(c, 2, "flow must have two channels");
    let mut buf = Vec::with_capacity(HEADER_LEN + h * w * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in flow.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_flow(bytes: &[u8]) -> std::result::Result<Array3<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return Err("bad magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let expected = HEADER_LEN + h * w * 2 * 4;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len()));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite flow value".into());
    }
    Ok(Array3::from_shape_vec((h, w, 2), values).expect("length checked above"))
}

pub fn write_flow_file(path: &Path, flow: &Array3<f64>) -> Result<()> {
    std::fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: &Path) -> Result<Array3<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes).map_err(|message| Error::FlowFile {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let mut f = Array3::<f64>::zeros((2, 3, 2));
        f[[0, 0, 0]] = 1.5;
        f[[1, 2, 1]] = -2.0;
        let bytes = encode_flow(&f);
        assert_eq!(&bytes[0..4], b"IFLX");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 2 * 3 * 2 * 4);
        assert_eq!(&bytes[16..20], &1.5f32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.0f32).to_le_bytes());
        assert_eq!(decode_flow(&bytes).unwrap(), f);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let f = Array3::<f64>::zeros((2, 2, 2));
        let good = encode_flow(&f);
        assert!(decode_flow(&good[..10]).is_err());
        assert!(decode_flow(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_flow(&bad).is_err());
        let mut v2 = good;
        v2[4] = 2;
        assert!(decode_flow(&v2).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_flow_file(&dir.path().join("flow_fwd_000000.bin")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
