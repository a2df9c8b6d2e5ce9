//! MNIST IDX files (big-endian). Files ending in `.gz` are decompressed on the fly.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded contents of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `[n, rows, cols, 1]`, values `byte / 255`.
    Images(Tensor),
    Labels(Vec<usize>),
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(reader)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut reader = reader;
        reader.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an in-memory IDX buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    match magic {
        IMAGES_MAGIC => {
            let n = be_u32(bytes, 4)? as usize;
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            let len = n
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
            let payload = &bytes[16..];
            if payload.len() < len {
                return Err(Error::Length {
                    expected: 16 + len,
                    found: bytes.len(),
                });
            }
            let data = payload[..len].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(IdxData::Images(Tensor::new(vec![n, rows, cols, 1], data)?))
        }
        LABELS_MAGIC => {
            let n = be_u32(bytes, 4)? as usize;
            let payload = &bytes[8..];
            if payload.len() < n {
                return Err(Error::Length {
                    expected: 8 + n,
                    found: bytes.len(),
                });
            }
            Ok(IdxData::Labels(payload[..n].iter().map(|&b| b as usize).collect()))
        }
        other => Err(Error::Format(format!(
            "unknown IDX magic 0x{other:08x} (expected 0x{IMAGES_MAGIC:08x} or 0x{LABELS_MAGIC:08x})"
        ))),
    }
}

pub fn load_idx(path: &Path) -> Result<IdxData> {
    parse_idx(&read_all(path)?)
}

pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    match load_idx(path)? {
        IdxData::Images(t) => Ok(t),
        IdxData::Labels(_) => Err(Error::Format(format!(
            "{} holds labels, expected images",
            path.display()
        ))),
    }
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    match load_idx(path)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => Err(Error::Format(format!(
            "{} holds images, expected labels",
            path.display()
        ))),
    }
}

/// Encodes raw bytes as an IDX image file body.
pub fn encode_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_fixture() {
        let bytes = encode_idx_images(1, 2, 2, &[0, 255, 128, 64]);
        let IdxData::Images(t) = parse_idx(&bytes).unwrap() else {
            panic!("expected images")
        };
        assert_eq!(t.shape(), &[1, 2, 2, 1]);
        let expect = [0.0, 1.0, 0.502, 0.251];
        for (a, b) in t.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn label_fixture() {
        let bytes = encode_idx_labels(&[7, 0, 9]);
        assert_eq!(parse_idx(&bytes).unwrap(), IdxData::Labels(vec![7, 0, 9]));
    }

    #[test]
    fn bad_magic_is_named() {
        let mut bytes = encode_idx_labels(&[1]);
        bytes[2] = 0x09;
        bytes[3] = 0x99;
        match parse_idx(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("0x00000999"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_idx_images(2, 2, 2, &[0; 8]);
        bytes.truncate(20);
        assert!(matches!(parse_idx(&bytes), Err(Error::Length { .. })));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::Length { .. })));
    }
}
