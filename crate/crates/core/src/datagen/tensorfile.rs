//! `GINT` tensor container.
//!
//! Layout: ASCII `GINT`, u32 LE version (1), u8 dtype (0 = f32), u8 ndim,
//! ndim × u32 LE dims, then the row-major payload in little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

pub const MAGIC: &[u8; 4] = b"GINT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.ndim()).map_err(|_| Error::Format("more than 255 dimensions".into()))?;
    let mut out = Vec::with_capacity(10 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(ndim);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(Error::Length {
                expected: n,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(10)?;
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    if bytes[8] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", bytes[8])));
    }
    let ndim = bytes[9] as usize;
    need(10 + 4 * ndim)?;
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for i in 0..ndim {
        let at = 10 + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
        shape.push(d);
    }
    let start = 10 + 4 * ndim;
    let payload_len = count
        .checked_mul(4)
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    need(start + payload_len)?;
    if bytes.len() != start + payload_len {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - start - payload_len
        )));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(-2.5f32);
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, 2.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(&b[..4], b"GINT");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 0);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..18], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
    }

    #[test]
    fn corrupted_dtype() {
        let mut b = encode_tensor(&Tensor::zeros(&[3])).unwrap();
        b[8] = 7;
        assert!(matches!(decode_tensor(&b), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_overflow() {
        let mut b = encode_tensor(&Tensor::zeros(&[3])).unwrap();
        b[0] = b'X';
        assert!(matches!(decode_tensor(&b), Err(Error::Format(_))));

        let mut b = Vec::from(*MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&[0, 4]);
        for _ in 0..4 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_tensor(&b), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_add((i as u32).wrapping_mul(2_654_435_761)) & 0x7f7f_ffff)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
