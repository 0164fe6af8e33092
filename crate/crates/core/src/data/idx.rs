//! Read-only IDX container support (big-endian, unsigned-byte payloads).

use std::path::Path;

use super::read_file;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("file ends inside the {what}")))
}

/// Validates the header and returns the dimension sizes and the payload.
fn parse<'a>(bytes: &'a [u8], magic: u32, kind: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32(bytes, 0, "magic number")?;
    if found != magic {
        return Err(Error::format(
            0,
            format!("magic 0x{found:08x} is not the IDX {kind} magic 0x{magic:08x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let offset = 4 + 4 * i;
        let d = read_u32(bytes, offset, "dimension sizes")? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format(offset as u64, "dimension sizes overflow the address space"))?;
        dims.push(d);
    }
    let start = 4 + 4 * rank;
    let payload = &bytes[start..];
    if payload.len() < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!("payload truncated: header promises {count} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > count {
        return Err(Error::format(
            (start + count) as u64,
            format!("{} unexpected bytes after the payload", payload.len() - count),
        ));
    }
    Ok((dims, payload))
}

/// Parses an image file into `[N, rows, cols, 1]` with pixels scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let (dims, payload) = parse(bytes, IMAGE_MAGIC, "image")?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::from_vec(&[dims[0], dims[1], dims[2], 1], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse(bytes, LABEL_MAGIC, "label")?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_roundtrip() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 1, 7, 7];
        match parse_idx_labels(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_idx_images("/nonexistent/idx"), Err(Error::Io { .. })));
    }
}
