//! IDX container used by the MNIST distribution.
//!
//! Header: two zero bytes, a type code, a rank byte, then `rank` big-endian
//! u32 extents. Only the unsigned-byte type (0x08) is supported, which is all
//! MNIST uses.

use super::DataError;
use crate::nncore::Tensor;

pub const TYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub values: Vec<u8>,
}

impl IdxArray {
    /// Rows = first extent, one flattened sample per row, bytes scaled to [0,1].
    pub fn to_images(&self) -> Result<Tensor, DataError> {
        if self.dims.len() < 2 {
            return Err(DataError::Format {
                offset: 3,
                reason: format!("image file needs rank ≥ 2, got {}", self.dims.len()),
            });
        }
        let data = self.values.iter().map(|&b| f64::from(b) / 255.0).collect();
        let cols = self.dims[1..].iter().product();
        Ok(Tensor::matrix(self.dims[0], cols, data)?)
    }

    pub fn to_labels(&self) -> Result<Vec<u8>, DataError> {
        if self.dims.len() != 1 {
            return Err(DataError::Format {
                offset: 3,
                reason: format!("label file needs rank 1, got {}", self.dims.len()),
            });
        }
        Ok(self.values.clone())
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Format { offset: bytes.len(), reason: "truncated header".into() });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(DataError::Format { offset: 0, reason: "bad magic: expected two zero bytes".into() });
    }
    if bytes[2] != TYPE_U8 {
        return Err(DataError::Format { offset: 2, reason: format!("unsupported element type 0x{:02x}", bytes[2]) });
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(DataError::Format { offset: bytes.len(), reason: "truncated extents".into() });
    }
    let dims: Vec<usize> =
        bytes[4..header].chunks_exact(4).map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize).collect();
    let n: usize = dims.iter().product();
    if bytes.len() < header + n {
        return Err(DataError::Format {
            offset: bytes.len(),
            reason: format!("payload truncated: need {n} bytes after offset {header}"),
        });
    }
    if bytes.len() > header + n {
        return Err(DataError::Format { offset: header + n, reason: "trailing bytes after payload".into() });
    }
    Ok(IdxArray { dims, values: bytes[header..].to_vec() })
}

pub fn serialize_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(&arr.values);
    out
}
