use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"DTEN";
pub const TENSOR_VERSION: u8 = 1;

/// Label map or any other `u16` tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u16>,
}

impl LabelTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        if numel(&shape) != data.len() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "label shape {shape:?} does not fit {} values",
                data.len()
            )));
        }
        Ok(LabelTensor { shape, data })
    }
}

/// A tensor of any storable element type.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U16(LabelTensor),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
            StoredTensor::U16(_) => DType::U16,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
            StoredTensor::U16(t) => &t.shape,
        }
    }

    /// Floating-point contents converted to `T`; label tensors are rejected.
    pub fn into_float<T: Scalar>(self) -> Result<Tensor<T>> {
        match self {
            StoredTensor::F32(t) => Ok(t.cast()),
            StoredTensor::F64(t) => Ok(t.cast()),
            StoredTensor::U16(_) => Err(Error::Format("expected a float tensor, found u16".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelTensor> {
        match self {
            StoredTensor::U16(t) => Ok(t),
            other => Err(Error::Format(format!(
                "expected a u16 tensor, found {:?}",
                other.dtype()
            ))),
        }
    }
}

impl From<Tensor<f32>> for StoredTensor {
    fn from(t: Tensor<f32>) -> Self {
        StoredTensor::F32(t)
    }
}

impl From<Tensor<f64>> for StoredTensor {
    fn from(t: Tensor<f64>) -> Self {
        StoredTensor::F64(t)
    }
}

impl From<LabelTensor> for StoredTensor {
    fn from(t: LabelTensor) -> Self {
        StoredTensor::U16(t)
    }
}

fn float_payload<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::NonFinite("refusing to store a tensor with non-finite values".into()));
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

/// Serializes `tensor`: magic, version, dtype code, rank, `u32` extents, then
/// the little-endian row-major payload.
pub fn encode_tensor(tensor: &StoredTensor) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    let rank = u8::try_from(shape.len()).map_err(|_| Error::invalid("tensor rank exceeds 255"))?;
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + numel(shape) * tensor.dtype().size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(tensor.dtype().code());
    out.push(rank);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        StoredTensor::F32(t) => float_payload(t, &mut out)?,
        StoredTensor::F64(t) => float_payload(t, &mut out)?,
        StoredTensor::U16(t) => {
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Inverse of [`encode_tensor`]. `origin` names the source in errors.
pub fn decode_tensor(bytes: &[u8], origin: &str) -> Result<StoredTensor> {
    if bytes.len() < 7 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic(origin.to_string()));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(Error::Version {
            found: bytes[4] as u32,
            expected: TENSOR_VERSION as u32,
        });
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::Format(format!("{origin}: unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    let header = 7 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format(format!("{origin}: truncated header")));
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = &bytes[header..];
    let expected = numel(&shape) * dtype.size();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{origin}: payload has {} bytes, shape {shape:?} needs {expected}",
            payload.len()
        )));
    }
    let chunks = payload.chunks_exact(dtype.size());
    Ok(match dtype {
        DType::F32 => StoredTensor::F32(Tensor::new(shape, chunks.map(f32::read_le).collect())?),
        DType::F64 => StoredTensor::F64(Tensor::new(shape, chunks.map(f64::read_le).collect())?),
        DType::U16 => StoredTensor::U16(LabelTensor::new(
            shape,
            chunks.map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
        )?),
    })
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &StoredTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<StoredTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip() {
        let t = Tensor::from_f64(&[2, 3], &[1.0, -2.5, 3.25, 1e-300, 0.1, 7.0]).unwrap();
        let back = decode_tensor(&encode_tensor(&t.clone().into()).unwrap(), "mem").unwrap();
        assert_eq!(back, StoredTensor::F64(t));
    }

    #[test]
    fn u16_keeps_ignore_label() {
        let t = LabelTensor::new(vec![2, 2], vec![0, 3, 65535, 11]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.dten");
        write_tensor(&path, &t.clone().into()).unwrap();
        assert_eq!(read_tensor(&path).unwrap().into_labels().unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let bytes = encode_tensor(&t.into()).unwrap();
        assert_eq!(&bytes[..7], b"DTEN\x01\x00\x01");
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 11 + 8);
    }

    #[test]
    fn rejects_bad_input() {
        let good = encode_tensor(&Tensor::<f64>::zeros(&[3]).into()).unwrap();
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_tensor(&magic, "x").unwrap_err().to_string().contains("bad magic"));
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(decode_tensor(&version, "x"), Err(Error::Version { found: 9, .. })));
        let mut dtype = good.clone();
        dtype[5] = 7;
        assert!(decode_tensor(&dtype, "x").is_err());
        assert!(decode_tensor(&good[..good.len() - 1], "x").is_err());
        let nan = Tensor::<f64>::from_f64(&[1], &[f64::NAN]).unwrap();
        assert!(encode_tensor(&nan.into()).is_err());
    }
}
