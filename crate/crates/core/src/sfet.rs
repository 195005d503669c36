//! SFET tensor files — the on-disk format for images, checkpoints and
//! optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SFET"
//! 4       1           version (1)
//! 5       1           dtype: 0 = f32, 1 = f64
//! 6       1           ndim
//! 7       5           reserved, must be zero
//! 12      ndim * 8    dims, u64 each
//! ...     product*sz  payload, row-major
//! ```

use crate::error::{Result, SfeError};
use crate::mat::Mat;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SFET";
const VERSION: u8 = 1;
const MAX_NDIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn checked_product(dims: &[u64], path: &Path) -> Result<u64> {
    let mut p: u64 = 1;
    for &d in dims {
        p = p.checked_mul(d).ok_or_else(|| SfeError::Format {
            offset: 12,
            msg: format!("{}: dim product overflows u64", path.display()),
        })?;
    }
    Ok(p)
}

pub fn write_tensor(path: &Path, dims: &[u64], data: &TensorData) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(SfeError::Param(format!(
            "tensor rank {} outside 1..={MAX_NDIM}",
            dims.len()
        )));
    }
    let n = checked_product(dims, path)?;
    if n != data.len() as u64 {
        return Err(SfeError::Structure(format!(
            "dims {:?} imply {n} elements, payload has {}",
            dims,
            data.len()
        )));
    }
    let elem = match data.dtype() {
        Dtype::F32 => 4usize,
        Dtype::F64 => 8,
    };
    let mut buf = Vec::with_capacity(12 + dims.len() * 8 + data.len() * elem);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(match data.dtype() {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    });
    buf.push(dims.len() as u8);
    buf.extend_from_slice(&[0u8; 5]);
    for &d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match data {
        TensorData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| SfeError::io(path, e))?;
    f.write_all(&buf).map_err(|e| SfeError::io(path, e))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SfeError::io(path, e))?;
    let fail = |offset: u64, msg: String| SfeError::Format { offset, msg };

    if bytes.len() < 12 {
        return Err(fail(bytes.len() as u64, format!("{}: truncated header", path.display())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("{}: bad magic, not an SFET file", path.display())));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, format!("{}: unsupported version {}", path.display(), bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(fail(5, format!("{}: unknown dtype {other}", path.display()))),
    };
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(fail(6, format!("{}: rank {ndim} outside 1..={MAX_NDIM}", path.display())));
    }
    if bytes[7..12].iter().any(|&b| b != 0) {
        return Err(fail(7, format!("{}: reserved bytes not zero", path.display())));
    }
    let dims_end = 12 + ndim * 8;
    if bytes.len() < dims_end {
        return Err(fail(bytes.len() as u64, format!("{}: truncated dims", path.display())));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 12 + i * 8;
        dims.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    let n = checked_product(&dims, path)?;
    let elem = match dtype {
        Dtype::F32 => 4u64,
        Dtype::F64 => 8,
    };
    let need = n
        .checked_mul(elem)
        .ok_or_else(|| fail(12, format!("{}: payload size overflows", path.display())))?;
    let have = (bytes.len() - dims_end) as u64;
    if have != need {
        return Err(fail(
            dims_end as u64 + have.min(need),
            format!("{}: payload holds {have} bytes, dims {dims:?} require {need}", path.display()),
        ));
    }
    let payload = &bytes[dims_end..];
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    };
    Ok(Tensor { dims, data })
}

pub fn write_mat_f32(path: &Path, m: &Mat<f32>) -> Result<()> {
    write_tensor(
        path,
        &[m.rows() as u64, m.cols() as u64],
        &TensorData::F32(m.as_slice().to_vec()),
    )
}

/// Read a rank-2 f32 tensor as a matrix.
pub fn read_mat_f32(path: &Path) -> Result<Mat<f32>> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(SfeError::Structure(format!(
            "{}: expected rank 2, found rank {}",
            path.display(),
            t.dims.len()
        )));
    }
    let (r, c) = (t.dims[0] as usize, t.dims[1] as usize);
    match t.data {
        TensorData::F32(v) => Ok(Mat::from_vec(r, c, v)),
        TensorData::F64(_) => Err(SfeError::Structure(format!(
            "{}: expected f32 payload, found f64",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_f32_matrix() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.sfet");
        let m = Mat::from_fn(3, 5, |r, c| (r * 10 + c) as f32 * 0.25);
        write_mat_f32(&p, &m).unwrap();
        assert_eq!(read_mat_f32(&p).unwrap(), m);
    }

    #[test]
    fn round_trip_f64_rank3() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.sfet");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 6.0).collect();
        write_tensor(&p, &[2, 3, 4], &TensorData::F64(data.clone())).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.dims, vec![2, 3, 4]);
        match t.data {
            TensorData::F64(v) => assert_eq!(v, data),
            _ => panic!("dtype changed in round trip"),
        }
    }

    #[test]
    fn writes_are_byte_stable() {
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.sfet"), dir.path().join("b.sfet"));
        let m = Mat::from_fn(4, 4, |r, c| (r as f32).sin() + c as f32);
        write_mat_f32(&p1, &m).unwrap();
        write_mat_f32(&p2, &m).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.sfet");
        std::fs::write(&p, b"NOPE00000000").unwrap();
        match read_tensor(&p) {
            Err(SfeError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("trunc.sfet");
        let m = Mat::from_fn(4, 4, |_, _| 1.0f32);
        write_mat_f32(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        match read_tensor(&p) {
            Err(SfeError::Format { offset, .. }) => {
                assert!(offset > 12, "offset {offset} should point into payload")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_dim_payload_mismatch_on_write() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.sfet");
        let err = write_tensor(&p, &[3, 3], &TensorData::F32(vec![0.0; 8])).unwrap_err();
        assert!(matches!(err, SfeError::Structure(_)), "got {err:?}");
    }
}
