//! WVT1 binary tensor files.
//!
//! Layout: magic `WVT1`, u8 dtype code (1 = f32, 2 = f64), u8 ndim, then ndim
//! little-endian u32 dims, then the row-major payload in little-endian floats
//! of the dtype's width. Used for checkpoints, subband dumps and dataset
//! tensors.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

const MAGIC: &[u8; 4] = b"WVT1";

pub fn write_wvt1<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[t.dtype().code(), t.shape().len() as u8])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format("dim exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_wvt1<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected WVT1")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = DType::from_code(head[0])?;
    let ndim = head[1] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        DType::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        DType::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Ok(Tensor::new(shape, data)?.with_dtype(dtype))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wvt1(&mut f, t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_wvt1(&mut f)
}

/// Write several records back to back into one file (e.g. the four DWT
/// subbands of `wavelet decompose`).
pub fn save_tensors(path: impl AsRef<Path>, ts: &[&Tensor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in ts {
        write_wvt1(&mut f, t)?;
    }
    Ok(())
}

/// Read exactly `n` concatenated records.
pub fn load_tensors(path: impl AsRef<Path>, n: usize) -> Result<Vec<Tensor>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_wvt1(&mut f)?);
    }
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {} records in {}",
            rest.len(),
            n,
            path.as_ref().display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let mut buf = Vec::new();
        write_wvt1(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"WVT1");
        assert_eq!(buf[4], 2); // f64
        assert_eq!(buf[5], 2); // ndim
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..14], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 6 * 8);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = b"NOPE".to_vec();
        buf.extend([2, 1, 1, 0, 0, 0]);
        buf.extend(1.0f64.to_le_bytes());
        assert!(matches!(
            read_wvt1(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn f64_round_trip(shape in prop::collection::vec(1usize..5, 1..4),
                          seed in any::<u64>()) {
            let mut rng = crate::rng::Prng::new(seed);
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|_| rng.uniform_in(-10.0, 10.0)).collect();
            let t = Tensor::new(shape.clone(), data.clone()).unwrap();
            let mut buf = Vec::new();
            write_wvt1(&mut buf, &t).unwrap();
            let back = read_wvt1(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), &shape[..]);
            prop_assert_eq!(back.data(), &data[..]);
        }

        #[test]
        fn f32_round_trip_is_stable(seed in any::<u64>()) {
            // once narrowed to f32, a second round trip is bit-identical
            let mut rng = crate::rng::Prng::new(seed);
            let data: Vec<f64> = (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let t = Tensor::new(vec![16], data).unwrap().with_dtype(DType::F32);
            let mut buf1 = Vec::new();
            write_wvt1(&mut buf1, &t).unwrap();
            let once = read_wvt1(&mut buf1.as_slice()).unwrap();
            prop_assert_eq!(once.dtype(), DType::F32);
            let mut buf2 = Vec::new();
            write_wvt1(&mut buf2, &once).unwrap();
            prop_assert_eq!(buf1, buf2);
        }
    }
}
