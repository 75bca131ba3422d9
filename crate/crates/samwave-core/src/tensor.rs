//! Dense row-major tensors.
//!
//! Values are stored as f64 regardless of [`DType`]; the dtype controls the
//! on-disk payload width (see [`crate::wvt1`]). Tensors are immutable after
//! construction and cheap to clone (the buffer is shared). Gradients live in
//! [`Param`], the only place with mutable state.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor {
            shape,
            dtype: DType::F64,
            data: Arc::new(data),
        })
    }

    /// As [`Tensor::new`] but skips the finiteness scan; for internal use where
    /// the caller has just produced the values and checks separately.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            dtype: DType::F64,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::from_raw(shape, vec![0.0; numel])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::from_raw(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw(vec![1], vec![value])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_raw(shape, (0..numel).map(|i| f(i)).collect())
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.numel(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data: Arc::clone(&self.data),
        })
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Sum of squared entries.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Value at a (row, col) position of a 2-D tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Value at an (y, x, c) position of a 3-D tensor.
    pub fn at3(&self, y: usize, x: usize, ch: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        let (_, w, cc) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * cc + ch]
    }
}

/// A trainable value: the tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param { value, grad: None }
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "grad shape {:?} != value shape {:?}",
                grad.shape(),
                self.value.shape()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn accumulate_grad(&mut self, grad: Tensor) -> Result<()> {
        match self.grad.take() {
            None => self.set_grad(grad),
            Some(old) => {
                if grad.shape() != old.shape() {
                    return Err(Error::shape("grad accumulation shape mismatch"));
                }
                let sum: Vec<f64> = old
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(a, b)| a + b)
                    .collect();
                self.grad = Some(Tensor::from_raw(old.shape().to_vec(), sum));
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix kernels. These are the hot loops of the whole crate; each has an
// AVX2+FMA variant selected at runtime. The j-loops are written over exact
// slices so LLVM vectorizes them.
// ---------------------------------------------------------------------------

macro_rules! matmul_body {
    ($a:expr, $b:expr, $m:expr, $k:expr, $n:expr) => {{
        let (a, b, m, k, n) = ($a, $b, $m, $k, $n);
        let mut c = vec![0.0f64; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    crow[j] += aik * brow[j];
                }
            }
        }
        c
    }};
}

/// C[m,n] = A[m,k] . B[j,k]^T, i.e. rows of A dotted with rows of B.
macro_rules! matmul_nt_body {
    ($a:expr, $b:expr, $m:expr, $k:expr, $n:expr) => {{
        let (a, b, m, k, n) = ($a, $b, $m, $k, $n);
        let mut c = vec![0.0f64; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += arow[kk] * brow[kk];
                }
                crow[j] = acc;
            }
        }
        c
    }};
}

/// C[k,n] = A[m,k]^T . B[m,n].
macro_rules! matmul_tn_body {
    ($a:expr, $b:expr, $m:expr, $k:expr, $n:expr) => {{
        let (a, b, m, k, n) = ($a, $b, $m, $k, $n);
        let mut c = vec![0.0f64; k * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let brow = &b[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let crow = &mut c[kk * n..(kk + 1) * n];
                for j in 0..n {
                    crow[j] += aik * brow[j];
                }
            }
        }
        c
    }};
}

#[cfg(target_arch = "x86_64")]
mod simd {
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        matmul_body!(a, b, m, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        matmul_nt_body!(a, b, m, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        matmul_tn_body!(a, b, m, k, n)
    }
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

pub(crate) fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        return unsafe { simd::matmul(a, b, m, k, n) };
    }
    matmul_body!(a, b, m, k, n)
}

pub(crate) fn matmul_nt_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        return unsafe { simd::matmul_nt(a, b, m, k, n) };
    }
    matmul_nt_body!(a, b, m, k, n)
}

pub(crate) fn matmul_tn_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        return unsafe { simd::matmul_tn(a, b, m, k, n) };
    }
    matmul_tn_body!(a, b, m, k, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshape(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4, 2]).is_err());
    }

    #[test]
    fn matmul_kernels_agree() {
        let m = 7;
        let k = 5;
        let n = 9;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.23).cos()).collect();
        let c = matmul_data(&a, &b, m, k, n);
        // reference: naive ijk
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                assert!((c[i * n + j] - acc).abs() < 1e-12);
            }
        }
        // nt: C = A . B^T with B stored row-major [n,k]
        let bt: Vec<f64> = {
            let mut t = vec![0.0; n * k];
            for kk in 0..k {
                for j in 0..n {
                    t[j * k + kk] = b[kk * n + j];
                }
            }
            t
        };
        let cnt = matmul_nt_data(&a, &bt, m, k, n);
        for (x, y) in c.iter().zip(cnt.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // tn: C = A^T . B with A stored [m,k] -> C is [k,n]
        let ctn = matmul_tn_data(&a, &c, m, k, n);
        for kk in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += a[i * k + kk] * c[i * n + j];
                }
                assert!((ctn[kk * n + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_grad_shape_checked() {
        let mut p = Param::new(Tensor::zeros(vec![2, 2]));
        assert!(p.set_grad(Tensor::zeros(vec![3])).is_err());
        p.set_grad(Tensor::zeros(vec![2, 2])).unwrap();
        p.accumulate_grad(Tensor::full(vec![2, 2], 1.0)).unwrap();
        assert_eq!(p.grad.as_ref().unwrap().data(), &[1.0; 4]);
    }
}
