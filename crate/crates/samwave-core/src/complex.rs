//! Complex values as structured (re, im) pairs of real tensors.
//!
//! Complex arithmetic is expanded into real operations on the components, so
//! reverse-mode differentiation applies unchanged and every gradient stays
//! real-valued (one gradient per component).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape(format!(
                "complex components differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(ComplexTensor { re, im })
    }

    /// Real tensor promoted with a zero imaginary part.
    pub fn from_real(re: Tensor) -> Self {
        let im = Tensor::zeros(re.shape().to_vec());
        ComplexTensor { re, im }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        ComplexTensor {
            re: Tensor::zeros(shape.clone()),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// Sum of |z|^2 over all entries.
    pub fn energy(&self) -> f64 {
        self.re.energy() + self.im.energy()
    }

    pub fn magnitude(&self) -> Tensor {
        Tensor::from_fn(self.re.shape().to_vec(), |i| {
            let (a, b) = (self.re.data()[i], self.im.data()[i]);
            (a * a + b * b).sqrt()
        })
    }
}

/// A complex value on a tape: a pair of real vars.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn cleaf(&self, t: &ComplexTensor) -> ComplexVar {
        ComplexVar {
            re: self.leaf(&t.re),
            im: self.leaf(&t.im),
        }
    }

    pub fn cparam(&self, t: &ComplexTensor) -> ComplexVar {
        ComplexVar {
            re: self.param(&t.re),
            im: self.param(&t.im),
        }
    }

    pub fn cvalue(&self, v: ComplexVar) -> ComplexTensor {
        ComplexTensor {
            re: self.value(v.re),
            im: self.value(v.im),
        }
    }

    /// Promote a real var to complex with zero imaginary part.
    pub fn promote(&self, re: Var) -> ComplexVar {
        let shape = self.shape_of(re);
        ComplexVar {
            re,
            im: self.leaf(&Tensor::zeros(shape)),
        }
    }

    /// Complex matrix product from four real products:
    /// (ar.br - ai.bi) + j (ar.bi + ai.br).
    pub fn cmatmul(&self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let rr = self.matmul(a.re, b.re)?;
        let ii = self.matmul(a.im, b.im)?;
        let ri = self.matmul(a.re, b.im)?;
        let ir = self.matmul(a.im, b.re)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    pub fn cadd(&self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        Ok(ComplexVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    pub fn cadd_bias(&self, a: ComplexVar, bias: ComplexVar) -> Result<ComplexVar> {
        Ok(ComplexVar {
            re: self.add_bias(a.re, bias.re)?,
            im: self.add_bias(a.im, bias.im)?,
        })
    }

    pub fn cconcat_cols(&self, vars: &[ComplexVar]) -> Result<ComplexVar> {
        let res: Vec<Var> = vars.iter().map(|v| v.re).collect();
        let ims: Vec<Var> = vars.iter().map(|v| v.im).collect();
        Ok(ComplexVar {
            re: self.concat_cols(&res)?,
            im: self.concat_cols(&ims)?,
        })
    }

    /// GeLU applied independently to the real and imaginary components.
    pub fn split_gelu(&self, a: ComplexVar) -> Result<ComplexVar> {
        Ok(ComplexVar {
            re: self.gelu(a.re)?,
            im: self.gelu(a.im)?,
        })
    }
}
