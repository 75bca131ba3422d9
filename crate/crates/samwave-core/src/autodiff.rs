//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed through it; [`Tape::backward`]
//! replays the records in reverse, accumulating adjoints. Values are ordinary
//! [`Tensor`]s; a [`Var`] is an index into the tape. A tape is confined to one
//! thread; independent tapes never share state, so gradients from two tapes
//! cannot interfere.
//!
//! Adjoints are only propagated into nodes that have a trainable leaf upstream
//! (`requires_grad`), so frozen branches cost nothing in the backward pass, and
//! intermediate adjoint buffers are released as soon as they have been consumed.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{matmul_data, matmul_nt_data, matmul_tn_data, Tensor};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    id: usize,
}

type BackFn = Box<dyn Fn(&[f64], &mut Adjoints)>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackFn>,
}

pub struct Tape {
    tape_id: u64,
    nodes: RefCell<Vec<Node>>,
}

/// Adjoint buffers during a backward sweep.
pub struct Adjoints {
    req: Vec<bool>,
    numel: Vec<usize>,
    bufs: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Whether node `id` participates in gradient flow; used to skip
    /// expensive contributions into frozen branches.
    pub fn wants(&self, id: usize) -> bool {
        self.req[id]
    }

    fn add_with(&mut self, id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.req[id] {
            return;
        }
        let buf = self.bufs[id].get_or_insert_with(|| vec![0.0; self.numel[id]]);
        f(buf);
    }

    /// Accumulate `values[i] * scale` into the adjoint of node `id`.
    fn add_scaled(&mut self, id: usize, values: &[f64], scale: f64) {
        self.add_with(id, |buf| {
            for (b, v) in buf.iter_mut().zip(values) {
                *b += v * scale;
            }
        });
    }

    fn add(&mut self, id: usize, values: &[f64]) {
        self.add_scaled(id, values, 1.0);
    }
}

pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape_id, self.tape_id, "Var from a different tape");
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            tape_id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, requires_grad: bool, backward: Option<BackFn>, op: &str) -> Result<Var> {
        if !value.is_all_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        Ok(Var {
            tape_id: self.tape_id,
            id,
        })
    }

    /// A constant input: participates in the forward pass only.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(t.clone(), false, None, "leaf").expect("leaf tensors are finite")
    }

    /// A trainable input: receives a gradient from [`Tape::backward`].
    pub fn param(&self, t: &Tensor) -> Var {
        self.push(t.clone(), true, None, "param").expect("param tensors are finite")
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.check(v);
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.check(v);
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape_id, self.tape_id, "Var used with a different tape");
    }

    fn req(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| {
            self.check(*v);
            nodes[v.id].requires_grad
        })
    }

    // -- elementwise ------------------------------------------------------

    fn binary_same_shape(&self, a: Var, b: Var, op: &str) -> Result<(Tensor, Tensor)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta, tb))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same_shape(a, b, "add")?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let req = self.req(&[a, b]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.add(a.id, g);
                sink.add(b.id, g);
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same_shape(a, b, "sub")?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let req = self.req(&[a, b]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.add(a.id, g);
                sink.add_scaled(b.id, g, -1.0);
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same_shape(a, b, "mul")?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let req = self.req(&[a, b]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let (ta, tb) = (ta.clone(), tb.clone());
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), y) in buf.iter_mut().zip(g).zip(tb.data()) {
                        *o += gv * y;
                    }
                });
                sink.add_with(b.id, |buf| {
                    for ((o, gv), x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv * x;
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "mul")
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same_shape(a, b, "div")?;
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x / y).collect();
        let req = self.req(&[a, b]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let (ta, tb) = (ta.clone(), tb.clone());
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), y) in buf.iter_mut().zip(g).zip(tb.data()) {
                        *o += gv / y;
                    }
                });
                sink.add_with(b.id, |buf| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        let y = tb.data()[i];
                        *o -= g[i] * ta.data()[i] / (y * y);
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "div")
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x * s).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| sink.add_scaled(a.id, g, s))
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "scale")
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x + s).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| sink.add(a.id, g))
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "add_scalar")
    }

    /// Matrix [r, c] plus a per-column bias [c].
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.shape().len() != 2 || tb.shape() != [ta.shape()[1]] {
            return Err(Error::shape(format!(
                "add_bias: {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = ta.to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let req = self.req(&[a, bias]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.add(a.id, g);
                sink.add_with(bias.id, |buf| {
                    for row in g.chunks_exact(c) {
                        for (o, gv) in buf.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                });
            })
        });
        let _ = r;
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "add_bias")
    }

    // -- linear algebra ----------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_data(ta.data(), tb.data(), m, k, n);
        let req = self.req(&[a, b]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let (ta, tb) = (ta.clone(), tb.clone());
            Box::new(move |g, sink| {
                if sink.wants(a.id) {
                    let da = matmul_nt_data(g, tb.data(), m, n, k);
                    sink.add(a.id, &da);
                }
                if sink.wants(b.id) {
                    let db = matmul_tn_data(ta.data(), g, m, k, n);
                    sink.add(b.id, &db);
                }
            })
        });
        self.push(Tensor::from_raw(vec![m, n], data), req, back, "matmul")
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::shape(format!("transpose: {:?}", ta.shape())));
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let src = ta.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for j in 0..n {
                        for i in 0..m {
                            buf[i * n + j] += g[j * m + i];
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![n, m], data), req, back, "transpose")
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        let value = ta.reshape(shape)?;
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| sink.add(a.id, g))
        });
        self.push(value, req, back, "reshape")
    }

    /// Columns [start, start+len) of a 2-D tensor.
    pub fn narrow_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || start + len > ta.shape()[1] {
            return Err(Error::shape(format!(
                "narrow_cols {start}+{len} of {:?}",
                ta.shape()
            )));
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let src = ta.data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for i in 0..m {
                        for j in 0..len {
                            buf[i * n + start + j] += g[i * len + j];
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![m, len], data), req, back, "narrow_cols")
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors"));
        }
        let tensors: Vec<Tensor> = vars.iter().map(|v| self.value(*v)).collect();
        let m = tensors[0].shape()[0];
        for t in &tensors {
            if t.shape().len() != 2 || t.shape()[0] != m {
                return Err(Error::shape(format!("concat_cols row mismatch {:?}", t.shape())));
            }
        }
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[1]).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (t, w) in tensors.iter().zip(&widths) {
                data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
        }
        let req = self.req(vars);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let parents: Vec<usize> = vars.iter().map(|v| v.id).collect();
            let widths = widths.clone();
            Box::new(move |g, sink| {
                let mut offset = 0;
                for (&pid, &w) in parents.iter().zip(&widths) {
                    let off = offset;
                    sink.add_with(pid, |buf| {
                        for i in 0..m {
                            for j in 0..w {
                                buf[i * w + j] += g[i * n + off + j];
                            }
                        }
                    });
                    offset += w;
                }
            })
        });
        self.push(Tensor::from_raw(vec![m, n], data), req, back, "concat_cols")
    }

    // -- nonlinearities -----------------------------------------------------

    /// Exact (erf-based) GeLU: 0.5 x (1 + erf(x / sqrt(2))).
    pub fn gelu(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| gelu_scalar(x)).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let ta = ta.clone();
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), &x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv * gelu_derivative(x);
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "gelu")
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let y = data.clone();
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), &yv) in buf.iter_mut().zip(g).zip(&y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "sigmoid")
    }

    pub fn ln(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x.ln()).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let ta = ta.clone();
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), &x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv / x;
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "ln")
    }

    /// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let ta = ta.clone();
            Box::new(move |g, sink| {
                sink.add_with(a.id, |buf| {
                    for ((o, gv), &x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        if x > lo && x < hi {
                            *o += gv;
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(ta.shape().to_vec(), data), req, back, "clamp")
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s: f64 = ta.data().iter().sum();
        let req = self.req(&[a]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            Box::new(move |g, sink| {
                let gv = g[0];
                sink.add_with(a.id, |buf| {
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![1], vec![s]), req, back, "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    // -- fused row ops ---------------------------------------------------------

    /// Per-row layer normalization of [r, c] with learned scale/shift [c].
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.shape().len() != 2 || tg.shape() != [tx.shape()[1]] || tb.shape() != [tx.shape()[1]] {
            return Err(Error::shape(format!(
                "layer_norm: x {:?}, gamma {:?}, beta {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut data = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_s = vec![0.0; r];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = (var + eps).sqrt();
            inv_s[i] = 1.0 / s;
            for j in 0..c {
                let xh = (row[j] - mu) / s;
                xhat[i * c + j] = xh;
                data[i * c + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let req = self.req(&[x, gamma, beta]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let tg = tg.clone();
            Box::new(move |g, sink| {
                sink.add_with(gamma.id, |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                sink.add_with(beta.id, |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[j] += g[i * c + j];
                        }
                    }
                });
                sink.add_with(x.id, |buf| {
                    let gamma_data = tg.data();
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let xrow = &xhat[i * c..(i + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let gg = grow[j] * gamma_data[j];
                            m1 += gg;
                            m2 += gg * xrow[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let gg = grow[j] * gamma_data[j];
                            buf[i * c + j] += (gg - m1 - xrow[j] * m2) * inv_s[i];
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![r, c], data), req, back, "layer_norm")
    }

    /// Softmax along each row of [r, c].
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape(format!("softmax_rows: {:?}", tx.shape())));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                data[i * c + j] /= z;
            }
        }
        let req = self.req(&[x]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let y = data.clone();
            Box::new(move |g, sink| {
                sink.add_with(x.id, |buf| {
                    for i in 0..r {
                        let yrow = &y[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            buf[i * c + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![r, c], data), req, back, "softmax_rows")
    }

    /// Assemble a 2x upsampled spatial grid from four quadrant-phase maps.
    ///
    /// Inputs are [h*w, c] in row-major (y, x) order; output row (2y+dy)(2w)+(2x+dx)
    /// comes from quadrant (dy, dx) row (y, x). This is a stride-2 transposed
    /// convolution with a 2x2 kernel, expressed with the four taps as separate
    /// pointwise maps.
    pub fn interleave_2x2(&self, h: usize, w: usize, quads: [Var; 4]) -> Result<Var> {
        let tensors: Vec<Tensor> = quads.iter().map(|v| self.value(*v)).collect();
        let c = tensors[0].shape().get(1).copied().unwrap_or(0);
        for t in &tensors {
            if t.shape() != [h * w, c] {
                return Err(Error::shape(format!(
                    "interleave_2x2 expects [{}x{}, {}], got {:?}",
                    h,
                    w,
                    c,
                    t.shape()
                )));
            }
        }
        let (h2, w2) = (2 * h, 2 * w);
        let mut data = vec![0.0; h2 * w2 * c];
        for (qi, t) in tensors.iter().enumerate() {
            let (dy, dx) = (qi / 2, qi % 2);
            for y in 0..h {
                for x in 0..w {
                    let src = &t.data()[(y * w + x) * c..(y * w + x + 1) * c];
                    let orow = (2 * y + dy) * w2 + (2 * x + dx);
                    data[orow * c..(orow + 1) * c].copy_from_slice(src);
                }
            }
        }
        let req = self.req(&quads);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let parents: Vec<usize> = quads.iter().map(|v| v.id).collect();
            Box::new(move |g, sink| {
                for (qi, &pid) in parents.iter().enumerate() {
                    let (dy, dx) = (qi / 2, qi % 2);
                    sink.add_with(pid, |buf| {
                        for y in 0..h {
                            for x in 0..w {
                                let orow = (2 * y + dy) * w2 + (2 * x + dx);
                                for ch in 0..c {
                                    buf[(y * w + x) * c + ch] += g[orow * c + ch];
                                }
                            }
                        }
                    });
                }
            })
        });
        self.push(Tensor::from_raw(vec![h2 * w2, c], data), req, back, "interleave_2x2")
    }

    /// Bilinear spatial resampling of a [h*w, c] grid to [h2*w2, c],
    /// half-pixel-centered with edge clamping.
    pub fn bilinear_rows(&self, x: Var, h: usize, w: usize, h2: usize, w2: usize) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.shape().get(1).copied().unwrap_or(0);
        if tx.shape() != [h * w, c] {
            return Err(Error::shape(format!(
                "bilinear_rows expects [{}x{}, c], got {:?}",
                h,
                w,
                tx.shape()
            )));
        }
        let ytab = bilinear_axis(h, h2);
        let xtab = bilinear_axis(w, w2);
        let mut data = vec![0.0; h2 * w2 * c];
        for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                let orow = oy * w2 + ox;
                for ch in 0..c {
                    let v00 = tx.data()[(y0 * w + x0) * c + ch];
                    let v01 = tx.data()[(y0 * w + x1) * c + ch];
                    let v10 = tx.data()[(y1 * w + x0) * c + ch];
                    let v11 = tx.data()[(y1 * w + x1) * c + ch];
                    data[orow * c + ch] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                }
            }
        }
        let req = self.req(&[x]);
        let back: Option<BackFn> = req.then(|| -> BackFn {
            let (ytab, xtab) = (ytab.clone(), xtab.clone());
            Box::new(move |g, sink| {
                sink.add_with(x.id, |buf| {
                    for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                            let orow = oy * w2 + ox;
                            for ch in 0..c {
                                let gv = g[orow * c + ch];
                                buf[(y0 * w + x0) * c + ch] += gv * (1.0 - wy) * (1.0 - wx);
                                buf[(y0 * w + x1) * c + ch] += gv * (1.0 - wy) * wx;
                                buf[(y1 * w + x0) * c + ch] += gv * wy * (1.0 - wx);
                                buf[(y1 * w + x1) * c + ch] += gv * wy * wx;
                            }
                        }
                    }
                });
            })
        });
        self.push(Tensor::from_raw(vec![h2 * w2, c], data), req, back, "bilinear_rows")
    }

    // -- backward ---------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns the gradient for every
    /// `param` leaf that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss);
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar loss of shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let n = nodes.len();
        let mut sink = Adjoints {
            req: nodes.iter().map(|nd| nd.requires_grad).collect(),
            numel: nodes.iter().map(|nd| nd.value.numel()).collect(),
            bufs: vec![None; n],
        };
        sink.bufs[loss.id] = Some(vec![1.0]);
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        for id in (0..=loss.id).rev() {
            let Some(adj) = sink.bufs[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.backward {
                Some(back) => back(&adj, &mut sink),
                None => {
                    if node.requires_grad {
                        grads[id] = Some(Tensor::from_raw(node.value.shape().to_vec(), adj));
                    }
                }
            }
        }
        Ok(Gradients {
            tape_id: self.tape_id,
            grads,
        })
    }
}

fn bilinear_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
            let src = src.clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let phi = (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * phi
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` must deterministically rebuild the same computation from the given
/// leaves. For each parameter, deviations are normalized by the magnitude of
/// that parameter's gradient (its infinity norm, floored at 1e-8), so the
/// measure stays meaningful for entries whose gradient crosses zero; the
/// worst normalized deviation over all entries is returned.
pub fn grad_check<F>(params: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            grads
                .wrt(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let eval = |pi: usize, j: usize, delta: f64| -> Result<f64> {
        let mut modified: Vec<Tensor> = params.to_vec();
        let mut data = params[pi].to_vec();
        data[j] += delta;
        modified[pi] = Tensor::new(params[pi].shape().to_vec(), data)?;
        let tape = Tape::new();
        let vars: Vec<Var> = modified.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&tape, &vars)?;
        tape.value(loss).item()
    };

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let mut fds = Vec::with_capacity(p.numel());
        for j in 0..p.numel() {
            fds.push((eval(pi, j, h)? - eval(pi, j, -h)?) / (2.0 * h));
        }
        let scale = fds.iter().fold(1e-8f64, |a, &b| a.max(b.abs()));
        for (j, fd) in fds.iter().enumerate() {
            let ad = analytic[pi].data()[j];
            worst = worst.max((ad - fd).abs() / scale);
        }
    }
    Ok(worst)
}
