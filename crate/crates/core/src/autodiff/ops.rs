//! Elementwise, reduction, linear-algebra and shape operations.

use std::rc::Rc;

use super::{OpKind, Var};
use crate::error::{Error, Result};
use crate::numerics::tensor::{axpy, dot, strides_of};
use crate::numerics::{gemm, MatMut, MatRef, Tensor};

/// Positive inputs beyond this make `1/(1+e^{-x})` round to exactly 1.0;
/// the mirrored negative side returns exactly 0.0.
const SIGMOID_SATURATION: f64 = 36.75;

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else if x < -SIGMOID_SATURATION {
        0.0
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn check_same(kind: OpKind, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "{kind}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Split `shape` around `axis` into (outer, extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    fn unary(
        self,
        kind: OpKind,
        value: Tensor,
        vjp: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Result<Var<'t>> {
        let id = self.id;
        self.tape.record(
            kind,
            &[self],
            value,
            Box::new(move |g, sink| {
                if sink.wants(id) {
                    let d = vjp(g);
                    sink.add(id, &d);
                }
            }),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same(OpKind::Add, &a, &b)?;
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::Add,
            &[self, other],
            a.zip_map(&b, |x, y| x + y),
            Box::new(move |g, sink| {
                sink.add(ia, g);
                sink.add(ib, g);
            }),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same(OpKind::Sub, &a, &b)?;
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::Sub,
            &[self, other],
            a.zip_map(&b, |x, y| x - y),
            Box::new(move |g, sink| {
                sink.add(ia, g);
                if let Some(buf) = sink.get(ib) {
                    buf.axpy(-1.0, g);
                }
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same(OpKind::Mul, &a, &b)?;
        let value = a.zip_map(&b, |x, y| x * y);
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::Mul,
            &[self, other],
            value,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ia) {
                    for ((o, gi), bi) in buf.data_mut().iter_mut().zip(g.data()).zip(b.data()) {
                        *o += gi * bi;
                    }
                }
                if let Some(buf) = sink.get(ib) {
                    for ((o, gi), ai) in buf.data_mut().iter_mut().zip(g.data()).zip(a.data()) {
                        *o += gi * ai;
                    }
                }
            }),
        )
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same(OpKind::Div, &a, &b)?;
        let value = a.zip_map(&b, |x, y| x / y);
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::Div,
            &[self, other],
            value,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ia) {
                    for ((o, gi), bi) in buf.data_mut().iter_mut().zip(g.data()).zip(b.data()) {
                        *o += gi / bi;
                    }
                }
                if let Some(buf) = sink.get(ib) {
                    for (((o, gi), ai), bi) in
                        buf.data_mut().iter_mut().zip(g.data()).zip(a.data()).zip(b.data())
                    {
                        *o -= gi * ai / (bi * bi);
                    }
                }
            }),
        )
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let value = self.value().map(|x| c * x);
        self.unary(OpKind::Scale, value, move |g| g.map(|v| c * v))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        let value = self.value().map(|x| x + c);
        self.unary(OpKind::AddScalar, value, |g| g.clone())
    }

    /// `self · s` where `s` holds a single value.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let (x, sv) = (self.value(), s.value());
        if sv.len() != 1 {
            return Err(Error::arg(format!("mul_scalar needs a one-element factor, got {:?}", sv.shape())));
        }
        let c = sv.item();
        let (ix, is) = (self.id, s.id);
        self.tape.record(
            OpKind::MulScalarVar,
            &[self, s],
            x.map(|v| v * c),
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ix) {
                    buf.axpy(c, g);
                }
                if let Some(buf) = sink.get(is) {
                    buf.data_mut()[0] += dot(g.data(), x.data());
                }
            }),
        )
    }

    /// Complex product where `axis` (extent 2) holds (real, imaginary).
    pub fn complex_mul(self, other: Var<'t>, axis: usize) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same(OpKind::ComplexMul, &a, &b)?;
        if axis >= a.rank() || a.shape()[axis] != 2 {
            return Err(Error::arg(format!(
                "complex_mul: axis {axis} of {:?} must have extent 2",
                a.shape()
            )));
        }
        let (outer, _, inner) = split_axis(a.shape(), axis);
        let mut out = Tensor::zeros(a.shape());
        {
            let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
            for o in 0..outer {
                let re = o * 2 * inner;
                let im = re + inner;
                for i in 0..inner {
                    let (ar, ai, br, bi) = (ad[re + i], ad[im + i], bd[re + i], bd[im + i]);
                    od[re + i] = ar * br - ai * bi;
                    od[im + i] = ar * bi + ai * br;
                }
            }
        }
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::ComplexMul,
            &[self, other],
            out,
            Box::new(move |g, sink| {
                // grad of a holomorphic product: G_a = G·conj(b), G_b = G·conj(a)
                let conj_mul = |buf: &mut Tensor, w: &Tensor| {
                    let (gd, wd, bd) = (g.data(), w.data(), buf.data_mut());
                    for o in 0..outer {
                        let re = o * 2 * inner;
                        let im = re + inner;
                        for i in 0..inner {
                            let (gr, gi, wr, wi) = (gd[re + i], gd[im + i], wd[re + i], wd[im + i]);
                            bd[re + i] += gr * wr + gi * wi;
                            bd[im + i] += gi * wr - gr * wi;
                        }
                    }
                };
                if let Some(buf) = sink.get(ia) {
                    conj_mul(buf, &b);
                }
                if let Some(buf) = sink.get(ib) {
                    conj_mul(buf, &a);
                }
            }),
        )
    }

    /// Matrix product of `[M, K]` and `[K, N]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::arg(format!("matmul: {:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            1.0,
            MatRef::row_major(a.data(), m, k),
            MatRef::row_major(b.data(), k, n),
            0.0,
            MatMut::row_major(out.data_mut(), m, n),
        );
        let (ia, ib) = (self.id, other.id);
        self.tape.record(
            OpKind::Matmul,
            &[self, other],
            out,
            Box::new(move |g, sink| {
                let gm = MatRef::row_major(g.data(), m, n);
                if let Some(buf) = sink.get(ia) {
                    gemm(1.0, gm, MatRef::row_major(b.data(), k, n).t(), 1.0, MatMut::row_major(buf.data_mut(), m, k));
                }
                if let Some(buf) = sink.get(ib) {
                    gemm(1.0, MatRef::row_major(a.data(), m, k).t(), gm, 1.0, MatMut::row_major(buf.data_mut(), k, n));
                }
            }),
        )
    }

    /// `x · Wᵀ + b` over the last axis; `weight` is `[N, K]`, `bias` is `[N]`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let k = *x.shape().last().unwrap();
        if w.rank() != 2 || w.shape()[1] != k {
            return Err(Error::arg(format!("linear: input {:?}, weight {:?}", x.shape(), w.shape())));
        }
        let n = w.shape()[0];
        let b = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [n] {
                    return Err(Error::arg(format!("linear: bias {:?}, expected [{n}]", bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };
        let rows = x.len() / k;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = Tensor::zeros(&shape);
        {
            let od = out.data_mut();
            if let Some(b) = &b {
                for row in od.chunks_mut(n) {
                    row.copy_from_slice(b.data());
                }
            }
            gemm(
                1.0,
                MatRef::row_major(x.data(), rows, k),
                MatRef::row_major(w.data(), n, k).t(),
                1.0,
                MatMut::row_major(od, rows, n),
            );
        }
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let (ix, iw, ib) = (self.id, weight.id, bias.map(|b| b.id));
        self.tape.record(
            OpKind::Linear,
            &inputs,
            out,
            Box::new(move |g, sink| {
                let gd = g.data();
                let gm = MatRef::row_major(gd, rows, n);
                if let Some(buf) = sink.get(ix) {
                    gemm(1.0, gm, MatRef::row_major(w.data(), n, k), 1.0, MatMut::row_major(buf.data_mut(), rows, k));
                }
                if let Some(buf) = sink.get(iw) {
                    gemm(1.0, gm.t(), MatRef::row_major(x.data(), rows, k), 1.0, MatMut::row_major(buf.data_mut(), n, k));
                }
                if let Some(ib) = ib {
                    if let Some(buf) = sink.get(ib) {
                        let gb = buf.data_mut();
                        for r in 0..rows {
                            axpy(gb, 1.0, &gd[r * n..(r + 1) * n]);
                        }
                    }
                }
            }),
        )
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(OpKind::Sum, Tensor::scalar(x.sum()), move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let x = self.value();
        let n = x.len() as f64;
        let shape = x.shape().to_vec();
        self.unary(OpKind::Mean, Tensor::scalar(x.sum() / n), move |g| Tensor::full(&shape, g.item() / n))
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::arg(format!("sum_axis: axis {axis} out of range for {:?}", x.shape())));
        }
        let (outer, extent, inner) = split_axis(x.shape(), axis);
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let mut out = Tensor::zeros(&shape);
        for o in 0..outer {
            for e in 0..extent {
                let src = &x.data()[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                axpy(&mut out.data_mut()[o * inner..(o + 1) * inner], 1.0, src);
            }
        }
        let in_shape = x.shape().to_vec();
        self.unary(OpKind::SumAxis, out, move |g| {
            let mut d = Tensor::zeros(&in_shape);
            for o in 0..outer {
                for e in 0..extent {
                    d.data_mut()[(o * extent + e) * inner..(o * extent + e + 1) * inner]
                        .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            d
        })
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let extent = self.shape().get(axis).copied().unwrap_or(1);
        self.sum_axis(axis)?.scale(1.0 / extent as f64)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let y = Rc::new(self.value().map(f64::exp));
        let yc = y.clone();
        self.unary(OpKind::Exp, (*y).clone(), move |g| g.zip_map(&yc, |g, y| g * y))
    }

    pub fn elu(self) -> Result<Var<'t>> {
        let x = self.value();
        let value = x.map(elu_scalar);
        self.unary(OpKind::Elu, value, move |g| {
            g.zip_map(&x, |g, x| if x > 0.0 { g } else { g * x.exp() })
        })
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        let y = Rc::new(self.value().map(sigmoid_scalar));
        let yc = y.clone();
        self.unary(OpKind::Sigmoid, (*y).clone(), move |g| g.zip_map(&yc, |g, s| g * s * (1.0 - s)))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        let y = Rc::new(self.value().map(f64::tanh));
        let yc = y.clone();
        self.unary(OpKind::Tanh, (*y).clone(), move |g| g.zip_map(&yc, |g, t| g * (1.0 - t * t)))
    }

    pub fn log10(self) -> Result<Var<'t>> {
        let x = self.value();
        let value = x.map(f64::log10);
        self.unary(OpKind::Log10, value, move |g| {
            g.zip_map(&x, |g, x| g / (x * std::f64::consts::LN_10))
        })
    }

    pub fn square(self) -> Result<Var<'t>> {
        let x = self.value();
        let value = x.map(|v| v * v);
        self.unary(OpKind::Square, value, move |g| g.zip_map(&x, |g, x| 2.0 * g * x))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let y = Rc::new(self.value().map(f64::sqrt));
        let yc = y.clone();
        self.unary(OpKind::Sqrt, (*y).clone(), move |g| g.zip_map(&yc, |g, y| g / (2.0 * y)))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
            return Err(Error::arg(format!(
                "slice {start}..{} on axis {axis} of {:?}",
                start + len,
                x.shape()
            )));
        }
        let (outer, extent, inner) = split_axis(x.shape(), axis);
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let id = self.id;
        self.tape.record(
            OpKind::Slice,
            &[self],
            Tensor::new(&shape, out)?,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(id) {
                    let bd = buf.data_mut();
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        axpy(&mut bd[base..base + len * inner], 1.0, &g.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                }
            }),
        )
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base_shape = values[0].shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::arg(format!("concat axis {axis} out of range for {base_shape:?}")));
        }
        for v in &values {
            let s = v.shape();
            if s.len() != base_shape.len()
                || s.iter().zip(&base_shape).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::arg(format!("concat: {s:?} incompatible with {base_shape:?}")));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        first.tape.record(
            OpKind::Concat,
            parts,
            Tensor::new(&shape, out)?,
            Box::new(move |g, sink| {
                let mut offset = 0;
                for (&id, &e) in ids.iter().zip(&extents) {
                    if let Some(buf) = sink.get(id) {
                        let bd = buf.data_mut();
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(&mut bd[o * e * inner..(o + 1) * e * inner], 1.0, &g.data()[src..src + e * inner]);
                        }
                    }
                    offset += e;
                }
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let value = (*x).clone().reshaped(shape)?;
        let in_shape = x.shape().to_vec();
        self.unary(OpKind::Reshape, value, move |g| g.clone().reshaped(&in_shape).expect("same size"))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg(format!("invalid permutation {perm:?} for rank {rank}")));
        }
        let value = permute_tensor(&x, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.unary(OpKind::Permute, value, move |g| permute_tensor(g, &inverse))
    }
}

pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_strides = x.strides();
    let shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let out_strides = strides_of(&shape);
    let mut out = vec![0.0; x.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut rem = i;
        let mut src = 0;
        for (s, os) in strides.iter().zip(&out_strides) {
            src += (rem / os) * s;
            rem %= os;
        }
        *o = x.data()[src];
    }
    Tensor::new(&shape, out).expect("permutation preserves size")
}
