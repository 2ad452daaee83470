//! Network-level fused operations: inplace and pointwise convolution,
//! per-channel affine maps, batch normalisation, axis-wise causal
//! convolution and the complex DFT.


use num_complex::Complex64;

use super::{OpKind, Var};
use crate::error::{Error, Result};
use crate::numerics::fft::{cached_plan, Direction};
use crate::numerics::tensor::{axpy, dot};
use crate::numerics::{gemm, MatMut, MatRef, Tensor, FFT_CONV_THRESHOLD};

/// Axis length above which [`Var::causal_conv_axis`] switches to FFT convolution.

/// Per-channel batch statistics from a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistic updates.
    pub var: Vec<f64>,
}

fn expect_rank4(kind: OpKind, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::arg(format!("{kind}: expected [B, C, T, F], got {:?}", t.shape()))),
    }
}

fn expect_channels(kind: OpKind, x: &Tensor, v: &Tensor, what: &str) -> Result<usize> {
    let c = x.shape().get(1).copied().unwrap_or(0);
    if x.rank() < 2 || v.shape() != [c] {
        return Err(Error::arg(format!(
            "{kind}: {what} shape {:?} does not match input {:?}",
            v.shape(),
            x.shape()
        )));
    }
    Ok(c)
}

impl<'t> Var<'t> {
    /// Stride-1 2-D convolution over `(time, frequency)`.
    ///
    /// `weight` is `[C_out, C_in, k_t, k_f]`. Time padding is causal (`k_t − 1`
    /// past frames, no future taps); frequency padding is symmetric zeros so
    /// both extents are preserved.
    pub fn conv2d_inplace(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let (nb, ci, nt, nf) = expect_rank4(OpKind::Conv2d, &x)?;
        let (co, wci, kt, kf) = expect_rank4(OpKind::Conv2d, &w)?;
        if wci != ci || b.shape() != [co] {
            return Err(Error::arg(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let geom = ConvGeom { nb, ci, co, nt, nf, kt, kf, left: (kf - 1) / 2 };
        let mut out = Tensor::zeros(&[nb, co, nt, nf]);
        geom.forward(x.data(), w.data(), b.data(), out.data_mut());
        let (ix, iw, ib) = (self.id, weight.id, bias.id);
        self.tape.record(
            OpKind::Conv2d,
            &[self, weight, bias],
            out,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ix) {
                    geom.grad_input(g.data(), w.data(), buf.data_mut());
                }
                if let Some(buf) = sink.get(iw) {
                    geom.grad_weight(g.data(), x.data(), buf.data_mut());
                }
                if let Some(buf) = sink.get(ib) {
                    let plane = nt * nf;
                    for bi in 0..nb {
                        for o in 0..co {
                            let s: f64 = g.data()[(bi * co + o) * plane..(bi * co + o + 1) * plane].iter().sum();
                            buf.data_mut()[o] += s;
                        }
                    }
                }
            }),
        )
    }

    /// Channel-mixing convolution with kernel size 1 at every position.
    /// `weight` is `[C_out, C_in]`; any number of trailing axes is allowed.
    pub fn pointwise_conv(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        if x.rank() < 2 || w.rank() != 2 || w.shape()[1] != x.shape()[1] || b.shape() != [w.shape()[0]] {
            return Err(Error::arg(format!(
                "pointwise_conv: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let (nb, ci, co) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let plane: usize = x.shape()[2..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[1] = co;
        let mut out = Tensor::zeros(&shape);
        {
            let od = out.data_mut();
            for bi in 0..nb {
                let dst = &mut od[bi * co * plane..(bi + 1) * co * plane];
                for (o, row) in dst.chunks_mut(plane).enumerate() {
                    row.fill(b.data()[o]);
                }
                gemm(
                    1.0,
                    MatRef::row_major(w.data(), co, ci),
                    MatRef::row_major(&x.data()[bi * ci * plane..(bi + 1) * ci * plane], ci, plane),
                    1.0,
                    MatMut::row_major(dst, co, plane),
                );
            }
        }
        let (ix, iw, ib) = (self.id, weight.id, bias.id);
        self.tape.record(
            OpKind::PointwiseConv,
            &[self, weight, bias],
            out,
            Box::new(move |g, sink| {
                let gd = g.data();
                if let Some(buf) = sink.get(ix) {
                    let gx = buf.data_mut();
                    for bi in 0..nb {
                        gemm(
                            1.0,
                            MatRef::row_major(w.data(), co, ci).t(),
                            MatRef::row_major(&gd[bi * co * plane..(bi + 1) * co * plane], co, plane),
                            1.0,
                            MatMut::row_major(&mut gx[bi * ci * plane..(bi + 1) * ci * plane], ci, plane),
                        );
                    }
                }
                if let Some(buf) = sink.get(iw) {
                    let gw = buf.data_mut();
                    for bi in 0..nb {
                        gemm(
                            1.0,
                            MatRef::row_major(&gd[bi * co * plane..(bi + 1) * co * plane], co, plane),
                            MatRef::row_major(&x.data()[bi * ci * plane..(bi + 1) * ci * plane], ci, plane).t(),
                            1.0,
                            MatMut::row_major(gw, co, ci),
                        );
                    }
                }
                if let Some(buf) = sink.get(ib) {
                    for bi in 0..nb {
                        for o in 0..co {
                            buf.data_mut()[o] += gd[(bi * co + o) * plane..(bi * co + o + 1) * plane].iter().sum::<f64>();
                        }
                    }
                }
            }),
        )
    }

    /// Multiply channel `c` of `[B, C, ...]` by `scale[c]`.
    pub fn channel_mul(self, scale: Var<'t>) -> Result<Var<'t>> {
        let (x, s) = (self.value(), scale.value());
        let c = expect_channels(OpKind::ChannelMul, &x, &s, "scale")?;
        let plane = x.len() / (x.shape()[0] * c);
        let mut out = (*x).clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let sv = s.data()[k % c];
            chunk.iter_mut().for_each(|v| *v *= sv);
        }
        let (ix, is) = (self.id, scale.id);
        self.tape.record(
            OpKind::ChannelMul,
            &[self, scale],
            out,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ix) {
                    for (k, (dst, src)) in buf.data_mut().chunks_mut(plane).zip(g.data().chunks(plane)).enumerate() {
                        axpy(dst, s.data()[k % c], src);
                    }
                }
                if let Some(buf) = sink.get(is) {
                    for (k, (gs, xs)) in g.data().chunks(plane).zip(x.data().chunks(plane)).enumerate() {
                        buf.data_mut()[k % c] += dot(gs, xs);
                    }
                }
            }),
        )
    }

    /// Add `shift[c]` to channel `c` of `[B, C, ...]`.
    pub fn channel_add(self, shift: Var<'t>) -> Result<Var<'t>> {
        let (x, s) = (self.value(), shift.value());
        let c = expect_channels(OpKind::ChannelAdd, &x, &s, "shift")?;
        let plane = x.len() / (x.shape()[0] * c);
        let mut out = (*x).clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let sv = s.data()[k % c];
            chunk.iter_mut().for_each(|v| *v += sv);
        }
        let (ix, is) = (self.id, shift.id);
        self.tape.record(
            OpKind::ChannelAdd,
            &[self, shift],
            out,
            Box::new(move |g, sink| {
                sink.add(ix, g);
                if let Some(buf) = sink.get(is) {
                    for (k, gs) in g.data().chunks(plane).enumerate() {
                        buf.data_mut()[k % c] += gs.iter().sum::<f64>();
                    }
                }
            }),
        )
    }

    /// Training-mode batch normalisation: statistics per channel over every
    /// other axis of `[B, C, ...]`.
    pub fn batchnorm_train(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<(Var<'t>, BatchStats)> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let c = expect_channels(OpKind::BatchNorm, &x, &gm, "gamma")?;
        expect_channels(OpKind::BatchNorm, &x, &bt, "beta")?;
        let plane = x.len() / (x.shape()[0] * c);
        let n = (x.shape()[0] * plane) as f64;
        let mut mean = vec![0.0; c];
        for (k, chunk) in x.data().chunks(plane).enumerate() {
            mean[k % c] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for (k, chunk) in x.data().chunks(plane).enumerate() {
            let m = mean[k % c];
            var[k % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = (*x).clone();
        for (k, chunk) in xhat.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (mean[k % c], inv_std[k % c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
        let mut out = xhat.clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let (gv, bv) = (gm.data()[k % c], bt.data()[k % c]);
            chunk.iter_mut().for_each(|v| *v = gv * *v + bv);
        }
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.iter().map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v }).collect(),
        };
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        let var = self.tape.record(
            OpKind::BatchNorm,
            &[self, gamma, beta],
            out,
            Box::new(move |g, sink| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (k, (gs, xs)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                    sum_g[k % c] += gs.iter().sum::<f64>();
                    sum_gx[k % c] += dot(gs, xs);
                }
                if let Some(buf) = sink.get(ix) {
                    for (k, ((dst, gs), xs)) in buf
                        .data_mut()
                        .chunks_mut(plane)
                        .zip(g.data().chunks(plane))
                        .zip(xhat.data().chunks(plane))
                        .enumerate()
                    {
                        let ch = k % c;
                        let scale = gm.data()[ch] * inv_std[ch];
                        let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                        for ((d, gv), xv) in dst.iter_mut().zip(gs).zip(xs) {
                            *d += scale * (gv - mg - xv * mgx);
                        }
                    }
                }
                if let Some(buf) = sink.get(ig) {
                    axpy(buf.data_mut(), 1.0, &sum_gx);
                }
                if let Some(buf) = sink.get(ib) {
                    axpy(buf.data_mut(), 1.0, &sum_g);
                }
            }),
        )?;
        Ok((var, stats))
    }

    /// Per-channel 1-D convolution along `axis` (2 = time, 3 = frequency) of a
    /// `[B, C, T, F]` tensor with `kernel: [C, L]`.
    ///
    /// Forward direction is causal, `y[t] = Σ_{j≤t} k[j]·x[t−j]`; `reverse`
    /// runs the same kernel from the far end, `y[t] = Σ_j k[j]·x[t+j]`.
    /// Taps beyond the axis length are ignored.
    pub fn causal_conv_axis(self, kernel: Var<'t>, axis: usize, reverse: bool) -> Result<Var<'t>> {
        let (x, k) = (self.value(), kernel.value());
        let (nb, nc, nt, nf) = expect_rank4(OpKind::CausalConv, &x)?;
        if !(axis == 2 || axis == 3) || k.rank() != 2 || k.shape()[0] != nc {
            return Err(Error::arg(format!(
                "causal_conv_axis: input {:?}, kernel {:?}, axis {axis}",
                x.shape(),
                k.shape()
            )));
        }
        let geom = AxisConv {
            nb,
            nc,
            blocks: if axis == 2 { 1 } else { nt },
            extent: if axis == 2 { nt } else { nf },
            inner: if axis == 2 { nf } else { 1 },
            taps: k.shape()[1],
            reverse,
        };
        let mut out = Tensor::zeros(x.shape());
        geom.forward(k.data(), x.data(), out.data_mut())?;
        let (ix, ik) = (self.id, kernel.id);
        self.tape.record(
            OpKind::CausalConv,
            &[self, kernel],
            out,
            Box::new(move |g, sink| {
                if let Some(buf) = sink.get(ix) {
                    geom.grad_input(k.data(), g.data(), buf.data_mut()).expect("plans valid after forward");
                }
                if let Some(buf) = sink.get(ik) {
                    geom.grad_kernel(g.data(), x.data(), buf.data_mut()).expect("plans valid after forward");
                }
            }),
        )
    }

    /// Complex DFT along the last axis of `[M, 2, N]` (axis 1 = real/imag).
    /// Forward is unnormalised; inverse scales by `1/N`.
    pub fn fft(self, inverse: bool) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = match *x.shape() {
            [m, 2, n] => (m, n),
            _ => return Err(Error::arg(format!("fft expects [M, 2, N], got {:?}", x.shape()))),
        };
        let kind = if inverse { OpKind::Ifft } else { OpKind::Fft };
        let dir = if inverse { Direction::Inverse } else { Direction::Forward };
        let out = dft_rows(&x, m, n, dir, 1.0)?;
        // adjoint of F is N·F⁻¹; adjoint of F⁻¹ = F/N
        let (adj_dir, adj_scale) = if inverse {
            (Direction::Forward, 1.0 / n as f64)
        } else {
            (Direction::Inverse, n as f64)
        };
        self.unary_fallible(kind, out, move |g| dft_rows(g, m, n, adj_dir, adj_scale).expect("plan exists"))
    }

    fn unary_fallible(self, kind: OpKind, value: Tensor, vjp: impl Fn(&Tensor) -> Tensor + 'static) -> Result<Var<'t>> {
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
}

fn dft_rows(x: &Tensor, m: usize, n: usize, dir: Direction, scale: f64) -> Result<Tensor> {
    let plan = cached_plan(n, dir)?;
    let mut out = Tensor::zeros(x.shape());
    for r in 0..m {
        let base = r * 2 * n;
        let row: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(x.data()[base + i], x.data()[base + n + i]))
            .collect();
        let y = plan.transform(&row)?;
        for (i, v) in y.iter().enumerate() {
            out.data_mut()[base + i] = scale * v.re;
            out.data_mut()[base + n + i] = scale * v.im;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    nb: usize,
    ci: usize,
    co: usize,
    nt: usize,
    nf: usize,
    kt: usize,
    kf: usize,
    left: usize,
}

impl ConvGeom {
    /// For tap (dt, df): source offsets and valid output ranges.
    fn tap(&self, dt: usize, df: usize) -> (usize, usize, usize, isize, isize) {
        let t_shift = (self.kt - 1 - dt) as isize; // source frame = t - t_shift
        let f_shift = df as isize - self.left as isize; // source bin = f + f_shift
        let t0 = t_shift.max(0) as usize;
        let f0 = (-f_shift).max(0) as usize;
        let f1 = ((self.nf as isize - f_shift).min(self.nf as isize)).max(0) as usize;
        (t0, f0, f1, t_shift, f_shift)
    }

    fn taps(&self) -> usize {
        self.ci * self.kt * self.kf
    }

    /// Unfold one batch item into `[C_in·k_t·k_f, T·F]` columns, zero outside the input.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let plane = self.nt * self.nf;
        col.fill(0.0);
        for i in 0..self.ci {
            let src = &x[i * plane..(i + 1) * plane];
            for dt in 0..self.kt {
                for df in 0..self.kf {
                    let row = (i * self.kt + dt) * self.kf + df;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let (t0, f0, f1, ts, fs) = self.tap(dt, df);
                    if f0 >= f1 {
                        continue;
                    }
                    for t in t0..self.nt {
                        let lo = ((t as isize - ts) * self.nf as isize + fs + f0 as isize) as usize;
                        dst[t * self.nf + f0..t * self.nf + f1].copy_from_slice(&src[lo..lo + (f1 - f0)]);
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`], accumulated into `gx`.
    fn col2im_add(&self, col: &[f64], gx: &mut [f64]) {
        let plane = self.nt * self.nf;
        for i in 0..self.ci {
            let dst = &mut gx[i * plane..(i + 1) * plane];
            for dt in 0..self.kt {
                for df in 0..self.kf {
                    let row = (i * self.kt + dt) * self.kf + df;
                    let src = &col[row * plane..(row + 1) * plane];
                    let (t0, f0, f1, ts, fs) = self.tap(dt, df);
                    if f0 >= f1 {
                        continue;
                    }
                    for t in t0..self.nt {
                        let lo = ((t as isize - ts) * self.nf as isize + fs + f0 as isize) as usize;
                        axpy(&mut dst[lo..lo + (f1 - f0)], 1.0, &src[t * self.nf + f0..t * self.nf + f1]);
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        let plane = self.nt * self.nf;
        let k = self.taps();
        let mut col = vec![0.0; k * plane];
        for bi in 0..self.nb {
            self.im2col(&x[bi * self.ci * plane..(bi + 1) * self.ci * plane], &mut col);
            let dst = &mut out[bi * self.co * plane..(bi + 1) * self.co * plane];
            for (o, row) in dst.chunks_mut(plane).enumerate() {
                row.fill(b[o]);
            }
            gemm(
                1.0,
                MatRef::row_major(w, self.co, k),
                MatRef::row_major(&col, k, plane),
                1.0,
                MatMut::row_major(dst, self.co, plane),
            );
        }
    }

    fn grad_input(&self, g: &[f64], w: &[f64], gx: &mut [f64]) {
        let plane = self.nt * self.nf;
        let k = self.taps();
        let mut col = vec![0.0; k * plane];
        for bi in 0..self.nb {
            gemm(
                1.0,
                MatRef::row_major(w, self.co, k).t(),
                MatRef::row_major(&g[bi * self.co * plane..(bi + 1) * self.co * plane], self.co, plane),
                0.0,
                MatMut::row_major(&mut col, k, plane),
            );
            self.col2im_add(&col, &mut gx[bi * self.ci * plane..(bi + 1) * self.ci * plane]);
        }
    }

    fn grad_weight(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        let plane = self.nt * self.nf;
        let k = self.taps();
        let mut col = vec![0.0; k * plane];
        for bi in 0..self.nb {
            self.im2col(&x[bi * self.ci * plane..(bi + 1) * self.ci * plane], &mut col);
            gemm(
                1.0,
                MatRef::row_major(&g[bi * self.co * plane..(bi + 1) * self.co * plane], self.co, plane),
                MatRef::row_major(&col, k, plane).t(),
                1.0,
                MatMut::row_major(gw, self.co, k),
            );
        }
    }
}

/// Geometry of a per-channel convolution along one axis. Each `(batch,
/// channel)` plane holds `blocks` segments of `extent × inner` values and the
/// convolution runs along `extent`.
#[derive(Clone, Copy)]
struct AxisConv {
    nb: usize,
    nc: usize,
    blocks: usize,
    extent: usize,
    inner: usize,
    taps: usize,
    reverse: bool,
}

impl AxisConv {
    fn seg_len(&self) -> usize {
        self.extent * self.inner
    }

    fn use_fft(&self) -> bool {
        self.extent > FFT_CONV_THRESHOLD
    }

    fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        // (channel, offset of segment)
        let seg = self.seg_len();
        (0..self.nb * self.nc).flat_map(move |p| {
            let c = p % self.nc;
            (0..self.blocks).map(move |blk| (c, (p * self.blocks + blk) * seg))
        })
    }

    fn kernel_row<'a>(&self, k: &'a [f64], c: usize) -> &'a [f64] {
        &k[c * self.taps..c * self.taps + self.taps.min(self.extent)]
    }

    /// `(rows = extent, cols)` strides of one `(batch, channel)` plane as a matrix.
    fn plane_view(&self) -> (usize, usize, usize) {
        debug_assert!(self.blocks == 1 || self.inner == 1);
        if self.blocks == 1 {
            (self.inner, self.inner, 1)
        } else {
            (self.blocks, 1, self.extent)
        }
    }

    /// Dense banded matrix of channel `c`'s kernel: `k[e − e']` below the
    /// diagonal, or `k[e' − e]` above it when reversed.
    fn toeplitz(&self, k: &[f64], c: usize, m: &mut [f64]) {
        let n = self.extent;
        m.fill(0.0);
        for (j, &kv) in self.kernel_row(k, c).iter().enumerate() {
            for e in j..n {
                let (r, col) = if self.reverse { (e - j, e) } else { (e, e - j) };
                m[r * n + col] = kv;
            }
        }
    }

    fn planes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let size = self.blocks * self.seg_len();
        (0..self.nb * self.nc).map(move |p| (p % self.nc, p * size))
    }

    fn forward(&self, k: &[f64], x: &[f64], y: &mut [f64]) -> Result<()> {
        if self.use_fft() {
            return self.fft_apply(k, x, y, self.reverse);
        }
        let n = self.extent;
        let (cols, rs, cs) = self.plane_view();
        let size = self.blocks * self.seg_len();
        let mut toe = vec![0.0; n * n];
        for (c, off) in self.planes() {
            self.toeplitz(k, c, &mut toe);
            gemm(
                1.0,
                MatRef::row_major(&toe, n, n),
                MatRef::new(&x[off..off + size], n, cols, rs, cs),
                1.0,
                MatMut::new(&mut y[off..off + size], n, cols, rs, cs),
            );
        }
        Ok(())
    }

    fn grad_input(&self, k: &[f64], g: &[f64], gx: &mut [f64]) -> Result<()> {
        if self.use_fft() {
            return self.fft_apply(k, g, gx, !self.reverse);
        }
        let n = self.extent;
        let (cols, rs, cs) = self.plane_view();
        let size = self.blocks * self.seg_len();
        let mut toe = vec![0.0; n * n];
        for (c, off) in self.planes() {
            self.toeplitz(k, c, &mut toe);
            gemm(
                1.0,
                MatRef::row_major(&toe, n, n).t(),
                MatRef::new(&g[off..off + size], n, cols, rs, cs),
                1.0,
                MatMut::new(&mut gx[off..off + size], n, cols, rs, cs),
            );
        }
        Ok(())
    }

    fn grad_kernel(&self, g: &[f64], x: &[f64], gk: &mut [f64]) -> Result<()> {
        if self.use_fft() {
            return self.fft_grad_kernel(g, x, gk);
        }
        let n = self.extent;
        let (cols, rs, cs) = self.plane_view();
        let size = self.blocks * self.seg_len();
        let used = self.taps.min(n);
        // m[e, e'] = Σ g[e, ·]·x[e', ·]; tap j collects one diagonal
        let mut m = vec![0.0; n * n];
        for (c, off) in self.planes() {
            gemm(
                1.0,
                MatRef::new(&g[off..off + size], n, cols, rs, cs),
                MatRef::new(&x[off..off + size], n, cols, rs, cs).t(),
                0.0,
                MatMut::row_major(&mut m, n, n),
            );
            for j in 0..used {
                gk[c * self.taps + j] += if self.reverse {
                    (0..n - j).map(|e| m[e * n + e + j]).sum::<f64>()
                } else {
                    (j..n).map(|e| m[e * n + e - j]).sum::<f64>()
                };
            }
        }
        Ok(())
    }

    fn padded(&self) -> usize {
        (2 * self.extent).next_power_of_two()
    }

    fn gather(&self, src: &[f64], off: usize, col: usize, p: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        for (e, b) in buf.iter_mut().take(self.extent).enumerate() {
            b.re = src[off + e * self.inner + col];
        }
        buf
    }

    fn kernel_spectra(&self, k: &[f64], p: usize) -> Result<Vec<Vec<Complex64>>> {
        let fwd = cached_plan(p, Direction::Forward)?;
        (0..self.nc)
            .map(|c| {
                let mut buf = vec![Complex64::new(0.0, 0.0); p];
                for (b, &v) in buf.iter_mut().zip(self.kernel_row(k, c)) {
                    b.re = v;
                }
                fwd.transform(&buf)
            })
            .collect()
    }

    /// Causal convolution (`correlate == false`) or anti-causal correlation
    /// with the per-channel kernel, accumulated into `y`.
    fn fft_apply(&self, k: &[f64], x: &[f64], y: &mut [f64], correlate: bool) -> Result<()> {
        let p = self.padded();
        let fwd = cached_plan(p, Direction::Forward)?;
        let inv = cached_plan(p, Direction::Inverse)?;
        let spectra = self.kernel_spectra(k, p)?;
        for (c, off) in self.segments() {
            for col in 0..self.inner {
                let mut xs = fwd.transform(&self.gather(x, off, col, p))?;
                for (v, kv) in xs.iter_mut().zip(&spectra[c]) {
                    *v *= if correlate { kv.conj() } else { *kv };
                }
                let r = inv.transform(&xs)?;
                for e in 0..self.extent {
                    y[off + e * self.inner + col] += r[e].re;
                }
            }
        }
        Ok(())
    }

    fn fft_grad_kernel(&self, g: &[f64], x: &[f64], gk: &mut [f64]) -> Result<()> {
        let p = self.padded();
        let fwd = cached_plan(p, Direction::Forward)?;
        let inv = cached_plan(p, Direction::Inverse)?;
        let mut acc = vec![vec![Complex64::new(0.0, 0.0); p]; self.nc];
        for (c, off) in self.segments() {
            for col in 0..self.inner {
                let gs = fwd.transform(&self.gather(g, off, col, p))?;
                let xs = fwd.transform(&self.gather(x, off, col, p))?;
                for ((a, gv), xv) in acc[c].iter_mut().zip(&gs).zip(&xs) {
                    // forward: Σ_s g[s+j]·x[s]; reverse: Σ_s x[s+j]·g[s]
                    *a += if self.reverse { xv * gv.conj() } else { gv * xv.conj() };
                }
            }
        }
        let used = self.taps.min(self.extent);
        for (c, spec) in acc.iter().enumerate() {
            let r = inv.transform(spec)?;
            for j in 0..used {
                gk[c * self.taps + j] += r[j].re;
            }
        }
        Ok(())
    }
}
