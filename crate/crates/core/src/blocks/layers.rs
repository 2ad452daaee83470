use rand::Rng;

use super::{Ctx, Mode, ParamId, ParamStore, StatsUpdate};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("non-empty shape")
}

/// Stride-1 2-D convolution that keeps both the time and frequency extents.
#[derive(Debug, Clone)]
pub struct InplaceConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kf: usize,
}

impl InplaceConv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kt, kf): (usize, usize),
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || kt == 0 || kf == 0 {
            return Err(Error::arg(format!("{name}: sizes must be positive")));
        }
        let bound = 1.0 / ((c_in * kt * kf) as f64).sqrt();
        let weight = store.add_param(&format!("{name}.weight"), uniform(rng, &[c_out, c_in, kt, kf], bound))?;
        let bias = store.add_param(&format!("{name}.bias"), uniform(rng, &[c_out], bound))?;
        Ok(Self { weight, bias, c_in, c_out, kt, kf })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d_inplace(ctx.var(self.weight), ctx.var(self.bias))
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kt * self.kf + self.c_out
    }
}

/// Channel mixing applied independently at every `(t, f)` position.
#[derive(Debug, Clone)]
pub struct PointwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl PointwiseConv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::arg(format!("{name}: sizes must be positive")));
        }
        let bound = 1.0 / (c_in as f64).sqrt();
        let weight = store.add_param(&format!("{name}.weight"), uniform(rng, &[c_out, c_in], bound))?;
        let bias = store.add_param(&format!("{name}.bias"), uniform(rng, &[c_out], bound))?;
        Ok(Self { weight, bias, c_in, c_out })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.pointwise_conv(ctx.var(self.weight), ctx.var(self.bias))
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in + self.c_out
    }
}

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.add_param(&format!("{name}.weight"), uniform(rng, &[d_out, d_in], bound))?;
        let bias = store.add_param(&format!("{name}.bias"), uniform(rng, &[d_out], bound))?;
        Ok(Self { weight, bias, d_in, d_out })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(ctx.var(self.weight), Some(ctx.var(self.bias)))
    }

    pub fn param_count(&self) -> usize {
        self.d_out * self.d_in + self.d_out
    }
}

/// Per-channel batch normalisation over `(B, T, F)`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?,
            channels,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = x.batchnorm_train(gamma, beta, self.eps)?;
                ctx.push_stats(StatsUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: self.momentum,
                    stats,
                });
                Ok(y)
            }
            Mode::Inference => {
                // γ/√(σ² + ε)·(x − μ) + β as one scale and one shift
                let scale = gamma.div(ctx.var(self.running_var).add_scalar(self.eps)?.sqrt()?)?;
                let shift = beta.sub(ctx.var(self.running_mean).mul(scale)?)?;
                x.channel_mul(scale)?.channel_add(shift)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// One LSTM layer with gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    /// `[4H, D]`
    pub w_ih: ParamId,
    /// `[4H, H]`
    pub w_hh: ParamId,
    /// `[4H]`
    pub bias: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        if d_in == 0 || hidden == 0 {
            return Err(Error::arg(format!("{name}: sizes must be positive")));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_param(&format!("{name}.w_ih"), uniform(rng, &[4 * hidden, d_in], bound))?;
        let w_hh = store.add_param(&format!("{name}.w_hh"), uniform(rng, &[4 * hidden, hidden], bound))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add_param(&format!("{name}.bias"), Tensor::from_vec(b))?;
        Ok(Self { w_ih, w_hh, bias, d_in, hidden })
    }

    /// `[B, T, D] → [B, T, H]` from a zero initial state.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (nb, nt) = match *x.shape() {
            [b, t, d] if d == self.d_in => (b, t),
            ref s => return Err(Error::arg(format!("LSTM expects [B, T, {}], got {s:?}", self.d_in))),
        };
        let h4 = 4 * self.hidden;
        let hs = self.hidden;
        let xp = x.linear(ctx.var(self.w_ih), Some(ctx.var(self.bias)))?;
        let w_hh = ctx.var(self.w_hh);
        let mut h: Option<Var<'t>> = None;
        let mut c: Option<Var<'t>> = None;
        let mut outs = Vec::with_capacity(nt);
        for t in 0..nt {
            let mut gates = xp.slice(1, t, 1)?.reshape(&[nb, h4])?;
            if let Some(hp) = h {
                gates = gates.add(hp.linear(w_hh, None)?)?;
            }
            let i = gates.slice(1, 0, hs)?.sigmoid()?;
            let f = gates.slice(1, hs, hs)?.sigmoid()?;
            let g = gates.slice(1, 2 * hs, hs)?.tanh()?;
            let o = gates.slice(1, 3 * hs, hs)?.sigmoid()?;
            let ig = i.mul(g)?;
            let cn = match c {
                Some(cp) => f.mul(cp)?.add(ig)?,
                None => ig,
            };
            let hn = o.mul(cn.tanh()?)?;
            outs.push(hn.reshape(&[nb, 1, hs])?);
            h = Some(hn);
            c = Some(cn);
        }
        Var::concat(&outs, 1)
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.d_in + self.hidden + 1)
    }
}

#[derive(Debug, Clone)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        hidden: usize,
        n_layers: usize,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::arg(format!("{name}: need at least one layer")));
        }
        let layers = (0..n_layers)
            .map(|l| LstmLayer::new(store, rng, &format!("{name}.{l}"), if l == 0 { d_in } else { hidden }, hidden))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, mut x: Var<'t>) -> Result<Var<'t>> {
        for layer in &self.layers {
            x = layer.forward(ctx, x)?;
        }
        Ok(x)
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmLayer::param_count).sum()
    }
}
