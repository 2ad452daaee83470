use rand::Rng;

use super::{BatchNorm, Ctx, InplaceConv2d, ParamId, ParamStore, PointwiseConv};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::s4nd::{forward_on_tape, S4nd2d, S4ndVars};
use crate::ssm::{init_s4d_lin, pack_channels, unpack_channels, SsmVars};

/// Range of the initial axis step sizes.
pub const DT_INIT: (f64, f64) = (1e-3, 1e-1);

/// Store handles for the seven per-axis SSM tensors, in [`SsmVars`] order.
#[derive(Debug, Clone, Copy)]
pub struct SsmParamIds(pub [ParamId; 7]);

const SSM_FIELDS: [&str; 7] = ["a_log_neg_re", "a_im", "b_re", "b_im", "c_re", "c_im", "log_dt"];

impl SsmParamIds {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize, n: usize) -> Result<Self> {
        let chans = (0..channels).map(|_| init_s4d_lin(n, DT_INIT, rng)).collect::<Result<Vec<_>>>()?;
        let packed = pack_channels(&chans)?;
        let mut ids = Vec::with_capacity(7);
        for (field, t) in SSM_FIELDS.iter().zip(packed) {
            ids.push(store.add_param(&format!("{name}.{field}"), t)?);
        }
        Ok(Self(ids.try_into().expect("seven fields")))
    }

    pub fn vars<'t>(&self, ctx: &Ctx<'t>) -> SsmVars<'t> {
        let v = |i: usize| ctx.var(self.0[i]);
        SsmVars { a_log_neg_re: v(0), a_im: v(1), b_re: v(2), b_im: v(3), c_re: v(4), c_im: v(5), log_dt: v(6) }
    }

    fn tensors<'s>(&self, store: &'s ParamStore) -> [&'s Tensor; 7] {
        std::array::from_fn(|i| store.get(self.0[i]))
    }
}

/// Per-channel 2-D state-space layer on `[B, C, T, F]`.
#[derive(Debug, Clone)]
pub struct S4ndLayer {
    pub time: SsmParamIds,
    pub freq: SsmParamIds,
    pub freq_rev: Option<SsmParamIds>,
    pub skip: ParamId,
    pub channels: usize,
    pub state: (usize, usize),
}

impl S4ndLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        state: (usize, usize),
        bidirectional: bool,
    ) -> Result<Self> {
        let time = SsmParamIds::new(store, rng, &format!("{name}.time"), channels, state.0)?;
        let freq = SsmParamIds::new(store, rng, &format!("{name}.freq"), channels, state.1)?;
        let freq_rev = if bidirectional {
            Some(SsmParamIds::new(store, rng, &format!("{name}.freq_rev"), channels, state.1)?)
        } else {
            None
        };
        let skip = store.add_param(&format!("{name}.skip"), Tensor::full(&[channels], 1.0))?;
        Ok(Self { time, freq, freq_rev, skip, channels, state })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let vars = S4ndVars {
            time: self.time.vars(ctx),
            freq: self.freq.vars(ctx),
            freq_rev: self.freq_rev.map(|r| r.vars(ctx)),
            skip: ctx.var(self.skip),
        };
        forward_on_tape(x, &vars)
    }

    /// Parameters of one channel as a standalone [`S4nd2d`].
    pub fn channel(&self, store: &ParamStore, c: usize) -> Result<S4nd2d> {
        if c >= self.channels {
            return Err(Error::arg(format!("channel {c} out of range for {}", self.channels)));
        }
        let skip = store.get(self.skip).data().to_vec();
        let pick = |ids: &SsmParamIds| unpack_channels(&ids.tensors(store), &skip).map(|mut v| v.swap_remove(c));
        let rev = self.freq_rev.as_ref().map(pick).transpose()?;
        S4nd2d::new(pick(&self.time)?, pick(&self.freq)?, rev, skip[c])
    }

    pub fn param_count(&self) -> usize {
        let axis = |n: usize| self.channels * (6 * n + 1);
        let passes = if self.freq_rev.is_some() { 2 } else { 1 };
        axis(self.state.0) + passes * axis(self.state.1) + self.channels
    }
}

/// `y = BN(x + W·ELU(S4ND(x)))`.
#[derive(Debug, Clone)]
pub struct S4ndBlock {
    pub s4nd: S4ndLayer,
    pub linear: PointwiseConv,
    pub norm: BatchNorm,
}

impl S4ndBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        state: (usize, usize),
        bidirectional: bool,
    ) -> Result<Self> {
        Ok(Self {
            s4nd: S4ndLayer::new(store, rng, &format!("{name}.s4nd"), channels, state, bidirectional)?,
            linear: PointwiseConv::new(store, rng, &format!("{name}.linear"), channels, channels)?,
            norm: BatchNorm::new(store, &format!("{name}.norm"), channels)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.shape().get(1) != Some(&self.s4nd.channels) {
            return Err(Error::arg(format!(
                "S4ND block of {} channels got {:?}",
                self.s4nd.channels,
                x.shape()
            )));
        }
        let h = self.s4nd.forward(ctx, x)?.elu()?;
        let h = self.linear.forward(ctx, h)?;
        self.norm.forward(ctx, x.add(h)?)
    }

    pub fn param_count(&self) -> usize {
        self.s4nd.param_count() + self.linear.param_count() + self.norm.param_count()
    }
}

/// Global branch of a SIC block.
#[derive(Debug, Clone)]
pub enum GlobalBranch {
    S4nd(Vec<S4ndBlock>),
    /// Stacked inplace convolutions with ELU between them.
    Inplace(Vec<InplaceConv2d>),
}

/// Split-input fusion block: an inplace-conv trunk yields features and
/// attention logits, the global branch adds to the logits, and the sigmoid
/// map gates the features. Maps `2W` channels to `W`.
#[derive(Debug, Clone)]
pub struct SicBlock {
    pub width: usize,
    pub trunk: Vec<InplaceConv2d>,
    pub head_feat: PointwiseConv,
    pub head_attn: PointwiseConv,
    pub global: GlobalBranch,
}

/// Layer counts of the two branches.
pub const TRUNK_LAYERS: usize = 3;
pub const GLOBAL_LAYERS: usize = 4;

impl SicBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        kernel: (usize, usize),
        state: (usize, usize),
        bidirectional: bool,
        s4nd_global: bool,
    ) -> Result<Self> {
        let trunk = (0..TRUNK_LAYERS)
            .map(|i| InplaceConv2d::new(store, rng, &format!("{name}.trunk.{i}"), width, width, kernel))
            .collect::<Result<_>>()?;
        let head_feat = PointwiseConv::new(store, rng, &format!("{name}.head_feat"), width, width)?;
        let head_attn = PointwiseConv::new(store, rng, &format!("{name}.head_attn"), width, width)?;
        let global = if s4nd_global {
            GlobalBranch::S4nd(
                (0..GLOBAL_LAYERS)
                    .map(|i| S4ndBlock::new(store, rng, &format!("{name}.global.{i}"), width, state, bidirectional))
                    .collect::<Result<_>>()?,
            )
        } else {
            GlobalBranch::Inplace(
                (0..GLOBAL_LAYERS)
                    .map(|i| InplaceConv2d::new(store, rng, &format!("{name}.global.{i}"), width, width, kernel))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(Self { width, trunk, head_feat, head_attn, global })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.width;
        match x.shape().get(1) {
            Some(&c) if c == 2 * w => {}
            Some(&c) => {
                return Err(Error::arg(format!("{name}: SIC block of width {w} needs {} channels, got {c}", 2 * w)))
            }
            None => return Err(Error::arg(format!("{name}: rank-0 input"))),
        }
        let mut trunk = x.slice(1, 0, w)?;
        for (i, conv) in self.trunk.iter().enumerate() {
            if i > 0 {
                trunk = trunk.elu()?;
            }
            trunk = conv.forward(ctx, trunk)?;
            ctx.trace(&format!("{name}.trunk.{i}"), trunk)?;
        }
        let feat = self.head_feat.forward(ctx, trunk)?;
        let logits = self.head_attn.forward(ctx, trunk)?;
        let mut g = x.slice(1, w, w)?;
        match &self.global {
            GlobalBranch::S4nd(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    g = b.forward(ctx, g)?;
                    ctx.trace(&format!("{name}.global.{i}"), g)?;
                }
            }
            GlobalBranch::Inplace(convs) => {
                for (i, conv) in convs.iter().enumerate() {
                    if i > 0 {
                        g = g.elu()?;
                    }
                    g = conv.forward(ctx, g)?;
                    ctx.trace(&format!("{name}.global.{i}"), g)?;
                }
            }
        }
        let attn = logits.add(g)?.sigmoid()?;
        let out = feat.mul(attn)?;
        ctx.trace(name, out)?;
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        let global: usize = match &self.global {
            GlobalBranch::S4nd(b) => b.iter().map(S4ndBlock::param_count).sum(),
            GlobalBranch::Inplace(c) => c.iter().map(InplaceConv2d::param_count).sum(),
        };
        self.trunk.iter().map(InplaceConv2d::param_count).sum::<usize>()
            + self.head_feat.param_count()
            + self.head_attn.param_count()
            + global
    }
}
