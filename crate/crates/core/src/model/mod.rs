//! The complete network: inplace-conv / SIC encoder, LSTM bottleneck, SIC
//! decoder and a complex mask head, all at full frequency resolution.

mod checkpoint;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::blocks::{
    Ctx, Dense, InplaceConv2d, LayerTrace, LstmStack, Mode, ParamStore, PointwiseConv, S4ndLayer, SicBlock,
};
use crate::dsp_io::{ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use checkpoint::{Checkpoint, Dtype, MAGIC, VERSION};

/// Per-bin complex multiplier with the same layout as a spectrogram.
pub type ComplexMask = ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskApply {
    /// `(m_r + i·m_i)(x_r + i·x_i)`
    Complex,
    /// `m_r·x_r + i·m_i·x_i`
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalKind {
    S4nd,
    Inplace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicrnConfig {
    pub stft: StftConfig,
    pub freq_bins: usize,
    pub sic_widths: [usize; 2],
    pub ic_kernel: (usize, usize),
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub s4nd_state: (usize, usize),
    pub freq_unidirectional: bool,
    pub global_branch: GlobalKind,
    pub mask_apply: MaskApply,
    pub dtype: Dtype,
    pub seed: u64,
}

impl SicrnConfig {
    /// 16 kHz audio, 510/160 framing (256 bins), widths 16 and 32.
    pub fn paper() -> Self {
        Self {
            stft: StftConfig::PAPER,
            freq_bins: 256,
            sic_widths: [16, 32],
            ic_kernel: (2, 3),
            lstm_layers: 2,
            lstm_hidden: 64,
            s4nd_state: (16, 16),
            freq_unidirectional: false,
            global_branch: GlobalKind::S4nd,
            mask_apply: MaskApply::Complex,
            dtype: Dtype::F32,
            seed: 0,
        }
    }

    /// 126/40 framing (64 bins), widths 8 and 16.
    pub fn desk() -> Self {
        Self { stft: StftConfig::DESK, freq_bins: 64, sic_widths: [8, 16], s4nd_state: (8, 8), ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::arg(format!("{key}: {why}")));
        StftConfig::new(self.stft.win_length, self.stft.hop)?;
        if self.freq_bins != self.stft.n_bins() {
            return bad("freq_bins", format!("{} does not match win_length {} ({} bins)", self.freq_bins, self.stft.win_length, self.stft.n_bins()));
        }
        if self.sic_widths.contains(&0) {
            return bad("sic_widths", "widths must be positive".into());
        }
        if self.ic_kernel.0 == 0 || self.ic_kernel.1 == 0 {
            return bad("ic_kernel", "extents must be positive".into());
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return bad("lstm", "layers and hidden size must be positive".into());
        }
        let (a, b) = self.s4nd_state;
        if a == 0 || b == 0 || a % 2 != 0 || b % 2 != 0 {
            return bad("s4nd_state", format!("state sizes must be even and positive, got ({a}, {b})"));
        }
        Ok(())
    }

    /// `(key, value)` pairs understood by [`Self::set`].
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let pair = |a: usize, b: usize| format!("{a},{b}");
        vec![
            ("win_length".into(), self.stft.win_length.to_string()),
            ("hop".into(), self.stft.hop.to_string()),
            ("freq_bins".into(), self.freq_bins.to_string()),
            ("sic_widths".into(), pair(self.sic_widths[0], self.sic_widths[1])),
            ("ic_kernel".into(), pair(self.ic_kernel.0, self.ic_kernel.1)),
            ("lstm_layers".into(), self.lstm_layers.to_string()),
            ("lstm_hidden".into(), self.lstm_hidden.to_string()),
            ("s4nd_state".into(), pair(self.s4nd_state.0, self.s4nd_state.1)),
            ("freq_unidirectional".into(), self.freq_unidirectional.to_string()),
            (
                "global_branch".into(),
                match self.global_branch {
                    GlobalKind::S4nd => "s4nd",
                    GlobalKind::Inplace => "inplace",
                }
                .into(),
            ),
            (
                "mask_apply".into(),
                match self.mask_apply {
                    MaskApply::Complex => "complex",
                    MaskApply::Elementwise => "elementwise",
                }
                .into(),
            ),
            ("dtype".into(), self.dtype.name().into()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Apply one `key = value` setting. Returns `false` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::arg(format!("{key}: expected {what}, got {value:?}"));
        let num = || value.trim().parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let pair = || -> Result<(usize, usize)> {
            let (a, b) = value.split_once(',').ok_or_else(|| bad("two comma-separated integers"))?;
            Ok((
                a.trim().parse().map_err(|_| bad("two comma-separated integers"))?,
                b.trim().parse().map_err(|_| bad("two comma-separated integers"))?,
            ))
        };
        match key {
            "win_length" => self.stft.win_length = num()?,
            "hop" => self.stft.hop = num()?,
            "freq_bins" => self.freq_bins = num()?,
            "sic_widths" => {
                let (a, b) = pair()?;
                self.sic_widths = [a, b];
            }
            "ic_kernel" => self.ic_kernel = pair()?,
            "lstm_layers" => self.lstm_layers = num()?,
            "lstm_hidden" => self.lstm_hidden = num()?,
            "s4nd_state" => self.s4nd_state = pair()?,
            "freq_unidirectional" => {
                self.freq_unidirectional = value.trim().parse().map_err(|_| bad("true or false"))?
            }
            "global_branch" => {
                self.global_branch = match value.trim() {
                    "s4nd" => GlobalKind::S4nd,
                    "inplace" => GlobalKind::Inplace,
                    _ => return Err(bad("s4nd or inplace")),
                }
            }
            "mask_apply" => {
                self.mask_apply = match value.trim() {
                    "complex" => MaskApply::Complex,
                    "elementwise" => MaskApply::Elementwise,
                    _ => return Err(bad("complex or elementwise")),
                }
            }
            "dtype" => self.dtype = Dtype::parse(value.trim()).map_err(|_| bad("f32 or f64"))?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("an integer"))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::paper();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::arg(format!("unknown model key {k}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Tape outputs of one forward pass, both `[B, 2, T, F]`.
pub struct Forward<'t> {
    pub mask: Var<'t>,
    pub enhanced: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct SicrnModel {
    pub config: SicrnConfig,
    pub store: ParamStore,
    pub enc_ic0: InplaceConv2d,
    pub enc_sic1: SicBlock,
    pub enc_ic1: InplaceConv2d,
    pub enc_sic2: SicBlock,
    pub lstm: LstmStack,
    pub proj: Dense,
    pub dec_ic2: InplaceConv2d,
    pub dec_sic3: SicBlock,
    pub dec_ic3: InplaceConv2d,
    pub dec_sic4: SicBlock,
    pub mask_head: PointwiseConv,
}

impl SicrnModel {
    pub fn new(config: SicrnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let [w1, w2] = config.sic_widths;
        let k = config.ic_kernel;
        let f = config.freq_bins;
        let bidir = !config.freq_unidirectional;
        let s4 = config.global_branch == GlobalKind::S4nd;
        let st = config.s4nd_state;
        let sic = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, w: usize| {
            SicBlock::new(store, rng, name, w, k, st, bidir, s4)
        };
        let enc_ic0 = InplaceConv2d::new(&mut store, &mut rng, "enc_ic0", 2, 2 * w1, k)?;
        let enc_sic1 = sic(&mut store, &mut rng, "enc_sic1", w1)?;
        let enc_ic1 = InplaceConv2d::new(&mut store, &mut rng, "enc_ic1", w1, 2 * w2, k)?;
        let enc_sic2 = sic(&mut store, &mut rng, "enc_sic2", w2)?;
        let lstm = LstmStack::new(&mut store, &mut rng, "lstm", w2 * f, config.lstm_hidden, config.lstm_layers)?;
        let proj = Dense::new(&mut store, &mut rng, "proj", config.lstm_hidden, w2 * f)?;
        let dec_ic2 = InplaceConv2d::new(&mut store, &mut rng, "dec_ic2", w2, 2 * w2, k)?;
        let dec_sic3 = sic(&mut store, &mut rng, "dec_sic3", w2)?;
        let dec_ic3 = InplaceConv2d::new(&mut store, &mut rng, "dec_ic3", w2, 2 * w1, k)?;
        let dec_sic4 = sic(&mut store, &mut rng, "dec_sic4", w1)?;
        let mask_head = PointwiseConv::new(&mut store, &mut rng, "mask_head", w1, 2)?;
        // start near the identity mask 1 + 0i
        let scaled = store.get(mask_head.weight).map(|v| 0.1 * v);
        store.set(mask_head.weight, scaled)?;
        store.set(mask_head.bias, Tensor::from_vec(vec![1.0, 0.0]))?;
        if config.dtype == Dtype::F32 {
            store.round_to_f32();
        }
        Ok(Self { config, store, enc_ic0, enc_sic1, enc_ic1, enc_sic2, lstm, proj, dec_ic2, dec_sic3, dec_ic3, dec_sic4, mask_head })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Run on a `[B, 2, T, F]` spectrogram batch.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t>, spec: Var<'t>) -> Result<Forward<'t>> {
        let (nb, nt) = match *spec.shape() {
            [b, 2, t, f] if f == self.config.freq_bins => (b, t),
            ref s => {
                return Err(Error::arg(format!(
                    "model expects [B, 2, T, {}] input, got {s:?}",
                    self.config.freq_bins
                )))
            }
        };
        let f = self.config.freq_bins;
        let w2 = self.config.sic_widths[1];
        ctx.set_grid(nt, f);
        let ctx = &*ctx;
        let step = |name: &str, v: Var<'t>| -> Result<Var<'t>> {
            ctx.trace(name, v)?;
            Ok(v)
        };
        let x = step("enc_ic0", self.enc_ic0.forward(ctx, spec)?)?;
        let x = self.enc_sic1.forward(ctx, "enc_sic1", x)?;
        let x = step("enc_ic1", self.enc_ic1.forward(ctx, x)?)?;
        let x = self.enc_sic2.forward(ctx, "enc_sic2", x)?;
        let seq = x.permute(&[0, 2, 1, 3])?.reshape(&[nb, nt, w2 * f])?;
        let seq = self.proj.forward(ctx, self.lstm.forward(ctx, seq)?)?;
        let x = step("lstm", seq.reshape(&[nb, nt, w2, f])?.permute(&[0, 2, 1, 3])?)?;
        let x = step("dec_ic2", self.dec_ic2.forward(ctx, x)?)?;
        let x = self.dec_sic3.forward(ctx, "dec_sic3", x)?;
        let x = step("dec_ic3", self.dec_ic3.forward(ctx, x)?)?;
        let x = self.dec_sic4.forward(ctx, "dec_sic4", x)?;
        let mask = step("mask_head", self.mask_head.forward(ctx, x)?)?;
        let enhanced = match self.config.mask_apply {
            MaskApply::Complex => mask.complex_mul(spec, 1)?,
            MaskApply::Elementwise => mask.mul(spec)?,
        };
        Ok(Forward { mask, enhanced })
    }

    /// Inference-mode pass over a batch tensor; returns `(mask, enhanced)`.
    pub fn infer_batch(&self, spec: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.store, Mode::Inference, false);
        let out = self.forward(&mut ctx, tape.constant(spec.clone()))?;
        Ok(((*out.mask.value()).clone(), (*out.enhanced.value()).clone()))
    }

    pub fn infer(&self, spec: &ComplexSpectrogram) -> Result<(ComplexMask, ComplexSpectrogram)> {
        let (mask, enhanced) = self.infer_batch(&spec.to_tensor())?;
        Ok((ComplexSpectrogram::from_tensor(&mask, 0)?, ComplexSpectrogram::from_tensor(&enhanced, 0)?))
    }

    /// Output shapes of every layer for an inference pass over `spec`.
    pub fn trace(&self, spec: &Tensor) -> Result<Vec<LayerTrace>> {
        let tape = Tape::new();
        let mut ctx = Ctx::new(&tape, &self.store, Mode::Inference, false);
        self.forward(&mut ctx, tape.constant(spec.clone()))?;
        Ok(ctx.traces())
    }

    /// Every S4ND layer with its qualified name.
    pub fn s4nd_layers(&self) -> Vec<(String, &S4ndLayer)> {
        let mut out = Vec::new();
        for (name, blk) in self.sic_blocks() {
            if let crate::blocks::GlobalBranch::S4nd(bs) = &blk.global {
                for (i, b) in bs.iter().enumerate() {
                    out.push((format!("{name}.global.{i}"), &b.s4nd));
                }
            }
        }
        out
    }

    pub fn sic_blocks(&self) -> [(&'static str, &SicBlock); 4] {
        [("enc_sic1", &self.enc_sic1), ("enc_sic2", &self.enc_sic2), ("dec_sic3", &self.dec_sic3), ("dec_sic4", &self.dec_sic4)]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.to_kv(),
            tensors: self
                .store
                .iter()
                .map(|(id, t)| (self.store.name(id).to_string(), self.config.dtype, t.clone()))
                .collect(),
        }
    }

    /// Rebuild from a checkpoint. Every model tensor must be present; entries
    /// under the `train.` prefix are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = SicrnConfig::from_kv(ckpt.config.iter().filter(|(k, _)| !k.starts_with("train.")).map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        let mut model = Self::new(cfg)?;
        let mut seen = vec![false; model.store.len()];
        for (name, _, t) in &ckpt.tensors {
            if name.starts_with("train.") {
                continue;
            }
            let id = model.store.find(name).ok_or_else(|| Error::format(format!("unexpected tensor {name}")))?;
            model.store.set(id, t.clone()).map_err(|e| Error::format(e.to_string()))?;
            seen[id.index()] = true;
        }
        if let Some(missing) = model.store.ids().find(|id| !seen[id.index()]) {
            return Err(Error::format(format!("checkpoint lacks tensor {}", model.store.name(missing))));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `out_r = m_r·x_r − m_i·x_i`, `out_i = m_r·x_i + m_i·x_r`.
pub fn apply_complex_mask(mask: &ComplexMask, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if (mask.frames, mask.bins) != (spec.frames, spec.bins) {
        return Err(Error::arg(format!(
            "mask {}×{} does not match spectrogram {}×{}",
            mask.frames, mask.bins, spec.frames, spec.bins
        )));
    }
    let mut out = ComplexSpectrogram::zeros(spec.frames, spec.bins);
    for i in 0..spec.re.len() {
        let (mr, mi, xr, xi) = (mask.re[i], mask.im[i], spec.re[i], spec.im[i]);
        out.re[i] = mr * xr - mi * xi;
        out.im[i] = mr * xi + mi * xr;
    }
    Ok(out)
}

/// One line of the analytic cost estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MacEntry {
    pub layer: String,
    pub macs_per_second: f64,
}

/// Published size of the full model, for comparison with [`SicrnModel::param_count`].
pub const PUBLISHED_PARAMS: f64 = 2.16e6;
/// Published compute cost in multiply-accumulates per second of audio.
pub const PUBLISHED_MACS_PER_SECOND: f64 = 4.24e9;

/// Analytic multiply-accumulate count per second of audio.
///
/// Convolutions cost `C_out·C_in·k_t·k_f·T·F`, each 1-D SSM convolution of
/// length `L` costs `5·L·log2 L`, and each LSTM layer `8·D_in·H·T`, with `T`
/// the frame rate.
pub fn mac_report(cfg: &SicrnConfig, sample_rate: u32) -> Vec<MacEntry> {
    let t = sample_rate as f64 / cfg.stft.hop as f64;
    let f = cfg.freq_bins as f64;
    let [w1, w2] = cfg.sic_widths.map(|w| w as f64);
    let (kt, kf) = (cfg.ic_kernel.0 as f64, cfg.ic_kernel.1 as f64);
    let conv = |ci: f64, co: f64| co * ci * kt * kf * t * f;
    let pw = |ci: f64, co: f64| co * ci * t * f;
    let fft_conv = |l: f64| 5.0 * l * l.log2().max(1.0);
    let passes = if cfg.freq_unidirectional { 1.0 } else { 2.0 };
    let sic = |w: f64| {
        let trunk = 3.0 * conv(w, w);
        let heads = 2.0 * pw(w, w);
        let global = match cfg.global_branch {
            GlobalKind::S4nd => 4.0 * (w * (f * fft_conv(t) + passes * t * fft_conv(f)) + pw(w, w)),
            GlobalKind::Inplace => 4.0 * conv(w, w),
        };
        trunk + heads + global
    };
    let d = w2 * f;
    let h = cfg.lstm_hidden as f64;
    let lstm: f64 = (0..cfg.lstm_layers).map(|l| 8.0 * if l == 0 { d } else { h } * h * t).sum();
    vec![
        MacEntry { layer: "enc_ic0".into(), macs_per_second: conv(2.0, 2.0 * w1) },
        MacEntry { layer: "enc_sic1".into(), macs_per_second: sic(w1) },
        MacEntry { layer: "enc_ic1".into(), macs_per_second: conv(w1, 2.0 * w2) },
        MacEntry { layer: "enc_sic2".into(), macs_per_second: sic(w2) },
        MacEntry { layer: "lstm".into(), macs_per_second: lstm + h * d * t },
        MacEntry { layer: "dec_ic2".into(), macs_per_second: conv(w2, 2.0 * w2) },
        MacEntry { layer: "dec_sic3".into(), macs_per_second: sic(w2) },
        MacEntry { layer: "dec_ic3".into(), macs_per_second: conv(w2, 2.0 * w1) },
        MacEntry { layer: "dec_sic4".into(), macs_per_second: sic(w1) },
        MacEntry { layer: "mask_head".into(), macs_per_second: pw(w1, 2.0) },
    ]
}

#[cfg(test)]
mod tests;
