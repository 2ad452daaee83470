//! SI-SNR loss, Adam, plateau scheduling and the train/validate loop.

mod loss;
mod optim;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_at, GradCheckReport, Tape, Var};
use crate::blocks::{apply_stats, Ctx, Mode};
use crate::data::{
    draw_sample, load_data_dir, CleanPool, MixConfig, MixtureSample, NoiseKind, NoisePool, SynthConfig, Target,
    REVERB_PROB, SNR_RANGE,
};
use crate::dsp_io::{
    interior_range, istft_on_tape, istft_samples, stft, stft_samples, AudioClip, ComplexSpectrogram, StftConfig,
};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Dtype, SicrnConfig, SicrnModel};
use crate::numerics::Tensor;

pub use loss::{loss_on_tape, si_sdr_metric, si_snr, si_snr_on_tape, SI_SNR_EPS};
pub use optim::{AdamState, PlateauScheduler};

/// Epoch index reserved for the frozen validation set.
const VALIDATION_EPOCH: u64 = u64::MAX;

/// Header of `metrics.csv`.
pub const METRICS_HEADER: &str = "epoch,step,train_loss,val_loss,val_sisdr,lr,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Validation mixtures; 0 validates on the epoch's training loss.
    pub val_clips: usize,
    /// Fixed training set size; `None` draws fresh mixtures every epoch.
    pub train_clips: Option<usize>,
    pub patience: usize,
    pub lr_factor: f64,
    /// Write wall-clock seconds to the metrics log (0 otherwise).
    pub log_seconds: bool,
    pub speech: SynthConfig,
    pub noise: NoiseKind,
    pub target: Target,
    pub reverb_prob: f64,
    pub snr_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 4,
            epochs: 10,
            steps_per_epoch: 50,
            clip_seconds: 3.0,
            seed: 0,
            val_clips: 8,
            train_clips: None,
            patience: 4,
            lr_factor: 0.5,
            log_seconds: true,
            speech: SynthConfig::default(),
            noise: NoiseKind::White,
            target: Target::Reverberant,
            reverb_prob: REVERB_PROB,
            snr_range: SNR_RANGE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::arg(format!("{key}: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("batch_size/epochs/steps_per_epoch", "must be positive");
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds", "must be positive");
        }
        if self.train_clips == Some(0) {
            return bad("train_clips", "must be positive when fixed");
        }
        if self.patience == 0 || !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("patience/lr_factor", "patience must be positive and factor in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.reverb_prob) {
            return bad("reverb_prob", "must lie in [0, 1]");
        }
        if !(self.snr_range.0 < self.snr_range.1) {
            return bad("snr_range", "lower bound must be below upper bound");
        }
        self.speech.validate()
    }

    pub fn mix_config(&self, sample_rate: u32) -> MixConfig {
        MixConfig {
            clip_samples: (self.clip_seconds * sample_rate as f64).round() as usize,
            sample_rate,
            reverb_prob: self.reverb_prob,
            snr_range: self.snr_range,
            target: self.target,
        }
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let s = &self.speech;
        vec![
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("steps_per_epoch".into(), self.steps_per_epoch.to_string()),
            ("clip_seconds".into(), self.clip_seconds.to_string()),
            ("train_seed".into(), self.seed.to_string()),
            ("val_clips".into(), self.val_clips.to_string()),
            ("train_clips".into(), self.train_clips.unwrap_or(0).to_string()),
            ("patience".into(), self.patience.to_string()),
            ("lr_factor".into(), self.lr_factor.to_string()),
            ("log_seconds".into(), self.log_seconds.to_string()),
            ("f0_range".into(), format!("{},{}", s.f0_range.0, s.f0_range.1)),
            ("n_harmonics".into(), s.n_harmonics.to_string()),
            ("vibrato_depth".into(), s.vibrato_depth.to_string()),
            ("vibrato_rate".into(), s.vibrato_rate.to_string()),
            ("noise".into(), self.noise.name().into()),
            ("target".into(), self.target.name().into()),
            ("reverb_prob".into(), self.reverb_prob.to_string()),
            ("snr_range".into(), format!("{},{}", self.snr_range.0, self.snr_range.1)),
        ]
    }

    /// Apply one setting; `false` for keys owned elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        let bad = |what: &str| Error::arg(format!("{key}: expected {what}, got {value:?}"));
        let int = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let real = || v.parse::<f64>().map_err(|_| bad("a number"));
        let pair = || -> Result<(f64, f64)> {
            let (a, b) = v.split_once(',').ok_or_else(|| bad("two comma-separated numbers"))?;
            Ok((
                a.trim().parse().map_err(|_| bad("two comma-separated numbers"))?,
                b.trim().parse().map_err(|_| bad("two comma-separated numbers"))?,
            ))
        };
        match key {
            "lr" => self.lr = real()?,
            "batch_size" => self.batch_size = int()?,
            "epochs" => self.epochs = int()?,
            "steps_per_epoch" => self.steps_per_epoch = int()?,
            "clip_seconds" => self.clip_seconds = real()?,
            "train_seed" => self.seed = v.parse().map_err(|_| bad("an integer"))?,
            "val_clips" => self.val_clips = int()?,
            "train_clips" => self.train_clips = Some(int()?).filter(|&n| n > 0),
            "patience" => self.patience = int()?,
            "lr_factor" => self.lr_factor = real()?,
            "log_seconds" => self.log_seconds = v.parse().map_err(|_| bad("true or false"))?,
            "f0_range" => self.speech.f0_range = pair()?,
            "n_harmonics" => self.speech.n_harmonics = int()?,
            "vibrato_depth" => self.speech.vibrato_depth = real()?,
            "vibrato_rate" => self.speech.vibrato_rate = real()?,
            "noise" => self.noise = NoiseKind::parse(v).map_err(|_| bad("white or pink"))?,
            "target" => self.target = Target::parse(v).map_err(|_| bad("reverberant or dry"))?,
            "reverb_prob" => self.reverb_prob = real()?,
            "snr_range" => self.snr_range = pair()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Clean and noise sources plus the mixing recipe.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub clean: CleanPool,
    pub noise: NoisePool,
    pub mix: MixConfig,
}

impl TrainData {
    pub fn synthetic(cfg: &TrainConfig, sample_rate: u32) -> Self {
        Self {
            clean: CleanPool::Synthetic(cfg.speech.clone()),
            noise: NoisePool::Synthetic(cfg.noise),
            mix: cfg.mix_config(sample_rate),
        }
    }

    /// WAV folders `dir/clean` and `dir/noise` replace the synthesizers.
    pub fn from_dir(cfg: &TrainConfig, dir: &Path, sample_rate: u32) -> Result<Self> {
        let (clean, noise) = load_data_dir(dir)?;
        Ok(Self { clean: CleanPool::Clips(clean), noise: NoisePool::Clips(noise), mix: cfg.mix_config(sample_rate) })
    }

    pub fn sample(&self, seed: u64, epoch: u64, index: u64) -> Result<MixtureSample> {
        draw_sample(&self.clean, &self.noise, &self.mix, seed, epoch, index)
    }

    /// The frozen validation mixtures.
    pub fn validation_set(&self, seed: u64, count: usize) -> Result<Vec<MixtureSample>> {
        (0..count as u64).map(|i| self.sample(seed, VALIDATION_EPOCH, i)).collect()
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_sisdr: f64,
    pub lr: f64,
    pub seconds: f64,
    pub best_val_loss: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.step, self.train_loss, self.val_loss, self.val_sisdr, self.lr, self.seconds
        )
    }
}

/// Optimizer and scheduler state carried across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub adam: AdamState,
    pub scheduler: PlateauScheduler,
    pub best_val_loss: f64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, model: &SicrnModel) -> Self {
        let mut scheduler = PlateauScheduler::new(cfg.lr);
        scheduler.patience = cfg.patience;
        scheduler.factor = cfg.lr_factor;
        Self { epoch: 0, step: 0, adam: AdamState::new(&model.store, cfg.lr), scheduler, best_val_loss: f64::INFINITY }
    }

    /// Model checkpoint extended with `train.` entries for resuming.
    pub fn to_checkpoint(&self, model: &SicrnModel) -> Checkpoint {
        let mut ckpt = model.to_checkpoint();
        let s = &self.scheduler;
        for (k, v) in [
            ("train.epoch", self.epoch.to_string()),
            ("train.step", self.step.to_string()),
            ("train.adam_step", self.adam.step.to_string()),
            ("train.lr", self.adam.lr.to_string()),
            ("train.sched_lr", s.lr.to_string()),
            ("train.sched_best", s.best.to_string()),
            ("train.sched_bad", s.bad_epochs.to_string()),
            ("train.best_val", self.best_val_loss.to_string()),
        ] {
            ckpt.config.push((k.into(), v));
        }
        for (k, &id) in self.adam.ids.iter().enumerate() {
            let name = model.store.name(id);
            ckpt.tensors.push((format!("train.m.{name}"), Dtype::F64, self.adam.m[k].clone()));
            ckpt.tensors.push((format!("train.v.{name}"), Dtype::F64, self.adam.v[k].clone()));
        }
        ckpt
    }

    pub fn from_checkpoint(cfg: &TrainConfig, model: &SicrnModel, ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| ckpt.get_config(k).ok_or_else(|| Error::format(format!("checkpoint lacks {k}")));
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::format(format!("bad {k}"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::format(format!("bad {k}"))) };
        let mut st = Self::new(cfg, model);
        st.epoch = int("train.epoch")? as usize;
        st.step = int("train.step")?;
        st.adam.step = int("train.adam_step")?;
        st.adam.lr = real("train.lr")?;
        st.scheduler.lr = real("train.sched_lr")?;
        st.scheduler.best = real("train.sched_best")?;
        st.scheduler.bad_epochs = int("train.sched_bad")? as usize;
        st.best_val_loss = real("train.best_val")?;
        for (k, &id) in st.adam.ids.clone().iter().enumerate() {
            let name = model.store.name(id);
            for (prefix, slot) in [("m", &mut st.adam.m[k]), ("v", &mut st.adam.v[k])] {
                let t = ckpt
                    .tensor(&format!("train.{prefix}.{name}"))
                    .ok_or_else(|| Error::format(format!("checkpoint lacks optimizer state for {name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::format(format!("optimizer state shape mismatch for {name}")));
                }
                *slot = t.clone();
            }
        }
        Ok(st)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
}

/// Where the loop writes `metrics.csv`, `best.ckpt` and `last.ckpt`.
#[derive(Debug, Clone, Copy)]
pub struct TrainOutputs<'a> {
    pub dir: Option<&'a Path>,
}

fn batch_indices(cfg: &TrainConfig, epoch: usize, step: usize) -> (u64, Vec<u64>) {
    let b = cfg.batch_size as u64;
    match cfg.train_clips {
        Some(n) => (0, (0..b).map(|j| (step as u64 * b + j) % n as u64).collect()),
        None => (epoch as u64, (0..b).map(|j| step as u64 * b + j).collect()),
    }
}

/// Output samples that the loss and the metrics look at: those with full
/// window overlap on both sides, away from the edges where the summed squared
/// window approaches zero.
pub fn scored_range(cfg: &StftConfig, frames: usize) -> Result<std::ops::Range<usize>> {
    let r = interior_range(cfg, frames);
    if r.is_empty() {
        return Err(Error::arg(format!(
            "{frames} frames leave no fully overlapped samples for win {} hop {}",
            cfg.win_length, cfg.hop
        )));
    }
    Ok(r)
}

fn spectra_and_targets(
    model: &SicrnModel,
    samples: &[MixtureSample],
    target: Target,
) -> Result<(Tensor, Tensor)> {
    let stft_cfg = model.config.stft;
    let specs = samples.iter().map(|s| stft(&s.noisy, &stft_cfg)).collect::<Result<Vec<_>>>()?;
    let range = scored_range(&stft_cfg, specs[0].frames)?;
    let mut tgt = Vec::with_capacity(samples.len() * range.len());
    for s in samples {
        tgt.extend_from_slice(&s.target(target).samples[range.clone()]);
    }
    Ok((ComplexSpectrogram::batch(&specs)?, Tensor::new(&[samples.len(), range.len()], tgt)?))
}

/// Synthesis plus −SI-SNR over [`scored_range`].
pub fn waveform_loss<'t>(enhanced: Var<'t>, cfg: &StftConfig, target: &Tensor) -> Result<Var<'t>> {
    let frames = enhanced.shape()[2];
    let r = scored_range(cfg, frames)?;
    let wave = istft_on_tape(enhanced, cfg)?.slice(1, r.start, r.len())?;
    loss_on_tape(wave, target)
}

/// Forward, loss, backward and Adam on one batch. Returns the loss.
pub fn train_step(model: &mut SicrnModel, adam: &mut AdamState, samples: &[MixtureSample], target: Target) -> Result<f64> {
    let (spec, tgt) = spectra_and_targets(model, samples, target)?;
    let tape = Tape::new();
    let mut ctx = Ctx::new(&tape, &model.store, Mode::Train, true);
    let out = model.forward(&mut ctx, tape.constant(spec))?;
    let loss = waveform_loss(out.enhanced, &model.config.stft, &tgt)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::numeric(format!("loss is {value}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = adam.ids.iter().map(|&id| tape.grad(ctx.var(id))).collect();
    adam.step(&mut model.store, &grads)?;
    apply_stats(&mut model.store, &ctx.take_stats());
    if model.config.dtype == Dtype::F32 {
        model.store.round_to_f32();
    }
    Ok(value)
}

/// SI-SDR of noisy and enhanced signals against the chosen target over
/// [`scored_range`], per clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipScore {
    pub noisy: f64,
    pub enhanced: f64,
}

/// Enhance a waveform; the result covers the `span` of whole frames.
pub fn enhance_clip(model: &SicrnModel, clip: &AudioClip) -> Result<AudioClip> {
    let spec = stft(clip, &model.config.stft)?;
    let (_, enhanced) = model.infer(&spec)?;
    AudioClip::new(istft_samples(&enhanced, &model.config.stft)?, clip.sample_rate)
}

pub fn evaluate(model: &SicrnModel, samples: &[MixtureSample], target: Target) -> Result<Vec<ClipScore>> {
    samples
        .iter()
        .map(|s| {
            let out = enhance_clip(model, &s.noisy)?;
            let r = scored_range(&model.config.stft, model.config.stft.n_frames(s.noisy.len()))?;
            let reference = &s.target(target).samples[r.clone()];
            Ok(ClipScore {
                noisy: si_sdr_metric(&s.noisy.samples[r.clone()], reference)?,
                enhanced: si_sdr_metric(&out.samples[r], reference)?,
            })
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn write_nan_dump(dir: Option<&Path>, msg: &str) {
    if let Some(d) = dir {
        let _ = std::fs::write(d.join("nan_dump.txt"), format!("{msg}\n"));
    }
}

/// Train for `cfg.epochs` epochs, or the remainder of them when `resume`
/// carries optimizer state.
pub fn train_loop(
    cfg: &TrainConfig,
    model: &mut SicrnModel,
    data: &TrainData,
    out: TrainOutputs<'_>,
    resume: Option<&Checkpoint>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut state = match resume {
        Some(ckpt) => TrainState::from_checkpoint(cfg, model, ckpt)?,
        None => TrainState::new(cfg, model),
    };
    let mut log = match out.dir {
        Some(d) => {
            let path = d.join("metrics.csv");
            let f = if resume.is_some() && path.exists() {
                OpenOptions::new().append(true).open(&path)?
            } else {
                let mut f = File::create(&path)?;
                writeln!(f, "{METRICS_HEADER}")?;
                f
            };
            Some(f)
        }
        None => None,
    };
    let val_set = data.validation_set(cfg.seed, cfg.val_clips)?;
    let started = Instant::now();
    let mut history = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut losses = Vec::with_capacity(cfg.steps_per_epoch);
        for step in 0..cfg.steps_per_epoch {
            let (mix_epoch, idx) = batch_indices(cfg, epoch, step);
            let batch = idx.iter().map(|&i| data.sample(cfg.seed, mix_epoch, i)).collect::<Result<Vec<_>>>()?;
            match train_step(model, &mut state.adam, &batch, cfg.target) {
                Ok(l) => losses.push(l),
                Err(Error::Numeric(why)) => {
                    let msg = format!(
                        "{why} at epoch {epoch} step {step}: batch seed {} mix epoch {mix_epoch} indices {idx:?}",
                        cfg.seed
                    );
                    write_nan_dump(out.dir, &msg);
                    return Err(Error::Numeric(msg));
                }
                Err(e) => return Err(e),
            }
            state.step += 1;
        }
        let train_loss = mean(losses.iter().copied());
        let (val_loss, val_sisdr) = if val_set.is_empty() {
            (train_loss, -train_loss)
        } else {
            let scores = evaluate(model, &val_set, cfg.target)?;
            let v = mean(scores.iter().map(|s| s.enhanced));
            (-v, v)
        };
        if !val_loss.is_finite() {
            let msg = format!("validation loss is {val_loss} after epoch {epoch} (seed {})", cfg.seed);
            write_nan_dump(out.dir, &msg);
            return Err(Error::Numeric(msg));
        }
        state.adam.lr = state.scheduler.step(val_loss);
        state.epoch += 1;
        let improved = val_loss < state.best_val_loss;
        if improved {
            state.best_val_loss = val_loss;
        }
        let rec = EpochRecord {
            epoch,
            step: state.step,
            train_loss,
            val_loss,
            val_sisdr,
            lr: state.adam.lr,
            seconds: if cfg.log_seconds { started.elapsed().as_secs_f64() } else { 0.0 },
            best_val_loss: state.best_val_loss,
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", rec.csv_row())?;
            f.flush()?;
        }
        if let Some(d) = out.dir {
            let ckpt = state.to_checkpoint(model);
            if improved {
                model.save(&d.join("best.ckpt"))?;
            }
            ckpt.save(&d.join("last.ckpt"))?;
        }
        history.push(rec);
    }
    Ok(TrainReport { history, state })
}

fn higher_ranked<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

/// Smallest gradient, relative to the loss value, that a coordinate of the
/// end-to-end check may have; below it central differences resolve only noise.
pub const E2E_GRAD_FLOOR: f64 = 1e-6;

/// Central-difference check of the full loss (forward, iSTFT, −SI-SNR) in
/// double precision.
///
/// For every trainable tensor the element with the largest gradient is
/// checked, provided that gradient exceeds `E2E_GRAD_FLOOR·|loss|`. SSM step
/// sizes are redrawn in `log Δ ∈ [−1, 0]`, and the linear biases ahead of
/// batch norm are skipped since their gradient is identically zero.
pub fn end_to_end_grad_check(cfg: &SicrnConfig, seed: u64, frames: usize, h: f64, tol: f64) -> Result<GradCheckReport> {
    let cfg = SicrnConfig { dtype: Dtype::F64, seed, ..cfg.clone() };
    let mut model = SicrnModel::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id).ends_with("log_dt")).collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..0.0);
        }
    }
    let stft_cfg = model.config.stft;
    let len = stft_cfg.span(frames);
    let noisy: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clean: Vec<f64> = noisy.iter().map(|v| 0.7 * v + rng.gen_range(-0.2..0.2)).collect();
    let spec = ComplexSpectrogram::batch(&[stft_samples(&noisy, &stft_cfg)?])?;
    let r = scored_range(&stft_cfg, frames)?;
    let target = Tensor::new(&[1, r.len()], clean[r].to_vec())?;
    let params: Vec<Tensor> = model.store.iter().map(|(_, t)| t.clone()).collect();
    let model = &model;
    let objective = higher_ranked(|tape, leaves| {
        let mut ctx = Ctx::from_vars(tape, leaves.to_vec(), Mode::Train);
        let out = model.forward(&mut ctx, tape.constant(spec.clone()))?;
        waveform_loss(out.enhanced, &stft_cfg, &target)
    });
    let (loss, grads) = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let l = objective(&tape, &leaves)?;
        tape.backward(l)?;
        (l.item(), leaves.iter().map(|&v| tape.grad(v)).collect::<Vec<_>>())
    };
    let floor = E2E_GRAD_FLOOR * loss.abs().max(1.0);
    let coords: Vec<(usize, usize)> = model
        .store
        .trainable_ids()
        .into_iter()
        .filter(|&id| !model.store.name(id).ends_with("linear.bias"))
        .filter_map(|id| {
            let g = grads[id.index()].data();
            let (e, m) = g.iter().enumerate().fold((0, 0.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
            (m > floor).then_some((id.index(), e))
        })
        .collect();
    if coords.is_empty() {
        return Err(Error::numeric("every gradient is below the finite-difference noise floor"));
    }
    grad_check_at(&objective, &params, &coords, h, tol)
}
