use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sicrn::autodiff::op_gradient_suite;
use sicrn::data::MixtureSample;
use sicrn::dsp_io::{wav_read, wav_write, AudioClip, StftConfig, WAV_SAMPLE_RATE};
use sicrn::model::{mac_report, Checkpoint, Dtype, SicrnConfig, SicrnModel, PUBLISHED_MACS_PER_SECOND, PUBLISHED_PARAMS};
use sicrn::s4nd::kernel_2d;
use sicrn::ssm::{discretize, materialize_kernel, ContinuousSsm};
use sicrn::training::{
    end_to_end_grad_check, enhance_clip, scored_range, si_sdr_metric, train_loop, TrainData, TrainOutputs, TrainState,
};
use sicrn::{Error, Result};

use crate::config::RunConfig;

fn with_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Format(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn load_model(path: &Path) -> Result<SicrnModel> {
    SicrnModel::load(path).map_err(with_path(path))
}

fn read_wav(path: &Path) -> Result<AudioClip> {
    wav_read(path).map_err(with_path(path))
}

pub struct TrainArgs<'a> {
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub data_dir: Option<&'a Path>,
    pub resume: bool,
}

pub fn train(args: TrainArgs<'_>) -> Result<()> {
    let cfg = args.config;
    std::fs::create_dir_all(args.out).map_err(io_at(args.out))?;
    std::fs::write(args.out.join("config.txt"), cfg.to_text()).map_err(io_at(args.out))?;
    let data = match args.data_dir {
        Some(dir) => TrainData::from_dir(&cfg.train, dir, WAV_SAMPLE_RATE).map_err(with_path(dir))?,
        None => TrainData::synthetic(&cfg.train, WAV_SAMPLE_RATE),
    };
    let last = args.out.join("last.ckpt");
    let resume = if args.resume && last.exists() { Some(Checkpoint::load(&last).map_err(with_path(&last))?) } else { None };
    let mut model = match &resume {
        Some(ckpt) => SicrnModel::from_checkpoint(ckpt)?,
        None => SicrnModel::new(cfg.model.clone())?,
    };
    if resume.is_some() && model.config != cfg.model {
        return Err(Error::Argument(format!("{}: model settings differ from the config", last.display())));
    }
    let done = match &resume {
        Some(ckpt) => TrainState::from_checkpoint(&cfg.train, &model, ckpt)?.epoch,
        None => 0,
    };
    println!(
        "training {} parameters for epochs {}..{} ({} steps each)",
        model.param_count(),
        done,
        cfg.train.epochs,
        cfg.train.steps_per_epoch
    );
    let report = train_loop(&cfg.train, &mut model, &data, TrainOutputs { dir: Some(args.out) }, resume.as_ref())?;
    for r in &report.history {
        println!(
            "epoch {:>3}  train {:>9.4}  val {:>9.4}  val SI-SDR {:>7.2} dB  lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.val_sisdr, r.lr
        );
    }
    if !args.out.join("best.ckpt").exists() {
        model.save(&args.out.join("best.ckpt"))?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn scored_si_sdr(stft: &StftConfig, estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let r = scored_range(stft, stft.n_frames(estimate.len().min(reference.len())))?;
    si_sdr_metric(&estimate[r.clone()], &reference[r])
}

pub fn enhance(ckpt: &Path, input: &Path, output: &Path, reference: Option<&Path>) -> Result<()> {
    let model = load_model(ckpt)?;
    let clip = read_wav(input)?;
    let out = enhance_clip(&model, &clip)?;
    wav_write(output, &out).map_err(with_path(output))?;
    println!("{} -> {} ({} of {} samples)", input.display(), output.display(), out.len(), clip.len());
    if let Some(path) = reference {
        let r = read_wav(path)?;
        let stft = &model.config.stft;
        let noisy = scored_si_sdr(stft, &clip.samples, &r.samples)?;
        let enhanced = scored_si_sdr(stft, &out.samples, &r.samples)?;
        println!("SI-SDR vs reference: input {noisy:.2} dB, enhanced {enhanced:.2} dB");
    }
    Ok(())
}

pub enum EvalSource<'a> {
    /// `noisy/` and `clean/` folders with matching file names.
    Dir(&'a Path),
    Synthetic { clips: usize, config: &'a RunConfig },
}

fn paired_dir(dir: &Path) -> Result<Vec<(String, AudioClip, AudioClip)>> {
    let noisy_dir = dir.join("noisy");
    let mut names: Vec<String> = std::fs::read_dir(&noisy_dir)
        .map_err(io_at(&noisy_dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".wav"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let noisy = read_wav(&noisy_dir.join(&n))?;
            let clean = read_wav(&dir.join("clean").join(&n))?;
            if noisy.len() != clean.len() {
                return Err(Error::Format(format!("{n}: noisy and clean lengths differ")));
            }
            Ok((n, noisy, clean))
        })
        .collect()
}

fn synthetic_set(cfg: &RunConfig, clips: usize) -> Result<Vec<(String, AudioClip, AudioClip)>> {
    let data = TrainData::synthetic(&cfg.train, WAV_SAMPLE_RATE);
    let set: Vec<MixtureSample> = data.validation_set(cfg.train.seed, clips)?;
    Ok(set.into_iter().enumerate().map(|(i, s)| (format!("synthetic_{i}"), s.noisy.clone(), s.target(cfg.train.target).clone())).collect())
}

pub const EVAL_HEADER: &str = "clip,noisy_sisdr,enhanced_sisdr,improvement";

pub fn eval(ckpt: &Path, source: EvalSource<'_>, report: Option<&Path>) -> Result<()> {
    let model = load_model(ckpt)?;
    let set = match source {
        EvalSource::Dir(d) => paired_dir(d)?,
        EvalSource::Synthetic { clips, config } => synthetic_set(config, clips)?,
    };
    if set.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let stft = &model.config.stft;
    let mut rows = Vec::with_capacity(set.len());
    for (name, noisy, clean) in &set {
        let out = enhance_clip(&model, noisy)?;
        rows.push((name.clone(), scored_si_sdr(stft, &noisy.samples, &clean.samples)?, scored_si_sdr(stft, &out.samples, &clean.samples)?));
    }
    let n = rows.len() as f64;
    let mean_noisy = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_enh = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let mut text = format!("{EVAL_HEADER}\n");
    for (name, a, b) in &rows {
        text.push_str(&format!("{name},{a:.4},{b:.4},{:.4}\n", b - a));
    }
    text.push_str(&format!("mean,{mean_noisy:.4},{mean_enh:.4},{:.4}\n", mean_enh - mean_noisy));
    match report {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(text.as_bytes()).map_err(io_at(path))?;
            f.flush()?;
        }
        None => print!("{text}"),
    }
    println!("{} clips: noisy {mean_noisy:.2} dB, enhanced {mean_enh:.2} dB", rows.len());
    Ok(())
}

pub struct GradcheckArgs<'a> {
    pub model: SicrnConfig,
    pub op_tol: f64,
    pub tol: f64,
    pub instances: usize,
    pub frames: usize,
    pub seed: u64,
    pub out: &'a mut dyn Write,
}

/// Finite-difference step of the end-to-end check.
pub const E2E_FD_STEP: f64 = 3e-5;

pub fn gradcheck(args: GradcheckArgs<'_>) -> Result<()> {
    let out = args.out;
    let mut model = args.model;
    if model.dtype != Dtype::F64 {
        writeln!(out, "note: gradient checks run in f64; dtype {} ignored", model.dtype.name())?;
        model.dtype = Dtype::F64;
    }
    writeln!(out, "{:<16} {:>9} {:>14}  result", "op", "checks", "max rel err")?;
    let mut failed = Vec::new();
    for check in op_gradient_suite(args.instances, args.seed)? {
        let ok = check.max_rel_error < args.op_tol;
        writeln!(
            out,
            "{:<16} {:>9} {:>14.3e}  {}",
            check.name,
            check.instances,
            check.max_rel_error,
            if ok { "PASS" } else { "FAIL" }
        )?;
        if !ok {
            failed.push(check.name.to_string());
        }
    }
    let e2e = end_to_end_grad_check(&model, args.seed, args.frames, E2E_FD_STEP, args.tol)?;
    let ok = e2e.max_rel_error < args.tol;
    writeln!(
        out,
        "{:<16} {:>9} {:>14.3e}  {}",
        "end_to_end",
        e2e.checked,
        e2e.max_rel_error,
        if ok { "PASS" } else { "FAIL" }
    )?;
    if !ok {
        failed.push("end_to_end".into());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Default end-to-end model for `gradcheck` when no config is given.
pub fn gradcheck_model() -> SicrnConfig {
    SicrnConfig {
        stft: StftConfig { win_length: 14, hop: 5 },
        freq_bins: 8,
        sic_widths: [2, 3],
        lstm_hidden: 6,
        s4nd_state: (2, 2),
        dtype: Dtype::F64,
        ..SicrnConfig::paper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelAxis {
    Time,
    Freq,
    Grid,
}

pub struct KernelArgs<'a> {
    pub model: &'a SicrnModel,
    pub axis: KernelAxis,
    pub layer: Option<&'a str>,
    pub channel: usize,
    pub len_t: Option<usize>,
    pub len_f: Option<usize>,
    pub out: PathBuf,
}

pub fn kernel(args: KernelArgs<'_>) -> Result<()> {
    let layers = args.model.s4nd_layers();
    let (name, layer) = match args.layer {
        Some(want) => layers.iter().find(|(n, _)| n == want).ok_or_else(|| {
            let names: Vec<_> = layers.iter().map(|(n, _)| n.as_str()).collect();
            Error::Argument(format!("no S4ND layer {want}; available: {}", names.join(" ")))
        })?,
        None => layers.first().ok_or_else(|| Error::Argument("model has no S4ND layers".into()))?,
    };
    let p = layer.channel(&args.model.store, args.channel)?;
    let cfg = &args.model.config;
    let lt = args.len_t.unwrap_or((WAV_SAMPLE_RATE as usize).div_ceil(cfg.stft.hop));
    let lf = args.len_f.unwrap_or(cfg.freq_bins);
    let taps = |s: &ContinuousSsm, len: usize| -> Result<Vec<f64>> { Ok(materialize_kernel(&discretize(s)?, len)?.taps) };
    let mut f = create(&args.out)?;
    match args.axis {
        KernelAxis::Time => {
            writeln!(f, "tap,time")?;
            for (j, v) in taps(&p.time, lt)?.iter().enumerate() {
                writeln!(f, "{j},{v:e}")?;
            }
        }
        KernelAxis::Freq => {
            let fwd = taps(&p.freq, lf)?;
            let rev = p.freq_rev.as_ref().map(|r| taps(r, lf)).transpose()?;
            writeln!(f, "tap,freq{}", if rev.is_some() { ",freq_rev" } else { "" })?;
            for (j, v) in fwd.iter().enumerate() {
                match &rev {
                    Some(r) => writeln!(f, "{j},{v:e},{:e}", r[j])?,
                    None => writeln!(f, "{j},{v:e}")?,
                }
            }
        }
        KernelAxis::Grid => {
            let k = kernel_2d(&p, lt, lf)?;
            for row in k.data().chunks(lf) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(f, "{}", line.join(","))?;
            }
        }
    }
    f.flush()?;
    println!("{name} channel {}: wrote {}", args.channel, args.out.display());
    Ok(())
}

pub fn info(cfg: &SicrnConfig, out: &mut dyn Write) -> Result<()> {
    let model = SicrnModel::new(cfg.clone())?;
    let macs = mac_report(cfg, WAV_SAMPLE_RATE);
    let total: f64 = macs.iter().map(|m| m.macs_per_second).sum();
    writeln!(out, "stft            {} / {} ({} bins)", cfg.stft.win_length, cfg.stft.hop, cfg.freq_bins)?;
    writeln!(out, "widths          {}, {}", cfg.sic_widths[0], cfg.sic_widths[1])?;
    writeln!(out, "parameters      {} ({:.2} M)", model.param_count(), model.param_count() as f64 / 1e6)?;
    writeln!(out, "MACs per second {:.3} G", total / 1e9)?;
    for m in &macs {
        writeln!(out, "  {:<12} {:>10.4} G/s", m.layer, m.macs_per_second / 1e9)?;
    }
    let paper = SicrnConfig::paper();
    let paper_params = SicrnModel::new(paper.clone())?.param_count() as f64;
    let paper_macs: f64 = mac_report(&paper, WAV_SAMPLE_RATE).iter().map(|m| m.macs_per_second).sum();
    writeln!(
        out,
        "full-size config: {:.2} M parameters (published {:.2} M), {:.2} G/s MACs (published {:.2} G/s)",
        paper_params / 1e6,
        PUBLISHED_PARAMS / 1e6,
        paper_macs / 1e9,
        PUBLISHED_MACS_PER_SECOND / 1e9
    )?;
    Ok(())
}
