use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sicrn::dsp_io::{wav_read, wav_write, AudioClip, WAV_SAMPLE_RATE};
use sicrn::model::{SicrnConfig, SicrnModel};
use sicrn::numerics::Tensor;
use sicrn::s4nd::apply_2d;
use sicrn::training::{scored_range, si_sdr_metric};
use tempfile::TempDir;

const TINY: &str = "\
win_length = 14
hop = 5
freq_bins = 8
sic_widths = 2,3
lstm_hidden = 6
s4nd_state = 2,2
clip_seconds = 0.02
batch_size = 2
epochs = 2
steps_per_epoch = 2
val_clips = 2
log_seconds = false
";

fn sicrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicrn")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let p = dir.path().join("run.txt");
    std::fs::write(&p, body).unwrap();
    p
}

fn tiny_model() -> SicrnModel {
    let mut cfg = SicrnConfig::from_kv(TINY.lines().filter_map(|l| l.split_once(" = ")).filter(|(k, _)| {
        ["win_length", "hop", "freq_bins", "sic_widths", "lstm_hidden", "s4nd_state"].contains(k)
    }))
    .unwrap();
    cfg.seed = 5;
    SicrnModel::new(cfg).unwrap()
}

fn tone(len: usize) -> AudioClip {
    let x = (0..len).map(|i| 0.3 * (i as f64 * 0.07).sin() + 0.1 * (i as f64 * 0.31).cos()).collect();
    AudioClip::new(x, WAV_SAMPLE_RATE).unwrap()
}

#[test]
fn missing_config_names_the_path() {
    let dir = TempDir::new().unwrap();
    let o = sicrn(&["train", "--config", "/no/such/run.txt", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("/no/such/run.txt"));
}

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "preset = desk\nwarmup = 3\n");
    let o = sicrn(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("warmup"));
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sicrn(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["best.ckpt", "last.ckpt", "metrics.csv", "config.txt"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(metrics, std::fs::read_to_string(b.join("metrics.csv")).unwrap());
    let resolved = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(resolved.contains("train_seed = 9") && resolved.contains("seed = 9"));
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let out = dir.path().join("out");
    let o = sicrn(&["train", "--config", s(&cfg), "--out", s(&out), "--set", "lr=1e200", "--set", "epochs=4"]);
    assert_eq!(o.status.code(), Some(3), "{:?}", text(&o));
    assert!(out.join("nan_dump.txt").is_file());
}

#[test]
fn identity_checkpoint_passes_audio_through() {
    let dir = TempDir::new().unwrap();
    let mut model = tiny_model();
    let w = model.store.get(model.mask_head.weight).map(|_| 0.0);
    model.store.set(model.mask_head.weight, w).unwrap();
    let ckpt = dir.path().join("identity.ckpt");
    model.save(&ckpt).unwrap();
    let clip = tone(1003);
    let (input, output) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    wav_write(&input, &clip).unwrap();
    let o = sicrn(&["enhance", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&output), "--ref", s(&input)]);
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    let got = wav_read(&output).unwrap();
    let cfg = model.config.stft;
    let frames = cfg.n_frames(clip.len());
    assert_eq!(got.len(), cfg.span(frames));
    let read_back = wav_read(&input).unwrap();
    let r = scored_range(&cfg, frames).unwrap();
    let sdr = si_sdr_metric(&got.samples[r.clone()], &read_back.samples[r]).unwrap();
    assert!(sdr >= 60.0, "{sdr}");
}

#[test]
fn stereo_input_is_rejected() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    tiny_model().save(&ckpt).unwrap();
    let input = dir.path().join("stereo.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 16000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&input, spec).unwrap();
    for i in 0..400 {
        w.write_sample((i % 50) as i16).unwrap();
    }
    w.finalize().unwrap();
    let o = sicrn(&["enhance", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&dir.path().join("o.wav"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("channels=2"));
}

#[test]
fn synthetic_eval_reports_every_clip_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    tiny_model().save(&ckpt).unwrap();
    let cfg = write_config(&dir, TINY);
    let report = dir.path().join("eval.csv");
    let o = sicrn(&["eval", "--ckpt", s(&ckpt), "--synthetic", "20", "--config", s(&cfg), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    let csv = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "clip,noisy_sisdr,enhanced_sisdr,improvement");
    assert_eq!(lines.len(), 22);
    assert!(lines[21].starts_with("mean,"));
}

#[test]
fn empty_eval_set_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    tiny_model().save(&ckpt).unwrap();
    std::fs::create_dir_all(dir.path().join("data/noisy")).unwrap();
    let o = sicrn(&["eval", "--ckpt", s(&ckpt), "--data-dir", s(&dir.path().join("data"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_prints_a_pass_table() {
    let o = sicrn(&["gradcheck", "--instances", "3"]);
    let (out, err) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{out}{err}");
    for op in sicrn::autodiff::op_names() {
        assert!(out.lines().any(|l| l.starts_with(op) && l.ends_with("PASS")), "{op}: {out}");
    }
    assert!(out.lines().any(|l| l.starts_with("end_to_end") && l.ends_with("PASS")));
}

#[test]
fn gradcheck_failure_names_the_op_and_forces_double_precision() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &format!("{TINY}dtype = f32\n"));
    let o = sicrn(&["gradcheck", "--config", s(&cfg), "--instances", "1", "--op-tol", "0"]);
    let (out, err) = text(&o);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.contains("dtype f32 ignored"));
    assert!(err.contains("add") && err.contains("lstm_cell"), "{err}");
}

fn read_csv(path: &Path, header: bool) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(header as usize)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn kernel_dumps_have_the_requested_shape_and_decay() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let dump = |axis: &str, extra: &[&str]| {
        let out = dir.path().join(format!("{axis}.csv"));
        let mut args = vec!["kernel", "--config", s(&cfg), "--axis", axis, "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = sicrn(&args);
        assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
        out
    };
    // the slowest initial step size decays by e^-10 within 20000 taps
    let time = read_csv(&dump("time", &["--len-t", "20000"]), true);
    assert_eq!(time.len(), 20000);
    let early = time[..2000].iter().map(|r| r[1].abs()).fold(0.0, f64::max);
    let late = time[19000..].iter().map(|r| r[1].abs()).fold(0.0, f64::max);
    assert!(late < 0.1 * early, "{early} {late}");
    let freq = read_csv(&dump("freq", &[]), true);
    assert_eq!((freq.len(), freq[0].len()), (8, 3));
    let grid = read_csv(&dump("2d", &["--len-t", "6", "--len-f", "5"]), false);
    assert_eq!((grid.len(), grid[0].len()), (6, 5));
    let o = sicrn(&["kernel", "--config", s(&cfg), "--axis", "time", "--out", s(&dir.path().join("x.csv")), "--layer", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn kernel_matches_the_delta_response() {
    let dir = TempDir::new().unwrap();
    let mut model = tiny_model();
    model.config.freq_unidirectional = true;
    let model = SicrnModel::new(model.config.clone()).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    model.save(&ckpt).unwrap();
    let out = dir.path().join("k.csv");
    let o = sicrn(&["kernel", "--ckpt", s(&ckpt), "--axis", "2d", "--out", s(&out), "--layer", "dec_sic3.global.2", "--channel", "1", "--len-t", "7", "--len-f", "8"]);
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    let grid = read_csv(&out, false);
    let layers = model.s4nd_layers();
    let p = layers.iter().find(|(n, _)| n == "dec_sic3.global.2").unwrap().1.channel(&model.store, 1).unwrap();
    let mut delta = Tensor::zeros(&[7, 8]);
    delta.data_mut()[0] = 1.0;
    let y = apply_2d(&p, &delta).unwrap();
    for i in 0..7 {
        for j in 0..8 {
            let want = y.data()[i * 8 + j] - if i == 0 && j == 0 { p.d } else { 0.0 };
            assert!((grid[i][j] - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-15, "({i},{j}) {} {want}", grid[i][j]);
        }
    }
}

#[test]
fn info_reports_counts_next_to_published_figures() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let o = sicrn(&["info", "--config", s(&cfg)]);
    let (out, _) = text(&o);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.contains(&format!("parameters      {} ", tiny_model().param_count())), "{out}");
    assert!(out.contains("published 2.16 M") && out.contains("published 4.24 G/s"), "{out}");
}
