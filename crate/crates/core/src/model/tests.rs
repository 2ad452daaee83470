use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_spec(seed: u64, frames: usize, bins: usize) -> ComplexSpectrogram {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ComplexSpectrogram::zeros(frames, bins);
    for v in s.re.iter_mut().chain(s.im.iter_mut()) {
        *v = r.gen_range(-2.0..2.0);
    }
    s
}

fn small_config() -> SicrnConfig {
    SicrnConfig {
        stft: StftConfig::new(14, 5).unwrap(),
        freq_bins: 8,
        sic_widths: [2, 3],
        lstm_hidden: 6,
        s4nd_state: (2, 2),
        seed: 3,
        ..SicrnConfig::desk()
    }
}

/// Closed-form parameter total, written independently of the layer code.
fn closed_form(cfg: &SicrnConfig) -> usize {
    let (kt, kf) = cfg.ic_kernel;
    let conv = |ci: usize, co: usize| co * ci * kt * kf + co;
    let pw = |ci: usize, co: usize| co * ci + co;
    let (nt, nf) = cfg.s4nd_state;
    let passes = if cfg.freq_unidirectional { 1 } else { 2 };
    let s4nd = |w: usize| w * (6 * nt + 1) + passes * w * (6 * nf + 1) + w;
    let global = |w: usize| match cfg.global_branch {
        GlobalKind::S4nd => 4 * (s4nd(w) + pw(w, w) + 2 * w),
        GlobalKind::Inplace => 4 * conv(w, w),
    };
    let sic = |w: usize| 3 * conv(w, w) + 2 * pw(w, w) + global(w);
    let [w1, w2] = cfg.sic_widths;
    let d = w2 * cfg.freq_bins;
    let h = cfg.lstm_hidden;
    let lstm: usize = (0..cfg.lstm_layers).map(|l| 4 * h * (if l == 0 { d } else { h } + h + 1)).sum();
    conv(2, 2 * w1)
        + sic(w1)
        + conv(w1, 2 * w2)
        + sic(w2)
        + lstm
        + (h * d + d)
        + conv(w2, 2 * w2)
        + sic(w2)
        + conv(w2, 2 * w1)
        + sic(w1)
        + pw(w1, 2)
}

#[test]
fn mask_identity_and_sign() {
    let spec = random_spec(1, 4, 5);
    let mut one = ComplexSpectrogram::zeros(4, 5);
    one.re.fill(1.0);
    assert_eq!(apply_complex_mask(&one, &spec).unwrap(), spec);
    let minus = one.scaled(-1.0);
    let out = apply_complex_mask(&minus, &spec).unwrap();
    assert_eq!(out.re, spec.re.iter().map(|v| -v).collect::<Vec<_>>());
    assert_eq!(out.im, spec.im.iter().map(|v| -v).collect::<Vec<_>>());
}

#[test]
fn mask_rotation_and_annihilation() {
    let mut i = ComplexSpectrogram::zeros(1, 1);
    i.im[0] = 1.0;
    let mut x = ComplexSpectrogram::zeros(1, 1);
    x.re[0] = 1.0;
    let y = apply_complex_mask(&i, &x).unwrap();
    assert_eq!((y.re[0], y.im[0]), (0.0, 1.0));
    let z = apply_complex_mask(&ComplexSpectrogram::zeros(4, 5), &random_spec(2, 4, 5)).unwrap();
    assert!(z.re.iter().chain(&z.im).all(|&v| v == 0.0));
    assert!(apply_complex_mask(&ComplexSpectrogram::zeros(3, 5), &x).is_err());
}

#[test]
fn mask_matches_complex_arithmetic() {
    let (m, x) = (random_spec(3, 6, 7), random_spec(4, 6, 7));
    let y = apply_complex_mask(&m, &x).unwrap();
    for t in 0..6 {
        for f in 0..7 {
            let want: Complex64 = m.at(t, f) * x.at(t, f);
            assert!((y.at(t, f) - want).norm() < 1e-15);
        }
    }
}

#[test]
fn forced_unit_mask_passes_input_through() {
    let mut model = SicrnModel::new(small_config()).unwrap();
    model.store.set(model.mask_head.weight, Tensor::zeros(&[2, 2])).unwrap();
    let spec = random_spec(5, 9, 8);
    let (mask, enhanced) = model.infer(&spec).unwrap();
    assert!(mask.re.iter().all(|&v| v == 1.0) && mask.im.iter().all(|&v| v == 0.0));
    assert_eq!(enhanced, spec);
}

#[test]
fn elementwise_mask_mode() {
    let cfg = SicrnConfig { mask_apply: MaskApply::Elementwise, ..small_config() };
    let model = SicrnModel::new(cfg).unwrap();
    let spec = random_spec(6, 5, 8);
    let (mask, enhanced) = model.infer(&spec).unwrap();
    for i in 0..spec.re.len() {
        assert_eq!(enhanced.re[i], mask.re[i] * spec.re[i]);
        assert_eq!(enhanced.im[i], mask.im[i] * spec.im[i]);
    }
}

#[test]
fn zero_look_ahead_bit_exact() {
    let model = SicrnModel::new(small_config()).unwrap();
    let spec = random_spec(7, 12, 8);
    let (_, base) = model.infer(&spec).unwrap();
    for cut in [1, 5, 11] {
        let mut changed = spec.clone();
        for i in cut * 8..12 * 8 {
            changed.re[i] += 3.0;
            changed.im[i] -= 1.0;
        }
        let (_, out) = model.infer(&changed).unwrap();
        assert_eq!(&out.re[..cut * 8], &base.re[..cut * 8]);
        assert_eq!(&out.im[..cut * 8], &base.im[..cut * 8]);
        assert_ne!(&out.re[cut * 8..], &base.re[cut * 8..]);
    }
}

#[test]
fn every_layer_keeps_the_grid() {
    for global in [GlobalKind::S4nd, GlobalKind::Inplace] {
        let model = SicrnModel::new(SicrnConfig { global_branch: global, ..small_config() }).unwrap();
        let traces = model.trace(&random_spec(8, 6, 8).to_tensor()).unwrap();
        assert!(traces.len() > 20);
        for t in &traces {
            assert_eq!(&t.shape[2..], &[6, 8], "{}", t.name);
        }
        assert_eq!(traces.last().unwrap().shape, vec![1, 2, 6, 8]);
    }
}

#[test]
fn rejects_wrong_bin_count() {
    let model = SicrnModel::new(small_config()).unwrap();
    let err = model.infer(&random_spec(9, 4, 9)).unwrap_err();
    assert!(matches!(err, Error::Argument(_)));
}

#[test]
fn parameter_count_matches_closed_form() {
    let mut one = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    PointwiseConv::new(&mut one, &mut r, "p", 2, 2).unwrap();
    assert_eq!(one.param_count(), 6);
    for cfg in [
        small_config(),
        SicrnConfig { freq_unidirectional: true, ..small_config() },
        SicrnConfig { global_branch: GlobalKind::Inplace, ..small_config() },
        SicrnConfig::desk(),
    ] {
        let model = SicrnModel::new(cfg.clone()).unwrap();
        assert_eq!(model.param_count(), closed_form(&cfg));
    }
    let paper = closed_form(&SicrnConfig::paper());
    assert!((1_000_000..10_000_000).contains(&paper), "{paper}");
}

#[test]
fn initialisation_is_deterministic() {
    let a = SicrnModel::new(small_config()).unwrap();
    let b = SicrnModel::new(small_config()).unwrap();
    assert_eq!(a.store, b.store);
    let c = SicrnModel::new(SicrnConfig { seed: 4, ..small_config() }).unwrap();
    assert_ne!(a.store, c.store);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    for dtype in [Dtype::F32, Dtype::F64] {
        let model = SicrnModel::new(SicrnConfig { dtype, ..small_config() }).unwrap();
        model.save(&path).unwrap();
        let back = SicrnModel::load(&path).unwrap();
        assert_eq!(back.store, model.store);
        let spec = random_spec(10, 5, 8);
        assert_eq!(back.infer(&spec).unwrap(), model.infer(&spec).unwrap());
    }
}

#[test]
fn f32_checkpoint_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    let model = SicrnModel::new(SicrnConfig::desk()).unwrap();
    model.save(&path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    let values: usize = model.store.iter().map(|(_, t)| t.len()).sum();
    let header: usize = model
        .store
        .iter()
        .map(|(id, t)| 2 + model.store.name(id).len() + 2 + 4 * t.rank())
        .sum::<usize>()
        + 12
        + model.config.to_kv().iter().map(|(k, v)| k.len() + v.len() + 2).sum::<usize>();
    assert_eq!(size, 4 * values + header);
    // buffers add only a few values on top of the learnable ones
    assert!(values - model.param_count() < model.param_count() / 100);
}

#[test]
fn corrupted_magic_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    SicrnModel::new(small_config()).unwrap().save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(SicrnModel::load(&path), Err(Error::Format(_))));
}

#[test]
fn config_kv_round_trip_and_unknown_keys() {
    let cfg = SicrnConfig { freq_unidirectional: true, mask_apply: MaskApply::Elementwise, ..SicrnConfig::desk() };
    let kv = cfg.to_kv();
    let back = SicrnConfig::from_kv(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
    assert_eq!(back, cfg);
    let err = SicrnConfig::from_kv([("bogus", "1")]).unwrap_err();
    assert!(err.to_string().contains("bogus"));
    let err = SicrnConfig::from_kv([("lstm_hidden", "x")]).unwrap_err();
    assert!(err.to_string().contains("lstm_hidden"));
}

#[test]
fn mac_estimate_tracks_frequency() {
    let total = |cfg: &SicrnConfig| mac_report(cfg, 16_000).iter().map(|e| e.macs_per_second).sum::<f64>();
    let base = SicrnConfig::paper();
    let g = total(&base);
    assert!((1e8..1e11).contains(&g), "{g}");
    let mut double = base.clone();
    double.freq_bins = 512;
    let ratio = total(&double) / g;
    assert!((2.0..2.3).contains(&ratio), "{ratio}");
}
