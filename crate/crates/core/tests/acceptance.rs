//! Acceptance criteria 1–11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sicrn::autodiff::{op_gradient_suite, OP_FD_TOL};
use sicrn::dsp_io::{interior_range, istft_samples, stft_samples, StftConfig};
use sicrn::model::{mac_report, Dtype, GlobalKind, SicrnConfig, SicrnModel, PUBLISHED_MACS_PER_SECOND, PUBLISHED_PARAMS};
use sicrn::numerics::{linear_conv_fft, Complex64, Tensor};
use sicrn::s4nd::{apply_2d, oracle_pde, S4nd2d};
use sicrn::ssm::{discretize, materialize_kernel, run_recurrent, ContinuousSsm};
use sicrn::training::{
    end_to_end_grad_check, evaluate, si_sdr_metric, si_snr, train_step, AdamState, ClipScore, PlateauScheduler,
    TrainConfig, TrainData,
};
use sicrn::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn complex_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
}

fn random_ssm(rng: &mut ChaCha8Rng, n: usize, log_dt: (f64, f64)) -> Result<ContinuousSsm> {
    let a = (0..n)
        .map(|_| Complex64::new(-(10f64.powf(rng.gen_range(-2.0..1.0))), rng.gen_range(-20.0..20.0)))
        .collect();
    let scale = (n as f64).sqrt().recip();
    let c = complex_normal(rng, n).into_iter().map(|z| z * scale).collect();
    ContinuousSsm::new(a, complex_normal(rng, n), c, rng.sample(StandardNormal), rng.gen_range(log_dt.0..log_dt.1))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ssm_equivalence() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=16);
        let len = rng.gen_range(1..=512);
        let d = discretize(&random_ssm(&mut rng, n, (1e-3f64.ln(), 1e-1f64.ln()))?)?;
        let u = normal(&mut rng, len);
        let rec = run_recurrent(&d, &u)?;
        let kernel = materialize_kernel(&d, len)?;
        let mut conv = linear_conv_fft(&kernel.taps, &u)?;
        conv.truncate(len);
        for (y, x) in conv.iter_mut().zip(&u) {
            *y += d.d * x;
        }
        worst = worst.max(max_abs_diff(&rec, &conv));
    }
    Ok(Outcome { pass: worst < 1e-8, detail: format!("max abs error {worst:.2e} over 100 systems (tol 1e-8)") })
}

fn bilinear_stability() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut largest = 0.0f64;
    for _ in 0..1000 {
        let a = Complex64::new(-(10f64.powf(rng.gen_range(-3.0..3.0))), rng.gen_range(-100.0..100.0));
        let log_dt = rng.gen_range(-4.0..0.0) * 10f64.ln();
        let p = ContinuousSsm::new(vec![a], vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)], 0.0, log_dt)?;
        largest = largest.max(discretize(&p)?.a_bar[0].norm());
    }
    Ok(Outcome { pass: largest < 1.0, detail: format!("largest |A_bar| {largest:.12} over 1000 draws") })
}

fn s4nd_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let n = rng.gen_range(1..=4);
        let log_dt = (0.05f64.ln(), 0.5f64.ln());
        let time = random_ssm(&mut rng, n, log_dt)?;
        let freq = random_ssm(&mut rng, n, log_dt)?;
        let rev = if draw % 2 == 1 { Some(random_ssm(&mut rng, n, log_dt)?) } else { None };
        let p = S4nd2d::new(time, freq, rev, rng.sample(StandardNormal))?;
        let u = Tensor::new(&[8, 8], normal(&mut rng, 64))?;
        let fast = apply_2d(&p, &u)?;
        let slow = oracle_pde(&p, &u)?;
        worst = worst.max(max_abs_diff(fast.data(), slow.data()));
    }
    Ok(Outcome { pass: worst < 1e-8, detail: format!("max abs error {worst:.2e} over 20 grids of 8x8 (tol 1e-8)") })
}

fn zero_look_ahead() -> Result<Outcome> {
    let model = SicrnModel::new(SicrnConfig::desk())?;
    let bins = model.config.freq_bins;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut leaks = 0;
    for _ in 0..10 {
        let frames = rng.gen_range(8..40);
        let t = rng.gen_range(0..frames - 1);
        let x = normal(&mut rng, 2 * frames * bins);
        let mut y = x.clone();
        for c in 0..2 {
            for tt in t + 1..frames {
                for f in 0..bins {
                    y[(c * frames + tt) * bins + f] = rng.sample::<f64, _>(StandardNormal) * 10.0;
                }
            }
        }
        let (_, ex) = model.infer_batch(&Tensor::new(&[1, 2, frames, bins], x)?)?;
        let (_, ey) = model.infer_batch(&Tensor::new(&[1, 2, frames, bins], y)?)?;
        for c in 0..2 {
            for tt in 0..=t {
                let row = (c * frames + tt) * bins..(c * frames + tt + 1) * bins;
                if ex.data()[row.clone()] != ey.data()[row] {
                    leaks += 1;
                }
            }
        }
    }
    Ok(Outcome { pass: leaks == 0, detail: format!("{leaks} output frames changed over 10 (input, t) pairs") })
}

fn no_downsampling() -> Result<Outcome> {
    let mut bad = Vec::new();
    let mut layers = 0;
    for cfg in [SicrnConfig::desk(), SicrnConfig::paper()] {
        let model = SicrnModel::new(cfg)?;
        let f = model.config.freq_bins;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traces = model.trace(&Tensor::new(&[1, 2, 6, f], normal(&mut rng, 12 * f))?)?;
        layers += traces.len();
        bad.extend(traces.into_iter().filter(|l| l.shape.len() != 4 || l.shape[3] != f).map(|l| l.name));
    }
    Ok(Outcome {
        pass: bad.is_empty() && layers > 0,
        detail: format!("{layers} traced layers, frequency width changed in {bad:?}"),
    })
}

fn gradient_integrity() -> Result<Outcome> {
    let ops = op_gradient_suite(10, 6)?;
    let op_worst = ops.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let op_fail: Vec<_> = ops.iter().filter(|o| !(o.max_rel_error <= o.tol)).map(|o| o.name).collect();
    let tiny = SicrnConfig {
        stft: StftConfig { win_length: 14, hop: 5 },
        freq_bins: 8,
        sic_widths: [2, 3],
        lstm_hidden: 6,
        s4nd_state: (2, 2),
        dtype: Dtype::F64,
        ..SicrnConfig::paper()
    };
    let mut e2e_worst = 0.0f64;
    for global_branch in [GlobalKind::S4nd, GlobalKind::Inplace] {
        let r = end_to_end_grad_check(&SicrnConfig { global_branch, ..tiny.clone() }, 6, 12, 3e-5, 1e-4)?;
        e2e_worst = e2e_worst.max(r.max_rel_error);
    }
    Ok(Outcome {
        pass: op_fail.is_empty() && e2e_worst < 1e-4,
        detail: format!(
            "{} primitives max rel {op_worst:.2e} (tol {OP_FD_TOL:.0e}, failing {op_fail:?}), end-to-end max rel {e2e_worst:.2e} (tol 1e-4)",
            ops.len()
        ),
    })
}

fn stft_round_trip() -> Result<Outcome> {
    let cfg = StftConfig::new(510, 160)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = f64::INFINITY;
    for _ in 0..5 {
        let x = normal(&mut rng, 16_000);
        let spec = stft_samples(&x, &cfg)?;
        let y = istft_samples(&spec, &cfg)?;
        let r = interior_range(&cfg, cfg.n_frames(x.len()));
        lowest = lowest.min(si_sdr_metric(&y[r.clone()], &x[r])?);
    }
    Ok(Outcome { pass: lowest >= 60.0, detail: format!("lowest interior SI-SDR {lowest:.1} dB over 5 clips (min 60)") })
}

fn si_snr_properties() -> Result<Outcome> {
    let hand = si_snr(&[1.0, 1.0], &[1.0, 0.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut drift, mut saturation) = (0.0f64, f64::INFINITY);
    for _ in 0..20 {
        let s = normal(&mut rng, 1000);
        let e: Vec<f64> = s.iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let base = si_snr(&e, &s)?;
        for beta in [0.1, 3.0, 100.0] {
            let scaled: Vec<f64> = s.iter().map(|v| beta * v).collect();
            drift = drift.max((si_snr(&e, &scaled)? - base).abs());
        }
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        saturation = saturation.min(si_snr(&doubled, &s)?);
    }
    Ok(Outcome {
        pass: hand.abs() < 1e-9 && drift < 1e-9 && saturation >= 80.0,
        detail: format!("hand example {hand:.2e} dB, target-scale drift {drift:.2e} dB, doubled estimate {saturation:.1} dB"),
    })
}

fn learning_smoke() -> Result<Outcome> {
    let cfg =
        TrainConfig { clip_seconds: 0.25, train_clips: Some(4), batch_size: 4, val_clips: 0, lr: 2e-4, ..TrainConfig::default() };
    let mut model = SicrnModel::new(SicrnConfig::desk())?;
    let data = TrainData::synthetic(&cfg, 16_000);
    let batch = (0..4).map(|i| data.sample(cfg.seed, 0, i)).collect::<Result<Vec<_>>>()?;
    let gain = |s: &[ClipScore]| s.iter().map(|c| c.enhanced - c.noisy).sum::<f64>() / s.len() as f64;
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut best = gain(&evaluate(&model, &batch, cfg.target)?);
    let mut steps = 0;
    while steps < 500 && best < 3.0 {
        train_step(&mut model, &mut adam, &batch, cfg.target)?;
        steps += 1;
        if steps % 25 == 0 {
            best = best.max(gain(&evaluate(&model, &batch, cfg.target)?));
        }
    }
    Ok(Outcome { pass: best >= 3.0, detail: format!("mean improvement {best:+.2} dB after {steps} steps (min +3)") })
}

fn scheduler() -> Result<Outcome> {
    let mut s = PlateauScheduler::new(1e-3);
    let losses = [1.0, 0.9, 0.95, 0.95, 0.92, 0.91, 0.99];
    let lrs: Vec<f64> = losses.iter().map(|&l| s.step(l)).collect();
    let expected = [1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4];
    Ok(Outcome { pass: lrs == expected, detail: format!("lr trace {lrs:?}") })
}

fn reporting() -> Result<Outcome> {
    let cfg = SicrnConfig::paper();
    let params = SicrnModel::new(cfg.clone())?.param_count() as f64;
    let macs: f64 = mac_report(&cfg, 16_000).iter().map(|m| m.macs_per_second).sum();
    Ok(Outcome {
        pass: true,
        detail: format!(
            "report only: {:.2} M parameters (published {:.2} M), {:.2} G MACs/s (published {:.2} G/s)",
            params / 1e6,
            PUBLISHED_PARAMS / 1e6,
            macs / 1e9,
            PUBLISHED_MACS_PER_SECOND / 1e9
        ),
    })
}

type Check = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Check, Duration); 11] = [
        ("ssm recurrence equals convolution", ssm_equivalence, Duration::from_secs(5)),
        ("bilinear map keeps poles inside the unit circle", bilinear_stability, Duration::from_secs(1)),
        ("2-D layer matches the state recursion", s4nd_oracle, Duration::from_secs(10)),
        ("zero look-ahead", zero_look_ahead, Duration::from_secs(30)),
        ("no frequency downsampling", no_downsampling, Duration::from_secs(60)),
        ("gradient integrity", gradient_integrity, Duration::from_secs(120)),
        ("stft round trip", stft_round_trip, Duration::from_secs(5)),
        ("si-snr properties", si_snr_properties, Duration::from_secs(1)),
        ("learning smoke", learning_smoke, Duration::from_secs(600)),
        ("plateau scheduler", scheduler, Duration::from_secs(1)),
        ("size and cost", reporting, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
