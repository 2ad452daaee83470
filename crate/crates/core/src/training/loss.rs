//! Scale-invariant SNR as a value, a metric and a tape loss.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Guard added to both energies so perfect and orthogonal estimates stay finite.
pub const SI_SNR_EPS: f64 = 1e-8;

fn check(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() || target.is_empty() {
        return Err(Error::arg(format!(
            "si_snr needs equal non-empty lengths, got {} and {}",
            estimate.len(),
            target.len()
        )));
    }
    let energy: f64 = target.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::arg("si_snr target is all zero"));
    }
    Ok(energy)
}

/// `10·log10((‖s_t‖² + ε) / (‖ŝ − s_t‖² + ε))` with `s_t = (⟨ŝ,s⟩/‖s‖²)·s`.
pub fn si_snr(estimate: &[f64], target: &[f64]) -> Result<f64> {
    let energy = check(estimate, target)?;
    let alpha = estimate.iter().zip(target).map(|(a, b)| a * b).sum::<f64>() / energy;
    let (mut num, mut den) = (0.0, 0.0);
    for (e, s) in estimate.iter().zip(target) {
        let st = alpha * s;
        num += st * st;
        den += (e - st) * (e - st);
    }
    Ok(10.0 * ((num + SI_SNR_EPS) / (den + SI_SNR_EPS)).log10())
}

/// Evaluation alias of [`si_snr`], in dB.
pub fn si_sdr_metric(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    si_snr(estimate, reference)
}

/// Per-row SI-SNR of a `[B, L]` estimate against constant `[B, L]` targets; returns `[1]` per row.
pub fn si_snr_on_tape<'t>(estimate: Var<'t>, target: &Tensor) -> Result<Vec<Var<'t>>> {
    let shape = estimate.shape();
    if shape.len() != 2 || shape.as_slice() != target.shape() {
        return Err(Error::arg(format!("si_snr_on_tape: estimate {shape:?} vs target {:?}", target.shape())));
    }
    let (nb, len) = (shape[0], shape[1]);
    let tape = estimate.tape();
    (0..nb)
        .map(|b| {
            let row = &target.data()[b * len..(b + 1) * len];
            let energy = check(row, row)?;
            let s = tape.constant(Tensor::new(&[1, len], row.to_vec())?);
            let e = estimate.slice(0, b, 1)?;
            let alpha = e.mul(s)?.sum()?.scale(1.0 / energy)?;
            let st = s.mul_scalar(alpha)?;
            let num = st.square()?.sum()?.add_scalar(SI_SNR_EPS)?;
            let den = e.sub(st)?.square()?.sum()?.add_scalar(SI_SNR_EPS)?;
            num.div(den)?.log10()?.scale(10.0)
        })
        .collect()
}

/// Negative batch-mean SI-SNR.
pub fn loss_on_tape<'t>(estimate: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    let rows = si_snr_on_tape(estimate, target)?;
    let n = rows.len() as f64;
    let mut total = rows[0];
    for r in &rows[1..] {
        total = total.add(*r)?;
    }
    total.scale(-1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example_is_zero_db() {
        assert!(si_snr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scaled_estimate_saturates() {
        let s = [0.3, -1.0, 2.0, 0.5];
        let est: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(si_snr(&est, &s).unwrap() >= 80.0);
        assert!(si_sdr_metric(&s, &s).unwrap() >= 80.0);
    }

    #[test]
    fn orthogonal_estimate_hits_the_floor() {
        let v = si_snr(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(v <= -80.0, "{v}");
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(si_snr(&[1.0], &[0.0]), Err(Error::Argument(_))));
        assert!(si_snr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_snr(&[], &[]).is_err());
    }

    #[test]
    fn time_shift_degrades_metric() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..400).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut shifted = vec![0.0];
        shifted.extend_from_slice(&s[..399]);
        assert!(si_sdr_metric(&shifted, &s).unwrap() < si_sdr_metric(&s, &s).unwrap());
    }

    #[test]
    fn tape_value_matches_and_gradient_checks() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let est = Tensor::new(&[2, 16], (0..32).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let tgt = Tensor::new(&[2, 16], (0..32).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let tape = Tape::new();
        let l = loss_on_tape(tape.leaf(est.clone()), &tgt).unwrap().item();
        let want = -(si_snr(&est.data()[..16], &tgt.data()[..16]).unwrap()
            + si_snr(&est.data()[16..], &tgt.data()[16..]).unwrap())
            / 2.0;
        assert!((l - want).abs() < 1e-12);
        let report = grad_check(|_, p| loss_on_tape(p[0], &tgt), &[est], 1e-6, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn perfect_estimate_gives_strongly_negative_loss() {
        let t = Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let tape = Tape::new();
        assert!(loss_on_tape(tape.constant(t.clone()), &t).unwrap().item() <= -80.0);
    }

    proptest! {
        #[test]
        fn invariant_to_target_scale(
            seed in 0u64..1000,
            beta in prop::sample::select(vec![0.1, 3.0, 100.0]),
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = s.iter().map(|v| v + r.gen_range(-0.5..0.5)).collect();
            let bs: Vec<f64> = s.iter().map(|v| beta * v).collect();
            prop_assert!((si_snr(&e, &bs).unwrap() - si_snr(&e, &s).unwrap()).abs() < 1e-9);
        }
    }
}
