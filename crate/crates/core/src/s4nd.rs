//! Two-dimensional (time × frequency) state-space layer.
//!
//! Each axis carries its own diagonal SSM and the readout is the product of
//! the two axis readouts, so the 2-D impulse response is the outer product of
//! the two 1-D kernels and the layer reduces to two passes of 1-D causal
//! convolution. The frequency axis can additionally run a second pass from
//! high to low bins with separate parameters.

use num_complex::Complex64;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::numerics::{causal_conv, Tensor};
use crate::ssm::{discretize, kernel_on_tape, materialize_kernel, ContinuousSsm, DiscreteSsm, SsmVars};

/// Largest grid accepted by [`oracle_pde`].
pub const ORACLE_MAX_GRID: usize = 32;

/// One channel of the 2-D layer.
#[derive(Debug, Clone, PartialEq)]
pub struct S4nd2d {
    pub time: ContinuousSsm,
    /// Low → high frequency pass.
    pub freq: ContinuousSsm,
    /// High → low frequency pass; `None` makes the layer causal in both axes.
    pub freq_rev: Option<ContinuousSsm>,
    /// Skip gain.
    pub d: f64,
}

struct Discrete {
    time: DiscreteSsm,
    freq: DiscreteSsm,
    freq_rev: Option<DiscreteSsm>,
}

impl S4nd2d {
    pub fn new(time: ContinuousSsm, freq: ContinuousSsm, freq_rev: Option<ContinuousSsm>, d: f64) -> Result<Self> {
        let stable = time.is_stable() && freq.is_stable() && freq_rev.as_ref().map_or(true, |r| r.is_stable());
        if !stable {
            return Err(Error::arg("every axis SSM needs Re(A) < 0"));
        }
        if freq_rev.as_ref().is_some_and(|r| r.state_size() != freq.state_size()) {
            return Err(Error::arg("both frequency passes must share a state size"));
        }
        Ok(Self { time, freq, freq_rev, d })
    }

    pub fn is_bidirectional(&self) -> bool {
        self.freq_rev.is_some()
    }

    fn discrete(&self) -> Result<Discrete> {
        // per-axis skips live in `self.d`
        let strip = |p: &ContinuousSsm| -> Result<DiscreteSsm> {
            let mut d = discretize(p)?;
            d.d = 0.0;
            Ok(d)
        };
        Ok(Discrete {
            time: strip(&self.time)?,
            freq: strip(&self.freq)?,
            freq_rev: self.freq_rev.as_ref().map(strip).transpose()?,
        })
    }
}

fn check_grid(lt: usize, lf: usize) -> Result<()> {
    if lt == 0 || lf == 0 {
        return Err(Error::arg(format!("grid must be non-empty, got {lt}×{lf}")));
    }
    Ok(())
}

/// Causal 2-D kernel `K[i,j] = k_time[i]·k_freq[j]` as a `[L_t, L_f]` tensor.
///
/// For a bidirectional layer this is the low → high component only.
pub fn kernel_2d(p: &S4nd2d, lt: usize, lf: usize) -> Result<Tensor> {
    check_grid(lt, lf)?;
    let d = p.discrete()?;
    let kt = materialize_kernel(&d.time, lt)?.taps;
    let kf = materialize_kernel(&d.freq, lf)?.taps;
    let data = kt.iter().flat_map(|a| kf.iter().map(move |b| a * b)).collect();
    Tensor::new(&[lt, lf], data)
}

fn rows_conv(u: &mut [f64], width: usize, kernel: &[f64], reverse: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(u.len());
    for row in u.chunks_mut(width) {
        if reverse {
            row.reverse();
        }
        let mut y = causal_conv(kernel, row)?;
        if reverse {
            row.reverse();
            y.reverse();
        }
        out.extend(y);
    }
    Ok(out)
}

/// Separable causal convolution of a `[T, F]` field plus the skip term.
pub fn apply_2d(p: &S4nd2d, u: &Tensor) -> Result<Tensor> {
    let (t, f) = match *u.shape() {
        [t, f] => (t, f),
        _ => return Err(Error::arg(format!("apply_2d expects [T, F], got {:?}", u.shape()))),
    };
    let d = p.discrete()?;
    let kt = materialize_kernel(&d.time, t)?.taps;
    // time pass, column by column
    let mut mid = vec![0.0; t * f];
    let mut col = vec![0.0; t];
    for j in 0..f {
        for i in 0..t {
            col[i] = u.data()[i * f + j];
        }
        for (i, v) in causal_conv(&kt, &col)?.into_iter().enumerate() {
            mid[i * f + j] = v;
        }
    }
    let kf = materialize_kernel(&d.freq, f)?.taps;
    let mut y = rows_conv(&mut mid, f, &kf, false)?;
    if let Some(rev) = &d.freq_rev {
        let kr = materialize_kernel(rev, f)?.taps;
        for (a, b) in y.iter_mut().zip(rows_conv(&mut mid, f, &kr, true)?) {
            *a += b;
        }
    }
    for (a, b) in y.iter_mut().zip(u.data()) {
        *a += p.d * b;
    }
    Tensor::new(&[t, f], y)
}

/// Realified modes: `Re(Σ c a^t b) = Σ` over the mode and its conjugate with `c/2`.
fn conjugate_modes(d: &DiscreteSsm) -> Vec<(Complex64, Complex64, Complex64)> {
    d.a_bar
        .iter()
        .zip(&d.b_bar)
        .zip(&d.c_bar)
        .flat_map(|((&a, &b), &c)| [(a, b, c / 2.0), (a.conj(), b.conj(), c.conj() / 2.0)])
        .collect()
}

/// Brute-force state recursion of the coupled two-axis system on a grid.
///
/// Holds the full `N_t × N_f` state at every grid point and applies
/// `x[i,j] = Ā_t x[i−1,j] + Ā_f x[i,j−1] − Ā_t Ā_f x[i−1,j−1] + B̄_t B̄_f u[i,j]`,
/// reading out `y = ⟨C_t ⊗ C_f, x⟩`. Cost is `O(T·F·N_t·N_f)`; test use only.
pub fn oracle_pde(p: &S4nd2d, u: &Tensor) -> Result<Tensor> {
    let (t, f) = match *u.shape() {
        [t, f] => (t, f),
        _ => return Err(Error::arg(format!("oracle_pde expects [T, F], got {:?}", u.shape()))),
    };
    if t > ORACLE_MAX_GRID || f > ORACLE_MAX_GRID {
        return Err(Error::usage(format!(
            "oracle grid {t}×{f} exceeds {ORACLE_MAX_GRID}×{ORACLE_MAX_GRID}"
        )));
    }
    let d = p.discrete()?;
    let mut y = pde_pass(&d.time, &d.freq, u.data(), t, f, false);
    if let Some(rev) = &d.freq_rev {
        for (a, b) in y.iter_mut().zip(pde_pass(&d.time, rev, u.data(), t, f, true)) {
            *a += b;
        }
    }
    for (a, b) in y.iter_mut().zip(u.data()) {
        *a += p.d * b;
    }
    Tensor::new(&[t, f], y)
}

fn pde_pass(dt: &DiscreteSsm, df: &DiscreteSsm, u: &[f64], t: usize, f: usize, flip: bool) -> Vec<f64> {
    let mt = conjugate_modes(dt);
    let mf = conjugate_modes(df);
    let (nt, nf) = (mt.len(), mf.len());
    let zero = Complex64::new(0.0, 0.0);
    // states for the previous and current time rows, each [F][nt·nf]
    let mut prev = vec![vec![zero; nt * nf]; f];
    let mut cur = vec![vec![zero; nt * nf]; f];
    let mut y = vec![0.0; t * f];
    for i in 0..t {
        for jj in 0..f {
            let j = if flip { f - 1 - jj } else { jj };
            let ui = u[i * f + j];
            let mut acc = zero;
            for (m, &(at, bt, ct)) in mt.iter().enumerate() {
                for (n, &(af, bf, cf)) in mf.iter().enumerate() {
                    let s = m * nf + n;
                    let up = if i > 0 { prev[jj][s] } else { zero };
                    let left = if jj > 0 { cur[jj - 1][s] } else { zero };
                    let diag = if i > 0 && jj > 0 { prev[jj - 1][s] } else { zero };
                    let x = at * up + af * left - at * af * diag + bt * bf * ui;
                    cur[jj][s] = x;
                    acc += ct * cf * x;
                }
            }
            y[i * f + j] = acc.re;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    y
}

/// Tape parameters of a `C`-channel layer.
#[derive(Clone, Copy)]
pub struct S4ndVars<'t> {
    pub time: SsmVars<'t>,
    pub freq: SsmVars<'t>,
    pub freq_rev: Option<SsmVars<'t>>,
    /// `[C]`
    pub skip: Var<'t>,
}

/// Differentiable per-channel layer on `x: [B, C, T, F]`.
pub fn forward_on_tape<'t>(x: Var<'t>, p: &S4ndVars<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    let (nt, nf) = match *shape {
        [_, _, t, f] => (t, f),
        _ => return Err(Error::arg(format!("S4ND layer expects [B, C, T, F], got {shape:?}"))),
    };
    let kt = kernel_on_tape(&p.time, nt)?;
    let mid = x.causal_conv_axis(kt, 2, false)?;
    let kf = kernel_on_tape(&p.freq, nf)?;
    let mut y = mid.causal_conv_axis(kf, 3, false)?;
    if let Some(rev) = &p.freq_rev {
        let kr = kernel_on_tape(rev, nf)?;
        y = y.add(mid.causal_conv_axis(kr, 3, true)?)?;
    }
    y.add(x.channel_mul(p.skip)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::ssm::{init_s4d_lin, pack_channels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(seed: u64, n: usize, bidirectional: bool) -> S4nd2d {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let mut s = init_s4d_lin(n, (1e-2, 5e-1), &mut rng).unwrap();
            // perturb away from the structured init so all modes differ
            for a in &mut s.a {
                a.re *= 1.0 + rng.gen::<f64>();
            }
            s
        };
        let time = draw();
        let freq = draw();
        let rev = bidirectional.then(&mut draw);
        S4nd2d::new(time, freq, rev, 0.3).unwrap()
    }

    fn random_field(seed: u64, t: usize, f: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[t, f], (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn scalar_axis(a_bar: f64) -> ContinuousSsm {
        // invert the bilinear map at Δ = 1: A = 2(Ā − 1)/(Ā + 1), B chosen so B̄ = 1
        let a = 2.0 * (a_bar - 1.0) / (a_bar + 1.0);
        let b = 1.0 - a / 2.0;
        ContinuousSsm::new(vec![Complex64::new(a, 0.0)], vec![Complex64::new(b, 0.0)], vec![Complex64::new(1.0, 0.0)], 0.0, 0.0)
            .unwrap()
    }

    #[test]
    fn kernel_is_outer_product() {
        let p = layer(1, 4, false);
        let k = kernel_2d(&p, 6, 5).unwrap();
        let kt = materialize_kernel(&discretize(&p.time).unwrap(), 6).unwrap().taps;
        let kf = materialize_kernel(&discretize(&p.freq).unwrap(), 5).unwrap().taps;
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(k.data()[i * 5 + j], kt[i] * kf[j]);
            }
        }
        let row = kernel_2d(&p, 1, 5).unwrap();
        for j in 0..5 {
            assert_eq!(row.data()[j], kt[0] * kf[j]);
        }
    }

    #[test]
    fn impulse_gives_kernel_plus_skip() {
        let p = layer(2, 2, false);
        let mut u = Tensor::zeros(&[5, 4]);
        u.data_mut()[0] = 1.0;
        let y = apply_2d(&p, &u).unwrap();
        let k = kernel_2d(&p, 5, 4).unwrap();
        for (idx, (a, b)) in y.data().iter().zip(k.data()).enumerate() {
            let skip = if idx == 0 { p.d } else { 0.0 };
            assert!((a - b - skip).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_matches_oracle_on_small_grid() {
        let mut p = layer(3, 2, false);
        p.d = 0.0;
        let mut u = Tensor::zeros(&[4, 4]);
        u.data_mut()[0] = 1.0;
        let y = oracle_pde(&p, &u).unwrap();
        let k = kernel_2d(&p, 4, 4).unwrap();
        assert!(y.max_abs_diff(&k) < 1e-8);
    }

    #[test]
    fn scalar_oracle_is_geometric_double_sum() {
        let p = S4nd2d::new(scalar_axis(0.5), scalar_axis(0.25), None, 0.0).unwrap();
        let u = random_field(7, 5, 4);
        let y = oracle_pde(&p, &u).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut want = 0.0;
                for a in 0..=i {
                    for b in 0..=j {
                        want += 0.5f64.powi((i - a) as i32) * 0.25f64.powi((j - b) as i32) * u.data()[a * 4 + b];
                    }
                }
                assert!((y.data()[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_zero_input_and_size_limit() {
        let p = layer(4, 2, true);
        let y = oracle_pde(&p, &Tensor::zeros(&[3, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let big = Tensor::zeros(&[33, 2]);
        assert!(matches!(oracle_pde(&p, &big), Err(Error::Usage(_))));
    }

    #[test]
    fn separable_matches_oracle_both_conventions() {
        for seed in 0..20 {
            for bidir in [false, true] {
                let p = layer(100 + seed, 2 * (1 + seed as usize % 2), bidir);
                let u = random_field(seed, 8, 8);
                let a = apply_2d(&p, &u).unwrap();
                let b = oracle_pde(&p, &u).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-8, "seed {seed} bidir {bidir}");
            }
        }
    }

    #[test]
    fn tape_layer_matches_apply_2d() {
        let chans: Vec<S4nd2d> = (0..2).map(|s| layer(40 + s, 4, true)).collect();
        let tape = Tape::new();
        let leaves = |axis: &dyn Fn(&S4nd2d) -> ContinuousSsm| {
            let packed = pack_channels(&chans.iter().map(axis).collect::<Vec<_>>()).unwrap();
            let v: Vec<_> = packed.into_iter().map(|t| tape.leaf(t)).collect();
            SsmVars { a_log_neg_re: v[0], a_im: v[1], b_re: v[2], b_im: v[3], c_re: v[4], c_im: v[5], log_dt: v[6] }
        };
        let vars = S4ndVars {
            time: leaves(&|c| c.time.clone()),
            freq: leaves(&|c| c.freq.clone()),
            freq_rev: Some(leaves(&|c| c.freq_rev.clone().unwrap())),
            skip: tape.leaf(Tensor::from_vec(chans.iter().map(|c| c.d).collect())),
        };
        let (t, f) = (7, 6);
        let fields: Vec<Tensor> = (0..2).map(|c| random_field(90 + c, t, f)).collect();
        let x = Tensor::new(&[1, 2, t, f], fields.iter().flat_map(|u| u.data().to_vec()).collect()).unwrap();
        let y = forward_on_tape(tape.leaf(x), &vars).unwrap().value();
        for (c, (p, u)) in chans.iter().zip(&fields).enumerate() {
            let want = apply_2d(p, u).unwrap();
            let got = &y.data()[c * t * f..(c + 1) * t * f];
            for (a, b) in got.iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn linear_and_homogeneous(seed in 0u64..500, alpha in -3.0f64..3.0, bidir in any::<bool>()) {
                let p = layer(seed, 4, bidir);
                let u = random_field(seed + 1, 9, 7);
                let v = random_field(seed + 2, 9, 7);
                let mix = u.zip_map(&v, |a, b| alpha * a + b);
                let ym = apply_2d(&p, &mix).unwrap();
                let yu = apply_2d(&p, &u).unwrap();
                let yv = apply_2d(&p, &v).unwrap();
                let want = yu.zip_map(&yv, |a, b| alpha * a + b);
                prop_assert!(ym.max_abs_diff(&want) < 1e-10);
            }

            #[test]
            fn time_causal_bit_exact(seed in 0u64..500, cut in 1usize..12, bidir in any::<bool>()) {
                let p = layer(seed, 4, bidir);
                let u = random_field(seed, 12, 8);
                let mut w = u.clone();
                for v in &mut w.data_mut()[cut * 8..] {
                    *v = 10.0 - *v;
                }
                let yu = apply_2d(&p, &u).unwrap();
                let yw = apply_2d(&p, &w).unwrap();
                prop_assert_eq!(&yu.data()[..cut * 8], &yw.data()[..cut * 8]);
            }

            #[test]
            fn unidirectional_is_frequency_causal(seed in 0u64..500, cut in 1usize..8) {
                let p = layer(seed, 4, false);
                let u = random_field(seed, 6, 8);
                let mut w = u.clone();
                for i in 0..6 {
                    for j in cut..8 {
                        w.data_mut()[i * 8 + j] += 1.0;
                    }
                }
                let yu = apply_2d(&p, &u).unwrap();
                let yw = apply_2d(&p, &w).unwrap();
                for i in 0..6 {
                    prop_assert_eq!(&yu.data()[i * 8..i * 8 + cut], &yw.data()[i * 8..i * 8 + cut]);
                }
            }
        }
    }
}
