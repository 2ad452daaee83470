//! Diagonal structured state-space layer.
//!
//! A continuous system `h′ = A h + B u, y = Re⟨C, h⟩ + D u` with diagonal
//! complex `A` is discretized with the bilinear transform, then either stepped
//! as a recurrence or applied as one causal convolution with its materialized
//! impulse response.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{OpKind, Var};
use crate::error::{Error, Result};
use crate::numerics::{causal_conv, Tensor};

/// Continuous-time parameters of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm {
    /// Diagonal of the state matrix.
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    /// Skip gain.
    pub d: f64,
    /// Log step size.
    pub log_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<Complex64>,
    pub b_bar: Vec<Complex64>,
    pub c_bar: Vec<Complex64>,
    pub d: f64,
}

/// Impulse response `k[t] = Re Σ_n C̄_n Ā_n^t B̄_n`, `t = 0..L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmKernel {
    pub taps: Vec<f64>,
}

impl ContinuousSsm {
    pub fn new(a: Vec<Complex64>, b: Vec<Complex64>, c: Vec<Complex64>, d: f64, log_dt: f64) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() || a.len() != c.len() {
            return Err(Error::arg(format!(
                "state vectors must share a non-zero length: A={}, B={}, C={}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c, d, log_dt })
    }

    pub fn state_size(&self) -> usize {
        self.a.len()
    }

    pub fn dt(&self) -> f64 {
        self.log_dt.exp()
    }

    /// Every eigenvalue in the open left half-plane.
    pub fn is_stable(&self) -> bool {
        self.a.iter().all(|a| a.re < 0.0)
    }
}

impl SsmKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Bilinear discretization: `Ā = (1 + Δ/2·A)/(1 − Δ/2·A)`, `B̄ = Δ·B/(1 − Δ/2·A)`, `C̄ = C`.
pub fn discretize(p: &ContinuousSsm) -> Result<DiscreteSsm> {
    let dt = p.dt();
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::numeric(format!("step size {dt} must be positive and finite")));
    }
    let mut a_bar = Vec::with_capacity(p.a.len());
    let mut b_bar = Vec::with_capacity(p.a.len());
    for (n, (&a, &b)) in p.a.iter().zip(&p.b).enumerate() {
        let z = a * (dt / 2.0);
        let den = Complex64::new(1.0, 0.0) - z;
        if den.norm() < 1e-12 {
            return Err(Error::numeric(format!(
                "bilinear map is singular for eigenvalue A[{n}] = {a} at step {dt}"
            )));
        }
        a_bar.push((Complex64::new(1.0, 0.0) + z) / den);
        b_bar.push(b * dt / den);
    }
    Ok(DiscreteSsm { a_bar, b_bar, c_bar: p.c.clone(), d: p.d })
}

/// One recurrence step: `x′ = Ā⊙x + B̄·u`, `y = Re⟨C̄, x′⟩ + D·u`.
pub fn step_recurrent(d: &DiscreteSsm, state: &[Complex64], u: f64) -> Result<(Vec<Complex64>, f64)> {
    if state.len() != d.a_bar.len() {
        return Err(Error::arg(format!(
            "state length {} does not match state size {}",
            state.len(),
            d.a_bar.len()
        )));
    }
    if state.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) || !u.is_finite() {
        return Err(Error::numeric("non-finite recurrent state or input"));
    }
    let next: Vec<Complex64> = state
        .iter()
        .zip(&d.a_bar)
        .zip(&d.b_bar)
        .map(|((&x, &a), &b)| a * x + b * u)
        .collect();
    let y = next.iter().zip(&d.c_bar).map(|(x, c)| (c * x).re).sum::<f64>() + d.d * u;
    Ok((next, y))
}

/// Run the recurrence from a zero state over the whole input.
pub fn run_recurrent(d: &DiscreteSsm, u: &[f64]) -> Result<Vec<f64>> {
    let mut state = vec![Complex64::new(0.0, 0.0); d.a_bar.len()];
    let mut y = Vec::with_capacity(u.len());
    for &uk in u {
        let (next, yk) = step_recurrent(d, &state, uk)?;
        state = next;
        y.push(yk);
    }
    Ok(y)
}

pub fn materialize_kernel(d: &DiscreteSsm, len: usize) -> Result<SsmKernel> {
    if len == 0 {
        return Err(Error::arg("kernel length must be at least 1"));
    }
    let mut power: Vec<Complex64> = d.c_bar.iter().zip(&d.b_bar).map(|(c, b)| c * b).collect();
    let mut taps = Vec::with_capacity(len);
    for t in 0..len {
        let k: f64 = power.iter().map(|p| p.re).sum();
        if !k.is_finite() {
            return Err(Error::numeric(format!("kernel overflow at tap {t}")));
        }
        taps.push(k);
        for (p, a) in power.iter_mut().zip(&d.a_bar) {
            *p *= a;
        }
    }
    Ok(SsmKernel { taps })
}

/// `y = K̄ * u + D·u`; long inputs take the FFT path.
pub fn apply_conv(d: &DiscreteSsm, u: &[f64]) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::arg("input sequence is empty"));
    }
    let kernel = materialize_kernel(d, u.len())?;
    let mut y = causal_conv(&kernel.taps, u)?;
    for (yi, ui) in y.iter_mut().zip(u) {
        *yi += d.d * ui;
    }
    Ok(y)
}

/// Diagonal initialisation `A_n = −1/2 + iπn`, `B_n = 1`, `C ~ CN(0, 1/N)`,
/// `D = 1`, `Δ` log-uniform over `dt_range`.
pub fn init_s4d_lin<R: Rng + ?Sized>(n: usize, dt_range: (f64, f64), rng: &mut R) -> Result<ContinuousSsm> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::arg(format!("state size must be even and positive, got {n}")));
    }
    let (lo, hi) = dt_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::arg(format!("invalid step range [{lo}, {hi}]")));
    }
    let a = (0..n)
        .map(|i| Complex64::new(-0.5, std::f64::consts::PI * i as f64))
        .collect();
    let b = vec![Complex64::new(1.0, 0.0); n];
    // complex normal with total variance 1/N: each part has variance 1/(2N)
    let sd = (0.5 / n as f64).sqrt();
    let c = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(sd * re, sd * im)
        })
        .collect();
    let log_dt = rng.gen_range(lo.ln()..=hi.ln());
    ContinuousSsm::new(a, b, c, 1.0, log_dt)
}

/// Learnable tape parameters of `H` independent channels with `N` states.
///
/// The real part of `A` is stored as `log(−Re A)` so every update keeps the
/// system in the left half-plane.
#[derive(Clone, Copy)]
pub struct SsmVars<'t> {
    /// `log(−Re A)`, `[H, N]`
    pub a_log_neg_re: Var<'t>,
    /// `Im A`, `[H, N]`
    pub a_im: Var<'t>,
    pub b_re: Var<'t>,
    pub b_im: Var<'t>,
    pub c_re: Var<'t>,
    pub c_im: Var<'t>,
    /// `[H]`
    pub log_dt: Var<'t>,
}

/// Flat parameter tensors for `H` channels, in [`SsmVars`] field order.
pub fn pack_channels(channels: &[ContinuousSsm]) -> Result<[Tensor; 7]> {
    let h = channels.len();
    let n = channels.first().map(|c| c.state_size()).ok_or_else(|| Error::arg("no channels"))?;
    if channels.iter().any(|c| c.state_size() != n || !c.is_stable()) {
        return Err(Error::arg("channels need a common state size and Re(A) < 0"));
    }
    let collect = |f: &dyn Fn(&ContinuousSsm, usize) -> f64| {
        let data = channels.iter().flat_map(|c| (0..n).map(move |i| f(c, i))).collect();
        Tensor::new(&[h, n], data)
    };
    Ok([
        collect(&|c, i| (-c.a[i].re).ln())?,
        collect(&|c, i| c.a[i].im)?,
        collect(&|c, i| c.b[i].re)?,
        collect(&|c, i| c.b[i].im)?,
        collect(&|c, i| c.c[i].re)?,
        collect(&|c, i| c.c[i].im)?,
        Tensor::from_vec(channels.iter().map(|c| c.log_dt).collect()),
    ])
}

/// Inverse of [`pack_channels`]; the skip gain is set to `d`.
pub fn unpack_channels(params: &[&Tensor; 7], d: &[f64]) -> Result<Vec<ContinuousSsm>> {
    let [lnr, aim, bre, bim, cre, cim, ldt] = params;
    let (h, n) = match *lnr.shape() {
        [h, n] => (h, n),
        _ => return Err(Error::arg(format!("expected [H, N] parameters, got {:?}", lnr.shape()))),
    };
    if d.len() != h || ldt.len() != h {
        return Err(Error::arg("skip / step vectors must have one entry per channel"));
    }
    (0..h)
        .map(|ch| {
            let cx = |re: &Tensor, im: &Tensor| -> Vec<Complex64> {
                (0..n).map(|i| Complex64::new(re.data()[ch * n + i], im.data()[ch * n + i])).collect()
            };
            let a = (0..n)
                .map(|i| Complex64::new(-lnr.data()[ch * n + i].exp(), aim.data()[ch * n + i]))
                .collect();
            ContinuousSsm::new(a, cx(bre, bim), cx(cre, cim), d[ch], ldt.data()[ch])
        })
        .collect()
}

struct ModeCache {
    dt: f64,
    a: Complex64,
    b: Complex64,
    c: Complex64,
    den: Complex64,
    a_bar: Complex64,
    b_bar: Complex64,
}

/// Differentiable materialization of `[H, L]` kernels from [`SsmVars`].
pub fn kernel_on_tape<'t>(p: &SsmVars<'t>, len: usize) -> Result<Var<'t>> {
    if len == 0 {
        return Err(Error::arg("kernel length must be at least 1"));
    }
    let vals: Vec<_> = [p.a_log_neg_re, p.a_im, p.b_re, p.b_im, p.c_re, p.c_im]
        .iter()
        .map(|v| v.value())
        .collect();
    let log_dt = p.log_dt.value();
    let (h, n) = match *vals[0].shape() {
        [h, n] => (h, n),
        _ => return Err(Error::arg(format!("SSM parameters must be [H, N], got {:?}", vals[0].shape()))),
    };
    if vals.iter().any(|v| v.shape() != [h, n]) || log_dt.shape() != [h] {
        return Err(Error::arg("SSM parameter shapes disagree"));
    }
    let one = Complex64::new(1.0, 0.0);
    let mut modes = Vec::with_capacity(h * n);
    for ch in 0..h {
        let dt = log_dt.data()[ch].exp();
        for i in 0..n {
            let at = |k: usize| vals[k].data()[ch * n + i];
            let a = Complex64::new(-at(0).exp(), at(1));
            let b = Complex64::new(at(2), at(3));
            let c = Complex64::new(at(4), at(5));
            let z = a * (dt / 2.0);
            let den = one - z;
            if den.norm() < 1e-12 {
                return Err(Error::numeric(format!("singular bilinear map in channel {ch}, mode {i}")));
            }
            modes.push(ModeCache { dt, a, b, c, den, a_bar: (one + z) / den, b_bar: b * dt / den });
        }
    }
    let mut out = Tensor::zeros(&[h, len]);
    for ch in 0..h {
        let row = &mut out.data_mut()[ch * len..(ch + 1) * len];
        for m in &modes[ch * n..(ch + 1) * n] {
            let mut pw = m.c * m.b_bar;
            for r in row.iter_mut() {
                *r += pw.re;
                pw *= m.a_bar;
            }
        }
    }
    if !out.all_finite() {
        return Err(Error::numeric("SSM kernel overflow"));
    }
    let ids = [
        p.a_log_neg_re.id(),
        p.a_im.id(),
        p.b_re.id(),
        p.b_im.id(),
        p.c_re.id(),
        p.c_im.id(),
        p.log_dt.id(),
    ];
    let inputs = [p.a_log_neg_re, p.a_im, p.b_re, p.b_im, p.c_re, p.c_im, p.log_dt];
    p.a_im.tape().record(
        OpKind::SsmKernel,
        &inputs,
        out,
        Box::new(move |g, sink| {
            // grads use the convention G = ∂L/∂Re + i·∂L/∂Im; for u = φ(v)
            // holomorphic, G_v = G_u · conj(φ′(v)).
            let mut grads = vec![vec![0.0; h * n]; 6];
            let mut g_logdt = vec![0.0; h];
            for ch in 0..h {
                let gr = &g.data()[ch * len..(ch + 1) * len];
                for i in 0..n {
                    let m = &modes[ch * n + i];
                    let w = m.c * m.b_bar;
                    // S1 = Σ g[t]·conj(Ā^t), S2 = Σ g[t]·t·conj(Ā^{t−1})
                    let mut s1 = Complex64::new(0.0, 0.0);
                    let mut s2 = Complex64::new(0.0, 0.0);
                    let mut prev = Complex64::new(0.0, 0.0);
                    let mut pw = one;
                    for (t, &gt) in gr.iter().enumerate() {
                        s1 += pw.conj() * gt;
                        if t > 0 {
                            s2 += prev.conj() * (gt * t as f64);
                        }
                        prev = pw;
                        pw *= m.a_bar;
                    }
                    let g_w = s1;
                    let g_abar = w.conj() * s2;
                    let g_c = g_w * m.b_bar.conj();
                    let g_bbar = g_w * m.c.conj();
                    let den2 = m.den * m.den;
                    let g_z = g_abar * (2.0 / den2).conj() + g_bbar * (m.b * m.dt / den2).conj();
                    let g_a = g_z * (m.dt / 2.0);
                    let g_b = g_bbar * (m.dt / m.den).conj();
                    let d_dt = (g_z.conj() * m.a / 2.0).re + (g_bbar.conj() * m.b / m.den).re;
                    let k = ch * n + i;
                    grads[0][k] = g_a.re * m.a.re;
                    grads[1][k] = g_a.im;
                    grads[2][k] = g_b.re;
                    grads[3][k] = g_b.im;
                    grads[4][k] = g_c.re;
                    grads[5][k] = g_c.im;
                    g_logdt[ch] += d_dt * m.dt;
                }
            }
            for (id, gv) in ids.iter().zip(&grads) {
                if let Some(buf) = sink.get(*id) {
                    for (o, v) in buf.data_mut().iter_mut().zip(gv) {
                        *o += v;
                    }
                }
            }
            if let Some(buf) = sink.get(ids[6]) {
                for (o, v) in buf.data_mut().iter_mut().zip(&g_logdt) {
                    *o += v;
                }
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(a_bar: f64) -> DiscreteSsm {
        DiscreteSsm {
            a_bar: vec![Complex64::new(a_bar, 0.0)],
            b_bar: vec![Complex64::new(1.0, 0.0)],
            c_bar: vec![Complex64::new(1.0, 0.0)],
            d: 0.0,
        }
    }

    #[test]
    fn zero_eigenvalue_maps_to_one() {
        let p = ContinuousSsm::new(vec![Complex64::new(0.0, 0.0)], vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)], 0.0, 0.1f64.ln()).unwrap();
        assert_eq!(discretize(&p).unwrap().a_bar[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn scalar_bilinear_value() {
        let p = ContinuousSsm::new(vec![Complex64::new(-1.0, 0.0)], vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)], 0.0, 0.1f64.ln()).unwrap();
        let d = discretize(&p).unwrap();
        assert!((d.a_bar[0].re - 0.95 / 1.05).abs() < 1e-12);
        assert!((d.a_bar[0].re - 0.904762).abs() < 1e-6);
        assert!((d.b_bar[0].re - 0.1 / 1.05).abs() < 1e-12);
    }

    #[test]
    fn singular_map_names_eigenvalue() {
        // 1 - (Δ/2)·A = 0 for A = 2/Δ
        let p = ContinuousSsm::new(vec![Complex64::new(20.0, 0.0)], vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)], 0.0, 0.1f64.ln()).unwrap();
        let err = discretize(&p).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("A[0]"), "{err}");
    }

    #[test]
    fn recurrence_unrolled_by_hand() {
        let d = scalar_system(0.5);
        let y = run_recurrent(&d, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let d = scalar_system(0.9);
        let (s, y) = step_recurrent(&d, &[Complex64::new(0.0, 0.0)], 0.0).unwrap();
        assert_eq!(s[0], Complex64::new(0.0, 0.0));
        assert_eq!(y, 0.0);
        let bad = step_recurrent(&d, &[Complex64::new(f64::NAN, 0.0)], 0.0);
        assert!(matches!(bad, Err(Error::Numeric(_))));
    }

    #[test]
    fn geometric_kernel() {
        let k = materialize_kernel(&scalar_system(0.5), 4).unwrap();
        assert_eq!(k.taps, vec![1.0, 0.5, 0.25, 0.125]);
        let k1 = materialize_kernel(&scalar_system(0.5), 1).unwrap();
        assert_eq!(k1.taps, vec![1.0]);
        assert!(materialize_kernel(&scalar_system(0.5), 0).is_err());
    }

    #[test]
    fn pure_skip_path() {
        let d = DiscreteSsm {
            a_bar: vec![Complex64::new(0.0, 0.0); 2],
            b_bar: vec![Complex64::new(0.0, 0.0); 2],
            c_bar: vec![Complex64::new(0.0, 0.0); 2],
            d: 1.0,
        };
        let u = vec![0.3, -2.0, 5.0, 1.0];
        assert_eq!(apply_conv(&d, &u).unwrap(), u);
    }

    #[test]
    fn delta_response_is_kernel_plus_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_s4d_lin(4, (1e-2, 1e-1), &mut rng).unwrap();
        p.d = 0.7;
        let d = discretize(&p).unwrap();
        let mut u = vec![0.0; 32];
        u[0] = 1.0;
        let y = apply_conv(&d, &u).unwrap();
        let k = materialize_kernel(&d, 32).unwrap();
        assert!((y[0] - k.taps[0] - 0.7).abs() < 1e-12);
        for t in 1..32 {
            assert!((y[t] - k.taps[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_rejects_odd_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(init_s4d_lin(3, (1e-3, 1e-1), &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn init_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p = init_s4d_lin(8, (1e-3, 1e-1), &mut rng).unwrap();
            assert!(p.a.iter().all(|a| a.re == -0.5));
            assert!((1e-3..=1e-1).contains(&p.dt()));
            let d = discretize(&p).unwrap();
            assert!(d.a_bar.iter().all(|a| a.norm() < 1.0));
            let k = materialize_kernel(&d, 4096).unwrap();
            assert!(k.taps.iter().map(|v| v * v).sum::<f64>().is_finite());
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chans: Vec<_> = (0..3).map(|_| init_s4d_lin(4, (1e-3, 1e-1), &mut rng).unwrap()).collect();
        let packed = pack_channels(&chans).unwrap();
        let refs: [&Tensor; 7] = std::array::from_fn(|i| &packed[i]);
        let back = unpack_channels(&refs, &[1.0; 3]).unwrap();
        for (a, b) in chans.iter().zip(&back) {
            assert_eq!(a.b, b.b);
            assert_eq!(a.c, b.c);
            for (x, y) in a.a.iter().zip(&b.a) {
                assert!((x - y).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn tape_kernel_matches_direct_materialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chans: Vec<_> = (0..2).map(|_| init_s4d_lin(6, (1e-2, 1e-1), &mut rng).unwrap()).collect();
        let packed = pack_channels(&chans).unwrap();
        let tape = crate::autodiff::Tape::new();
        let v: Vec<_> = packed.iter().map(|t| tape.leaf(t.clone())).collect();
        let vars = SsmVars { a_log_neg_re: v[0], a_im: v[1], b_re: v[2], b_im: v[3], c_re: v[4], c_im: v[5], log_dt: v[6] };
        let k = kernel_on_tape(&vars, 50).unwrap().value();
        for (ch, p) in chans.iter().enumerate() {
            let want = materialize_kernel(&discretize(p).unwrap(), 50).unwrap();
            for t in 0..50 {
                assert!((k.data()[ch * 50 + t] - want.taps[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chans: Vec<_> = (0..2).map(|_| init_s4d_lin(2, (1e-2, 1e-1), &mut rng).unwrap()).collect();
        let params = pack_channels(&chans).unwrap().to_vec();
        let weights = Tensor::new(&[2, 24], (0..48).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect()).unwrap();
        let report = crate::autodiff::grad_check(
            |tape, v| {
                let vars = SsmVars { a_log_neg_re: v[0], a_im: v[1], b_re: v[2], b_im: v[3], c_re: v[4], c_im: v[5], log_dt: v[6] };
                let k = kernel_on_tape(&vars, 24)?;
                k.mul(tape.constant(weights.clone()))?.sum()
            },
            &params,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn system(seed: u64, n: usize) -> DiscreteSsm {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            discretize(&init_s4d_lin(n, (1e-3, 1e-1), &mut rng).unwrap()).unwrap()
        }

        proptest! {
            #[test]
            fn recurrence_equals_convolution(seed in 0u64..1000, half in 1usize..=8,
                u in prop::collection::vec(-1.0f64..1.0, 1..=512)) {
                let d = system(seed, 2 * half);
                let a = run_recurrent(&d, &u).unwrap();
                let b = apply_conv(&d, &u).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-8);
                }
            }

            #[test]
            fn kernel_obeys_decay_bound(seed in 0u64..1000, half in 1usize..=8) {
                let d = system(seed, 2 * half);
                let k = materialize_kernel(&d, 256).unwrap();
                let rho = d.a_bar.iter().map(|a| a.norm()).fold(0.0, f64::max);
                let w = d.c_bar.iter().zip(&d.b_bar).map(|(c, b)| (c * b).norm()).fold(0.0, f64::max);
                let n = d.a_bar.len() as f64;
                for (t, v) in k.taps.iter().enumerate() {
                    prop_assert!(v.abs() <= n * w * rho.powi(t as i32) * (1.0 + 1e-9) + 1e-300);
                }
            }

            #[test]
            fn convolution_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
                uv in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..128)) {
                let d = system(seed, 4);
                let (u, v): (Vec<f64>, Vec<f64>) = uv.into_iter().unzip();
                let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
                let ym = apply_conv(&d, &mix).unwrap();
                let yu = apply_conv(&d, &u).unwrap();
                let yv = apply_conv(&d, &v).unwrap();
                for i in 0..ym.len() {
                    prop_assert!((ym[i] - alpha * yu[i] - beta * yv[i]).abs() < 1e-9);
                }
            }

            #[test]
            fn output_is_causal(seed in 0u64..1000, cut in 1usize..60,
                u in prop::collection::vec(-1.0f64..1.0, 64), noise in prop::collection::vec(-5.0f64..5.0, 64)) {
                // bit-exact on the direct path
                let d = system(seed, 4);
                let mut w = u.clone();
                w[cut..].copy_from_slice(&noise[cut..]);
                let yu = apply_conv(&d, &u).unwrap();
                let yw = apply_conv(&d, &w).unwrap();
                prop_assert_eq!(&yu[..cut], &yw[..cut]);
            }

            #[test]
            fn stable_kernel_decays(seed in 0u64..1000) {
                let d = system(seed, 4);
                let k = materialize_kernel(&d, 1 << 14).unwrap();
                let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
                prop_assert!(energy(&k.taps).is_finite());
                prop_assert!(energy(&k.taps[(1 << 14) - 64..]) <= energy(&k.taps[..64]) + 1e-12);
            }
        }
    }
}
