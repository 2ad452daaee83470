//! Central-difference checks of every differentiable primitive on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Tape, Var};
use crate::blocks::{Ctx, LstmLayer, Mode, ParamStore};
use crate::dsp_io::{istft_on_tape, StftConfig};
use crate::error::Result;
use crate::numerics::Tensor;
use crate::ssm::{init_s4d_lin, kernel_on_tape, pack_channels, SsmVars};

pub const OP_FD_STEP: f64 = 1e-6;
pub const OP_FD_TOL: f64 = 1e-5;

type Objective = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;
type Builder = fn(&mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)>;

/// Worst relative error of one primitive over all of its instances.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape and data agree")
}

fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

/// Magnitudes in `[lo, 1]` with random signs, keeping clear of kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64) -> Tensor {
    let mut t = uniform(rng, shape, lo, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 0.5, 2.0)
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn rank4(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5)]
}

/// Contract the output with fixed random weights so every output element
/// contributes to the checked scalar.
fn weighted(weights: Tensor, op: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static) -> Objective {
    Box::new(move |tape, v| {
        let y = op(tape, v)?;
        y.mul(tape.constant(weights.clone().reshaped(&y.shape())?))?.sum()
    })
}

/// Weights sized for the output of `op` at `inputs`.
fn with_weights(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    op: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
) -> Result<(Vec<Tensor>, Objective)> {
    let shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        op(&tape, &vars)?.shape()
    };
    let weights = signed(rng, &shape);
    Ok((inputs, weighted(weights, op)))
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor, op: for<'t> fn(Var<'t>) -> Result<Var<'t>>) -> Result<(Vec<Tensor>, Objective)> {
    with_weights(rng, vec![x], move |_, v| op(v[0]))
}

fn binary(rng: &mut ChaCha8Rng, a: Tensor, b: Tensor, op: for<'t> fn(Var<'t>, Var<'t>) -> Result<Var<'t>>) -> Result<(Vec<Tensor>, Objective)> {
    with_weights(rng, vec![a, b], move |_, v| op(v[0], v[1]))
}

fn case_add(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let (a, b) = (signed(rng, &s), signed(rng, &s));
    binary(rng, a, b, |a, b| a.add(b))
}

fn case_sub(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let (a, b) = (signed(rng, &s), signed(rng, &s));
    binary(rng, a, b, |a, b| a.sub(b))
}

fn case_mul(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let (a, b) = (signed(rng, &s), signed(rng, &s));
    binary(rng, a, b, |a, b| a.mul(b))
}

fn case_div(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let (a, b) = (signed(rng, &s), away_from_zero(rng, &s, 0.5));
    binary(rng, a, b, |a, b| a.div(b))
}

fn case_scale(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let c = rng.gen_range(-2.0..2.0);
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| v[0].scale(c))
}

fn case_add_scalar(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let c = rng.gen_range(-2.0..2.0);
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| v[0].add_scalar(c))
}

fn case_mul_scalar(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let (x, c) = (signed(rng, &s), signed(rng, &[1]));
    binary(rng, x, c, |x, c| x.mul_scalar(c))
}

fn case_complex_mul(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = [rng.gen_range(1..=3), 2, rng.gen_range(1..=4)];
    let (a, b) = (signed(rng, &s), signed(rng, &s));
    binary(rng, a, b, |a, b| a.complex_mul(b, 1))
}

fn case_matmul(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (a, b) = (signed(rng, &[m, k]), signed(rng, &[k, n]));
    binary(rng, a, b, |a, b| a.matmul(b))
}

fn case_linear(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let (r, k, n) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let x = signed(rng, &[2, r, k]);
    let (w, b) = (signed(rng, &[n, k]), signed(rng, &[n]));
    if rng.gen_bool(0.5) {
        with_weights(rng, vec![x, w, b], |_, v| v[0].linear(v[1], Some(v[2])))
    } else {
        with_weights(rng, vec![x, w], |_, v| v[0].linear(v[1], None))
    }
}

fn case_conv2d(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let [nb, ci, nt, nf] = rank4(rng);
    let co = rng.gen_range(1..=3);
    let (kt, kf) = (rng.gen_range(1..=2), [1, 3][rng.gen_range(0..2)]);
    let x = signed(rng, &[nb, ci, nt, nf]);
    let (w, b) = (signed(rng, &[co, ci, kt, kf]), signed(rng, &[co]));
    with_weights(rng, vec![x, w, b], |_, v| v[0].conv2d_inplace(v[1], v[2]))
}

fn case_pointwise(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let [nb, ci, nt, nf] = rank4(rng);
    let co = rng.gen_range(1..=3);
    let x = signed(rng, &[nb, ci, nt, nf]);
    let (w, b) = (signed(rng, &[co, ci]), signed(rng, &[co]));
    with_weights(rng, vec![x, w, b], |_, v| v[0].pointwise_conv(v[1], v[2]))
}

fn case_fft(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = [rng.gen_range(1..=2), 2, rng.gen_range(1..=9)];
    let x = signed(rng, &s);
    unary(rng, x, |x| x.fft(false))
}

fn case_ifft(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = [rng.gen_range(1..=2), 2, rng.gen_range(1..=9)];
    let x = signed(rng, &s);
    unary(rng, x, |x| x.fft(true))
}

fn case_slice(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let axis = rng.gen_range(0..4);
    let start = rng.gen_range(0..s[axis]);
    let len = rng.gen_range(1..=s[axis] - start);
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| v[0].slice(axis, start, len))
}

fn case_concat(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let axis = rng.gen_range(0..4);
    let mut s2 = s;
    s2[axis] = rng.gen_range(1..=3);
    let (a, b) = (signed(rng, &s), signed(rng, &s2));
    with_weights(rng, vec![a, b], move |_, v| Var::concat(&[v[0], v[1], v[0]], axis))
}

fn case_reshape(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let x = signed(rng, &s);
    let target = [s[0] * s[1], s[2] * s[3]];
    with_weights(rng, vec![x], move |_, v| v[0].reshape(&target))
}

fn case_permute(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let mut perm = [0, 1, 2, 3];
    for i in (1..4).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| v[0].permute(&perm))
}

fn case_sum(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = signed(rng, &s);
    unary(rng, x, |x| x.sum())
}

fn case_mean(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = signed(rng, &s);
    unary(rng, x, |x| x.mean())
}

fn case_sum_axis(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let axis = rng.gen_range(0..4);
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| v[0].sum_axis(axis))
}

fn case_elu(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = away_from_zero(rng, &s, 0.01);
    unary(rng, x, |x| x.elu())
}

fn case_sigmoid(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = uniform(rng, &s, -4.0, 4.0);
    unary(rng, x, |x| x.sigmoid())
}

fn case_tanh(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = uniform(rng, &s, -3.0, 3.0);
    unary(rng, x, |x| x.tanh())
}

fn case_log10(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = positive(rng, &s);
    unary(rng, x, |x| x.log10())
}

fn case_square(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = signed(rng, &s);
    unary(rng, x, |x| x.square())
}

fn case_sqrt(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = positive(rng, &s);
    unary(rng, x, |x| x.sqrt())
}

fn case_exp(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = small_shape(rng);
    let x = signed(rng, &s);
    unary(rng, x, |x| x.exp())
}

fn case_batchnorm(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let mut s = rank4(rng);
    s[0] = 2;
    let x = signed(rng, &s);
    let (g, b) = (uniform(rng, &[s[1]], 0.5, 1.5), signed(rng, &[s[1]]));
    with_weights(rng, vec![x, g, b], |_, v| Ok(v[0].batchnorm_train(v[1], v[2], 1e-5)?.0))
}

fn case_channel_mul(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let (x, c) = (signed(rng, &s), signed(rng, &[s[1]]));
    binary(rng, x, c, |x, c| x.channel_mul(c))
}

fn case_channel_add(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let (x, c) = (signed(rng, &s), signed(rng, &[s[1]]));
    binary(rng, x, c, |x, c| x.channel_add(c))
}

fn case_causal_conv(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let s = rank4(rng);
    let axis = rng.gen_range(2..=3);
    let reverse = rng.gen_bool(0.5);
    let taps = rng.gen_range(1..=s[axis] + 2);
    let (x, k) = (signed(rng, &s), signed(rng, &[s[1], taps]));
    with_weights(rng, vec![x, k], move |_, v| v[0].causal_conv_axis(v[1], axis, reverse))
}

fn case_ssm_kernel(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let n = 2 * rng.gen_range(1..=2);
    let chans = (0..rng.gen_range(1..=2)).map(|_| init_s4d_lin(n, (0.37, 1.0), rng)).collect::<Result<Vec<_>>>()?;
    let len = rng.gen_range(1..=16);
    let params = pack_channels(&chans)?.to_vec();
    with_weights(rng, params, move |_, v| {
        let vars = SsmVars { a_log_neg_re: v[0], a_im: v[1], b_re: v[2], b_im: v[3], c_re: v[4], c_im: v[5], log_dt: v[6] };
        kernel_on_tape(&vars, len)
    })
}

fn case_istft(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let cfg = StftConfig::new(12, 4)?;
    let s = [rng.gen_range(1..=2), 2, rng.gen_range(1..=6), cfg.n_bins()];
    let x = signed(rng, &s);
    with_weights(rng, vec![x], move |_, v| istft_on_tape(v[0], &cfg))
}

fn case_lstm(rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let (d, h) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let mut store = ParamStore::default();
    let layer = LstmLayer::new(&mut store, rng, "lstm", d, h)?;
    let s = [rng.gen_range(1..=2), rng.gen_range(1..=4), d];
    let mut inputs = vec![signed(rng, &s)];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    with_weights(rng, inputs, move |tape, v| {
        let ctx = Ctx::from_vars(tape, v[1..].to_vec(), Mode::Train);
        layer.forward(&ctx, v[0])
    })
}

const CASES: &[(&str, Builder)] = &[
    ("add", case_add),
    ("sub", case_sub),
    ("mul", case_mul),
    ("div", case_div),
    ("scale", case_scale),
    ("add_scalar", case_add_scalar),
    ("mul_scalar", case_mul_scalar),
    ("complex_mul", case_complex_mul),
    ("matmul", case_matmul),
    ("linear", case_linear),
    ("conv2d", case_conv2d),
    ("pointwise_conv", case_pointwise),
    ("fft", case_fft),
    ("ifft", case_ifft),
    ("slice", case_slice),
    ("concat", case_concat),
    ("reshape", case_reshape),
    ("permute", case_permute),
    ("sum", case_sum),
    ("mean", case_mean),
    ("sum_axis", case_sum_axis),
    ("elu", case_elu),
    ("sigmoid", case_sigmoid),
    ("tanh", case_tanh),
    ("log10", case_log10),
    ("square", case_square),
    ("sqrt", case_sqrt),
    ("exp", case_exp),
    ("batchnorm", case_batchnorm),
    ("channel_mul", case_channel_mul),
    ("channel_add", case_channel_add),
    ("causal_conv", case_causal_conv),
    ("ssm_kernel", case_ssm_kernel),
    ("istft", case_istft),
    ("lstm_cell", case_lstm),
];

/// Names of the checked primitives, in report order.
pub fn op_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.0).collect()
}

/// Check every primitive on `instances` random inputs each.
pub fn op_gradient_suite(instances: usize, seed: u64) -> Result<Vec<OpCheck>> {
    CASES
        .iter()
        .enumerate()
        .map(|(k, &(name, build))| {
            let mut worst = 0.0f64;
            for i in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ i as u64);
                let (inputs, objective) = build(&mut rng)?;
                let report = grad_check(&objective, &inputs, OP_FD_STEP, OP_FD_TOL)?;
                worst = worst.max(report.max_rel_error);
            }
            Ok(OpCheck { name, instances, max_rel_error: worst, tol: OP_FD_TOL })
        })
        .collect()
}
