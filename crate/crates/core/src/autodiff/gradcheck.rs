//! Central finite-difference checks of tape gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    /// Tape and finite-difference gradients at `worst`.
    pub worst_values: (f64, f64),
    /// Every coordinate above `tol` as `(param, element, analytic, numeric)`.
    pub failures: Vec<(usize, usize, f64, f64)>,
    /// Number of coordinates compared.
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// `|a − b| / (|a| + |b| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

fn evaluate<F>(f: &F, params: &[Tensor], index: usize) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let v = f(&tape, &leaves)?.item();
    if !v.is_finite() {
        return Err(Error::numeric(format!("non-finite objective while perturbing parameter {index}")));
    }
    Ok(v)
}

/// Compare the tape gradient of the scalar `f` with central differences at
/// every element of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |e| (p, e)))
        .collect();
    grad_check_at(f, params, &coords, h, tol)
}

/// As [`grad_check`], restricted to the given `(parameter, element)` coordinates.
pub fn grad_check_at<F>(f: F, params: &[Tensor], coords: &[(usize, usize)], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&tape, &leaves)?;
        if !out.item().is_finite() {
            return Err(Error::numeric("non-finite objective at the base point"));
        }
        tape.backward(out)?;
        leaves.iter().map(|&l| tape.grad(l)).collect()
    };
    // a power-of-two step makes `x ± h` exact for moderately sized x
    let h = 2f64.powi(h.log2().round() as i32);
    let mut per_param = vec![0.0; params.len()];
    let mut worst = (0, 0);
    let mut worst_values = (0.0, 0.0);
    let mut max_rel_error = 0.0;
    let mut failures = Vec::new();
    let mut work: Vec<Tensor> = params.to_vec();
    for &(p, e) in coords {
        let orig = work[p].data()[e];
        work[p].data_mut()[e] = orig + h;
        let up = evaluate(&f, &work, p)?;
        work[p].data_mut()[e] = orig - h;
        let down = evaluate(&f, &work, p)?;
        work[p].data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * h);
        let g = analytic[p].data()[e];
        if !g.is_finite() {
            return Err(Error::numeric(format!("non-finite analytic gradient for parameter {p}")));
        }
        let err = relative_error(g, numeric);
        per_param[p] = f64::max(per_param[p], err);
        if err >= tol {
            failures.push((p, e, g, numeric));
        }
        if err > max_rel_error {
            max_rel_error = err;
            worst = (p, e);
            worst_values = (g, numeric);
        }
    }
    Ok(GradCheckReport { per_param, max_rel_error, worst, worst_values, failures, checked: coords.len(), tol })
}
