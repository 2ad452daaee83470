//! Network building blocks and the parameter / forward-pass plumbing they share.

mod layers;
mod params;
mod sic;

use std::cell::RefCell;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};

pub use layers::{BatchNorm, Dense, InplaceConv2d, LstmLayer, LstmStack, PointwiseConv};
pub use params::{ParamId, ParamStore};
pub use sic::{GlobalBranch, S4ndBlock, S4ndLayer, SicBlock, SsmParamIds, DT_INIT, GLOBAL_LAYERS, TRUNK_LAYERS};

/// Batch-norm behaviour and whether running statistics are collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated afterwards.
    Train,
    /// Running statistics as a fixed affine map.
    Inference,
}

/// Output shape of one layer in a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Batch statistics gathered by one batch-norm layer during a training pass.
#[derive(Debug, Clone)]
pub struct StatsUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats,
}

/// Per-forward state: the parameters as tape variables, the mode, and the
/// layer trace used to check that no layer changes the time-frequency grid.
pub struct Ctx<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
    mode: Mode,
    grid: Option<(usize, usize)>,
    trace: RefCell<Vec<LayerTrace>>,
    stats: RefCell<Vec<StatsUpdate>>,
}

impl<'t> Ctx<'t> {
    /// Put every stored tensor on `tape`; trainable ones become leaves when
    /// `requires_grad`.
    pub fn new(tape: &'t Tape, store: &ParamStore, mode: Mode, requires_grad: bool) -> Self {
        let vars = store
            .iter()
            .map(|(id, t)| {
                if requires_grad && store.is_trainable(id) {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::from_vars(tape, vars, mode)
    }

    /// Use caller-provided variables, one per store entry in store order.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var<'t>>, mode: Mode) -> Self {
        Self { tape, vars, mode, grid: None, trace: RefCell::new(Vec::new()), stats: RefCell::new(Vec::new()) }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Grid that every traced `[B, C, T, F]` output must keep.
    pub fn set_grid(&mut self, frames: usize, bins: usize) {
        self.grid = Some((frames, bins));
    }

    /// Record a layer output, rejecting any change of `T` or `F`.
    pub fn trace(&self, name: &str, v: Var<'t>) -> Result<()> {
        let shape = v.shape();
        if let (Some((t, f)), [_, _, vt, vf]) = (self.grid, shape.as_slice()) {
            if (*vt, *vf) != (t, f) {
                return Err(Error::numeric(format!(
                    "layer {name} changed the grid from {t}×{f} to {vt}×{vf}"
                )));
            }
        }
        self.trace.borrow_mut().push(LayerTrace { name: name.to_string(), shape });
        Ok(())
    }

    pub fn traces(&self) -> Vec<LayerTrace> {
        self.trace.borrow().clone()
    }

    fn push_stats(&self, update: StatsUpdate) {
        self.stats.borrow_mut().push(update);
    }

    pub fn take_stats(&self) -> Vec<StatsUpdate> {
        std::mem::take(&mut *self.stats.borrow_mut())
    }
}

/// Fold batch statistics into the running estimates.
pub fn apply_stats(store: &mut ParamStore, updates: &[StatsUpdate]) {
    for u in updates {
        let m = u.momentum;
        for (r, s) in store.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (1.0 - m) * *r + m * s;
        }
        for (r, s) in store.get_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = (1.0 - m) * *r + m * s;
        }
    }
}
