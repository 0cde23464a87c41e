//! Truncated lattice and the locally consistent approximating Markov chain.
//!
//! A diffusion step from `x` moves to a lattice neighbour with the upwind
//! probabilities built from `a = σσᵀ` and the drift, and advances the clock
//! by `Δt = h² / Q_h(x)`. Control steps move one species by exactly `±h` and
//! take no time.

use std::borrow::Cow;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

/// Probability slack tolerated before a stencil weight is declared invalid.
const PROBABILITY_SLACK: f64 = 1e-12;

/// The lattice `{0, h, 2h, …, U}^d` with a row-major flat index (the last
/// species varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    h: f64,
    upper: f64,
    dim: usize,
    steps: usize,
    len: usize,
    strides: Vec<usize>,
}

impl Grid {
    pub const DEFAULT_STATE_CAP: u128 = 100_000_000;

    pub fn new(h: f64, upper: f64, dim: usize) -> Result<Self> {
        Self::with_cap(h, upper, dim, Self::DEFAULT_STATE_CAP)
    }

    pub fn with_cap(h: f64, upper: f64, dim: usize, cap: u128) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {h}")));
        }
        if !(upper.is_finite() && upper >= 0.0) {
            return Err(Error::InvalidArgument(format!("grid bound must be non-negative, got {upper}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("grid dimension must be positive".into()));
        }
        let ratio = upper / h;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::NonIntegralGrid { h, upper });
        }
        let steps = steps as usize;
        let per_axis = steps as u128 + 1;
        let states = per_axis.checked_pow(dim as u32).unwrap_or(u128::MAX);
        if states > cap {
            return Err(Error::GridTooLarge { states, cap });
        }
        let len = states as usize;
        let mut strides = vec![1usize; dim];
        for axis in (0..dim.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * (steps + 1);
        }
        Ok(Self { h, upper, dim, steps, len, strides })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `U / h`, the largest index along each axis.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, k: &[usize]) -> usize {
        debug_assert_eq!(k.len(), self.dim);
        k.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    /// Index of `flat` along `axis`.
    #[inline]
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % (self.steps + 1)
    }

    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        for (axis, k) in out.iter_mut().enumerate() {
            *k = self.axis_index(flat, axis);
        }
    }

    pub fn multi_index_vec(&self, flat: usize) -> Vec<usize> {
        let mut k = vec![0; self.dim];
        self.multi_index(flat, &mut k);
        k
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        for (axis, x) in out.iter_mut().enumerate() {
            *x = self.axis_index(flat, axis) as f64 * self.h;
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.point(flat, &mut x);
        x
    }

    /// Neighbour one lattice step up (`up = true`) or down along `axis`.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, up: bool) -> Option<usize> {
        let k = self.axis_index(flat, axis);
        if up {
            (k < self.steps).then(|| flat + self.strides[axis])
        } else {
            (k > 0).then(|| flat - self.strides[axis])
        }
    }

    /// Smallest species sitting at the truncation bound, which must be
    /// harvested before anything else happens.
    #[inline]
    pub fn forced_species(&self, flat: usize) -> Option<usize> {
        if self.steps == 0 {
            return None;
        }
        (0..self.dim).find(|&axis| self.axis_index(flat, axis) == self.steps)
    }

    /// Nearest lattice state to `x`, clamping coordinates into `[0, U]`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        x.iter()
            .zip(&self.strides)
            .map(|(&xi, s)| {
                let k = (xi / self.h).round();
                let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(self.steps) };
                k * s
            })
            .sum()
    }

    /// Lattice state at `x` if `x` is a lattice point up to rounding.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let flat = self.nearest(x);
        let on_lattice = x
            .iter()
            .enumerate()
            .all(|(axis, &xi)| (xi - self.axis_index(flat, axis) as f64 * self.h).abs() <= 1e-9 * self.h);
        on_lattice.then_some(flat)
    }

    /// True when `coarse` is a sublattice of `self`.
    pub fn refines(&self, coarse: &Grid) -> bool {
        if self.dim != coarse.dim || (self.upper - coarse.upper).abs() > 1e-9 * self.upper.max(1.0) {
            return false;
        }
        let ratio = coarse.h / self.h;
        (ratio - ratio.round()).abs() < 1e-9 * ratio && ratio.round() >= 1.0
    }

    /// Lattice state of `self` at the location of state `flat` of `coarse`.
    pub fn embed(&self, coarse: &Grid, flat: usize) -> Option<usize> {
        self.locate(&coarse.coords(flat))
    }
}

/// Builds `{0, h, …, U}^d`.
pub fn build_grid(h: f64, upper: f64, dim: usize) -> Result<Grid> {
    Grid::new(h, upper, dim)
}

/// One step of the controlled chain. Species are numbered from zero here;
/// [`ControlAction::code`] gives the one-based signed code used in output
/// files (`i` harvests species `i`, `−i` seeds it, `0` lets the population
/// diffuse).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ControlAction {
    #[default]
    Diffuse,
    Harvest(usize),
    Seed(usize),
}

impl ControlAction {
    pub fn code(&self) -> i32 {
        match *self {
            ControlAction::Diffuse => 0,
            ControlAction::Harvest(i) => i as i32 + 1,
            ControlAction::Seed(i) => -(i as i32 + 1),
        }
    }

    pub fn from_code(code: i32, dim: usize) -> Result<Self> {
        let species = code.unsigned_abs() as usize;
        if species > dim {
            return Err(Error::InvalidArgument(format!("action code {code} is outside {{-{dim}, …, {dim}}}")));
        }
        Ok(match code.signum() {
            0 => ControlAction::Diffuse,
            1 => ControlAction::Harvest(species - 1),
            _ => ControlAction::Seed(species - 1),
        })
    }

    pub fn species(&self) -> Option<usize> {
        match *self {
            ControlAction::Diffuse => None,
            ControlAction::Harvest(i) | ControlAction::Seed(i) => Some(i),
        }
    }

    pub fn is_seed(&self) -> bool {
        matches!(self, ControlAction::Seed(_))
    }

    pub fn is_harvest(&self) -> bool {
        matches!(self, ControlAction::Harvest(_))
    }
}

impl fmt::Display for ControlAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Outcome of a harvest or seed step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub target: usize,
    pub harvested: Vec<f64>,
    pub seeded: Vec<f64>,
}

/// Applies a control action to lattice state `flat`.
pub fn control_transition(grid: &Grid, flat: usize, action: ControlAction) -> Result<ControlStep> {
    let out_of_grid = || Error::OutOfGrid { state: grid.coords(flat), action: action.code() };
    let (species, up) = match action {
        ControlAction::Diffuse => return Err(Error::InvalidArgument("diffusion is not a control step".into())),
        ControlAction::Harvest(i) => (i, false),
        ControlAction::Seed(i) => (i, true),
    };
    if species >= grid.dim() || flat >= grid.len() {
        return Err(out_of_grid());
    }
    let target = grid.neighbor(flat, species, up).ok_or_else(out_of_grid)?;
    let mut moved = vec![0.0; grid.dim()];
    moved[species] = grid.h();
    let zero = vec![0.0; grid.dim()];
    Ok(if up {
        ControlStep { target, harvested: zero, seeded: moved }
    } else {
        ControlStep { target, harvested: moved, seeded: zero }
    })
}

/// `Q_h(x) = Σ aᵢᵢ − ½ Σ_{i≠j} |aᵢⱼ| + h Σ |bᵢ|`.
pub fn q_factor(model: &Model, x: &[f64], h: f64) -> Result<f64> {
    model.check_point(x)?;
    let d = model.dim();
    let mut q = 0.0;
    for i in 0..d {
        q += model.covariance_at(x, i, i) + h * model.drift_at(x, i).abs();
        for j in 0..d {
            if j != i {
                q -= 0.5 * model.covariance_at(x, i, j).abs();
            }
        }
    }
    if q < 0.0 || q.is_nan() {
        return Err(Error::NegativeQ { state: x.to_vec(), value: q });
    }
    Ok(q)
}

/// A weighted edge of the diffusion stencil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub target: usize,
    pub prob: f64,
}

/// Diffusion step out of a lattice state.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionStep {
    /// `Q_h(x) = 0`: no drift and no noise, the state never moves on its own.
    Degenerate,
    Step {
        q: f64,
        dt: f64,
        moves: Vec<Move>,
        /// Some stencil mass would have left `[0, U]^d` and was put on the
        /// self-loop instead.
        clamped: bool,
    },
}

struct StencilMeta {
    q: f64,
    clamped: bool,
}

/// Computes the diffusion stencil of `flat`, merged by target and sorted.
fn stencil(model: &Model, grid: &Grid, flat: usize, moves: &mut Vec<Move>) -> Result<Option<StencilMeta>> {
    let d = grid.dim();
    let x = grid.coords(flat);
    let h = grid.h();
    let q = q_factor(model, &x, h)?;
    moves.clear();
    if q == 0.0 {
        return Ok(None);
    }
    let mut clamped = false;
    let check = |p: f64| -> Result<f64> {
        if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) {
            return Err(Error::InvalidProbability { state: x.clone(), value: p });
        }
        Ok(p.clamp(0.0, 1.0))
    };
    let mut push = |target: Option<usize>, p: f64, moves: &mut Vec<Move>| {
        if p == 0.0 {
            return;
        }
        let target = target.unwrap_or_else(|| {
            clamped = true;
            flat
        });
        moves.push(Move { target, prob: p });
    };

    for i in 0..d {
        let b = model.drift_at(&x, i);
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| model.covariance_at(&x, i, j).abs()).sum();
        let base = model.covariance_at(&x, i, i) / 2.0 - off / 2.0;
        let up = check((base + b.max(0.0) * h) / q)?;
        let down = check((base + (-b).max(0.0) * h) / q)?;
        push(grid.neighbor(flat, i, true), up, moves);
        push(grid.neighbor(flat, i, false), down, moves);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let a = model.covariance_at(&x, i, j);
            let same = check(a.max(0.0) / (2.0 * q))?;
            let cross = check((-a).max(0.0) / (2.0 * q))?;
            let diag = |ui: bool, uj: bool| grid.neighbor(flat, i, ui).and_then(|s| grid.neighbor(s, j, uj));
            push(diag(true, true), same, moves);
            push(diag(false, false), same, moves);
            push(diag(true, false), cross, moves);
            push(diag(false, true), cross, moves);
        }
    }
    moves.sort_by_key(|m| m.target);
    moves.dedup_by(|next, kept| {
        if next.target == kept.target {
            kept.prob += next.prob;
            true
        } else {
            false
        }
    });
    Ok(Some(StencilMeta { q, clamped }))
}

/// The diffusion step out of lattice state `flat`, computed on demand.
pub fn diffusion_transitions(model: &Model, grid: &Grid, flat: usize) -> Result<DiffusionStep> {
    if model.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim() });
    }
    let mut moves = Vec::new();
    Ok(match stencil(model, grid, flat, &mut moves)? {
        None => DiffusionStep::Degenerate,
        Some(StencilMeta { q, clamped }) => DiffusionStep::Step { q, dt: grid.h() * grid.h() / q, moves, clamped },
    })
}

/// Whether stencils are stored or recomputed each time they are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Precomputed,
    OnDemand,
}

enum Storage {
    Precomputed { offsets: Vec<usize>, moves: Vec<Move> },
    OnDemand { model: Model },
}

/// The diffusion part of the approximating chain over a whole grid.
pub struct TransitionKernel {
    grid: Grid,
    q: Vec<f64>,
    clamped: Vec<bool>,
    /// `exp(−δ Δt(x))`, zero at degenerate states.
    discount_factor: Vec<f64>,
    storage: Storage,
}

impl fmt::Debug for TransitionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionKernel")
            .field("states", &self.q.len())
            .field("on_demand", &matches!(self.storage, Storage::OnDemand { .. }))
            .finish_non_exhaustive()
    }
}

impl TransitionKernel {
    pub fn build(model: &Model, grid: &Grid) -> Result<Self> {
        Self::build_with(model, grid, KernelMode::Precomputed)
    }

    pub fn build_with(model: &Model, grid: &Grid, mode: KernelMode) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim() });
        }
        let per_state: Vec<(f64, bool, Vec<Move>)> = (0..grid.len())
            .into_par_iter()
            .map_init(Vec::new, |scratch, flat| {
                let meta = stencil(model, grid, flat, scratch)?;
                let keep = match mode {
                    KernelMode::Precomputed => scratch.clone(),
                    KernelMode::OnDemand => Vec::new(),
                };
                Ok(match meta {
                    None => (0.0, false, keep),
                    Some(StencilMeta { q, clamped }) => (q, clamped, keep),
                })
            })
            .collect::<Result<_>>()?;

        let h2 = grid.h() * grid.h();
        let delta = model.discount();
        let mut q = Vec::with_capacity(grid.len());
        let mut clamped = Vec::with_capacity(grid.len());
        let mut discount_factor = Vec::with_capacity(grid.len());
        let mut offsets = Vec::with_capacity(grid.len() + 1);
        let mut moves = Vec::new();
        offsets.push(0);
        for (qs, cl, mv) in per_state {
            q.push(qs);
            clamped.push(cl);
            discount_factor.push(if qs > 0.0 { (-delta * h2 / qs).exp() } else { 0.0 });
            moves.extend(mv);
            offsets.push(moves.len());
        }
        let storage = match mode {
            KernelMode::Precomputed => Storage::Precomputed { offsets, moves },
            KernelMode::OnDemand => Storage::OnDemand { model: model.clone() },
        };
        Ok(Self { grid: grid.clone(), q, clamped, discount_factor, storage })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q(&self, flat: usize) -> f64 {
        self.q[flat]
    }

    pub fn is_degenerate(&self, flat: usize) -> bool {
        self.q[flat] == 0.0
    }

    /// Interpolation interval `h² / Q_h(x)`; `None` at degenerate states.
    pub fn dt(&self, flat: usize) -> Option<f64> {
        let q = self.q[flat];
        (q > 0.0).then(|| self.grid.h() * self.grid.h() / q)
    }

    /// Smallest interpolation interval over non-degenerate states.
    pub fn dt_min(&self) -> Option<f64> {
        let q_max = self.q.iter().copied().fold(0.0, f64::max);
        (q_max > 0.0).then(|| self.grid.h() * self.grid.h() / q_max)
    }

    #[inline]
    pub fn discount_factor(&self, flat: usize) -> f64 {
        self.discount_factor[flat]
    }

    pub fn clamped(&self, flat: usize) -> bool {
        self.clamped[flat]
    }

    pub fn clamp_flags(&self) -> &[bool] {
        &self.clamped
    }

    /// Stencil of `flat`; empty at degenerate states.
    #[inline]
    pub fn moves(&self, flat: usize) -> Cow<'_, [Move]> {
        match &self.storage {
            Storage::Precomputed { offsets, moves } => Cow::Borrowed(&moves[offsets[flat]..offsets[flat + 1]]),
            Storage::OnDemand { model } => {
                let mut moves = Vec::new();
                stencil(model, &self.grid, flat, &mut moves).expect("stencil was validated when the kernel was built");
                Cow::Owned(moves)
            }
        }
    }

    /// `Σ_y p(x, y) V(y)`.
    #[inline]
    pub fn expectation(&self, flat: usize, values: &[f64]) -> f64 {
        self.moves(flat).iter().map(|m| m.prob * values[m.target]).sum()
    }
}
