//! Monte Carlo evaluation of a harvesting–seeding strategy on the controlled
//! diffusion.
//!
//! Between control instants the population follows an Euler–Maruyama step.
//! Singular controls are applied afterwards as bursts of `h`-sized
//! increments, one species per increment, until the strategy asks to diffuse.

use std::io::Write;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ControlAction, Grid};
use crate::model::{Model, Noise};
use crate::solver::{PolicyField, Thresholds1D};

/// A feedback rule `x ↦ action` on `[0, U]^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Action of the nearest lattice state.
    Policy { grid: Grid, policy: PolicyField },
    /// Seed below `lower`, harvest from `upper` on, judged at the nearest
    /// lattice level.
    Thresholds { grid: Grid, thresholds: Thresholds1D },
}

impl Strategy {
    pub fn from_policy(grid: Grid, policy: PolicyField) -> Result<Self> {
        if policy.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: policy.len() });
        }
        if let Some(bad) = policy.iter().find(|a| a.species().is_some_and(|i| i >= grid.dim())) {
            return Err(Error::InvalidArgument(format!("action {bad} names a species outside the model")));
        }
        Ok(Strategy::Policy { grid, policy })
    }

    pub fn from_thresholds(grid: Grid, thresholds: Thresholds1D) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
        }
        if thresholds.lower.partial_cmp(&thresholds.upper).is_none_or(|o| o.is_gt()) {
            return Err(Error::InvalidArgument(format!(
                "seeding level {} lies above harvesting level {}",
                thresholds.lower, thresholds.upper
            )));
        }
        Ok(Strategy::Thresholds { grid, thresholds })
    }

    /// Harvest the lowest-numbered nonempty species until nothing is left.
    pub fn deplete(grid: Grid) -> Self {
        let policy = (0..grid.len())
            .map(|s| {
                (0..grid.dim())
                    .find(|&i| grid.axis_index(s, i) > 0)
                    .map_or(ControlAction::Diffuse, ControlAction::Harvest)
            })
            .collect();
        Strategy::Policy { grid, policy }
    }

    /// Never intervene except where the upper face forces a harvest.
    pub fn passive(grid: Grid) -> Self {
        let policy = vec![ControlAction::Diffuse; grid.len()];
        Strategy::Policy { grid, policy }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Strategy::Policy { grid, .. } | Strategy::Thresholds { grid, .. } => grid,
        }
    }

    /// Action at `x`. Any coordinate at the upper face is harvested first,
    /// lowest species first, whatever the underlying rule says.
    pub fn action(&self, x: &[f64]) -> ControlAction {
        let grid = self.grid();
        let edge = grid.upper() - 1e-9 * grid.h();
        if grid.steps() > 0 {
            if let Some(j) = x.iter().position(|&xi| xi >= edge) {
                return ControlAction::Harvest(j);
            }
        }
        match self {
            Strategy::Policy { grid, policy } => policy[grid.nearest(x)],
            Strategy::Thresholds { grid, thresholds } => {
                let level = grid.coords(grid.nearest(x))[0];
                let slack = 1e-9 * grid.h();
                if level < thresholds.lower - slack {
                    ControlAction::Seed(0)
                } else if level >= thresholds.upper - slack {
                    ControlAction::Harvest(0)
                } else {
                    ControlAction::Diffuse
                }
            }
        }
    }
}

/// One control increment applied on a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEvent {
    pub step: usize,
    pub time: f64,
    pub action: ControlAction,
    /// State just before the increment.
    pub state: Vec<f64>,
    pub amount: f64,
}

/// A simulated controlled trajectory. Row `k` of the state arrays is the
/// post-control state at `times[k]`; row 0 is after the initial burst.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Row-major `times.len() × dim`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub payoff: f64,
    pub controls: Vec<ControlEvent>,
    /// Euler steps whose control burst touched more than one species.
    pub multi_species_steps: usize,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn harvested(&self, k: usize) -> &[f64] {
        &self.y[k * self.dim..(k + 1) * self.dim]
    }

    pub fn seeded(&self, k: usize) -> &[f64] {
        &self.z[k * self.dim..(k + 1) * self.dim]
    }

    /// Writes columns `t, X1..Xd, Y1..Yd, Z1..Zd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["X", "Y", "Z"] {
            header.extend((1..=self.dim).map(|i| format!("{prefix}{i}")));
        }
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            for part in [self.state(k), self.harvested(k), self.seeded(k)] {
                row.extend(part.iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Scenario(format!("writing path: {e}")))?;
        Ok(())
    }
}

struct Recorder {
    times: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    controls: Vec<ControlEvent>,
    multi_species_steps: usize,
}

impl Recorder {
    fn push(&mut self, t: f64, x: &[f64], y: &[f64], z: &[f64]) {
        self.times.push(t);
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
        self.z.extend_from_slice(z);
    }
}

fn check_inputs(model: &Model, strategy: &Strategy, x0: &[f64], horizon: f64, dt: f64) -> Result<()> {
    model.check_point(x0)?;
    let grid = strategy.grid();
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim() });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let upper = grid.upper();
    if let Some(bad) = x0.iter().find(|&&v| !(0.0..=upper).contains(&v)) {
        return Err(Error::InvalidArgument(format!("initial state coordinate {bad} outside [0, {upper}]")));
    }
    Ok(())
}

/// Applies the strategy's increments at time `t` until it asks to diffuse.
/// Returns the discounted payoff of the burst.
#[allow(clippy::too_many_arguments)]
fn control_burst(
    model: &Model,
    strategy: &Strategy,
    step: usize,
    t: f64,
    x: &mut [f64],
    y: &mut [f64],
    z: &mut [f64],
    mut rec: Option<&mut Recorder>,
) -> Result<f64> {
    let grid = strategy.grid();
    let h = grid.h();
    let upper = grid.upper();
    // each species can traverse the box at most once in a sensible burst
    let limit = grid.steps().max(1) * model.dim();
    let mut touched: Option<usize> = None;
    let mut several = false;
    let mut value = 0.0;
    // the truncated problem harvests anything pushed past the upper face
    for i in 0..x.len() {
        if x[i] > upper {
            let amount = x[i] - upper;
            value += model.harvest_price(x, i) * amount;
            if let Some(r) = rec.as_deref_mut() {
                r.controls.push(ControlEvent {
                    step,
                    time: t,
                    action: ControlAction::Harvest(i),
                    state: x.to_vec(),
                    amount,
                });
            }
            x[i] = upper;
            y[i] += amount;
            several |= touched.is_some_and(|j| j != i);
            touched = Some(i);
        }
    }
    for count in 0.. {
        let action = strategy.action(x);
        let Some(i) = action.species() else { break };
        if count >= limit {
            return Err(Error::RunawayPolicy { state: x.to_vec(), limit });
        }
        let amount = if action.is_harvest() {
            let a = if x[i] - h < 1e-9 * h { x[i] } else { h };
            value += model.harvest_price(x, i) * a;
            a
        } else {
            let a = h.min(upper - x[i]);
            value -= model.seed_cost(x, i) * a;
            a
        };
        if amount <= 0.0 {
            return Err(Error::OutOfGrid { state: x.to_vec(), action: action.code() });
        }
        if let Some(r) = rec.as_deref_mut() {
            r.controls.push(ControlEvent { step, time: t, action, state: x.to_vec(), amount });
        }
        if action.is_harvest() {
            x[i] = if amount == h { x[i] - h } else { 0.0 };
            y[i] += amount;
        } else {
            x[i] += amount;
            z[i] += amount;
        }
        several |= touched.is_some_and(|j| j != i);
        touched = Some(i);
    }
    if several {
        if let Some(r) = rec {
            r.multi_species_steps += 1;
        }
    }
    Ok((-model.discount() * t).exp() * value)
}

fn origin_is_absorbing(model: &Model) -> bool {
    let zero = vec![0.0; model.dim()];
    (0..model.dim()).all(|i| model.drift_at(&zero, i) == 0.0 && model.covariance_at(&zero, i, i) == 0.0)
}

/// Core path loop shared by [`simulate_path`] and [`estimate_value`].
fn run(
    model: &Model,
    strategy: &Strategy,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
    mut rec: Option<&mut Recorder>,
) -> Result<f64> {
    let d = model.dim();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut y = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let steps = (horizon / dt).round().max(1.0) as usize;
    let sqrt_dt = dt.sqrt();
    let absorbing = origin_is_absorbing(model);

    let mut payoff = control_burst(model, strategy, 0, 0.0, &mut x, &mut y, &mut z, rec.as_deref_mut())?;
    if let Some(r) = rec.as_deref_mut() {
        r.push(0.0, &x, &y, &z);
    }
    for step in 1..=steps {
        let t = step as f64 * dt;
        if absorbing && x.iter().all(|&v| v == 0.0) && strategy.action(&x) == ControlAction::Diffuse {
            // nothing moves again; keep the record on the time axis
            if let Some(r) = rec.as_deref_mut() {
                for k in step..=steps {
                    r.push(k as f64 * dt, &x, &y, &z);
                }
            }
            break;
        }
        for i in 0..d {
            drift[i] = model.drift_at(&x, i);
            xi[i] = StandardNormal.sample(&mut rng);
        }
        match model.noise() {
            Noise::Diagonal(sigma) => {
                for (i, w) in xi.iter_mut().enumerate() {
                    *w *= sigma(&x, i);
                }
            }
            Noise::Matrix(sigma) => {
                let raw = xi.clone();
                for (i, w) in xi.iter_mut().enumerate() {
                    *w = raw.iter().enumerate().map(|(j, r)| sigma(&x, i, j) * r).sum();
                }
            }
        }
        for i in 0..d {
            x[i] = (x[i] + drift[i] * dt + xi[i] * sqrt_dt).max(0.0);
        }
        payoff += control_burst(model, strategy, step, t, &mut x, &mut y, &mut z, rec.as_deref_mut())?;
        if let Some(r) = rec.as_deref_mut() {
            r.push(t, &x, &y, &z);
        }
    }
    Ok(payoff)
}

pub fn simulate_path(model: &Model, strategy: &Strategy, x0: &[f64], horizon: f64, dt: f64, seed: u64) -> Result<Path> {
    check_inputs(model, strategy, x0, horizon, dt)?;
    let mut rec = Recorder {
        times: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        controls: Vec::new(),
        multi_species_steps: 0,
    };
    let payoff = run(model, strategy, x0, horizon, dt, seed, Some(&mut rec))?;
    Ok(Path {
        dim: model.dim(),
        dt,
        horizon,
        times: rec.times,
        x: rec.x,
        y: rec.y,
        z: rec.z,
        payoff,
        controls: rec.controls,
        multi_species_steps: rec.multi_species_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub base_seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { paths: 10_000, horizon: 200.0, dt: 1e-3, base_seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    /// Upper bound on the discounted income lost by stopping at the horizon.
    pub truncation_bound: f64,
}

/// Averages the discounted payoff over independent paths; path `k` uses seed
/// `base_seed + k`.
pub fn estimate_value(
    model: &Model,
    strategy: &Strategy,
    x0: &[f64],
    opts: &EstimateOptions,
) -> Result<PayoffEstimate> {
    if opts.paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    check_inputs(model, strategy, x0, opts.horizon, opts.dt)?;
    let payoffs: Vec<f64> = (0..opts.paths)
        .into_par_iter()
        .map(|k| run(model, strategy, x0, opts.horizon, opts.dt, opts.base_seed.wrapping_add(k as u64), None))
        .collect::<Result<_>>()?;
    let n = payoffs.len() as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let std_error = if payoffs.len() > 1 {
        let var = payoffs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let zero = vec![0.0; model.dim()];
    let income_at_zero: f64 = (0..model.dim()).map(|i| model.harvest_price(&zero, i)).sum();
    let truncation_bound = (-model.discount() * opts.horizon).exp() * income_at_zero * strategy.grid().upper();
    Ok(PayoffEstimate { mean, std_error, paths: opts.paths, truncation_bound })
}

/// Discounted change in payoff from seeding `h` of species `i` and harvesting
/// it straight back at time `t`: `e^{−δt}(fᵢ − gᵢ)h` evaluated at `x`.
pub fn round_trip_payoff(model: &Model, x: &[f64], i: usize, h: f64, t: f64) -> f64 {
    let mut up = x.to_vec();
    up[i] += h;
    (-model.discount() * t).exp() * (model.harvest_price(&up, i) * h - model.seed_cost(x, i) * h)
}
