//! Value iteration for the controlled chain.
//!
//! At every lattice state the Bellman operator compares letting the
//! population diffuse for one interpolation interval against harvesting or
//! seeding a single species by `h`. States with a coordinate at the
//! truncation bound may only harvest the lowest such species.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ControlAction, Grid, TransitionKernel};
use crate::model::Model;

/// Discounted value per lattice state, indexed by the grid's flat index.
pub type ValueField = Vec<f64>;

/// Chosen action per lattice state.
pub type PolicyField = Vec<ControlAction>;

/// Candidates closer than this are considered tied.
pub const TIE_EPS: f64 = 1e-14;

/// `V₀(x) = Σᵢ fᵢ(x) xᵢ`, the payoff of harvesting everything at once.
pub fn current_harvest_potential(model: &Model, grid: &Grid) -> ValueField {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|s| {
            grid.point(s, &mut x);
            (0..grid.dim()).map(|i| model.harvest_price(&x, i) * x[i]).sum()
        })
        .collect()
}

/// Actions admissible at `flat`, in tie-break priority order: diffusion,
/// then harvests by species, then seedings by species.
pub fn admissible_actions(grid: &Grid, flat: usize) -> impl Iterator<Item = ControlAction> + '_ {
    let forced = grid.forced_species(flat);
    let d = grid.dim();
    let free = forced.is_none();
    let forced_iter = forced.map(ControlAction::Harvest).into_iter();
    let diffuse = free.then_some(ControlAction::Diffuse).into_iter();
    let harvests = (0..d).filter(move |&i| free && grid.axis_index(flat, i) > 0).map(ControlAction::Harvest);
    let seeds = (0..d).filter(move |&i| free && grid.axis_index(flat, i) < grid.steps()).map(ControlAction::Seed);
    forced_iter.chain(diffuse).chain(harvests).chain(seeds)
}

/// Bellman operator of one (model, grid, kernel) triple with the per-state
/// control payoffs `fᵢ(x)h` and `gᵢ(x)h` tabulated.
pub struct BellmanOperator<'a> {
    grid: &'a Grid,
    kernel: &'a TransitionKernel,
    income: Vec<f64>,
    cost: Vec<f64>,
}

impl<'a> BellmanOperator<'a> {
    pub fn new(model: &Model, grid: &'a Grid, kernel: &'a TransitionKernel) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim() });
        }
        if kernel.grid() != grid {
            return Err(Error::InvalidArgument("kernel was built on a different grid".into()));
        }
        let d = grid.dim();
        let h = grid.h();
        let mut income = Vec::with_capacity(grid.len() * d);
        let mut cost = Vec::with_capacity(grid.len() * d);
        let mut x = vec![0.0; d];
        for s in 0..grid.len() {
            grid.point(s, &mut x);
            for i in 0..d {
                income.push(model.harvest_price(&x, i) * h);
                cost.push(model.seed_cost(&x, i) * h);
            }
        }
        Ok(Self { grid, kernel, income, cost })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    /// Value of taking `action` at `flat` and continuing with `values`.
    #[inline]
    pub fn candidate(&self, flat: usize, action: ControlAction, values: &[f64]) -> f64 {
        let d = self.grid.dim();
        match action {
            ControlAction::Diffuse => {
                let df = self.kernel.discount_factor(flat);
                if df == 0.0 {
                    0.0
                } else {
                    df * self.kernel.expectation(flat, values)
                }
            }
            ControlAction::Harvest(i) => {
                let below = self.grid.neighbor(flat, i, false).expect("harvest needs xᵢ ≥ h");
                values[below] + self.income[flat * d + i]
            }
            ControlAction::Seed(i) => {
                let above = self.grid.neighbor(flat, i, true).expect("seeding needs xᵢ ≤ U − h");
                values[above] - self.cost[flat * d + i]
            }
        }
    }

    /// Best admissible action at `flat` against `values`.
    #[inline]
    pub fn best(&self, flat: usize, values: &[f64]) -> (f64, ControlAction) {
        let mut best: Option<(f64, ControlAction)> = None;
        for action in admissible_actions(self.grid, flat) {
            let v = self.candidate(flat, action, values);
            match best {
                Some((b, _)) if v <= b + TIE_EPS => {}
                _ => best = Some((v, action)),
            }
        }
        best.expect("every lattice state admits an action")
    }

    /// Synchronous update: every state reads `input`. Returns the sup-norm
    /// increment.
    pub fn apply(&self, input: &[f64], values: &mut [f64], policy: &mut [ControlAction]) -> f64 {
        values
            .par_iter_mut()
            .zip(policy.par_iter_mut())
            .enumerate()
            .with_min_len(4096)
            .map(|(s, (v, pi))| {
                let (best, action) = self.best(s, input);
                *v = best;
                *pi = action;
                (best - input[s]).abs()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// In-place lexicographic sweep. Returns the sup-norm increment.
    pub fn apply_in_place(&self, values: &mut [f64], policy: &mut [ControlAction]) -> f64 {
        let mut increment = 0.0f64;
        for s in 0..values.len() {
            let (best, action) = self.best(s, values);
            increment = increment.max((best - values[s]).abs());
            values[s] = best;
            policy[s] = action;
        }
        increment
    }
}

/// One synchronous Bellman update of `values`.
pub fn bellman_update(
    model: &Model,
    grid: &Grid,
    kernel: &TransitionKernel,
    values: &[f64],
) -> Result<(ValueField, PolicyField)> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
    }
    if let Some(s) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("value field is not finite at {:?}", grid.coords(s))));
    }
    let op = BellmanOperator::new(model, grid, kernel)?;
    let mut out = vec![0.0; grid.len()];
    let mut policy = vec![ControlAction::Diffuse; grid.len()];
    op.apply(values, &mut out, &mut policy);
    Ok((out, policy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    HarvestPotential,
    Values(ValueField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iters: usize,
    pub init: Init,
    pub sweep: SweepMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iters: 1_000_000, init: Init::HarvestPotential, sweep: SweepMode::Jacobi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub values: ValueField,
    pub policy: PolicyField,
    pub iterations: usize,
    /// Sup-norm of the last increment `V_{n+1} − V_n`.
    pub final_increment: f64,
    pub converged: bool,
    pub tolerance: f64,
    /// States whose diffusion stencil had mass redirected onto a self-loop.
    pub clamped: Vec<bool>,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    /// States where the chosen diffusion action uses a clamped stencil.
    pub fn clamped_and_diffusing(&self) -> usize {
        self.clamped.iter().zip(&self.policy).filter(|(&c, &a)| c && a == ControlAction::Diffuse).count()
    }
}

/// Iterates the Bellman operator from `opts.init` until the sup-norm
/// increment drops below `opts.tolerance` or `opts.max_iters` is reached.
pub fn solve(model: &Model, grid: &Grid, kernel: &TransitionKernel, opts: &SolveOptions) -> Result<SolveReport> {
    if !(opts.tolerance.is_finite() && opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tolerance)));
    }
    let started = Instant::now();
    let op = BellmanOperator::new(model, grid, kernel)?;
    let mut values = match &opts.init {
        Init::HarvestPotential => current_harvest_potential(model, grid),
        Init::Values(v) => {
            if v.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: v.len() });
            }
            v.clone()
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial value field is not finite".into()));
    }
    let mut policy = vec![ControlAction::Diffuse; grid.len()];
    let mut scratch = values.clone();
    let mut iterations = 0;
    let mut increment = f64::INFINITY;
    while iterations < opts.max_iters {
        increment = match opts.sweep {
            SweepMode::Jacobi => {
                let inc = op.apply(&values, &mut scratch, &mut policy);
                std::mem::swap(&mut values, &mut scratch);
                inc
            }
            SweepMode::GaussSeidel => op.apply_in_place(&mut values, &mut policy),
        };
        iterations += 1;
        if increment < opts.tolerance {
            break;
        }
    }
    Ok(SolveReport {
        values,
        policy,
        iterations,
        final_increment: increment,
        converged: increment < opts.tolerance,
        tolerance: opts.tolerance,
        clamped: kernel.clamp_flags().to_vec(),
        wall_time: started.elapsed(),
    })
}

/// Barrier levels of a one-dimensional policy: seed below `lower`, leave
/// alone on `[lower, upper)`, harvest from `upper` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds1D {
    pub lower: f64,
    pub upper: f64,
    pub contiguous: bool,
}

pub fn extract_thresholds_1d(policy: &[ControlAction], grid: &Grid) -> Result<Thresholds1D> {
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
    }
    if policy.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: policy.len() });
    }
    let n = policy.len();
    let k1 = policy.iter().position(|a| !a.is_seed()).unwrap_or(n);
    let k2 = policy[k1..].iter().position(|a| a.is_harvest()).map_or(n, |p| k1 + p);
    let contiguous = policy[..k1].iter().all(|a| a.is_seed())
        && policy[k1..k2].iter().all(|&a| a == ControlAction::Diffuse)
        && policy[k2..].iter().all(|a| a.is_harvest());
    let level = |k: usize| (k.min(n - 1) as f64) * grid.h();
    Ok(Thresholds1D { lower: level(k1), upper: level(k2), contiguous })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_grid;
    use crate::model::{make_preset, LogisticParams, PresetId, PresetParams, SpeciesPrice};
    use proptest::prelude::*;

    fn fig1() -> (Model, Grid, TransitionKernel) {
        let m = make_preset(&PresetParams::Logistic(LogisticParams::default())).unwrap();
        let g = build_grid(0.1, 10.0, 1).unwrap();
        let k = TransitionKernel::build(&m, &g).unwrap();
        (m, g, k)
    }

    #[test]
    fn harvest_potential_values() {
        let (m, g, _) = fig1();
        let v0 = current_harvest_potential(&m, &g);
        assert_eq!(v0[g.locate(&[2.0]).unwrap()], 2.0);
        assert_eq!(v0[0], 0.0);

        let m2 = make_preset(&PresetId::Competition2d.default_params()).unwrap();
        let g2 = build_grid(0.1, 5.0, 2).unwrap();
        let v0 = current_harvest_potential(&m2, &g2);
        assert!((v0[g2.locate(&[1.0, 1.0]).unwrap()] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn update_from_zero_prefers_harvest() {
        let (m, g, k) = fig1();
        let (v, pi) = bellman_update(&m, &g, &k, &vec![0.0; g.len()]).unwrap();
        let x = g.locate(&[1.0]).unwrap();
        assert!((v[x] - 0.1).abs() < 1e-15);
        assert_eq!(pi[x], ControlAction::Harvest(0));
        // origin: no harvest possible, seeding costs 0.3, diffusion is worth 0
        assert_eq!(v[0], 0.0);
        assert_eq!(pi[0], ControlAction::Diffuse);
    }

    #[test]
    fn update_from_constant_prefers_harvest() {
        let (m, g, k) = fig1();
        let c = 4.0;
        let (v, pi) = bellman_update(&m, &g, &k, &vec![c; g.len()]).unwrap();
        for s in 1..g.len() - 1 {
            assert_eq!(pi[s], ControlAction::Harvest(0));
            assert!((v[s] - (c + 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_forces_lowest_species_harvest() {
        let m = make_preset(&PresetId::Competition2d.default_params()).unwrap();
        let g = build_grid(0.5, 5.0, 2).unwrap();
        let k = TransitionKernel::build(&m, &g).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|s| s as f64 * 0.01).collect();
        let (v, pi) = bellman_update(&m, &g, &k, &values).unwrap();
        let s = g.locate(&[5.0, 2.0]).unwrap();
        assert_eq!(pi[s], ControlAction::Harvest(0));
        let below = g.locate(&[4.5, 2.0]).unwrap();
        assert!((v[s] - (values[below] + 0.5)).abs() < 1e-15);
        let corner = g.locate(&[5.0, 5.0]).unwrap();
        assert_eq!(pi[corner], ControlAction::Harvest(0));
        let top = g.locate(&[1.0, 5.0]).unwrap();
        assert_eq!(pi[top], ControlAction::Harvest(1));
        assert_eq!(admissible_actions(&g, top).count(), 1);
    }

    #[test]
    fn ties_prefer_diffusion_then_low_species() {
        let g = build_grid(1.0, 2.0, 2).unwrap();
        let acts: Vec<_> = admissible_actions(&g, g.index(&[1, 1])).collect();
        assert_eq!(
            acts,
            vec![
                ControlAction::Diffuse,
                ControlAction::Harvest(0),
                ControlAction::Harvest(1),
                ControlAction::Seed(0),
                ControlAction::Seed(1)
            ]
        );
        assert_eq!(admissible_actions(&g, 0).count(), 3);
    }

    #[test]
    fn thresholds_of_synthetic_policies() {
        let g = build_grid(1.0, 4.0, 1).unwrap();
        use ControlAction::*;
        let t = extract_thresholds_1d(&[Seed(0), Diffuse, Diffuse, Harvest(0), Harvest(0)], &g).unwrap();
        assert_eq!(t, Thresholds1D { lower: 1.0, upper: 3.0, contiguous: true });
        let t = extract_thresholds_1d(&[Harvest(0); 5], &g).unwrap();
        assert_eq!(t, Thresholds1D { lower: 0.0, upper: 0.0, contiguous: true });
        let t = extract_thresholds_1d(&[Diffuse, Harvest(0), Diffuse, Harvest(0), Harvest(0)], &g).unwrap();
        assert!(!t.contiguous);
        assert_eq!((t.lower, t.upper), (0.0, 1.0));
        let g2 = build_grid(1.0, 1.0, 2).unwrap();
        assert!(extract_thresholds_1d(&[Diffuse; 4], &g2).is_err());
    }

    #[test]
    fn fig1_converges_to_a_barrier_policy() {
        let (m, g, k) = fig1();
        let report = solve(&m, &g, &k, &SolveOptions::default()).unwrap();
        assert!(report.converged, "{} iterations, increment {}", report.iterations, report.final_increment);
        assert!(report.values[0] > 0.0);
        let t = extract_thresholds_1d(&report.policy, &g).unwrap();
        assert!(t.contiguous && 0.0 < t.lower && t.lower < t.upper && t.upper < 10.0, "{t:?}");
        assert_eq!(report.clamped_and_diffusing(), 0);
    }

    #[test]
    fn gauss_seidel_reaches_the_same_fixed_point() {
        let (m, g, k) = fig1();
        let jacobi = solve(&m, &g, &k, &SolveOptions::default()).unwrap();
        let gs = solve(&m, &g, &k, &SolveOptions { sweep: SweepMode::GaussSeidel, ..Default::default() }).unwrap();
        assert!(gs.converged);
        assert!(gs.iterations < jacobi.iterations);
        let gap = jacobi.values.iter().zip(&gs.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-4, "{gap}");
    }

    #[test]
    fn expensive_seeding_only_restocks_extinct_population() {
        let p = LogisticParams { seed_cost: vec![SpeciesPrice::Constant(50.0)], ..Default::default() };
        let m = make_preset(&PresetParams::Logistic(p)).unwrap();
        let g = build_grid(0.1, 10.0, 1).unwrap();
        let k = TransitionKernel::build(&m, &g).unwrap();
        let report = solve(&m, &g, &k, &SolveOptions::default()).unwrap();
        assert!(report.policy[1..].iter().all(|a| !a.is_seed()));
        // Restocking an extinct population still pays: V(h) − g·h > 0.
        assert_eq!(report.policy[0], ControlAction::Seed(0));
        assert!((report.values[0] - (report.values[1] - 5.0)).abs() < 1e-7);
        let t = extract_thresholds_1d(&report.policy, &g).unwrap();
        assert!(t.contiguous && (t.lower - 0.1).abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (m, g, k) = fig1();
        let report = solve(&m, &g, &k, &SolveOptions { max_iters: 3, ..Default::default() }).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
        assert!(report.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (m, g, k) = fig1();
        assert!(solve(&m, &g, &k, &SolveOptions { tolerance: 0.0, ..Default::default() }).is_err());
        assert!(bellman_update(&m, &g, &k, &[0.0; 3]).is_err());
        let mut bad = vec![0.0; g.len()];
        bad[4] = f64::NAN;
        assert!(bellman_update(&m, &g, &k, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn update_is_monotone(
            base in prop::collection::vec(-5.0f64..5.0, 26),
            bump in prop::collection::vec(0.0f64..2.0, 26),
        ) {
            let m = make_preset(&PresetParams::Logistic(LogisticParams::default())).unwrap();
            let g = build_grid(0.2, 5.0, 1).unwrap();
            let k = TransitionKernel::build(&m, &g).unwrap();
            let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let (lo, _) = bellman_update(&m, &g, &k, &base).unwrap();
            let (hi, _) = bellman_update(&m, &g, &k, &upper).unwrap();
            for (l, h) in lo.iter().zip(&hi) {
                prop_assert!(l <= h);
            }
        }

        #[test]
        fn seed_then_harvest_loses_money(preset in 0usize..3, values in prop::collection::vec(-3.0f64..3.0, 121)) {
            let id = PresetId::ALL[preset];
            let m = make_preset(&id.default_params()).unwrap();
            let g = build_grid(0.5, 5.0, id.dim()).unwrap();
            let k = TransitionKernel::build(&m, &g).unwrap();
            let op = BellmanOperator::new(&m, &g, &k).unwrap();
            let v: Vec<f64> = values.iter().cycle().take(g.len()).copied().collect();
            for s in 0..g.len() {
                for i in 0..id.dim() {
                    if let Some(up) = g.neighbor(s, i, true) {
                        // seed at s to reach `up`, then harvest back from `up`
                        let round_trip = op.candidate(up, ControlAction::Harvest(i), &v)
                            - v[s] - op.cost[s * id.dim() + i];
                        let x = g.coords(s);
                        let loss = (m.harvest_price(&g.coords(up), i) - m.seed_cost(&x, i)) * g.h();
                        prop_assert!((round_trip - loss).abs() < 1e-12);
                        prop_assert!(loss < 0.0);
                    }
                }
            }
        }
    }
}
