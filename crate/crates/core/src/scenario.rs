//! Scenario files: one JSON document naming a preset, its parameters, the
//! lattice, solver and simulation settings, and an output directory.
//!
//! ```json
//! {
//!   "preset": "logistic_1d",
//!   "params": {"b": 3, "c": 2, "sigma": 1, "harvest_price": [1], "seed_cost": [3]},
//!   "grid": {"h": 0.1, "upper": 10},
//!   "solver": {"tolerance": 1e-8, "max_iters": 1000000, "sweep": "jacobi"},
//!   "simulate": {"paths": 10000, "horizon": 200, "dt": 0.001, "seed": 1},
//!   "output": "out/fig1"
//! }
//! ```
//!
//! `params`, `solver` and `simulate` may be omitted to take defaults. Unknown
//! keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_grid, Grid};
use crate::model::{make_preset, validate, CheckName, Model, PresetId, PresetParams, ValidationReport};
use crate::simulate::EstimateOptions;
use crate::solver::{Init, SolveOptions, SweepMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tolerance: f64,
    pub max_iters: usize,
    pub sweep: SweepMode,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { tolerance: d.tolerance, max_iters: d.max_iters, sweep: d.sweep }
    }
}

impl SolverSpec {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            tolerance: self.tolerance,
            max_iters: self.max_iters,
            init: Init::HarvestPotential,
            sweep: self.sweep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        let d = EstimateOptions::default();
        Self { paths: d.paths, horizon: d.horizon, dt: d.dt, seed: d.base_seed }
    }
}

impl SimulateSpec {
    pub fn options(&self) -> EstimateOptions {
        EstimateOptions { paths: self.paths, horizon: self.horizon, dt: self.dt, base_seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct Scenario {
    pub params: PresetParams,
    pub grid: GridSpec,
    pub solver: SolverSpec,
    pub simulate: SimulateSpec,
    /// Relative paths are taken from the scenario file's directory.
    pub output: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    preset: PresetId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Value>,
    grid: GridSpec,
    #[serde(default)]
    solver: SolverSpec,
    #[serde(default)]
    simulate: SimulateSpec,
    output: PathBuf,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        let params = match raw.params {
            Some(v) => PresetParams::from_json(raw.preset, v)?,
            None => raw.preset.default_params(),
        };
        Ok(Scenario { params, grid: raw.grid, solver: raw.solver, simulate: raw.simulate, output: raw.output })
    }
}

impl From<Scenario> for RawScenario {
    fn from(s: Scenario) -> Self {
        RawScenario {
            preset: s.params.id(),
            params: Some(s.params.to_json()),
            grid: s.grid,
            solver: s.solver,
            simulate: s.simulate,
            output: s.output,
        }
    }
}

impl Scenario {
    pub fn new(params: PresetParams, h: f64, upper: f64, output: impl Into<PathBuf>) -> Self {
        Self {
            params,
            grid: GridSpec { h, upper },
            solver: SolverSpec::default(),
            simulate: SimulateSpec::default(),
            output: output.into(),
        }
    }

    pub fn preset(&self) -> PresetId {
        self.params.id()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario is plain data")
    }

    /// Reads a scenario and resolves its output directory against the file's
    /// location.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_json_str(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if s.output.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            s.output = base.join(&s.output);
        }
        Ok(s)
    }

    pub fn model(&self) -> Result<Model> {
        make_preset(&self.params)
    }

    pub fn build_grid(&self) -> Result<Grid> {
        build_grid(self.grid.h, self.grid.upper, self.preset().dim())
    }

    /// Model plus a validation report; any failed assumption other than the
    /// drift growth bound rejects the scenario.
    pub fn checked_model(&self) -> Result<(Model, ValidationReport)> {
        let model = self.model()?;
        let report = validate(&model, self.grid.upper.max(self.grid.h), self.grid.h)?;
        if let Some(bad) = report.failures().find(|c| c.name != CheckName::DriftGrowthBound) {
            let state = bad.worst.as_ref().map(|(x, _)| x.clone()).unwrap_or_default();
            return Err(Error::Assumption { check: bad.name.as_str(), state });
        }
        Ok((model, report))
    }
}
