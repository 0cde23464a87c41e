//! Controlled population dynamics: drift, noise, prices and discounting.
//!
//! Coefficients are black-box callables evaluated one species at a time, so a
//! model never allocates on the hot paths of the chain builder or the
//! simulator. The shipped presets are the stochastic logistic equation and
//! the two-species Lotka-Volterra competition and predator-prey systems, all
//! with per-species multiplicative noise `σᵢ xᵢ dwᵢ`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-species coefficient: `(x, i) ↦ cᵢ(x)`.
pub type Coefficient = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// Matrix coefficient: `(x, i, j) ↦ σᵢⱼ(x)`.
pub type MatrixCoefficient = Arc<dyn Fn(&[f64], usize, usize) -> f64 + Send + Sync>;

/// Noise loading of the population SDE.
#[derive(Clone)]
pub enum Noise {
    /// `σ(x) = diag(σ₁(x), …, σ_d(x))`, one independent Brownian motion per species.
    Diagonal(Coefficient),
    /// Full `d × d` loading matrix driven by `d` independent Brownian motions.
    Matrix(MatrixCoefficient),
}

/// A `d`-species controlled diffusion
/// `dX = b(X) dt + σ(X) dw − dY + dZ` with harvest income `f` and seeding cost `g`.
#[derive(Clone)]
pub struct Model {
    dim: usize,
    drift: Coefficient,
    noise: Noise,
    harvest_price: Coefficient,
    seed_cost: Coefficient,
    discount: f64,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("dim", &self.dim)
            .field("diagonal_noise", &self.is_diagonal())
            .field("discount", &self.discount)
            .finish_non_exhaustive()
    }
}

impl Model {
    pub fn new(
        dim: usize,
        drift: Coefficient,
        noise: Noise,
        harvest_price: Coefficient,
        seed_cost: Coefficient,
        discount: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("model dimension must be positive".into()));
        }
        if !(discount.is_finite() && discount > 0.0) {
            return Err(Error::InvalidArgument(format!("discount rate must be positive and finite, got {discount}")));
        }
        Ok(Self { dim, drift, noise, harvest_price, seed_cost, discount })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.noise, Noise::Diagonal(_))
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    /// `bᵢ(x)`.
    #[inline]
    pub fn drift_at(&self, x: &[f64], i: usize) -> f64 {
        (self.drift)(x, i)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| self.drift_at(x, i)).collect()
    }

    /// Entry `σᵢⱼ(x)` of the loading matrix.
    #[inline]
    pub fn sigma_at(&self, x: &[f64], i: usize, j: usize) -> f64 {
        match &self.noise {
            Noise::Diagonal(s) => {
                if i == j {
                    s(x, i)
                } else {
                    0.0
                }
            }
            Noise::Matrix(s) => s(x, i, j),
        }
    }

    /// Diagonal of `σ(x)`; the full loading for diagonal-noise models.
    pub fn diffusion_row(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| self.sigma_at(x, i, i)).collect()
    }

    /// Entry `aᵢⱼ(x)` of `a = σσᵀ`.
    #[inline]
    pub fn covariance_at(&self, x: &[f64], i: usize, j: usize) -> f64 {
        match &self.noise {
            Noise::Diagonal(s) => {
                if i == j {
                    let v = s(x, i);
                    v * v
                } else {
                    0.0
                }
            }
            Noise::Matrix(s) => (0..self.dim).map(|k| s(x, i, k) * s(x, j, k)).sum(),
        }
    }

    /// `fᵢ(x)`, income per unit of species `i` harvested.
    #[inline]
    pub fn harvest_price(&self, x: &[f64], i: usize) -> f64 {
        (self.harvest_price)(x, i)
    }

    /// `gᵢ(x)`, cost per unit of species `i` seeded.
    #[inline]
    pub fn seed_cost(&self, x: &[f64], i: usize) -> f64 {
        (self.seed_cost)(x, i)
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

/// Price of one species as a function of its own density.
///
/// Serialized as a bare number for a constant price, or as an object for a
/// ramp that equals `high` up to `start`, `low` from `end` on, and is affine
/// in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeciesPrice {
    Constant(f64),
    Ramp(PriceRamp),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceRamp {
    pub high: f64,
    pub low: f64,
    pub start: f64,
    pub end: f64,
}

impl SpeciesPrice {
    pub fn eval(&self, density: f64) -> f64 {
        match *self {
            SpeciesPrice::Constant(v) => v,
            SpeciesPrice::Ramp(PriceRamp { high, low, start, end }) => {
                if density <= start {
                    high
                } else if density >= end {
                    low
                } else {
                    high + (low - high) * (density - start) / (end - start)
                }
            }
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        let ok = match *self {
            SpeciesPrice::Constant(v) => v.is_finite() && v > 0.0,
            SpeciesPrice::Ramp(PriceRamp { high, low, start, end }) => {
                [high, low, start, end].iter().all(|v| v.is_finite())
                    && low > 0.0
                    && high >= low
                    && start >= 0.0
                    && end > start
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{what}: malformed price {self:?}")))
        }
    }
}

fn price_coefficient(prices: &[SpeciesPrice], dim: usize, what: &str) -> Result<Coefficient> {
    if prices.len() != dim {
        return Err(Error::InvalidArgument(format!("{what}: expected {dim} price entries, got {}", prices.len())));
    }
    for p in prices {
        p.check(what)?;
    }
    let prices = prices.to_vec();
    Ok(Arc::new(move |x: &[f64], i: usize| prices[i].eval(x[i])))
}

/// Identifier of a shipped example system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetId {
    #[serde(rename = "logistic_1d")]
    Logistic1d,
    #[serde(rename = "competition_2d")]
    Competition2d,
    #[serde(rename = "predator_prey_2d")]
    PredatorPrey2d,
}

impl PresetId {
    pub const ALL: [PresetId; 3] = [PresetId::Logistic1d, PresetId::Competition2d, PresetId::PredatorPrey2d];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetId::Logistic1d => "logistic_1d",
            PresetId::Competition2d => "competition_2d",
            PresetId::PredatorPrey2d => "predator_prey_2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PresetId::Logistic1d => 1,
            PresetId::Competition2d | PresetId::PredatorPrey2d => 2,
        }
    }

    /// Parameters of the published example for this system.
    pub fn default_params(&self) -> PresetParams {
        match self {
            PresetId::Logistic1d => PresetParams::Logistic(LogisticParams::default()),
            PresetId::Competition2d => PresetParams::Competition(LotkaVolterraParams::competition()),
            PresetId::PredatorPrey2d => PresetParams::PredatorPrey(LotkaVolterraParams::predator_prey()),
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetId::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

fn default_discount() -> f64 {
    0.05
}

/// `dX = X(b − cX) dt + σX dw − dY + dZ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    pub b: f64,
    pub c: f64,
    pub sigma: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    pub harvest_price: Vec<SpeciesPrice>,
    pub seed_cost: Vec<SpeciesPrice>,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            b: 3.0,
            c: 2.0,
            sigma: 1.0,
            discount: 0.05,
            harvest_price: vec![SpeciesPrice::Constant(1.0)],
            seed_cost: vec![SpeciesPrice::Constant(3.0)],
        }
    }
}

impl LogisticParams {
    /// Seeding that is prohibitively expensive below density 1 and barely
    /// above the harvest price past 1.1, affine in between.
    pub fn density_dependent_seeding(high: f64, low: f64) -> Self {
        Self { seed_cost: vec![SpeciesPrice::Ramp(PriceRamp { high, low, start: 1.0, end: 1.1 })], ..Self::default() }
    }
}

/// Two-species Lotka-Volterra system.
///
/// Competition: `dXᵢ = Xᵢ(bᵢ − aᵢ₁X₁ − aᵢ₂X₂) dt + σᵢXᵢ dwᵢ`.
/// Predator-prey (species 2 preys on species 1):
/// `dX₁ = X₁(b₁ − a₁₁X₁ − a₁₂X₂) dt + …`, `dX₂ = X₂(−b₂ + a₂₁X₁ − a₂₂X₂) dt + …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotkaVolterraParams {
    pub b: [f64; 2],
    pub a: [[f64; 2]; 2],
    pub sigma: [f64; 2],
    #[serde(default = "default_discount")]
    pub discount: f64,
    pub harvest_price: Vec<SpeciesPrice>,
    pub seed_cost: Vec<SpeciesPrice>,
}

impl LotkaVolterraParams {
    pub fn competition() -> Self {
        Self {
            b: [3.0, 2.0],
            a: [[2.0, 1.0], [1.0, 2.0]],
            sigma: [3.0, 3.0],
            discount: 0.05,
            harvest_price: vec![SpeciesPrice::Constant(1.0), SpeciesPrice::Constant(2.0)],
            seed_cost: vec![SpeciesPrice::Constant(4.0), SpeciesPrice::Constant(4.0)],
        }
    }

    pub fn predator_prey() -> Self {
        Self {
            b: [2.0, 1.0],
            a: [[1.2, 1.0], [1.2, 7.0]],
            sigma: [1.2, 1.3],
            discount: 0.05,
            harvest_price: vec![SpeciesPrice::Constant(1.0), SpeciesPrice::Constant(1.0)],
            seed_cost: vec![SpeciesPrice::Constant(6.0), SpeciesPrice::Constant(6.0)],
        }
    }
}

/// Parameter record of a preset, tagged by the preset it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum PresetParams {
    Logistic(LogisticParams),
    Competition(LotkaVolterraParams),
    PredatorPrey(LotkaVolterraParams),
}

impl PresetParams {
    pub fn id(&self) -> PresetId {
        match self {
            PresetParams::Logistic(_) => PresetId::Logistic1d,
            PresetParams::Competition(_) => PresetId::Competition2d,
            PresetParams::PredatorPrey(_) => PresetId::PredatorPrey2d,
        }
    }

    /// Decodes a parameter record for `id`; unknown keys are rejected.
    pub fn from_json(id: PresetId, value: serde_json::Value) -> Result<Self> {
        Ok(match id {
            PresetId::Logistic1d => PresetParams::Logistic(serde_json::from_value(value)?),
            PresetId::Competition2d => PresetParams::Competition(serde_json::from_value(value)?),
            PresetId::PredatorPrey2d => PresetParams::PredatorPrey(serde_json::from_value(value)?),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let v = match self {
            PresetParams::Logistic(p) => serde_json::to_value(p),
            PresetParams::Competition(p) | PresetParams::PredatorPrey(p) => serde_json::to_value(p),
        };
        v.expect("parameter records are plain data")
    }

    pub fn discount(&self) -> f64 {
        match self {
            PresetParams::Logistic(p) => p.discount,
            PresetParams::Competition(p) | PresetParams::PredatorPrey(p) => p.discount,
        }
    }

    pub fn harvest_prices(&self) -> &[SpeciesPrice] {
        match self {
            PresetParams::Logistic(p) => &p.harvest_price,
            PresetParams::Competition(p) | PresetParams::PredatorPrey(p) => &p.harvest_price,
        }
    }
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Builds the model of a preset system.
pub fn make_preset(params: &PresetParams) -> Result<Model> {
    match params {
        PresetParams::Logistic(p) => {
            require(all_finite(&[p.b, p.c, p.sigma, p.discount]), || "logistic parameters must be finite".into())?;
            require(p.b > 0.0 && p.c > 0.0, || {
                format!("logistic growth b={} and crowding c={} must be positive", p.b, p.c)
            })?;
            require(p.sigma >= 0.0, || format!("noise intensity {} is negative", p.sigma))?;
            let (b, c, sigma) = (p.b, p.c, p.sigma);
            Model::new(
                1,
                Arc::new(move |x: &[f64], _| x[0] * (b - c * x[0])),
                Noise::Diagonal(Arc::new(move |x: &[f64], _| sigma * x[0])),
                price_coefficient(&p.harvest_price, 1, "harvest_price")?,
                price_coefficient(&p.seed_cost, 1, "seed_cost")?,
                p.discount,
            )
        }
        PresetParams::Competition(p) | PresetParams::PredatorPrey(p) => {
            let predator_prey = matches!(params, PresetParams::PredatorPrey(_));
            let flat = [p.b[0], p.b[1], p.a[0][0], p.a[0][1], p.a[1][0], p.a[1][1]];
            require(all_finite(&flat) && all_finite(&p.sigma) && p.discount.is_finite(), || {
                "Lotka-Volterra parameters must be finite".into()
            })?;
            require(flat.iter().all(|&v| v > 0.0), || {
                format!("growth rates {:?} and interaction rates {:?} must be positive", p.b, p.a)
            })?;
            require(p.sigma.iter().all(|&s| s >= 0.0), || {
                format!("noise intensities {:?} must be non-negative", p.sigma)
            })?;
            let (b, a, sigma) = (p.b, p.a, p.sigma);
            let drift: Coefficient = if predator_prey {
                Arc::new(move |x: &[f64], i| match i {
                    0 => x[0] * (b[0] - a[0][0] * x[0] - a[0][1] * x[1]),
                    _ => x[1] * (-b[1] + a[1][0] * x[0] - a[1][1] * x[1]),
                })
            } else {
                Arc::new(move |x: &[f64], i| x[i] * (b[i] - a[i][0] * x[0] - a[i][1] * x[1]))
            };
            Model::new(
                2,
                drift,
                Noise::Diagonal(Arc::new(move |x: &[f64], i| sigma[i] * x[i])),
                price_coefficient(&p.harvest_price, 2, "harvest_price")?,
                price_coefficient(&p.seed_cost, 2, "seed_cost")?,
                p.discount,
            )
        }
    }
}

/// Standing-assumption checks run by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    AbsorbingOrigin,
    PriceGap,
    PriceMonotonicity,
    DiagDominance,
    DriftGrowthBound,
}

impl CheckName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckName::AbsorbingOrigin => "absorbing-origin",
            CheckName::PriceGap => "price-gap",
            CheckName::PriceMonotonicity => "price-monotonicity",
            CheckName::DiagDominance => "diag-dominance",
            CheckName::DriftGrowthBound => "drift-growth-bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: CheckName,
    pub passed: bool,
    /// Sample point and magnitude of the worst case seen. For passing checks
    /// this is the tightest margin, for failing ones the largest violation.
    pub worst: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
    /// Smallest `C ≥ 0` with `bᵢ(x) ≤ δxᵢ + C` on the sample, `None` when the
    /// drift is not finite at some sampled point.
    pub drift_growth_constant: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: CheckName) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Visits every point of the lattice `{0, step, …, n·step}^dim` in
/// lexicographic order.
pub(crate) fn for_each_lattice_point(dim: usize, n: usize, step: f64, mut f: impl FnMut(&[f64])) {
    let mut k = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    loop {
        for (xi, &ki) in x.iter_mut().zip(&k) {
            *xi = ki as f64 * step;
        }
        f(&x);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if k[axis] < n {
                k[axis] += 1;
                break;
            }
            k[axis] = 0;
        }
    }
}

/// Tracks the extreme of a scalar over sample points.
#[derive(Clone)]
struct Extreme {
    at: Option<(Vec<f64>, f64)>,
}

impl Extreme {
    fn new() -> Self {
        Self { at: None }
    }

    fn max(&mut self, x: &[f64], v: f64) {
        if self.at.as_ref().is_none_or(|(_, best)| v > *best || v.is_nan()) {
            self.at = Some((x.to_vec(), v));
        }
    }

    fn min(&mut self, x: &[f64], v: f64) {
        self.max(x, -v);
    }
}

/// Evaluates the standing assumptions on the lattice of spacing `sample_step`
/// covering `[0, upper]^d`. Violations are recorded, never raised.
pub fn validate(model: &Model, upper: f64, sample_step: f64) -> Result<ValidationReport> {
    if !(upper.is_finite() && upper > 0.0) || !(sample_step.is_finite() && sample_step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling needs positive bound and step, got U={upper}, step={sample_step}"
        )));
    }
    let ratio = upper / sample_step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::NonIntegralGrid { h: sample_step, upper });
    }
    let n = n as usize;
    let d = model.dim();
    let delta = model.discount();

    let origin = vec![0.0; d];
    let mut origin_worst = 0.0f64;
    for i in 0..d {
        origin_worst = origin_worst.max(model.drift_at(&origin, i).abs());
        for j in 0..d {
            origin_worst = origin_worst.max(model.sigma_at(&origin, i, j).abs());
        }
    }

    let mut f_max = vec![Extreme::new(); d];
    let mut g_min = vec![Extreme::new(); d];
    let mut mono = Extreme::new();
    let mut dominance = Extreme::new();
    let mut growth = Extreme::new();
    let mut growth_finite = true;
    let mut shifted = vec![0.0; d];

    for_each_lattice_point(d, n, sample_step, |x| {
        for i in 0..d {
            f_max[i].max(x, model.harvest_price(x, i));
            g_min[i].min(x, model.seed_cost(x, i));

            let margin = model.covariance_at(x, i, i)
                - (0..d).filter(|&j| j != i).map(|j| model.covariance_at(x, i, j).abs()).sum::<f64>();
            dominance.min(x, margin);

            let b = model.drift_at(x, i);
            if !b.is_finite() {
                growth_finite = false;
            }
            growth.max(x, b - delta * x[i]);
        }
        // Increase along each axis must not raise any price.
        for k in 0..d {
            if x[k] + sample_step > upper + 1e-12 * upper {
                continue;
            }
            shifted.copy_from_slice(x);
            shifted[k] += sample_step;
            for i in 0..d {
                let df = model.harvest_price(&shifted, i) - model.harvest_price(x, i);
                let dg = model.seed_cost(&shifted, i) - model.seed_cost(x, i);
                mono.max(x, df.max(dg));
            }
        }
    });

    let mut gap = Extreme::new();
    for i in 0..d {
        let (fx, fv) = f_max[i].at.clone().expect("lattice is non-empty");
        let (_, neg_g) = g_min[i].at.clone().expect("lattice is non-empty");
        gap.max(&fx, fv + neg_g);
    }

    let mut checks = Vec::with_capacity(5);
    checks.push(CheckOutcome {
        name: CheckName::AbsorbingOrigin,
        passed: origin_worst == 0.0,
        worst: Some((origin, origin_worst)),
    });
    let gap = gap.at.expect("at least one species");
    checks.push(CheckOutcome { name: CheckName::PriceGap, passed: gap.1 < 0.0, worst: Some(gap) });
    checks.push(CheckOutcome {
        name: CheckName::PriceMonotonicity,
        passed: mono.at.as_ref().is_none_or(|(_, v)| *v <= 1e-12),
        worst: mono.at,
    });
    let dominance = dominance.at.map(|(x, v)| (x, -v)).expect("lattice is non-empty");
    checks.push(CheckOutcome { name: CheckName::DiagDominance, passed: dominance.1 >= 0.0, worst: Some(dominance) });
    let growth = growth.at.expect("lattice is non-empty");
    let constant = growth_finite.then_some(growth.1.max(0.0));
    checks.push(CheckOutcome { name: CheckName::DriftGrowthBound, passed: constant.is_some(), worst: Some(growth) });

    Ok(ValidationReport { checks, drift_growth_constant: constant })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic() -> Model {
        make_preset(&PresetParams::Logistic(LogisticParams::default())).unwrap()
    }

    #[test]
    fn logistic_drift_matches_substitution() {
        let m = logistic();
        assert_eq!(m.drift(&[1.0]), vec![1.0]);
        assert_eq!(m.drift(&[2.0]), vec![-2.0]);
        assert_eq!(m.diffusion_row(&[2.0]), vec![2.0]);
    }

    #[test]
    fn competition_drift_at_unit_point() {
        let m = make_preset(&PresetId::Competition2d.default_params()).unwrap();
        assert_eq!(m.drift(&[1.0, 1.0]), vec![0.0, -1.0]);
    }

    #[test]
    fn predator_prey_drift_signs() {
        let m = make_preset(&PresetId::PredatorPrey2d.default_params()).unwrap();
        // prey: 1·(2 − 1.2 − 1) = −0.2, predator: 1·(−1 + 1.2 − 7) = −6.8
        let b = m.drift(&[1.0, 1.0]);
        assert!((b[0] + 0.2).abs() < 1e-15);
        assert!((b[1] + 6.8).abs() < 1e-15);
        assert_eq!(m.drift(&[0.0, 2.0])[0], 0.0);
    }

    #[test]
    fn every_preset_has_absorbing_origin() {
        for id in PresetId::ALL {
            let m = make_preset(&id.default_params()).unwrap();
            let zero = vec![0.0; id.dim()];
            assert!(m.drift(&zero).iter().all(|&v| v == 0.0), "{id}");
            assert!(m.diffusion_row(&zero).iter().all(|&v| v == 0.0), "{id}");
        }
    }

    #[test]
    fn coefficient_evaluation_is_pure() {
        let m = make_preset(&PresetId::Competition2d.default_params()).unwrap();
        let x = [0.7, 2.3];
        assert_eq!(m.drift(&x), m.drift(&x));
        assert_eq!(m.diffusion_row(&x), m.diffusion_row(&x));
    }

    #[test]
    fn ramp_price_follows_caption_values() {
        let p = LogisticParams::density_dependent_seeding(100.0, 1.02);
        let m = make_preset(&PresetParams::Logistic(p)).unwrap();
        assert_eq!(m.seed_cost(&[0.5], 0), 100.0);
        assert_eq!(m.seed_cost(&[1.0], 0), 100.0);
        assert!((m.seed_cost(&[1.05], 0) - 50.51).abs() < 1e-9);
        assert_eq!(m.seed_cost(&[1.1], 0), 1.02);
        assert_eq!(m.seed_cost(&[7.0], 0), 1.02);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = LogisticParams { c: 0.0, ..LogisticParams::default() };
        assert!(make_preset(&PresetParams::Logistic(p)).is_err());
        let p = LogisticParams { sigma: f64::NAN, ..LogisticParams::default() };
        assert!(make_preset(&PresetParams::Logistic(p)).is_err());
        let mut p = LotkaVolterraParams::competition();
        p.harvest_price.pop();
        assert!(make_preset(&PresetParams::Competition(p)).is_err());
        assert!(matches!("logistic_3d".parse::<PresetId>(), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn logistic_validation_passes() {
        let report = validate(&logistic(), 10.0, 0.1).unwrap();
        assert!(report.passed(), "{report:?}");
        // max of x(3 − 2x) − 0.05x is at x = 2.95/4
        let c = report.drift_growth_constant.unwrap();
        assert!((c - 2.95 * 2.95 / 8.0).abs() < 0.01, "{c}");
    }

    #[test]
    fn equal_prices_fail_the_gap_check() {
        let p = LogisticParams { seed_cost: vec![SpeciesPrice::Constant(1.0)], ..LogisticParams::default() };
        let report = validate(&make_preset(&PresetParams::Logistic(p)).unwrap(), 10.0, 0.1).unwrap();
        assert!(!report.check(CheckName::PriceGap).unwrap().passed);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn diagonal_noise_dominance_margin_is_variance() {
        let m = make_preset(&PresetId::Competition2d.default_params()).unwrap();
        for x in [[0.3, 4.0], [2.0, 0.0], [5.0, 5.0]] {
            for i in 0..2 {
                let margin = m.covariance_at(&x, i, i) - m.covariance_at(&x, i, 1 - i).abs();
                assert_eq!(margin, (3.0 * x[i]) * (3.0 * x[i]));
            }
        }
        let report = validate(&m, 5.0, 0.5).unwrap();
        assert!(report.check(CheckName::DiagDominance).unwrap().passed);
    }

    #[test]
    fn increasing_price_fails_monotonicity() {
        let m = Model::new(
            1,
            Arc::new(|x: &[f64], _| x[0] * (1.0 - x[0])),
            Noise::Diagonal(Arc::new(|x: &[f64], _| x[0])),
            Arc::new(|x: &[f64], _| 1.0 + 0.01 * x[0]),
            Arc::new(|_: &[f64], _| 5.0),
            0.1,
        )
        .unwrap();
        let report = validate(&m, 2.0, 0.5).unwrap();
        assert!(!report.check(CheckName::PriceMonotonicity).unwrap().passed);
        assert!(report.check(CheckName::PriceGap).unwrap().passed);
    }

    #[test]
    fn indivisible_sampling_is_an_argument_error() {
        assert!(validate(&logistic(), 10.0, 0.3).is_err());
    }
}
