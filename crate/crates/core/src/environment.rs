//! Trap environments: the finite measure `W` on the continuous torus, its
//! Poisson construction, and its discretization into cube masses `W^N_x`.
//!
//! The heavy-tailed construction draws the marks of a Poisson point process
//! on `[0,1)^d x (w_min, ∞)` with intensity `α w^{-(1+α)} dx dw`. Atoms below
//! `w_min` are discarded; their expected total mass is
//! `α/(1-α) · w_min^{1-α}` (see [`PppConfig::truncated_mass`]).

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};
use crate::lattice::{Site, TorusSpec};
use crate::rng::{stream, Purpose};

/// Parameters of the truncated Poisson point process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PppConfig {
    pub alpha: f64,
    pub w_min: f64,
    pub seed: u64,
}

impl PppConfig {
    pub fn new(alpha: f64, w_min: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0,1), got {alpha}"));
        }
        if !(w_min > 0.0 && w_min.is_finite()) {
            return invalid(format!("w_min must be positive, got {w_min}"));
        }
        Ok(Self { alpha, w_min, seed })
    }

    /// Expected number of atoms above `w_min`: `w_min^{-α}`.
    pub fn expected_atoms(&self) -> f64 {
        self.w_min.powf(-self.alpha)
    }

    /// Expected mass of the discarded atoms below `w_min`.
    pub fn truncated_mass(&self) -> f64 {
        self.alpha / (1.0 - self.alpha) * self.w_min.powf(1.0 - self.alpha)
    }

    /// Threshold whose discarded mass is below `1e-3` (the typical retained
    /// mass is of order one), capped so the expected atom count stays at or
    /// below `1e7`.
    pub fn default_w_min(alpha: f64) -> f64 {
        let by_mass = (1e-3 * (1.0 - alpha) / alpha).powf(1.0 / (1.0 - alpha));
        let by_count = 1e7f64.powf(-1.0 / alpha);
        by_mass.max(by_count)
    }
}

/// One atom of `W`: a position in `[0,1)^d` and a positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Vec<f64>, f64)", into = "(Vec<f64>, f64)")]
pub struct Atom {
    pub pos: Vec<f64>,
    pub weight: f64,
}

impl From<(Vec<f64>, f64)> for Atom {
    fn from((pos, weight): (Vec<f64>, f64)) -> Self {
        Self { pos, weight }
    }
}

impl From<Atom> for (Vec<f64>, f64) {
    fn from(a: Atom) -> Self {
        (a.pos, a.weight)
    }
}

/// A finite measure on `[0,1)^d`: atoms plus a uniform background density.
#[derive(Clone, Debug, PartialEq)]
pub struct TrapMeasure {
    pub d: usize,
    pub atoms: Vec<Atom>,
    /// Mass per unit volume of the uniform part.
    pub background: f64,
}

impl TrapMeasure {
    pub fn new(d: usize, atoms: Vec<Atom>, background: f64) -> Result<Self> {
        if d == 0 || d > crate::lattice::MAX_DIM {
            return Err(TrapError::DimensionOutOfRange(d));
        }
        if !(background >= 0.0 && background.is_finite()) {
            return invalid(format!("background must be finite and >= 0, got {background}"));
        }
        for a in &atoms {
            if a.pos.len() != d {
                return invalid(format!("atom position has {} coordinates, expected {d}", a.pos.len()));
            }
            if a.pos.iter().any(|p| !(0.0..1.0).contains(p)) {
                return invalid(format!("atom position {:?} outside [0,1)^d", a.pos));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return invalid(format!("atom weight must be positive and finite, got {}", a.weight));
            }
        }
        Ok(Self { d, atoms, background })
    }

    /// Total mass `W(T^d)`, summed with compensation.
    pub fn total_mass(&self) -> f64 {
        let mut s = NeumaierSum::default();
        for a in &self.atoms {
            s.add(a.weight);
        }
        s.add(self.background);
        s.value()
    }

    pub fn max_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).fold(0.0, f64::max)
    }

    /// Default floor for empty cubes: `1e-9` times the largest atom (or the
    /// background mass when there are no atoms).
    pub fn default_floor(&self) -> f64 {
        let m = self.max_weight();
        if m > 0.0 {
            1e-9 * m
        } else {
            1e-9 * self.background
        }
    }
}

/// Samples the truncated Poisson point process: `K ~ Poisson(w_min^{-α})`
/// atoms, i.i.d. uniform positions, weights `w_min · U^{-1/α}`.
pub fn sample_ppp_environment(cfg: &PppConfig, d: usize) -> Result<TrapMeasure> {
    let cfg = PppConfig::new(cfg.alpha, cfg.w_min, cfg.seed)?;
    let mut rng = stream(cfg.seed, Purpose::Environment, d as u64);
    let mean = cfg.expected_atoms();
    let k = Poisson::new(mean)
        .map_err(|e| TrapError::InvalidInput(format!("atom intensity {mean}: {e}")))?
        .sample(&mut rng) as usize;
    let mut atoms = Vec::with_capacity(k);
    for _ in 0..k {
        let pos: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        // U in (0,1]: 1 - [0,1) avoids an infinite weight.
        let u = 1.0 - rng.random::<f64>();
        atoms.push(Atom { pos, weight: cfg.w_min * u.powf(-1.0 / cfg.alpha) });
    }
    TrapMeasure::new(d, atoms, 0.0)
}

/// Cube masses `W^N_x` on the `N`-torus, floored to stay strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct WField {
    pub spec: TorusSpec,
    pub values: Vec<f64>,
    /// Value substituted for cubes of zero mass.
    pub floor: f64,
    /// `W(T^d)` before flooring.
    pub total: f64,
}

impl WField {
    /// A field from explicit, strictly positive values.
    pub fn from_values(spec: TorusSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.sites() {
            return invalid(format!("expected {} values, got {}", spec.sites(), values.len()));
        }
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(TrapError::NonPositiveEnvironment { site: i });
        }
        let total = compensated_sum(&values);
        Ok(Self { spec, values, floor: 0.0, total })
    }

    pub fn uniform(spec: TorusSpec, value: f64) -> Result<Self> {
        Self::from_values(spec, vec![value; spec.sites()])
    }

    #[inline]
    pub fn value(&self, x: Site) -> f64 {
        self.values[x.0]
    }

    /// Sum of the (floored) entries: the normalizer of the stationary law of
    /// the walk actually simulated on this field.
    pub fn mass(&self) -> f64 {
        compensated_sum(&self.values)
    }

    /// The same field with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return invalid(format!("scale factor must be positive, got {factor}"));
        }
        Ok(Self {
            spec: self.spec,
            values: self.values.iter().map(|v| v * factor).collect(),
            floor: self.floor * factor,
            total: self.total * factor,
        })
    }
}

/// `W^N_x = W([x/N, (x+1)/N))`; empty cubes receive `w_floor`.
pub fn discretize(w: &TrapMeasure, spec: TorusSpec, w_floor: f64) -> Result<WField> {
    if w.d != spec.dim() {
        return invalid(format!("measure is {}-dimensional, torus is {}-dimensional", w.d, spec.dim()));
    }
    if !(w_floor >= 0.0 && w_floor.is_finite()) {
        return invalid(format!("w_floor must be finite and >= 0, got {w_floor}"));
    }
    let n_sites = spec.sites();
    let cell = w.background / n_sites as f64;
    let mut acc = vec![NeumaierSum::default(); n_sites];
    if cell > 0.0 {
        for a in acc.iter_mut() {
            a.add(cell);
        }
    }
    for atom in &w.atoms {
        let x = spec.cube_index(&atom.pos)?;
        acc[x.0].add(atom.weight);
    }
    let mut values: Vec<f64> = acc.iter().map(NeumaierSum::value).collect();
    let mut total = NeumaierSum::default();
    for &v in &values {
        total.add(v);
    }
    for (i, v) in values.iter_mut().enumerate() {
        if *v <= 0.0 {
            if w_floor == 0.0 {
                return Err(TrapError::NonPositiveEnvironment { site: i });
            }
            *v = w_floor;
        }
    }
    Ok(WField { spec, values, floor: w_floor, total: total.value() })
}

/// `τ^N_x = N^{d/α} W^N_x`.
pub fn tau_field(field: &WField, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0,1), got {alpha}"));
    }
    let scale = (field.spec.side() as f64).powf(field.spec.dim() as f64 / alpha);
    Ok(field.values.iter().map(|v| v * scale).collect())
}

/// The regularity statistic `N^{-(2+γ0)} Σ_x 1/W^N_x`.
pub fn check_h1(field: &WField, gamma0: f64) -> Result<f64> {
    if !(gamma0 > 0.0) {
        return invalid(format!("gamma0 must be positive, got {gamma0}"));
    }
    if let Some(i) = field.values.iter().position(|&v| v <= 0.0) {
        return Err(TrapError::NonPositiveEnvironment { site: i });
    }
    let mut s = NeumaierSum::default();
    for &v in &field.values {
        s.add(1.0 / v);
    }
    Ok((field.spec.side() as f64).powf(-(2.0 + gamma0)) * s.value())
}

/// The `m` deepest sites, by decreasing `W^N_x`, ties broken by ascending
/// flat index.
pub fn rank_traps(field: &WField, m: usize) -> Result<Vec<Site>> {
    let n = field.values.len();
    if m == 0 || m > n {
        return invalid(format!("trap count {m} outside [1, {n}]"));
    }
    let cmp = |a: &usize, b: &usize| field.values[*b].total_cmp(&field.values[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        idx.select_nth_unstable_by(m - 1, cmp);
        idx.truncate(m);
    }
    idx.sort_by(cmp);
    Ok(idx.into_iter().map(Site).collect())
}

/// Serialized environment document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: Option<f64>,
    pub w_min: Option<f64>,
    pub seed: Option<u64>,
    pub atoms: Vec<Atom>,
    pub background: f64,
    pub w_floor: f64,
}

impl EnvironmentDoc {
    pub fn new(w: &TrapMeasure, n: usize, ppp: Option<&PppConfig>, w_floor: f64) -> Self {
        Self {
            d: w.d,
            n,
            alpha: ppp.map(|c| c.alpha),
            w_min: ppp.map(|c| c.w_min),
            seed: ppp.map(|c| c.seed),
            atoms: w.atoms.clone(),
            background: w.background,
            w_floor,
        }
    }

    pub fn measure(&self) -> Result<TrapMeasure> {
        TrapMeasure::new(self.d, self.atoms.clone(), self.background)
    }

    pub fn field(&self) -> Result<WField> {
        discretize(&self.measure()?, TorusSpec::new(self.d, self.n)?, self.w_floor)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut s = NeumaierSum::default();
    for &x in xs {
        s.add(x);
    }
    s.value()
}
