//! Independent particles in a one-dimensional trap environment and the
//! lattice Krein–Feller heat equation that governs their density.
//!
//! Each particle jumps to each neighbour at rate `N / (2 W_x)`. The mean
//! density `u_t(x) = E η_t(x) / (N^γ W_x)` solves
//! `du/dt = (N / (2 W_x)) [u(x+1) - 2u(x) + u(x-1)]`, integrated here by
//! implicit Euler with cyclic tridiagonal solves.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{tau_field, WField};
use crate::error::{invalid, Result, TrapError};
use crate::lattice::{Site, TorusSpec};
use crate::rng::{stream, Purpose};
use crate::stats::MeanAccumulator;
use crate::walk::{Segment, Trajectory};

/// Time-scale convention of the particle dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeScale {
    /// Rates `N / (2 W_x)` per direction.
    Diffusive,
    /// Rates `N^{1+1/α} / (2 τ_x)` per direction with `τ_x = N^{1/α} W_x`.
    Bouchaud { alpha: f64 },
}

/// A one-dimensional hydrodynamic run.
#[derive(Clone, Debug)]
pub struct HydroConfig {
    pub field: WField,
    pub gamma: f64,
    /// `u_0(x/N)` for `x = 0..N`.
    pub u0: Vec<f64>,
    pub horizon: f64,
    pub scale: TimeScale,
    /// Per-site total jump rate (both directions).
    rates: Vec<f64>,
    /// Weights of the conserved pairing: `W_x`, or `τ_x` in Bouchaud mode.
    weights: Vec<f64>,
    /// Edge conductance of the master equation.
    conductance: f64,
}

impl HydroConfig {
    /// `u0` is sampled at the grid points `x/N`; continuity is the caller's
    /// business.
    pub fn new(field: &WField, gamma: f64, u0: impl Fn(f64) -> f64, horizon: f64, scale: TimeScale) -> Result<Self> {
        let spec = field.spec;
        if spec.dim() != 1 {
            return invalid(format!("hydrodynamics is one-dimensional, got d = {}", spec.dim()));
        }
        let n = spec.side();
        if n < 3 {
            return invalid("need at least three sites");
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return invalid(format!("mass exponent must be positive, got {gamma}"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid("horizon must be positive and finite");
        }
        let u0: Vec<f64> = (0..n).map(|x| u0(x as f64 / n as f64)).collect();
        if u0.iter().any(|u| !(*u >= 0.0 && u.is_finite())) {
            return invalid("initial profile must be finite and non-negative");
        }
        let nf = n as f64;
        let (weights, conductance) = match scale {
            TimeScale::Diffusive => (field.values.clone(), nf / 2.0),
            TimeScale::Bouchaud { alpha } => (tau_field(field, alpha)?, nf.powf(1.0 + 1.0 / alpha) / 2.0),
        };
        let rates = weights.iter().map(|w| 2.0 * conductance / w).collect();
        Ok(Self { field: field.clone(), gamma, u0, horizon, scale, rates, weights, conductance })
    }

    pub fn side(&self) -> usize {
        self.field.spec.side()
    }

    /// Total jump rate at `x`.
    pub fn jump_rate(&self, x: usize) -> f64 {
        self.rates[x]
    }

    /// Speed-up that makes the walk engine's walk on [`Self::walk_field`]
    /// match one particle: `N` (diffusive) or `N^{1+1/α}` (Bouchaud).
    pub fn walk_theta(&self) -> f64 {
        2.0 * self.conductance
    }

    /// Field whose holding means, divided by [`Self::walk_theta`], are the
    /// particle holding means: `W` or `τ`.
    pub fn walk_field(&self) -> Result<WField> {
        WField::from_values(self.field.spec, self.weights.clone())
    }

    fn scale_factor(&self) -> f64 {
        (self.side() as f64).powf(self.gamma)
    }
}

/// Occupation numbers `η(x)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleState {
    pub counts: Vec<u64>,
}

impl ParticleState {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    p.sample(rng) as u64
}

/// `η(x) ~ Poisson(u_0(x/N) N^γ W_x)`, independent over sites.
pub fn sample_initial<R: Rng>(cfg: &HydroConfig, rng: &mut R) -> ParticleState {
    let s = cfg.scale_factor();
    let counts = (0..cfg.side()).map(|x| poisson(cfg.u0[x] * s * cfg.field.values[x], rng)).collect();
    ParticleState { counts }
}

/// `η(x) ~ Poisson(ρ W_x)`: the invariant product measure.
pub fn sample_invariant<R: Rng>(field: &WField, rho: f64, rng: &mut R) -> ParticleState {
    ParticleState { counts: field.values.iter().map(|w| poisson(rho * w, rng)).collect() }
}

/// Run one particle from `x` for time `t`, calling `visit(site, from, to)`
/// for every sojourn.
fn run_particle<R: Rng>(cfg: &HydroConfig, mut x: usize, t: f64, rng: &mut R, mut visit: impl FnMut(usize, f64, f64)) -> usize {
    let n = cfg.side();
    let mut clock = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let hold = e / cfg.rates[x];
        let end = (clock + hold).min(t);
        visit(x, clock, end);
        if clock + hold >= t {
            return x;
        }
        clock += hold;
        x = if rng.random::<bool>() { (x + 1) % n } else { (x + n - 1) % n };
    }
}

/// Evolve every particle independently for time `t`.
pub fn simulate_particles<R: Rng>(cfg: &HydroConfig, eta0: &ParticleState, t: f64, rng: &mut R) -> Result<ParticleState> {
    check_state(cfg, eta0, t)?;
    let mut out = vec![0u64; cfg.side()];
    for (x, &k) in eta0.counts.iter().enumerate() {
        for _ in 0..k {
            out[run_particle(cfg, x, t, rng, |_, _, _| {})] += 1;
        }
    }
    Ok(ParticleState { counts: out })
}

/// As [`simulate_particles`], also returning every particle's path.
pub fn simulate_particles_recorded<R: Rng>(
    cfg: &HydroConfig,
    eta0: &ParticleState,
    t: f64,
    rng: &mut R,
) -> Result<(ParticleState, Vec<Trajectory>)> {
    check_state(cfg, eta0, t)?;
    let spec = cfg.field.spec;
    let mut out = vec![0u64; cfg.side()];
    let mut paths = Vec::new();
    for (x, &k) in eta0.counts.iter().enumerate() {
        for _ in 0..k {
            let mut segments = Vec::new();
            let end = run_particle(cfg, x, t, rng, |s, a, b| segments.push(Segment { site: Site(s), holding: b - a }));
            out[end] += 1;
            paths.push(Trajectory { spec, start: Site(x), segments, total_time: t });
        }
    }
    Ok((ParticleState { counts: out }, paths))
}

fn check_state(cfg: &HydroConfig, eta: &ParticleState, t: f64) -> Result<()> {
    if eta.counts.len() != cfg.side() {
        return invalid("particle state does not match the torus");
    }
    if !(t >= 0.0 && t.is_finite()) {
        return invalid("time must be finite and non-negative");
    }
    Ok(())
}

/// `<π^N, H> = N^{-γ} Σ_x H(x/N) η(x)`.
pub fn empirical_measure(eta: &ParticleState, gamma: f64, h: impl Fn(f64) -> f64) -> f64 {
    let n = eta.counts.len() as f64;
    let s: f64 = eta.counts.iter().enumerate().map(|(x, &k)| h(x as f64 / n) * k as f64).sum();
    s / n.powf(gamma)
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `∫_a^b g(t) dt` by five-point Gauss–Legendre.
fn gauss(a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    half * GAUSS5.iter().map(|&(x, w)| w * g(mid + half * x)).sum::<f64>()
}

/// `∫_0^T N^{-(1+γ)} Σ_x G(t, x/N) η_t(x) / W_x dt`, integrated sojourn by
/// sojourn along the particle paths.
pub fn spacetime_measure(cfg: &HydroConfig, paths: &[Trajectory], t_end: f64, g: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let n = cfg.side() as f64;
    let mut total = 0.0;
    for p in paths {
        if p.total_time < t_end * (1.0 - 1e-12) {
            return invalid("a path ends before the integration horizon");
        }
        let mut clock = 0.0;
        for s in &p.segments {
            if clock >= t_end {
                break;
            }
            let end = (clock + s.holding).min(t_end);
            let x = s.site.0;
            let pos = x as f64 / n;
            total += gauss(clock, end, |t| g(t, pos)) / cfg.field.values[x];
            clock += s.holding;
        }
    }
    Ok(total / n.powf(1.0 + cfg.gamma))
}

/// Step-size control for [`solve_master`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtControl {
    /// Sup-norm bound on the step-doubling error estimate per step.
    pub tol: f64,
    pub dt_initial: f64,
    pub dt_max: f64,
    /// Times at which the solution is recorded (0 is always recorded).
    pub output_times: Vec<f64>,
}

impl DtControl {
    pub fn new(output_times: Vec<f64>) -> Self {
        Self { tol: 1e-11, dt_initial: 1e-12, dt_max: 1e-2, output_times }
    }
}

/// Solution of the master equation on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub n: usize,
    pub times: Vec<f64>,
    /// `u[k][x]` at `times[k]`.
    pub u: Vec<Vec<f64>>,
    /// `Σ_x W_x u_t(x)` at each time.
    pub conserved_mass: Vec<f64>,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

/// Solve `(diag(a) + cyclic off-diagonal b) x = r` for a symmetric cyclic
/// tridiagonal matrix with constant off-diagonal `b`, via Thomas plus a
/// rank-one correction.
pub fn solve_cyclic_tridiagonal(a: &[f64], b: f64, r: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert!(n >= 3 && r.len() == n);
    // A = T + u vᵀ with u = (γ, 0, .., b), v = (1, 0, .., b/γ).
    let gamma = -a[0];
    let mut diag = a.to_vec();
    diag[0] -= gamma;
    diag[n - 1] -= b * b / gamma;
    let thomas = |rhs: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = b / diag[0];
        d[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - b * c[i - 1];
            c[i] = b / m;
            d[i] = (rhs[i] - b * d[i - 1]) / m;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    };
    let y = thomas(r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = b;
    let z = thomas(&u);
    let factor = (y[0] + b * y[n - 1] / gamma) / (1.0 + z[0] + b * z[n - 1] / gamma);
    y.iter().zip(&z).map(|(yi, zi)| yi - factor * zi).collect()
}

/// One implicit Euler step: `(D + dt K) u' = D u`.
fn euler_step(weights: &[f64], conductance: f64, u: &[f64], dt: f64) -> Vec<f64> {
    let a: Vec<f64> = weights.iter().map(|w| w + 2.0 * dt * conductance).collect();
    let r: Vec<f64> = weights.iter().zip(u).map(|(w, x)| w * x).collect();
    solve_cyclic_tridiagonal(&a, -dt * conductance, &r)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Integrate the master equation from `u_0` with adaptive implicit Euler
/// (step doubling; the two half-steps are kept).
pub fn solve_master(cfg: &HydroConfig, ctl: &DtControl) -> Result<DensityField> {
    if !(ctl.tol > 0.0 && ctl.dt_initial > 0.0 && ctl.dt_max >= ctl.dt_initial) {
        return invalid("step control needs tol > 0 and 0 < dt_initial <= dt_max");
    }
    let mut outs: Vec<f64> = ctl.output_times.clone();
    if outs.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return invalid("output times must be finite and non-negative");
    }
    outs.sort_by(f64::total_cmp);
    outs.dedup();
    let w = &cfg.weights;
    let mass = |u: &[f64]| crate::environment::compensated_sum(&w.iter().zip(u).map(|(a, b)| a * b).collect::<Vec<_>>());
    let mut u = cfg.u0.clone();
    let mut t = 0.0;
    let mut dt = ctl.dt_initial;
    let mut field = DensityField {
        n: cfg.side(),
        times: vec![0.0],
        u: vec![u.clone()],
        conserved_mass: vec![mass(&u)],
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let budget = 50_000_000u64;
    for &target in outs.iter().filter(|&&s| s > 0.0) {
        while t < target {
            if field.accepted_steps + field.rejected_steps > budget {
                return Err(TrapError::SolverDiverged { iterations: budget as usize, residual: dt });
            }
            let clipped = dt >= target - t;
            let h = if clipped { target - t } else { dt };
            let full = euler_step(w, cfg.conductance, &u, h);
            let half = euler_step(w, cfg.conductance, &u, h / 2.0);
            let two = euler_step(w, cfg.conductance, &half, h / 2.0);
            let err = sup_diff(&full, &two);
            if err <= ctl.tol || h <= f64::EPSILON * t.max(1e-300) {
                u = two;
                t = if clipped { target } else { t + h };
                field.accepted_steps += 1;
                if !clipped {
                    let grow = if err > 0.0 { 0.9 * (ctl.tol / err).sqrt() } else { 2.0 };
                    dt = (h * grow.clamp(0.2, 2.0)).min(ctl.dt_max);
                }
            } else {
                field.rejected_steps += 1;
                dt = h * (0.9 * (ctl.tol / err).sqrt()).clamp(0.1, 0.5);
            }
        }
        field.times.push(target);
        field.conserved_mass.push(mass(&u));
        field.u.push(u.clone());
    }
    Ok(field)
}

impl DensityField {
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        self.times.iter().position(|&s| s == t).map(|k| self.u[k].as_slice())
    }

    /// Largest relative drift of the conserved mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.conserved_mass[0];
        self.conserved_mass.iter().map(|m| (m - m0).abs() / m0.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    }

    /// `Σ_x N [u(x+1) - u(x)]^2` at each recorded time.
    pub fn energies(&self) -> Vec<f64> {
        let n = self.n;
        self.u
            .iter()
            .map(|u| (0..n).map(|x| (u[(x + 1) % n] - u[x]).powi(2)).sum::<f64>() * n as f64)
            .collect()
    }

    /// Rows `t,x,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.u) {
            for (x, v) in row.iter().enumerate() {
                writeln!(w, "{t:e},{x},{v:e}")?;
            }
        }
        Ok(())
    }

    /// Header `N: u32, n_times: u32` (little-endian), then one row per time:
    /// `t` followed by the `N` values, all `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.times.len() as u32).to_le_bytes())?;
        for (t, row) in self.times.iter().zip(&self.u) {
            w.write_all(&t.to_le_bytes())?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// `Σ_x H(x/N) u(x) W_x`: the limit pairing of `<π_t, H>`.
pub fn pairing(cfg: &HydroConfig, u: &[f64], h: impl Fn(f64) -> f64) -> f64 {
    let n = cfg.side() as f64;
    u.iter().enumerate().map(|(x, v)| h(x as f64 / n) * v * cfg.field.values[x]).sum()
}

/// Monte Carlo mean of `<π_t, H>` against the solver pairing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroComparison {
    pub mc_mean: f64,
    pub mc_se: f64,
    pub ode_value: f64,
    pub replicas: u64,
    /// `|mc_mean - ode_value| / mc_se`.
    pub z_score: f64,
}

impl HydroComparison {
    pub fn pass(&self) -> bool {
        self.z_score <= 3.0
    }
}

/// Solver control used by [`hydro_comparison`].
pub fn default_control(t: f64) -> DtControl {
    DtControl::new(vec![t])
}

pub fn hydro_comparison(
    cfg: &HydroConfig,
    h: impl Fn(f64) -> f64 + Sync,
    t: f64,
    replicas: u64,
    seed: u64,
) -> Result<HydroComparison> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let ode_value = if t == 0.0 {
        pairing(cfg, &cfg.u0, &h)
    } else {
        let sol = solve_master(cfg, &default_control(t))?;
        pairing(cfg, sol.at(t).expect("recorded"), &h)
    };
    let samples: Vec<f64> = (0..replicas as usize)
        .into_par_iter()
        .map(|r| {
            let eta0 = sample_initial(cfg, &mut stream(seed, Purpose::InitialState, r as u64));
            let eta = simulate_particles(cfg, &eta0, t, &mut stream(seed, Purpose::Particles, r as u64))?;
            Ok(empirical_measure(&eta, cfg.gamma, &h))
        })
        .collect::<Result<_>>()?;
    let acc: MeanAccumulator = samples.into_iter().collect();
    let se = acc.std_error();
    Ok(HydroComparison {
        mc_mean: acc.mean(),
        mc_se: se,
        ode_value,
        replicas,
        z_score: (acc.mean() - ode_value).abs() / se.max(f64::MIN_POSITIVE),
    })
}

/// One row of the two-blocks diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBlocksRow {
    pub epsilon: f64,
    pub ell: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Per-site weight `c(z)` with `Σ_x G(x/N) [η(x)/W_x - M^ℓ(x)/W_N(x,ℓ)] =
/// Σ_z η(z) c(z)`, blocks `x + {1..ℓ}`.
fn block_weights(field: &WField, ell: usize, g: &impl Fn(f64) -> f64) -> Vec<f64> {
    let n = field.spec.side();
    let w = &field.values;
    let gx: Vec<f64> = (0..n).map(|x| g(x as f64 / n as f64)).collect();
    // W_N(x, ℓ) by a sliding window.
    let mut block = vec![0.0; n];
    let mut s: f64 = (1..=ell).map(|y| w[(y) % n]).sum();
    for x in 0..n {
        block[x] = s;
        s += w[(x + ell + 1) % n] - w[(x + 1) % n];
    }
    let mut c: Vec<f64> = (0..n).map(|z| gx[z] / w[z]).collect();
    for x in 0..n {
        let share = gx[x] / block[x];
        for y in 1..=ell {
            c[(x + y) % n] -= share;
        }
    }
    c
}

/// Monte Carlo `E | ∫_0^T N^{-(1+γ)} Σ_x G(x/N) {η_s(x)/W_x - M^ℓ_s(x)/W_N(x,ℓ)} ds |`
/// for `ℓ = ⌊εN⌋`, all `ε` evaluated on the same particle paths.
pub fn two_blocks_diagnostic(
    cfg: &HydroConfig,
    g: impl Fn(f64) -> f64 + Sync,
    epsilons: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<TwoBlocksRow>> {
    let n = cfg.side();
    if epsilons.is_empty() || replicas < 2 {
        return invalid("need at least one ε and two replicas");
    }
    let mut ells = Vec::new();
    for &e in epsilons {
        let l = (e * n as f64).floor() as usize;
        if !(e > 0.0) || l == 0 || l > n {
            return invalid(format!("ε = {e} gives a block size outside 1..={n}"));
        }
        ells.push(l);
    }
    let weights: Vec<Vec<f64>> = ells.iter().map(|&l| block_weights(&cfg.field, l, &g)).collect();
    let norm = (n as f64).powf(1.0 + cfg.gamma);
    let horizon = cfg.horizon;
    let samples: Vec<Vec<f64>> = (0..replicas as usize)
        .into_par_iter()
        .map(|r| {
            let eta0 = sample_initial(cfg, &mut stream(seed, Purpose::InitialState, r as u64));
            let mut rng = stream(seed, Purpose::Particles, r as u64);
            let mut occ = vec![0.0; n];
            for (x, &k) in eta0.counts.iter().enumerate() {
                for _ in 0..k {
                    run_particle(cfg, x, horizon, &mut rng, |s, a, b| occ[s] += b - a);
                }
            }
            weights
                .iter()
                .map(|c| (c.iter().zip(&occ).map(|(ci, o)| ci * o).sum::<f64>() / norm).abs())
                .collect()
        })
        .collect();
    Ok(epsilons
        .iter()
        .zip(&ells)
        .enumerate()
        .map(|(k, (&epsilon, &ell))| {
            let acc: MeanAccumulator = samples.iter().map(|s| s[k]).collect();
            TwoBlocksRow { epsilon, ell, mean: acc.mean(), std_error: acc.std_error() }
        })
        .collect())
}

/// Both sides of the weak formulation for a test function `G` with
/// `G(T, ·) = 0`, evaluated on the solver output by trapezoidal quadrature
/// in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl WeakFormCheck {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Time grid for [`weak_form_check`]: geometric near 0 to resolve the
/// initial transient at shallow sites, then uniform.
pub fn weak_form_grid(t_end: f64, uniform: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..=120).map(|k| t_end * 1e-12 * 10f64.powf(k as f64 / 12.0)).filter(|&t| t < t_end / uniform as f64).collect();
    ts.extend((1..=uniform).map(|k| t_end * k as f64 / uniform as f64));
    ts
}

/// `<G_0, u_0>_W + ∫ <∂_t G, u>_W dt` against `(N/2) ∫ Σ_x ΔG Δu dt`.
pub fn weak_form_check(
    cfg: &HydroConfig,
    sol: &DensityField,
    g: impl Fn(f64, f64) -> f64,
    dg_dt: impl Fn(f64, f64) -> f64,
) -> Result<WeakFormCheck> {
    if !matches!(cfg.scale, TimeScale::Diffusive) {
        return invalid("weak form check uses the diffusive scale");
    }
    let n = cfg.side();
    let nf = n as f64;
    let w = &cfg.field.values;
    let pair_w = |f: &dyn Fn(f64) -> f64, u: &[f64]| (0..n).map(|x| f(x as f64 / nf) * u[x] * w[x]).sum::<f64>();
    let grad = |t: f64, u: &[f64]| {
        (0..n)
            .map(|x| (g(t, ((x + 1) % n) as f64 / nf) - g(t, x as f64 / nf)) * (u[(x + 1) % n] - u[x]))
            .sum::<f64>()
            * nf
            / 2.0
    };
    let lhs0 = pair_w(&|x| g(0.0, x), &sol.u[0]);
    let mut lhs = lhs0;
    let mut rhs = 0.0;
    for k in 1..sol.times.len() {
        let (t0, t1) = (sol.times[k - 1], sol.times[k]);
        let h = t1 - t0;
        let a0 = pair_w(&|x| dg_dt(t0, x), &sol.u[k - 1]);
        let a1 = pair_w(&|x| dg_dt(t1, x), &sol.u[k]);
        lhs += h * (a0 + a1) / 2.0;
        rhs += h * (grad(t0, &sol.u[k - 1]) + grad(t1, &sol.u[k])) / 2.0;
    }
    Ok(WeakFormCheck { lhs, rhs })
}

/// Torus of side `n` in one dimension.
pub fn line(n: usize) -> Result<TorusSpec> {
    TorusSpec::new(1, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(values: Vec<f64>, u0: impl Fn(f64) -> f64) -> HydroConfig {
        let n = values.len();
        let f = WField::from_values(line(n).unwrap(), values).unwrap();
        HydroConfig::new(&f, 1.0, u0, 1.0, TimeScale::Diffusive).unwrap()
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let a = vec![4.0, 5.0, 3.5, 6.0, 4.5];
        let b = -1.25;
        let r = vec![1.0, -2.0, 0.5, 3.0, 1.5];
        let x = solve_cyclic_tridiagonal(&a, b, &r);
        let n = a.len();
        for i in 0..n {
            let ax = a[i] * x[i] + b * x[(i + 1) % n] + b * x[(i + n - 1) % n];
            assert!((ax - r[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_profile_gives_empty_state() {
        let c = cfg(vec![0.5; 8], |_| 0.0);
        assert_eq!(sample_initial(&c, &mut stream(1, Purpose::InitialState, 0)).total(), 0);
    }

    #[test]
    fn particle_count_is_conserved() {
        let c = cfg(vec![0.5, 0.1, 2.0, 0.3, 0.05, 1.0], |x| 1.0 + x);
        let mut rng = stream(2, Purpose::Particles, 0);
        let eta0 = sample_initial(&c, &mut rng);
        let eta = simulate_particles(&c, &eta0, 0.7, &mut rng).unwrap();
        assert_eq!(eta.total(), eta0.total());
    }

    #[test]
    fn empirical_measure_basics() {
        let mut counts = vec![0u64; 8];
        counts[3] = 1;
        let eta = ParticleState { counts };
        assert!((empirical_measure(&eta, 1.0, |_| 1.0) - 0.125).abs() < 1e-15);
        assert_eq!(empirical_measure(&eta, 1.0, |_| 0.0), 0.0);
    }

    #[test]
    fn spacetime_measure_constant_integrand() {
        let c = cfg(vec![0.5, 0.1, 2.0, 0.3], |_| 1.0);
        let spec = c.field.spec;
        let p = Trajectory { spec, start: Site(2), segments: vec![Segment { site: Site(2), holding: 3.0 }], total_time: 3.0 };
        let m = spacetime_measure(&c, &[p.clone()], 3.0, |_, _| 1.0).unwrap();
        assert!((m - 3.0 / (16.0 * 2.0)).abs() < 1e-14);
        assert_eq!(spacetime_measure(&c, &[p], 3.0, |_, _| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn constants_are_stationary() {
        let c = cfg(vec![0.5, 0.1, 2.0, 0.3, 0.05, 1.0], |_| 0.75);
        let sol = solve_master(&c, &DtControl::new(vec![0.1, 1.0])).unwrap();
        for row in &sol.u {
            for v in row {
                assert!((v - 0.75).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn block_weights_vanish_for_full_blocks_and_constant_test_function() {
        let f = WField::uniform(line(16).unwrap(), 0.25).unwrap();
        let c = block_weights(&f, 16, &|_| 1.0);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_configurations() {
        let f = WField::uniform(TorusSpec::new(2, 4).unwrap(), 1.0).unwrap();
        assert!(HydroConfig::new(&f, 1.0, |_| 1.0, 1.0, TimeScale::Diffusive).is_err());
        let f = WField::uniform(line(8).unwrap(), 1.0).unwrap();
        assert!(HydroConfig::new(&f, 0.0, |_| 1.0, 1.0, TimeScale::Diffusive).is_err());
        assert!(HydroConfig::new(&f, 1.0, |_| -1.0, 1.0, TimeScale::Diffusive).is_err());
    }
}
