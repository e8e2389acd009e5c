//! Truncated K-processes and the convergence experiments that compare the
//! trace of the trap walk on its deepest traps with them.
//!
//! The `M`-truncated process holds an exponential time of mean `ŵ_i / v` at
//! state `i` and then jumps to a uniformly chosen state of `{1..M}`, itself
//! included. Merging self-jumps gives the chain with off-diagonal rates
//! `v / (M ŵ_i)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{rank_traps, WField};
use crate::error::{invalid, Result};
use crate::lattice::{Site, SiteSet};
use crate::potential::{trace_rates_exact, ChainSpec};
use crate::rng::{stream, Purpose};
use crate::stats::{total_variation, MeanAccumulator};
use crate::walk::{Walker, WalkConfig};

/// Escape probability of the simple random walk on `Z^3`,
/// `1 / G_{Z^3}(0,0)` with `G = 1.516386059151978...`.
pub const V3: f64 = 0.659_462_670_2;

/// Which limit the trace process is compared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// `d = 3`, no speed-up, rate constant `v_3`.
    D3,
    /// `d = 2`, speed-up `log N`, rate constant `π/2`.
    D2LogN,
}

impl KMode {
    pub fn dim(self) -> usize {
        match self {
            KMode::D3 => 3,
            KMode::D2LogN => 2,
        }
    }

    pub fn rate_constant(self) -> f64 {
        match self {
            KMode::D3 => V3,
            KMode::D2LogN => std::f64::consts::FRAC_PI_2,
        }
    }

    /// Time speed-up applied to the walk on an `N`-torus.
    pub fn theta(self, n: usize) -> f64 {
        match self {
            KMode::D3 => 1.0,
            KMode::D2LogN => (n as f64).ln(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KMode::D3 => "d3",
            KMode::D2LogN => "d2_logN",
        }
    }
}

/// Parameters of a truncated K-process with `c = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KParams {
    /// `ŵ_1 ≥ ŵ_2 ≥ ... > 0`.
    pub weights: Vec<f64>,
    /// `v`: `v_3` or `π/2`.
    pub rate_constant: f64,
    pub c: f64,
}

impl KParams {
    pub fn new(weights: Vec<f64>, rate_constant: f64) -> Result<Self> {
        if weights.is_empty() {
            return invalid("need at least one weight");
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return invalid("weights must be positive and finite");
        }
        if weights.windows(2).any(|p| p[1] > p[0]) {
            return invalid("weights must be non-increasing");
        }
        if !(rate_constant > 0.0 && rate_constant.is_finite()) {
            return invalid("rate constant must be positive");
        }
        Ok(Self { weights, rate_constant, c: 0.0 })
    }

    pub fn for_mode(weights: Vec<f64>, mode: KMode) -> Result<Self> {
        Self::new(weights, mode.rate_constant())
    }

    /// The top-`m` cube masses of `field`, in rank order.
    pub fn from_field(field: &WField, m: usize, mode: KMode) -> Result<(Self, Vec<Site>)> {
        let traps = rank_traps(field, m)?;
        let w = traps.iter().map(|&x| field.value(x)).collect();
        Ok((Self::for_mode(w, mode)?, traps))
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.weights.len() {
            return invalid(format!("M = {m} outside 1..={}", self.weights.len()));
        }
        Ok(())
    }

    /// Mean holding time between (possibly self-) jumps at state `i`.
    pub fn raw_holding_mean(&self, i: usize) -> f64 {
        self.weights[i] / self.rate_constant
    }
}

/// Generator of the `M`-truncated chain, row-major `M x M`.
pub fn build_generator(params: &KParams, m: usize) -> Result<Vec<f64>> {
    params.check_m(m)?;
    let mut q = vec![0.0; m * m];
    for i in 0..m {
        let r = params.rate_constant / (m as f64 * params.weights[i]);
        for j in 0..m {
            if j != i {
                q[i * m + j] = r;
            }
        }
        q[i * m + i] = -(0..m).filter(|&j| j != i).map(|j| q[i * m + j]).sum::<f64>();
    }
    Ok(q)
}

/// Path on the state labels `0..M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    /// `(state, holding)` with consecutive states distinct.
    pub segments: Vec<(usize, f64)>,
    pub total_time: f64,
}

impl StatePath {
    pub fn state_at(&self, t: f64) -> usize {
        let mut clock = 0.0;
        for &(s, h) in &self.segments {
            clock += h;
            if t < clock {
                return s;
            }
        }
        self.segments.last().map(|s| s.0).unwrap_or(0)
    }
}

/// Simulate the `M`-truncated K-process from state `i0` (0-based) on
/// `[0, horizon]`.
pub fn simulate_truncated_k<R: Rng>(
    params: &KParams,
    m: usize,
    i0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<StatePath> {
    params.check_m(m)?;
    if i0 >= m {
        return invalid(format!("start state {i0} outside 0..{m}"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return invalid("horizon must be positive and finite");
    }
    let mut segments: Vec<(usize, f64)> = Vec::new();
    let mut t = 0.0;
    let mut i = i0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let hold = (e * params.raw_holding_mean(i)).min(horizon - t);
        match segments.last_mut() {
            Some(last) if last.0 == i => last.1 += hold,
            _ => segments.push((i, hold)),
        }
        t += hold;
        if t >= horizon {
            break;
        }
        i = rng.random_range(0..m);
    }
    Ok(StatePath { segments, total_time: horizon })
}

/// Law of the chain with generator `q` at time `t` from `i0`, by
/// uniformization.
pub fn transition_law(q: &[f64], m: usize, i0: usize, t: f64) -> Result<Vec<f64>> {
    if q.len() != m * m || i0 >= m || !(t >= 0.0) {
        return invalid("inconsistent generator, start state or time");
    }
    let lam = (0..m).map(|i| -q[i * m + i]).fold(0.0, f64::max);
    let mut p = vec![0.0; m];
    p[i0] = 1.0;
    if lam == 0.0 || t == 0.0 {
        return Ok(p);
    }
    // Split long horizons so that each piece has Λt ≤ 20.
    let pieces = ((lam * t) / 20.0).ceil().max(1.0) as usize;
    let h = t / pieces as f64;
    let lh = lam * h;
    for _ in 0..pieces {
        let mut term = p.clone();
        let mut weight = (-lh).exp();
        let mut out: Vec<f64> = term.iter().map(|x| x * weight).collect();
        let mut k = 0usize;
        let mut acc = weight;
        while 1.0 - acc > 1e-16 && k < 10_000 {
            k += 1;
            // term <- term · P with P = I + Q/Λ.
            let next: Vec<f64> = (0..m)
                .map(|j| (0..m).map(|i| term[i] * (q[i * m + j] / lam + if i == j { 1.0 } else { 0.0 })).sum())
                .collect();
            term = next;
            weight *= lh / k as f64;
            acc += weight;
            for j in 0..m {
                out[j] += weight * term[j];
            }
        }
        p = out;
    }
    Ok(p)
}

/// One row of a trace-rate convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    /// Ranks, 0-based.
    pub i: usize,
    pub j: usize,
    pub r_exact: f64,
    pub r_limit: f64,
    pub rel_err: f64,
    pub mode: KMode,
}

/// Exact trace rates on the top-`M` traps (times `log N` in the `d = 2`
/// mode) against the K-process rates `v / (M ŵ_i)`. Rows are sorted by
/// decreasing `|rel_err|`.
pub fn trace_convergence_experiment(field: &WField, m: usize, mode: KMode) -> Result<Vec<RateComparison>> {
    let spec = field.spec;
    if spec.dim() != mode.dim() {
        return invalid(format!("mode {} needs d = {}, field has d = {}", mode.name(), mode.dim(), spec.dim()));
    }
    if m < 2 {
        return invalid("need at least two traps");
    }
    let (params, traps) = KParams::from_field(field, m, mode)?;
    let chain = ChainSpec::new(field);
    let exact = trace_rates_exact(&chain, &traps)?;
    let theta = mode.theta(spec.side());
    let mut rows = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        let r_limit = params.rate_constant / (m as f64 * params.weights[i]);
        for j in 0..m {
            if i == j {
                continue;
            }
            let r_exact = theta * exact.rate(i, j);
            rows.push(RateComparison {
                d: spec.dim(),
                n: spec.side(),
                m,
                i,
                j,
                r_exact,
                r_limit,
                rel_err: (r_exact - r_limit) / r_limit,
                mode,
            });
        }
    }
    rows.sort_by(|a, b| b.rel_err.abs().total_cmp(&a.rel_err.abs()).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(rows)
}

/// Mean time outside the top-`M` traps, per starting trap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationResult {
    pub traps: Vec<Site>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Largest mean over starting traps.
    pub max_mean: f64,
}

/// Monte Carlo estimate of `E_{x_j}[time outside A_M during [0, T]]` for
/// each of the top-`M` traps `x_j`; speed-up `1` for `d ≥ 3` and `log N`
/// for `d = 2`.
pub fn occupation_negligibility(field: &WField, m: usize, t: f64, replicas: u64, seed: u64) -> Result<OccupationResult> {
    let spec = field.spec;
    if !(t > 0.0 && t.is_finite()) || replicas == 0 {
        return invalid("need T > 0 and at least one replica");
    }
    let traps = rank_traps(field, m)?;
    if m == spec.sites() {
        return Ok(OccupationResult { mean: vec![0.0; m], std_error: vec![0.0; m], traps, max_mean: 0.0 });
    }
    let set = SiteSet::new(&spec, &traps)?;
    let theta = if spec.dim() == 2 { (spec.side() as f64).ln() } else { 1.0 };
    let cfg = WalkConfig::new(field, theta, seed)?;
    let mut mean = Vec::with_capacity(m);
    let mut se = Vec::with_capacity(m);
    for (j, &x) in traps.iter().enumerate() {
        let samples: Vec<f64> = (0..replicas as usize)
            .into_par_iter()
            .map(|r| {
                let rng = stream(seed, Purpose::Walk, (j as u64) << 32 | r as u64);
                let mut walker = Walker::new(cfg.field, cfg.theta, x, rng).expect("trap is on the torus");
                let (mut clock, mut outside) = (0.0, 0.0);
                while clock < t {
                    let (y, hold) = walker.step();
                    let piece = hold.min(t - clock);
                    if !set.contains(y) {
                        outside += piece;
                    }
                    clock += hold;
                }
                outside
            })
            .collect();
        let acc: MeanAccumulator = samples.into_iter().collect();
        mean.push(acc.mean());
        se.push(acc.std_error());
    }
    let max_mean = mean.iter().copied().fold(0.0, f64::max);
    Ok(OccupationResult { traps, mean, std_error: se, max_mean })
}

/// Pairs `(N, ℓ_N)` with `ℓ_N` non-decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSchedule {
    pub d: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl TruncationSchedule {
    pub fn new(d: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("schedule must not be empty");
        }
        for &(n, l) in &pairs {
            let sites = (n as u128).pow(d as u32);
            if l == 0 || l as u128 > sites {
                return invalid(format!("ℓ = {l} outside 1..=N^d for N = {n}"));
            }
        }
        if pairs.windows(2).any(|p| p[1].1 < p[0].1 || p[1].0 <= p[0].0) {
            return invalid("schedule must have increasing N and non-decreasing ℓ");
        }
        Ok(Self { d, pairs })
    }

    /// `ℓ_N = ⌊log2 N⌋`, capped by `cap` (the number of resolved atoms).
    pub fn log2(d: usize, ns: &[usize], cap: usize) -> Result<Self> {
        let pairs = ns.iter().map(|&n| (n, (n.max(2).ilog2() as usize).min(cap).max(1))).collect();
        Self::new(d, pairs)
    }
}

/// Comparison of the trace walk on the top-`ℓ` traps with the `ℓ`-truncated
/// K-process at one `(N, ℓ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub n: usize,
    pub ell: usize,
    /// Mean over replicas of `sup_t |1/(a_t+1) - 1/(b_t+1)|` on the grid,
    /// with `a`, `b` the trap ranks of the two processes.
    pub sup_distance: f64,
    pub sup_distance_se: f64,
    /// Fractions of the horizon at which laws are compared.
    pub times: Vec<f64>,
    /// Empirical TV between the two samples at each time.
    pub tv: Vec<f64>,
    /// TV between the trace-walk sample and the exact K-process law.
    pub tv_exact: Vec<f64>,
    /// Replicas whose trace did not reach the horizon within the step cap.
    pub censored: u64,
}

pub const COUPLING_TIMES: [f64; 3] = [0.25, 0.5, 1.0];

/// Run both processes for every `(N, ℓ_N)` in the schedule. `fields[k]` is
/// the environment on the `k`-th torus of the schedule.
pub fn diagonal_coupling(
    fields: &[WField],
    schedule: &TruncationSchedule,
    mode: KMode,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<CouplingRow>> {
    if fields.len() != schedule.pairs.len() {
        return invalid("one field per schedule entry is required");
    }
    if !(horizon > 0.0) || replicas == 0 {
        return invalid("need a positive horizon and at least one replica");
    }
    let mut rows = Vec::new();
    for (k, (field, &(n, ell))) in fields.iter().zip(&schedule.pairs).enumerate() {
        if field.spec.side() != n || field.spec.dim() != mode.dim() {
            return invalid(format!("field {k} does not match the schedule entry (N = {n}, d = {})", mode.dim()));
        }
        let (params, traps) = KParams::from_field(field, ell, mode)?;
        let set = SiteSet::new(&field.spec, &traps)?;
        let cfg = WalkConfig::new(field, mode.theta(n), seed)?;
        let grid: Vec<f64> = (0..=1000).map(|g| horizon * g as f64 / 1000.0).collect();
        let cap = 1_000_000u64.max(200 * field.spec.sites() as u64) * ell as u64;
        let rank = |x: Site| traps.iter().position(|&t| t == x).expect("trace stays on the traps");
        let times: Vec<f64> = COUPLING_TIMES.iter().map(|f| f * horizon).collect();

        let outcomes: Vec<(f64, Vec<usize>, Vec<usize>, bool)> = (0..replicas as usize)
            .into_par_iter()
            .map(|r| -> Result<_> {
                let replica = (k as u64) << 32 | r as u64;
                let (walk, complete) = crate::walk::simulate_trace(
                    &cfg,
                    traps[0],
                    &set,
                    horizon,
                    cap,
                    stream(seed, Purpose::Walk, replica),
                )?;
                let kp = simulate_truncated_k(&params, ell, 0, horizon, &mut stream(seed, Purpose::KProcess, replica))?;
                let mut sup: f64 = 0.0;
                for &t in &grid {
                    let a = walk.position_at(t).map(rank).unwrap_or(0);
                    let b = kp.state_at(t);
                    sup = sup.max((1.0 / (a + 1) as f64 - 1.0 / (b + 1) as f64).abs());
                }
                let wa = times.iter().map(|&t| walk.position_at(t).map(rank).unwrap_or(0)).collect();
                let kb = times.iter().map(|&t| kp.state_at(t)).collect();
                Ok((sup, wa, kb, complete))
            })
            .collect::<Result<_>>()?;

        let acc: MeanAccumulator = outcomes.iter().map(|o| o.0).collect();
        let q = build_generator(&params, ell)?;
        let mut tv = Vec::new();
        let mut tv_exact = Vec::new();
        for (ti, &t) in times.iter().enumerate() {
            let mut ca = vec![0u64; ell];
            let mut cb = vec![0u64; ell];
            for o in &outcomes {
                ca[o.1[ti]] += 1;
                cb[o.2[ti]] += 1;
            }
            tv.push(total_variation(&ca, &cb));
            let law = transition_law(&q, ell, 0, t)?;
            let total = replicas as f64;
            tv_exact.push(0.5 * ca.iter().zip(&law).map(|(&c, p)| (c as f64 / total - p).abs()).sum::<f64>());
        }
        rows.push(CouplingRow {
            n,
            ell,
            sup_distance: acc.mean(),
            sup_distance_se: if replicas > 1 { acc.std_error() } else { 0.0 },
            times,
            tv,
            tv_exact,
            censored: outcomes.iter().filter(|o| !o.3).count() as u64,
        });
    }
    Ok(rows)
}

/// Sample of the K-process state at `t` for independent replicas; used for
/// same-law sanity checks.
pub fn sample_states_at(params: &KParams, m: usize, t: f64, replicas: u64, seed: u64, purpose: Purpose) -> Result<Vec<u64>> {
    let states: Vec<usize> = (0..replicas as usize)
        .into_par_iter()
        .map(|r| {
            let path = simulate_truncated_k(params, m, 0, t * (1.0 + 1e-12) + f64::MIN_POSITIVE, &mut stream(seed, purpose, r as u64))?;
            Ok(path.state_at(t))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; m];
    for s in states {
        counts[s] += 1;
    }
    Ok(counts)
}
