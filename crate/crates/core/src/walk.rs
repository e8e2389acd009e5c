//! Event-driven simulation of the trap walk.
//!
//! The walk jumps to a uniformly chosen nearest neighbour after an exponential
//! holding time of mean `W_x / θ` at site `x`. Paths are stored as
//! `(site, holding)` segments; every path functional (hitting, return and
//! occupation times, traces) works on that representation or on the
//! streaming [`Walker`] when a path would be too long to keep.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::environment::WField;
use crate::error::{invalid, Result, TrapError};
use crate::lattice::{Site, SiteSet, TorusSpec};
use crate::rng::{stream, Purpose};

/// Parameters of one walk: environment, time speed-up and seed.
#[derive(Clone, Copy, Debug)]
pub struct WalkConfig<'a> {
    pub field: &'a WField,
    pub theta: f64,
    pub seed: u64,
}

impl<'a> WalkConfig<'a> {
    pub fn new(field: &'a WField, theta: f64, seed: u64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return invalid(format!("speed-up must be positive and finite, got {theta}"));
        }
        Ok(Self { field, theta, seed })
    }

    /// Mean holding time at `x`.
    pub fn mean_holding(&self, x: Site) -> f64 {
        self.field.values[x.0] / self.theta
    }
}

/// One constant piece of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub site: Site,
    pub holding: f64,
}

/// Piecewise-constant right-continuous path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: TorusSpec,
    pub start: Site,
    pub segments: Vec<Segment>,
    pub total_time: f64,
}

impl Trajectory {
    pub fn from_segments(spec: TorusSpec, segments: Vec<Segment>) -> Result<Self> {
        let start = segments.first().map(|s| s.site).unwrap_or(Site(0));
        for s in &segments {
            spec.check(s.site)?;
            if !(s.holding >= 0.0 && s.holding.is_finite()) {
                return invalid(format!("holding must be finite and non-negative, got {}", s.holding));
            }
        }
        let total_time = segments.iter().map(|s| s.holding).sum();
        Ok(Self { spec, start, segments, total_time })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Number of jumps (segment changes).
    pub fn jumps(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    /// Whether consecutive segments sit on neighbouring sites.
    pub fn is_nearest_neighbor(&self) -> bool {
        self.segments.windows(2).all(|w| {
            (0..self.spec.degree()).any(|dir| self.spec.neighbor(w[0].site, dir) == w[1].site)
        })
    }

    /// `X_t`; times at or beyond the end give the last site.
    pub fn position_at(&self, t: f64) -> Option<Site> {
        let mut clock = 0.0;
        for s in &self.segments {
            clock += s.holding;
            if t < clock {
                return Some(s.site);
            }
        }
        self.segments.last().map(|s| s.site)
    }

    /// Time spent at each visited site, sorted by decreasing time (ties by
    /// site index).
    pub fn occupation_profile(&self) -> Vec<(Site, f64)> {
        let mut map = std::collections::BTreeMap::new();
        for s in &self.segments {
            *map.entry(s.site.0).or_insert(0.0) += s.holding;
        }
        let mut v: Vec<(Site, f64)> = map.into_iter().map(|(k, t)| (Site(k), t)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
        v
    }
}

/// Streaming generator of the trap walk.
pub struct Walker<'a, R: Rng> {
    field: &'a WField,
    theta: f64,
    rng: R,
    site: Site,
}

impl<'a, R: Rng> Walker<'a, R> {
    pub fn new(field: &'a WField, theta: f64, start: Site, rng: R) -> Result<Self> {
        field.spec.check(start)?;
        Ok(Self { field, theta, rng, site: start })
    }

    pub fn site(&self) -> Site {
        self.site
    }

    /// Hold at the current site, then jump. Returns the site held and the
    /// holding duration.
    pub fn step(&mut self) -> (Site, f64) {
        let x = self.site;
        let e: f64 = Exp1.sample(&mut self.rng);
        let hold = e * self.field.values[x.0] / self.theta;
        let spec = self.field.spec;
        self.site = spec.neighbor(x, self.rng.random_range(0..spec.degree()));
        (x, hold)
    }
}

/// Simulate `X^N` from `x0` on `[0, horizon]` using `rng`.
pub fn simulate_walk_with<R: Rng>(cfg: &WalkConfig, x0: Site, horizon: f64, rng: R) -> Result<Trajectory> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon must be positive and finite, got {horizon}"));
    }
    let mut walker = Walker::new(cfg.field, cfg.theta, x0, rng)?;
    let mut segments = Vec::new();
    let mut t = 0.0;
    loop {
        let (x, hold) = walker.step();
        if t + hold >= horizon {
            segments.push(Segment { site: x, holding: horizon - t });
            break;
        }
        segments.push(Segment { site: x, holding: hold });
        t += hold;
    }
    Ok(Trajectory { spec: cfg.field.spec, start: x0, segments, total_time: horizon })
}

/// Simulate replica `replica` of the walk; the stream depends only on
/// `(cfg.seed, replica)`.
pub fn simulate_walk_replica(cfg: &WalkConfig, x0: Site, horizon: f64, replica: u64) -> Result<Trajectory> {
    simulate_walk_with(cfg, x0, horizon, stream(cfg.seed, Purpose::Walk, replica))
}

pub fn simulate_walk(cfg: &WalkConfig, x0: Site, horizon: f64) -> Result<Trajectory> {
    simulate_walk_replica(cfg, x0, horizon, 0)
}

/// Result of a hitting-type search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hit {
    At(f64),
    /// The path ended (at the given time) without the event.
    Censored(f64),
}

impl Hit {
    pub fn time(self) -> f64 {
        match self {
            Hit::At(t) | Hit::Censored(t) => t,
        }
    }

    pub fn is_hit(self) -> bool {
        matches!(self, Hit::At(_))
    }
}

fn first_entry(segments: &[Segment], a: &SiteSet, offset: f64, end: f64) -> Hit {
    let mut t = offset;
    for s in segments {
        if a.contains(s.site) {
            return Hit::At(t);
        }
        t += s.holding;
    }
    Hit::Censored(end)
}

/// `H(A) = inf{t ≥ 0 : X_t ∈ A}` on a recorded path.
pub fn hitting_time(traj: &Trajectory, a: &SiteSet) -> Result<Hit> {
    if a.is_empty() {
        return invalid("target set must be nonempty");
    }
    Ok(first_entry(&traj.segments, a, 0.0, traj.total_time))
}

/// `inf{t > T_1 : X_t ∈ A}` with `T_1` the first jump time.
pub fn return_time(traj: &Trajectory, a: &SiteSet) -> Result<Hit> {
    if a.is_empty() {
        return invalid("target set must be nonempty");
    }
    match traj.segments.split_first() {
        Some((first, rest)) if !rest.is_empty() => Ok(first_entry(rest, a, first.holding, traj.total_time)),
        _ => Ok(Hit::Censored(traj.total_time)),
    }
}

/// Hitting time of `A` by a freshly simulated walk, without storing the
/// path. Gives up at `horizon`.
pub fn hitting_time_walk<R: Rng>(cfg: &WalkConfig, x0: Site, a: &SiteSet, horizon: f64, rng: R) -> Result<Hit> {
    if a.is_empty() {
        return invalid("target set must be nonempty");
    }
    let mut walker = Walker::new(cfg.field, cfg.theta, x0, rng)?;
    let mut t = 0.0;
    loop {
        if a.contains(walker.site()) {
            return Ok(Hit::At(t));
        }
        let (_, hold) = walker.step();
        t += hold;
        if t >= horizon {
            return Ok(Hit::Censored(horizon));
        }
    }
}

/// Lebesgue time spent in `A` during `[0, t]`.
pub fn occupation_time(traj: &Trajectory, a: &SiteSet, t: f64) -> Result<f64> {
    if t < 0.0 || t > traj.total_time * (1.0 + 1e-12) {
        return invalid(format!("time {t} outside the path's range [0, {}]", traj.total_time));
    }
    let mut clock = 0.0;
    let mut occ = 0.0;
    for s in &traj.segments {
        if clock >= t {
            break;
        }
        let piece = s.holding.min(t - clock);
        if a.contains(s.site) {
            occ += piece;
        }
        clock += s.holding;
    }
    Ok(occ)
}

/// The trace of a path on `F`: time outside `F` removed, consecutive visits
/// to the same site merged.
pub fn trace(traj: &Trajectory, f: &SiteSet) -> Result<Trajectory> {
    let mut segments: Vec<Segment> = Vec::new();
    for s in traj.segments.iter().filter(|s| f.contains(s.site)) {
        match segments.last_mut() {
            Some(last) if last.site == s.site => last.holding += s.holding,
            _ => segments.push(*s),
        }
    }
    if segments.is_empty() {
        return Err(TrapError::NotVisited);
    }
    let total_time = segments.iter().map(|s| s.holding).sum();
    Ok(Trajectory { spec: traj.spec, start: segments[0].site, segments, total_time })
}

/// Simulate the walk until its trace on `F` has accumulated `trace_horizon`
/// units of time, returning the trace path (clipped at `trace_horizon`).
/// Gives up after `step_cap` skeleton steps, returning what it has.
pub fn simulate_trace<R: Rng>(
    cfg: &WalkConfig,
    x0: Site,
    f: &SiteSet,
    trace_horizon: f64,
    step_cap: u64,
    rng: R,
) -> Result<(Trajectory, bool)> {
    if !(trace_horizon > 0.0) {
        return invalid("trace horizon must be positive");
    }
    let mut walker = Walker::new(cfg.field, cfg.theta, x0, rng)?;
    let mut segments: Vec<Segment> = Vec::new();
    let mut t = 0.0;
    let mut complete = false;
    for _ in 0..step_cap {
        let (x, hold) = walker.step();
        if !f.contains(x) {
            continue;
        }
        let piece = hold.min(trace_horizon - t);
        match segments.last_mut() {
            Some(last) if last.site == x => last.holding += piece,
            _ => segments.push(Segment { site: x, holding: piece }),
        }
        t += piece;
        if t >= trace_horizon {
            complete = true;
            break;
        }
    }
    if segments.is_empty() {
        return Err(TrapError::NotVisited);
    }
    let total_time = segments.iter().map(|s| s.holding).sum();
    Ok((Trajectory { spec: cfg.field.spec, start: segments[0].site, segments, total_time }, complete))
}

/// Empirical trace rates with per-entry standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub sites: Vec<Site>,
    /// Row-major jump counts `i -> j`.
    pub jumps: Vec<u64>,
    /// Total trace time at each site.
    pub time: Vec<f64>,
}

impl RateEstimate {
    pub fn size(&self) -> usize {
        self.sites.len()
    }

    /// `jumps(i,j) / time(i)`, undefined when no time was spent at `i`.
    pub fn rate(&self, i: usize, j: usize) -> Option<f64> {
        (self.time[i] > 0.0).then(|| self.jumps[i * self.size() + j] as f64 / self.time[i])
    }

    /// Large-sample standard error `sqrt(jumps) / time`.
    pub fn std_error(&self, i: usize, j: usize) -> Option<f64> {
        (self.time[i] > 0.0).then(|| (self.jumps[i * self.size() + j] as f64).sqrt() / self.time[i])
    }

    pub fn total_jumps(&self) -> u64 {
        self.jumps.iter().sum()
    }
}

/// Pool traced paths on `F` into jump counts and sojourn times.
pub fn estimate_trace_rates(paths: &[Trajectory], f_sites: &[Site]) -> Result<RateEstimate> {
    let m = f_sites.len();
    let index = |x: Site| f_sites.iter().position(|&s| s == x);
    let mut jumps = vec![0u64; m * m];
    let mut time = vec![0.0; m];
    for p in paths {
        let mut prev: Option<usize> = None;
        for s in &p.segments {
            let i = index(s.site).ok_or_else(|| {
                TrapError::InvalidInput(format!("path visits site {} outside the trace set", s.site.0))
            })?;
            time[i] += s.holding;
            if let Some(k) = prev {
                if k != i {
                    jumps[k * m + i] += 1;
                }
            }
            prev = Some(i);
        }
    }
    Ok(RateEstimate { sites: f_sites.to_vec(), jumps, time })
}

/// State of the clock process after `k` skeleton steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub k: u64,
    pub s: f64,
}

/// The walk assembled from its discrete skeleton and an independent
/// sequence of unit exponentials: `S(k) = Σ_{i<k} e_i W(Y_i) / θ`, and the
/// position at time `t` is `Y_{T(t)}` with `T` the inverse of `S`.
pub struct ClockProcess<'a, R: Rng, Q: Rng> {
    field: &'a WField,
    theta: f64,
    skeleton: R,
    clock: Q,
    site: Site,
    state: ClockState,
}

impl<'a> ClockProcess<'a, rand_chacha::ChaCha8Rng, rand_chacha::ChaCha8Rng> {
    /// Skeleton and exponentials from separate streams of `seed`.
    pub fn from_seed(field: &'a WField, theta: f64, start: Site, seed: u64, replica: u64) -> Result<Self> {
        Self::new(
            field,
            theta,
            start,
            stream(seed, Purpose::Skeleton, replica),
            stream(seed, Purpose::Clock, replica),
        )
    }
}

impl<'a, R: Rng, Q: Rng> ClockProcess<'a, R, Q> {
    pub fn new(field: &'a WField, theta: f64, start: Site, skeleton: R, clock: Q) -> Result<Self> {
        field.spec.check(start)?;
        if !(theta > 0.0) {
            return invalid("speed-up must be positive");
        }
        Ok(Self { field, theta, skeleton, clock, site: start, state: ClockState { k: 0, s: 0.0 } })
    }

    pub fn state(&self) -> ClockState {
        self.state
    }

    /// `Y_k`.
    pub fn skeleton_site(&self) -> Site {
        self.site
    }

    /// Advance one skeleton step; returns the site just left and its holding.
    pub fn advance(&mut self) -> (Site, f64) {
        let x = self.site;
        let e: f64 = Exp1.sample(&mut self.clock);
        let hold = e * self.field.values[x.0] / self.theta;
        let spec = self.field.spec;
        self.site = spec.neighbor(x, self.skeleton.random_range(0..spec.degree()));
        self.state = ClockState { k: self.state.k + 1, s: self.state.s + hold };
        (x, hold)
    }

    /// Run until `S(k) > t` and return `X_t`; `None` if `step_cap` steps
    /// did not suffice.
    pub fn position_at(&mut self, t: f64, step_cap: u64) -> Option<Site> {
        while self.state.k < step_cap {
            let (x, _) = self.advance();
            if self.state.s > t {
                return Some(x);
            }
        }
        None
    }

    /// Record the path on `[0, horizon]`.
    pub fn trajectory(mut self, horizon: f64) -> Result<Trajectory> {
        if !(horizon > 0.0) {
            return invalid("horizon must be positive");
        }
        let start = self.site;
        let mut segments = Vec::new();
        loop {
            let before = self.state.s;
            let (x, hold) = self.advance();
            if before + hold >= horizon {
                segments.push(Segment { site: x, holding: horizon - before });
                break;
            }
            segments.push(Segment { site: x, holding: hold });
        }
        Ok(Trajectory { spec: self.field.spec, start, segments, total_time: horizon })
    }
}

/// Skeleton steps allowed before a two-dimensional search is censored:
/// `10^3 N^2 log N`.
pub fn step_guard_2d(n: usize) -> u64 {
    let n = n as f64;
    (1e3 * n * n * n.ln()).ceil() as u64
}

/// Estimate of `P[|X(t) - x| ≥ ℓ]` from the clock process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub replicas: u64,
    /// Replicas stopped by the step guard (counted as not far).
    pub censored: u64,
}

/// Fraction of clock-process replicas started at `trap` that are at graph
/// distance at least `ell` from it at time `t` (speed-up 1).
pub fn stay_experiment(
    field: &WField,
    trap: Site,
    t: f64,
    ell: usize,
    replicas: u64,
    seed: u64,
) -> Result<StayEstimate> {
    use rayon::prelude::*;
    let spec = field.spec;
    if spec.dim() != 2 {
        return Err(TrapError::InvalidInput(format!("stay experiment needs d = 2, got d = {}", spec.dim())));
    }
    spec.check(trap)?;
    if !(t > 0.0) || replicas == 0 {
        return invalid("need t > 0 and at least one replica");
    }
    let cap = step_guard_2d(spec.side());
    let max_distance = spec.dim() * (spec.side() / 2);
    let outcomes: Vec<(bool, bool)> = if ell > max_distance {
        vec![(false, false); replicas as usize]
    } else {
        (0..replicas as usize)
            .into_par_iter()
            .map(|r| -> Result<(bool, bool)> {
                let mut clock = ClockProcess::from_seed(field, 1.0, trap, seed, r as u64)?;
                Ok(match clock.position_at(t, cap) {
                    Some(x) => (spec.graph_distance(x, trap)? >= ell, false),
                    None => (false, true),
                })
            })
            .collect::<Result<_>>()?
    };
    let far = outcomes.iter().filter(|o| o.0).count() as f64;
    let censored = outcomes.iter().filter(|o| o.1).count() as u64;
    let n = replicas as f64;
    let p = far / n;
    Ok(StayEstimate { probability: p, std_error: (p * (1.0 - p) / n).sqrt(), replicas, censored })
}

/// Skeleton-only estimate of whether the walk from `x0` enters `A` before
/// `B`; `None` if neither happens within `step_cap` steps.
pub fn skeleton_hits_first<R: Rng>(
    spec: &TorusSpec,
    x0: Site,
    a: &SiteSet,
    b: &SiteSet,
    step_cap: u64,
    rng: &mut R,
) -> Option<bool> {
    let mut x = x0;
    for _ in 0..=step_cap {
        if a.contains(x) {
            return Some(true);
        }
        if b.contains(x) {
            return Some(false);
        }
        x = spec.neighbor(x, rng.random_range(0..spec.degree()));
    }
    None
}

/// Skeleton-only escape: from `y`, does the walk enter `A` before coming back
/// to `y`? `None` on censoring.
pub fn skeleton_escapes<R: Rng>(spec: &TorusSpec, y: Site, a: &SiteSet, step_cap: u64, rng: &mut R) -> Option<bool> {
    let first = spec.neighbor(y, rng.random_range(0..spec.degree()));
    let back = SiteSet::new(spec, &[y]).ok()?;
    skeleton_hits_first(spec, first, a, &back, step_cap, rng)
}

/// Return statistics of the simple random walk on `Z^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnFrequency {
    pub walks: u64,
    pub cutoff: u64,
    /// Fraction returned within `cutoff` steps.
    pub within_cutoff: f64,
    /// Fraction returned within `cutoff / 4` steps.
    pub within_quarter: f64,
    /// `2 R(n) - R(n/4)`: removes the `n^{-1/2}` tail of late returns.
    pub extrapolated: f64,
    /// Standard error of `extrapolated`.
    pub std_error: f64,
}

/// Monte Carlo return frequency of the simple random walk on `Z^3`.
pub fn return_frequency_z3(walks: u64, cutoff: u64, seed: u64) -> Result<ReturnFrequency> {
    use rayon::prelude::*;
    if walks < 2 || cutoff < 4 {
        return invalid("need at least two walks and a cutoff of at least 4 steps");
    }
    const CHUNK: u64 = 4096;
    let quarter = cutoff / 4;
    let chunks = walks.div_ceil(CHUNK);
    // Per chunk: (returns within n, within n/4, sum of indicator^2 for the
    // combined estimator).
    let tallies: Vec<(u64, u64, u64)> = (0..chunks as usize)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, Purpose::Oracle, c as u64);
            let lo = c as u64 * CHUNK;
            let hi = (lo + CHUNK).min(walks);
            let (mut full, mut early, mut sq) = (0u64, 0u64, 0u64);
            for _ in lo..hi {
                let mut pos = [0i64; 3];
                let mut hit = None;
                for step in 1..=cutoff {
                    let r = rng.random_range(0..6u32);
                    pos[(r >> 1) as usize] += 1 - 2 * (r & 1) as i64;
                    if pos == [0, 0, 0] {
                        hit = Some(step);
                        break;
                    }
                }
                if let Some(step) = hit {
                    full += 1;
                    let e = step <= quarter;
                    early += e as u64;
                    // (2·1{T≤n} − 1{T≤n/4})^2 is 1 if both, 4 if only the first.
                    sq += if e { 1 } else { 4 };
                }
            }
            (full, early, sq)
        })
        .collect();
    let (full, early, sq) = tallies.iter().fold((0, 0, 0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2));
    let n = walks as f64;
    let rf = full as f64 / n;
    let rq = early as f64 / n;
    let ext = 2.0 * rf - rq;
    let var = (sq as f64 / n - ext * ext).max(0.0);
    Ok(ReturnFrequency {
        walks,
        cutoff,
        within_cutoff: rf,
        within_quarter: rq,
        extrapolated: ext,
        std_error: (var / (n - 1.0)).sqrt(),
    })
}

const TRAJ_MAGIC: &[u8; 4] = b"TRAJ";

/// Write a path as `TRAJ` header plus `(u32 site, f64 holding)` records,
/// little-endian.
pub fn write_traj<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let count = u32::try_from(traj.segments.len())
        .map_err(|_| TrapError::Format("too many segments for a TRAJ file".into()))?;
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&(traj.spec.dim() as u32).to_le_bytes())?;
    w.write_all(&(traj.spec.side() as u32).to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    let mut buf = Vec::with_capacity(traj.segments.len() * 12);
    for s in &traj.segments {
        buf.extend_from_slice(&(s.site.0 as u32).to_le_bytes());
        buf.extend_from_slice(&s.holding.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read a `TRAJ` stream written by [`write_traj`].
pub fn read_traj<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| TrapError::Format("truncated TRAJ header".into()))?;
    if &header[..4] != TRAJ_MAGIC {
        return Err(TrapError::Format("bad magic, expected TRAJ".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let spec = TorusSpec::new(word(4), word(8))?;
    let count = word(12);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 12 {
        return Err(TrapError::Format(format!(
            "payload holds {} bytes, header announces {count} records ({} bytes)",
            payload.len(),
            count * 12
        )));
    }
    let segments = payload
        .chunks_exact(12)
        .map(|c| Segment {
            site: Site(u32::from_le_bytes(c[..4].try_into().unwrap()) as usize),
            holding: f64::from_le_bytes(c[4..].try_into().unwrap()),
        })
        .collect();
    Trajectory::from_segments(spec, segments)
}
