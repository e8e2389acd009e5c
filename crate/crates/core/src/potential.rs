//! Exact potential theory of the trap walk and of its discrete skeleton.
//!
//! The walk with generator `(L f)(x) = (1/(2d W_x)) Σ_{y~x} [f(y) - f(x)]` is
//! reversible with respect to `ν(x) = W_x / Σ W`. Its generator is the graph
//! Laplacian rescaled by the holding rates `λ(x) = 1/W_x`, so harmonic
//! functions, hitting probabilities and skeleton capacities do not depend on
//! the environment at all. Every solve below is done on the skeleton and
//! converted to the chain through `Cap_chain = Cap_skeleton / Σ W`.

use serde::{Deserialize, Serialize};

use crate::environment::WField;
use crate::error::{invalid, Result, TrapError};
use crate::lattice::{Site, SiteSet, TorusSpec};
use crate::solver::{dense_solve, DirichletSolver, Grid};

/// Exact description of the trap chain on a torus.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    pub spec: TorusSpec,
    pub field: WField,
    /// Holding rates `λ(x) = 1/W_x`.
    pub lambda: Vec<f64>,
    /// Stationary probabilities `ν(x) = W_x / Σ W`.
    pub nu: Vec<f64>,
    /// `Σ_x W_x` of the floored field.
    pub mass: f64,
}

impl ChainSpec {
    pub fn new(field: &WField) -> Self {
        let mass = field.mass();
        Self {
            spec: field.spec,
            field: field.clone(),
            lambda: field.values.iter().map(|w| 1.0 / w).collect(),
            nu: field.values.iter().map(|w| w / mass).collect(),
            mass,
        }
    }

    /// Jump rate along one edge, `λ(x) / (2d)`.
    pub fn edge_rate(&self, x: Site) -> f64 {
        self.lambda[x.0] / self.spec.degree() as f64
    }

    /// `(L f)(x)` for the chain generator.
    pub fn generator_apply(&self, f: &[f64]) -> Vec<f64> {
        let lap = Grid::torus(&self.spec).laplacian(f);
        lap.iter().enumerate().map(|(x, l)| -l * self.edge_rate(Site(x))).collect()
    }
}

/// Solution of the Dirichlet problem `f = 1` on `A`, `f = 0` on `B`, `f`
/// harmonic elsewhere; `f(x) = P_x[H(A) < H(B)]`.
#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub a: Vec<Site>,
    pub b: Vec<Site>,
    pub f: Vec<f64>,
    /// `max |L0 f|` off `A ∪ B`, graph-Laplacian units.
    pub residual: f64,
}

fn check_disjoint(spec: &TorusSpec, a: &[Site], b: &[Site]) -> Result<(SiteSet, SiteSet)> {
    if a.is_empty() || b.is_empty() {
        return invalid("both boundary sets must be nonempty");
    }
    let sa = SiteSet::new(spec, a)?;
    let sb = SiteSet::new(spec, b)?;
    if !sa.is_disjoint(&sb) {
        return invalid("boundary sets must be disjoint");
    }
    Ok((sa, sb))
}

fn residual_off(grid: &Grid, f: &[f64], fixed: &[bool]) -> f64 {
    grid.laplacian(f)
        .iter()
        .zip(fixed)
        .filter(|(_, &fx)| !fx)
        .map(|(r, _)| r.abs())
        .fold(0.0, f64::max)
}

/// Harmonic measure `P_x[H(A) < H(B)]` on the torus.
pub fn harmonic_on(spec: &TorusSpec, a: &[Site], b: &[Site]) -> Result<DirichletSolution> {
    let (sa, sb) = check_disjoint(spec, a, b)?;
    let grid = Grid::torus(spec);
    let n = grid.len();
    let fixed: Vec<bool> = (0..n).map(|x| sa.contains(Site(x)) || sb.contains(Site(x))).collect();
    let boundary: Vec<f64> = (0..n).map(|x| if sa.contains(Site(x)) { 1.0 } else { 0.0 }).collect();
    let solver = DirichletSolver::new(grid, &fixed)?;
    let (f, _) = solver.solve(&boundary, &vec![0.0; n])?;
    let residual = residual_off(&grid, &f, &fixed);
    let limit = 1e-10 * grid.degree() as f64;
    if residual > limit {
        return Err(TrapError::SolverDiverged { iterations: 0, residual });
    }
    Ok(DirichletSolution { a: sa.members().to_vec(), b: sb.members().to_vec(), f, residual })
}

pub fn harmonic(chain: &ChainSpec, a: &[Site], b: &[Site]) -> Result<DirichletSolution> {
    harmonic_on(&chain.spec, a, b)
}

/// `inf (1/4d) Σ_x Σ_{y~x} [f(y) - f(x)]^2` over `f = 1` on `A`, `0` on `B`.
pub fn capacity_skeleton_on(spec: &TorusSpec, a: &[Site], b: &[Site]) -> Result<f64> {
    let sol = harmonic_on(spec, a, b)?;
    Ok(Grid::torus(spec).edge_energy(&sol.f) / (4 * spec.dim()) as f64)
}

pub fn capacity_skeleton(chain: &ChainSpec, a: &[Site], b: &[Site]) -> Result<f64> {
    capacity_skeleton_on(&chain.spec, a, b)
}

/// Capacity of the trap chain, `Cap_skeleton / W(T^d)`.
pub fn capacity_chain(chain: &ChainSpec, a: &[Site], b: &[Site]) -> Result<f64> {
    Ok(capacity_skeleton(chain, a, b)? / chain.mass)
}

/// Dirichlet form `D(f) = -Σ_x f(x) (L f)(x) ν(x)` evaluated directly from
/// the generator.
pub fn dirichlet_form(chain: &ChainSpec, f: &[f64]) -> f64 {
    let lf = chain.generator_apply(f);
    -f.iter().zip(&lf).zip(&chain.nu).map(|((fx, l), n)| fx * l * n).sum::<f64>()
}

/// Jump rates of a trace process on `sites`; the diagonal is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    pub sites: Vec<Site>,
    /// Row-major `m x m`.
    pub rates: Vec<f64>,
}

impl RateMatrix {
    pub fn size(&self) -> usize {
        self.sites.len()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.size() + j]
    }

    /// Generator form: off-diagonal rates, diagonal minus the row sum.
    pub fn generator(&self) -> Vec<f64> {
        let m = self.size();
        let mut q = self.rates.clone();
        for i in 0..m {
            q[i * m + i] = 0.0;
            let s: f64 = (0..m).filter(|&j| j != i).map(|j| q[i * m + j]).sum();
            q[i * m + i] = -s;
        }
        q
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.size()).filter(|&j| j != i).map(|j| self.rate(i, j)).sum()
    }
}

/// Escape probabilities of the skeleton between points of `F`:
/// `p[i][j] = P_{x_i}[H(x_j) < τ̂(F \ {x_j})]` for `i != j`.
pub fn trace_jump_probabilities(spec: &TorusSpec, f_sites: &[Site]) -> Result<Vec<f64>> {
    let m = f_sites.len();
    if m < 2 {
        return invalid("trace set needs at least two sites");
    }
    let set = SiteSet::new(spec, f_sites)?;
    if set.len() != m {
        return invalid("trace set contains duplicates");
    }
    let grid = Grid::torus(spec);
    let n = grid.len();
    let fixed: Vec<bool> = (0..n).map(|x| set.contains(Site(x))).collect();
    let solver = DirichletSolver::new(grid, &fixed)?;
    let zero = vec![0.0; n];
    let deg = spec.degree() as f64;
    let mut p = vec![0.0; m * m];
    for (j, &y) in f_sites.iter().enumerate() {
        let mut boundary = vec![0.0; n];
        boundary[y.0] = 1.0;
        let (h, _) = solver.solve(&boundary, &zero)?;
        for (i, &x) in f_sites.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut s = 0.0;
            for dir in 0..spec.degree() {
                let z = spec.neighbor(x, dir);
                if z == y {
                    s += 1.0;
                } else if !set.contains(z) {
                    s += h[z.0];
                }
            }
            p[i * m + j] = s / deg;
        }
    }
    Ok(p)
}

/// Exact trace rates `r^F(x,y) = λ(x) P_x[H(y) < τ(F \ {y})]`.
pub fn trace_rates_exact(chain: &ChainSpec, f_sites: &[Site]) -> Result<RateMatrix> {
    let p = trace_jump_probabilities(&chain.spec, f_sites)?;
    let m = f_sites.len();
    let mut rates = p;
    for (i, &x) in f_sites.iter().enumerate() {
        for j in 0..m {
            rates[i * m + j] *= chain.lambda[x.0];
        }
    }
    Ok(RateMatrix { sites: f_sites.to_vec(), rates })
}

/// Both sides of an identity, for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityPair {
    pub lhs: f64,
    pub rhs: f64,
}

impl IdentityPair {
    pub fn relative_error(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// `E^F_y[H(A)]` computed two ways: from the trace chain's linear hitting
/// system (`lhs`), and as `Cap(y,A)^{-1} Σ_{z∈F} ν(z) P_z[H(y) < H(A)]`
/// (`rhs`). Also returns the bound `ν(F \ A) / Cap(y, A)`.
pub fn expected_hitting_identity(
    chain: &ChainSpec,
    f_sites: &[Site],
    y: Site,
    a: &[Site],
) -> Result<(IdentityPair, f64)> {
    let fset = SiteSet::new(&chain.spec, f_sites)?;
    let aset = SiteSet::new(&chain.spec, a)?;
    if a.is_empty() || !a.iter().all(|&s| fset.contains(s)) {
        return invalid("A must be a nonempty subset of F");
    }
    if !fset.contains(y) || aset.contains(y) {
        return invalid("y must lie in F \\ A");
    }
    let fs = fset.members();
    let m = fs.len();

    // lhs: solve Q u = -1 on F \ A, u = 0 on A.
    let q = trace_rates_exact(chain, fs)?.generator();
    let free: Vec<usize> = (0..m).filter(|&i| !aset.contains(fs[i])).collect();
    let k = free.len();
    let mut mat = vec![0.0; k * k];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            mat[r * k + c] = q[i * m + j];
        }
    }
    let u = dense_solve(mat, vec![-1.0; k])?;
    let yi = free.iter().position(|&i| fs[i] == y).expect("y is free");
    let lhs = u[yi];

    // rhs: capacity and equilibrium potential on the full torus.
    let sol = harmonic(chain, &[y], a)?;
    let cap = Grid::torus(&chain.spec).edge_energy(&sol.f) / (4 * chain.spec.dim()) as f64 / chain.mass;
    let weighted: f64 = fs.iter().map(|z| chain.nu[z.0] * sol.f[z.0]).sum();
    let nu_rest: f64 = fs.iter().filter(|z| !aset.contains(**z)).map(|z| chain.nu[z.0]).sum();
    Ok((IdentityPair { lhs, rhs: weighted / cap }, nu_rest / cap))
}

/// `P_y[H(A) < τ(y)]` by first-step analysis (`lhs`) and as
/// `Cap(A,{y}) / (λ(y) ν(y))` (`rhs`).
pub fn escape_identity(chain: &ChainSpec, y: Site, a: &[Site]) -> Result<IdentityPair> {
    let sol = harmonic(chain, a, &[y])?;
    let aset = SiteSet::new(&chain.spec, a)?;
    let spec = &chain.spec;
    let mut s = 0.0;
    for dir in 0..spec.degree() {
        let z = spec.neighbor(y, dir);
        if aset.contains(z) {
            s += 1.0;
        } else if z != y {
            s += sol.f[z.0];
        }
    }
    let lhs = s / spec.degree() as f64;
    let cap = Grid::torus(spec).edge_energy(&sol.f) / (4 * spec.dim()) as f64 / chain.mass;
    let rhs = cap / (chain.lambda[y.0] * chain.nu[y.0]);
    Ok(IdentityPair { lhs, rhs })
}

/// Clock used by [`mean_hitting_torus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HittingClock {
    /// Number of skeleton steps.
    Skeleton,
    /// Continuous time of the trap chain (holding mean `W_x` at `x`).
    Chain,
}

/// Exact `E_x[H(y)]`.
pub fn mean_hitting_torus(chain: &ChainSpec, x: Site, y: Site, clock: HittingClock) -> Result<f64> {
    let spec = &chain.spec;
    spec.check(x)?;
    spec.check(y)?;
    if x == y {
        return Ok(0.0);
    }
    let h = hitting_potential(chain, y, clock)?;
    Ok(h[x.0])
}

/// `E_x[H(y)]` for every `x`.
pub fn hitting_potential(chain: &ChainSpec, y: Site, clock: HittingClock) -> Result<Vec<f64>> {
    let spec = &chain.spec;
    let grid = Grid::torus(spec);
    let n = grid.len();
    let mut fixed = vec![false; n];
    fixed[y.0] = true;
    let deg = spec.degree() as f64;
    let source: Vec<f64> = match clock {
        HittingClock::Skeleton => vec![deg; n],
        HittingClock::Chain => chain.field.values.iter().map(|w| deg * w).collect(),
    };
    let solver = DirichletSolver::new(grid, &fixed)?;
    let (h, _) = solver.solve(&vec![0.0; n], &source)?;
    Ok(h)
}

/// Expected visits to the centre of the box `{-l..l}^d` before the simple
/// random walk leaves it (the visit at time zero included).
pub fn green_box(d: usize, l: usize) -> Result<f64> {
    let grid = Grid::absorbing_box(d, l)?;
    let n = grid.len();
    let solver = DirichletSolver::new(grid, &vec![false; n])?;
    let mut source = vec![0.0; n];
    source[grid.center()] = grid.degree() as f64;
    let (g, _) = solver.solve(&vec![0.0; n], &source)?;
    Ok(g[grid.center()])
}

/// Green's function at the centre of the `(2l+1)^2` box.
pub fn green_box_2d(l: usize) -> Result<f64> {
    green_box(2, l)
}

/// Least-squares fit `y = slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return invalid("linear_fit needs at least two paired points");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Box sizes below this are rejected by [`escape_probability_vd`].
pub const MIN_VD_BOX: usize = 8;

/// Estimate of the escape probability `v_d` of the simple random walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdEstimate {
    /// `(L, 1/G_L(0,0))` per box.
    pub per_box: Vec<(usize, f64)>,
    /// `1 / G_∞` with `G_∞` the polynomial extrapolation of `G_L` in `1/L`
    /// to `1/L = 0`.
    pub extrapolated: f64,
}

/// `v_d = 1/G_{Z^d}(0,0)`, estimated from killed-box Green's functions.
pub fn escape_probability_vd(d: usize, boxes: &[usize]) -> Result<VdEstimate> {
    if d != 3 {
        return invalid(format!("escape probability is implemented for d = 3 only, got d = {d}"));
    }
    if boxes.is_empty() {
        return invalid("need at least one box size");
    }
    if let Some(&l) = boxes.iter().find(|&&l| l < MIN_VD_BOX) {
        return invalid(format!("box size {l} below the minimum {MIN_VD_BOX}"));
    }
    let greens: Vec<f64> = boxes.iter().map(|&l| green_box(d, l)).collect::<Result<_>>()?;
    let hs: Vec<f64> = boxes.iter().map(|&l| 1.0 / l as f64).collect();
    let g_inf = neville_at_zero(&hs, &greens);
    Ok(VdEstimate {
        per_box: boxes.iter().zip(&greens).map(|(&l, g)| (l, 1.0 / g)).collect(),
        extrapolated: 1.0 / g_inf,
    })
}

/// Value at `h = 0` of the interpolating polynomial through `(h_i, y_i)`.
fn neville_at_zero(hs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = p.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (hs[i + k] * p[i] - hs[i] * p[i + 1]) / (hs[i + k] - hs[i]);
        }
    }
    p[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_chain(d: usize, n: usize, c: f64) -> ChainSpec {
        ChainSpec::new(&WField::uniform(TorusSpec::new(d, n).unwrap(), c).unwrap())
    }

    #[test]
    fn harmonic_on_cycle_of_four() {
        let ch = uniform_chain(1, 4, 1.0);
        let sol = harmonic(&ch, &[Site(0)], &[Site(2)]).unwrap();
        assert!((sol.f[1] - 0.5).abs() < 1e-14);
        assert!((sol.f[3] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn harmonic_with_full_boundary_is_indicator() {
        let ch = uniform_chain(1, 4, 1.0);
        let sol = harmonic(&ch, &[Site(0), Site(1)], &[Site(2), Site(3)]).unwrap();
        assert_eq!(sol.f, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn harmonic_rejects_bad_sets() {
        let ch = uniform_chain(1, 4, 1.0);
        assert!(harmonic(&ch, &[], &[Site(1)]).is_err());
        assert!(harmonic(&ch, &[Site(1)], &[Site(1)]).is_err());
    }

    #[test]
    fn capacity_of_cycle_of_four() {
        // Two parallel 2-edge paths, conductance 1/2 per edge: 2 · (1/4) = 1/2.
        let ch = uniform_chain(1, 4, 1.0);
        let c = capacity_skeleton(&ch, &[Site(0)], &[Site(2)]).unwrap();
        assert!((c - 0.5).abs() < 1e-14);
    }

    #[test]
    fn capacity_scaling_with_weights() {
        let spec = TorusSpec::new(1, 6).unwrap();
        let f = WField::from_values(spec, vec![0.3, 1.2, 0.7, 2.0, 0.1, 0.5]).unwrap();
        let ch = ChainSpec::new(&f);
        let ch2 = ChainSpec::new(&f.scaled(2.0).unwrap());
        let (a, b) = ([Site(0)], [Site(3)]);
        let s1 = capacity_skeleton(&ch, &a, &b).unwrap();
        let s2 = capacity_skeleton(&ch2, &a, &b).unwrap();
        assert_eq!(s1, s2);
        let c1 = capacity_chain(&ch, &a, &b).unwrap();
        let c2 = capacity_chain(&ch2, &a, &b).unwrap();
        assert!((c1 / c2 - 2.0).abs() < 1e-12);
        // Dirichlet-form route.
        let sol = harmonic(&ch, &a, &b).unwrap();
        assert!((dirichlet_form(&ch, &sol.f) - c1).abs() < 1e-10 * c1);
    }

    #[test]
    fn gamblers_ruin_trace_rate() {
        let c = 2.5;
        let ch = uniform_chain(1, 4, c);
        let r = trace_rates_exact(&ch, &[Site(0), Site(2)]).unwrap();
        assert!((r.rate(0, 1) - 0.5 / c).abs() < 1e-14);
        assert!((r.rate(1, 0) - 0.5 / c).abs() < 1e-14);
        let e = escape_identity(&ch, Site(0), &[Site(2)]).unwrap();
        assert!((e.lhs - 0.5).abs() < 1e-14 && (e.rhs - 0.5).abs() < 1e-14);
    }

    #[test]
    fn escape_to_all_other_sites_is_certain() {
        let spec = TorusSpec::new(2, 4).unwrap();
        let f = WField::from_values(spec, (0..16).map(|i| 0.1 + i as f64).collect()).unwrap();
        let ch = ChainSpec::new(&f);
        let others: Vec<Site> = (1..16).map(Site).collect();
        let e = escape_identity(&ch, Site(0), &others).unwrap();
        assert_eq!(e.lhs, 1.0);
        assert!((e.rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_hitting_zero_at_target() {
        let ch = uniform_chain(2, 6, 1.0);
        assert_eq!(mean_hitting_torus(&ch, Site(5), Site(5), HittingClock::Skeleton).unwrap(), 0.0);
        // Cycle of 4: E_0[H(2)] = 0·... gambler's ruin gives 2·2 = 4 steps.
        let c4 = uniform_chain(1, 4, 1.0);
        let h = mean_hitting_torus(&c4, Site(0), Site(2), HittingClock::Skeleton).unwrap();
        assert!((h - 4.0).abs() < 1e-12);
        let c4w = uniform_chain(1, 4, 3.0);
        let hc = mean_hitting_torus(&c4w, Site(0), Site(2), HittingClock::Chain).unwrap();
        assert!((hc - 12.0).abs() < 1e-12);
    }

    #[test]
    fn green_three_by_three() {
        assert!((green_box_2d(1).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn vd_rejects_small_boxes_and_other_dimensions() {
        assert!(escape_probability_vd(3, &[4]).is_err());
        assert!(escape_probability_vd(2, &[16]).is_err());
    }

    #[test]
    fn neville_recovers_polynomials() {
        let hs = [0.5, 0.25, 0.125];
        let ys: Vec<f64> = hs.iter().map(|h| 3.0 - 2.0 * h + 5.0 * h * h).collect();
        assert!((neville_at_zero(&hs, &ys) - 3.0).abs() < 1e-12);
    }
}
