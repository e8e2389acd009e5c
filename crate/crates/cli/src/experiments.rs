//! The named experiments. Each one resolves its parameter defaults, runs,
//! and returns a table, verdicts and metrics; the runner writes them out.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use trapsim::environment::{discretize, check_h1, rank_traps, sample_ppp_environment, Atom, PppConfig, TrapMeasure, WField};
use trapsim::hydro::{hydro_comparison, pairing, solve_master, two_blocks_diagnostic, DtControl, HydroConfig, TimeScale};
use trapsim::kprocess::{
    diagonal_coupling, occupation_negligibility, trace_convergence_experiment, KMode, TruncationSchedule, COUPLING_TIMES, V3,
};
use trapsim::potential::{
    capacity_skeleton_on, escape_identity, escape_probability_vd, expected_hitting_identity, green_box_2d, harmonic_on,
    linear_fit, ChainSpec,
};
use trapsim::rng::{stream, Purpose};
use trapsim::stats::{trend_test, TREND_THRESHOLD};
use trapsim::walk::{return_frequency_z3, simulate_walk_replica, stay_experiment, ClockProcess, Trajectory, WalkConfig};
use trapsim::{Site, TorusSpec};

use crate::config::{ExperimentConfig, Params};
use crate::error::CliError;
use crate::output::{num, Plot, Series, Table, Verdict};

/// Everything an experiment produces.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub table: Table,
    pub verdicts: Vec<Verdict>,
    pub metrics: BTreeMap<String, Value>,
    pub environment_seeds: Vec<u64>,
    pub plot: Option<Plot>,
    pub trajectory: Option<Trajectory>,
    /// Additional artifacts `(file name, bytes)`.
    pub files: Vec<(String, Vec<u8>)>,
}

fn schema<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Schema(msg.into()))
}

/// The parameter block with every default the experiment uses filled in.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Params, CliError> {
    let user = &cfg.params;
    let mut def = Params::default();
    let d = user.d;
    match cfg.experiment.as_str() {
        "env-check" => {
            def.d = Some(1);
            def.n = Some((7..=13).map(|k| 1usize << k).collect());
            def.alpha = Some(0.5);
            def.gamma = Some(1.5);
            def.w_min = Some(1e-12);
            def.environments = Some(50);
            def.threshold = Some(0.9);
        }
        "potential-identities" => {
            def.n = Some(vec![8]);
            def.instances = Some(50);
            def.threshold = Some(1e-8);
        }
        "capacity-limits" | "trace-convergence" => {
            let d = d.unwrap_or(3);
            def.d = Some(d);
            let trace = cfg.experiment == "trace-convergence";
            match (d, trace) {
                (3, false) => {
                    def.n = Some(vec![8, 16, 32]);
                    def.boxes = Some(vec![16, 32, 64]);
                    def.walks = Some(1_000_000);
                    def.cutoff = Some(4096);
                    def.threshold = Some(0.10);
                }
                (2, false) => {
                    def.n = Some(vec![64, 128, 256, 512]);
                    def.boxes = Some(vec![25, 50, 100, 200]);
                    def.threshold = Some(0.15);
                }
                (3, true) => {
                    def.n = Some(vec![16, 24, 32]);
                    def.m = Some(4);
                    def.background = Some(1.0);
                    def.threshold = Some(0.10);
                    def.t = Some(1.0);
                }
                (2, true) => {
                    def.n = Some(vec![128, 256, 512]);
                    def.m = Some(3);
                    def.background = Some(1.0);
                    def.threshold = Some(0.15);
                    def.t = Some(1.0);
                }
                _ => return schema(format!("{} needs d = 2 or d = 3, got d = {d}", cfg.experiment)),
            }
        }
        "occupation" => {
            def.d = Some(3);
            def.n = Some(vec![32]);
            def.m_values = Some(vec![2, 4, 8, 16]);
            def.t = Some(20.0);
            def.replicas = Some(30);
            def.environments = Some(20);
            def.threshold = Some(TREND_THRESHOLD);
        }
        "hydro" | "two-blocks" => {
            def.d = Some(1);
            def.alpha = Some(0.5);
            def.t = Some(0.5);
            def.background = Some(1.0);
            def.time_scale = Some("diffusive".into());
            let bouchaud = user.time_scale.as_deref() == Some("bouchaud");
            // Bouchaud runs need γ > 1/α - 1.
            def.gamma = Some(if bouchaud { 1.0 / user.alpha.unwrap_or(0.5) - 0.5 } else { 1.0 });
            if cfg.experiment == "hydro" {
                def.n = Some(vec![64, 256]);
                def.replicas = Some(200);
                def.threshold = Some(3.0);
            } else {
                def.n = Some(vec![256]);
                def.replicas = Some(50);
                def.epsilons = Some(vec![0.25, 0.125, 0.0625]);
            }
        }
        "stay2d" => {
            def.d = Some(2);
            def.n = Some(vec![64, 128, 256]);
            def.t = Some(1.0);
            def.ell_divisor = Some(8);
            def.replicas = Some(20_000);
            def.environments = Some(20);
            def.trap_rank = Some(1);
            def.threshold = Some(TREND_THRESHOLD);
        }
        "kproc-diagonal" => {
            def.d = Some(3);
            def.n = Some(vec![8, 16, 32]);
            def.t = Some(1.0);
            def.replicas = Some(200);
        }
        other => return schema(format!("unknown experiment `{other}`")),
    }
    if matches!(cfg.experiment.as_str(), "occupation" | "stay2d" | "kproc-diagonal") {
        def.alpha = Some(0.5);
    }
    if def.alpha.is_some() || user.alpha.is_some() {
        let alpha = user.alpha.or(def.alpha).expect("set above");
        def.alpha = Some(alpha);
        if def.w_min.is_none() {
            def.w_min = Some(PppConfig::default_w_min(alpha));
        }
    }
    def.dump_trajectory = Some(false);
    def.environment_seed = Some(cfg.seed);

    macro_rules! merge {
        ($($f:ident),*) => { Params { $($f: user.$f.clone().or(def.$f),)* } };
    }
    let p = merge!(
        d, n, m, m_values, alpha, gamma, t, replicas, environments, seeds, environment_seed, w_min, background, schedule,
        epsilons, boxes, walks, cutoff, trap_rank, ell_divisor, atoms, instances, threshold, time_scale, dump_trajectory
    );
    if let Some(d) = p.d {
        if cfg.experiment != "potential-identities" {
            let fixed = match cfg.experiment.as_str() {
                "env-check" | "occupation" | "kproc-diagonal" => None,
                "hydro" | "two-blocks" => Some(1),
                "stay2d" => Some(2),
                _ => None,
            };
            if let Some(f) = fixed {
                if d != f {
                    return schema(format!("{} needs d = {f}, got d = {d}", cfg.experiment));
                }
            }
        }
    }
    if p.dump_trajectory == Some(true)
        && !matches!(cfg.experiment.as_str(), "trace-convergence" | "occupation" | "stay2d")
    {
        return schema(format!("dump_trajectory is not supported by `{}`", cfg.experiment));
    }
    Ok(p)
}

/// Run the experiment named in `cfg` with resolved parameters `p`.
pub fn execute(cfg: &ExperimentConfig, p: &Params) -> Result<Outcome, CliError> {
    let ctx = Ctx { cfg, p };
    match cfg.experiment.as_str() {
        "env-check" => ctx.env_check(),
        "potential-identities" => ctx.potential_identities(),
        "capacity-limits" => ctx.capacity_limits(),
        "trace-convergence" => ctx.trace_convergence(),
        "occupation" => ctx.occupation(),
        "hydro" => ctx.hydro(),
        "two-blocks" => ctx.two_blocks(),
        "stay2d" => ctx.stay2d(),
        "kproc-diagonal" => ctx.kproc_diagonal(),
        other => schema(format!("unknown experiment `{other}`")),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    p: &'a Params,
}

/// Fraction of `flags` that are true.
fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len().max(1) as f64
}

fn trend_detail(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ")
}

impl Ctx<'_> {
    fn ns(&self) -> &[usize] {
        self.p.n.as_deref().expect("resolved")
    }

    fn d(&self) -> usize {
        self.p.d.expect("resolved")
    }

    fn env_seeds(&self) -> Vec<u64> {
        let mut c = self.cfg.clone();
        c.params.environment_seed = self.p.environment_seed;
        c.params.environments = self.p.environments;
        c.environment_seeds(1)
    }

    fn ppp(&self, seed: u64) -> Result<TrapMeasure, CliError> {
        let ppp = PppConfig::new(self.p.alpha.expect("resolved"), self.p.w_min.expect("resolved"), seed)?;
        Ok(sample_ppp_environment(&ppp, self.d())?)
    }

    fn dump(&self) -> bool {
        self.p.dump_trajectory == Some(true)
    }

    fn env_check(&self) -> Result<Outcome, CliError> {
        let seeds = self.env_seeds();
        let gamma0 = self.p.gamma.expect("resolved");
        let ns = self.ns().to_vec();
        if ns.len() < 3 {
            return schema("env-check needs at least three values of N");
        }
        let stats: Vec<Vec<f64>> = seeds
            .par_iter()
            .map(|&s| -> Result<Vec<f64>, CliError> {
                let m = self.ppp(s)?;
                ns.iter()
                    .map(|&n| {
                        let f = discretize(&m, TorusSpec::new(self.d(), n)?, m.default_floor())?;
                        Ok(check_h1(&f, gamma0)?)
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let mut table = Table::new(&["environment_seed", "N", "statistic"]);
        let mut passes = Vec::new();
        for (s, vals) in seeds.iter().zip(&stats) {
            for (n, v) in ns.iter().zip(vals) {
                table.push(vec![s.to_string(), n.to_string(), num(*v)]);
            }
            passes.push(trend_test(vals, TREND_THRESHOLD)?.pass);
        }
        let frac = fraction(&passes);
        let threshold = self.p.threshold.expect("resolved");
        let verdicts = vec![Verdict::at_least(
            "h1_statistic_decreasing",
            frac,
            threshold,
            format!("{} of {} environments decrease along N", passes.iter().filter(|b| **b).count(), passes.len()),
        )];
        let series = seeds
            .iter()
            .zip(&stats)
            .take(5)
            .map(|(s, v)| Series { name: format!("seed {s}"), points: ns.iter().map(|&n| n as f64).zip(v.iter().copied()).collect() })
            .collect();
        let mut metrics = BTreeMap::new();
        metrics.insert("fraction_decreasing_environments".into(), json!(frac));
        Ok(Outcome {
            table,
            verdicts,
            metrics,
            environment_seeds: seeds,
            plot: Some(Plot {
                title: format!("N^-(2+{gamma0}) sum 1/W_x"),
                x_label: "N".into(),
                y_label: "statistic".into(),
                log_x: true,
                series,
                reference: None,
            }),
            ..Default::default()
        })
    }

    fn potential_identities(&self) -> Result<Outcome, CliError> {
        let dims: Vec<usize> = match self.p.d {
            Some(d) => vec![d],
            None => vec![1, 2, 3],
        };
        let instances = self.p.instances.expect("resolved");
        let threshold = self.p.threshold.expect("resolved");
        let seed = self.cfg.seed;
        let mut table = Table::new(&["d", "N", "instance", "identity", "lhs", "rhs", "rel_err"]);
        let mut worst: f64 = 0.0;
        let mut bound_violations = 0usize;
        let mut per_dim = BTreeMap::new();
        for &d in &dims {
            for &n in self.ns() {
                let spec = TorusSpec::new(d, n)?;
                if spec.sites() < 4 {
                    return schema(format!("torus with N = {n}, d = {d} has fewer than four sites"));
                }
                let rows: Vec<[(f64, f64); 2]> = (0..instances)
                    .into_par_iter()
                    .map(|k| -> Result<_, CliError> {
                        let mut rng = stream(seed, Purpose::Experiment, ((d as u64) << 48) | ((n as u64) << 24) | k as u64);
                        let values: Vec<f64> = (0..spec.sites()).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
                        let field = WField::from_values(spec, values)?;
                        let chain = ChainSpec::new(&field);
                        let f: Vec<Site> = rand::seq::index::sample(&mut rng, spec.sites(), 4).into_iter().map(Site).collect();
                        let y = f[0];
                        let esc = escape_identity(&chain, y, &f[1..])?;
                        let a_len = rng.random_range(1..=3usize);
                        let (hit, bound) = expected_hitting_identity(&chain, &f, y, &f[1..1 + a_len])?;
                        let hit_bound_ok = hit.lhs <= bound * (1.0 + 1e-12);
                        Ok([(esc.lhs, esc.rhs), (hit.lhs, if hit_bound_ok { hit.rhs } else { f64::NAN })])
                    })
                    .collect::<Result<_, _>>()?;
                let mut dim_worst: f64 = 0.0;
                for (k, pair) in rows.iter().enumerate() {
                    for (name, &(lhs, rhs)) in ["escape", "expected_hitting"].iter().zip(pair) {
                        if rhs.is_nan() {
                            bound_violations += 1;
                            continue;
                        }
                        let rel = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
                        dim_worst = dim_worst.max(rel);
                        table.push(vec![
                            d.to_string(),
                            n.to_string(),
                            k.to_string(),
                            name.to_string(),
                            num(lhs),
                            num(rhs),
                            num(rel),
                        ]);
                    }
                }
                per_dim.insert(format!("max_rel_err_d{d}_N{n}"), json!(dim_worst));
                worst = worst.max(dim_worst);
            }
        }
        let verdicts = vec![
            Verdict::at_most(
                "identity_max_relative_error",
                worst,
                threshold,
                format!("{instances} instances per dimension {dims:?}"),
            ),
            Verdict::at_most("hitting_time_bound_violations", bound_violations as f64, 0.0, "E[H(A)] <= nu(F \\ A) / Cap"),
        ];
        Ok(Outcome { table, verdicts, metrics: per_dim, ..Default::default() })
    }

    fn capacity_limits(&self) -> Result<Outcome, CliError> {
        let d = self.d();
        let ns = self.ns().to_vec();
        let threshold = self.p.threshold.expect("resolved");
        let mut table = Table::new(&["quantity", "d", "N", "value", "reference", "rel_dev"]);
        let mut verdicts = Vec::new();
        let mut metrics = BTreeMap::new();
        let push = |table: &mut Table, q: &str, n: usize, v: f64, r: f64| {
            let dev = if r != 0.0 { (v - r) / r } else { v - r };
            table.push(vec![q.into(), d.to_string(), n.to_string(), num(v), num(r), num(dev)]);
            dev
        };

        // Point-to-point capacity between antipodal sites.
        let caps: Vec<f64> = ns
            .par_iter()
            .map(|&n| -> Result<f64, CliError> {
                let spec = TorusSpec::new(d, n)?;
                let far = spec.site(&vec![n / 2; d])?;
                let c = capacity_skeleton_on(&spec, &[Site(0)], &[far])?;
                Ok(if d == 2 { c * (n as f64).ln() } else { c })
            })
            .collect::<Result<_, _>>()?;
        let reference = if d == 3 { V3 / 2.0 } else { PI / 4.0 };
        let name = if d == 3 { "capacity" } else { "log_n_capacity" };
        let devs: Vec<f64> = ns.iter().zip(&caps).map(|(&n, &c)| push(&mut table, name, n, c, reference).abs()).collect();
        let last = *devs.last().expect("nonempty");
        let trend = if devs.len() >= 3 { trend_test(&devs, TREND_THRESHOLD)?.pass } else { true };
        verdicts.push(Verdict {
            pass: last <= threshold && trend,
            ..Verdict::at_most(
                "capacity_limit",
                last,
                threshold,
                format!("|relative deviation| along N: {}; trend {}", trend_detail(&devs), if trend { "pass" } else { "fail" }),
            )
        });
        let mut plot_series = vec![Series {
            name: format!("{name} / reference"),
            points: ns.iter().zip(&caps).map(|(&n, &c)| (n as f64, c / reference)).collect(),
        }];

        let boxes = self.p.boxes.clone().expect("resolved");
        if d == 3 {
            let vd = escape_probability_vd(3, &boxes)?;
            for &(l, v) in &vd.per_box {
                push(&mut table, "vd_box", l, v, V3);
            }
            push(&mut table, "vd_extrapolated", 0, vd.extrapolated, V3);
            verdicts.push(Verdict::at_most(
                "vd_box_extrapolation",
                (vd.extrapolated - V3).abs(),
                0.002,
                format!("extrapolated over boxes {boxes:?}: {:.6}", vd.extrapolated),
            ));
            metrics.insert("vd_extrapolated".into(), json!(vd.extrapolated));

            let walks = self.p.walks.expect("resolved");
            let cutoff = self.p.cutoff.expect("resolved");
            let rf = return_frequency_z3(walks, cutoff, self.cfg.seed)?;
            let target = 1.0 - vd.extrapolated;
            push(&mut table, "return_probability_mc", cutoff as usize, rf.extrapolated, target);
            let z = (rf.extrapolated - target).abs() / rf.std_error;
            verdicts.push(
                Verdict::at_most(
                    "vd_monte_carlo_agreement",
                    z,
                    3.0,
                    format!("{walks} walks, cutoff {cutoff}: return probability {:.5} vs 1 - v3 = {target:.5}", rf.extrapolated),
                )
                .with_se(rf.std_error),
            );
            metrics.insert("return_frequency".into(), serde_json::to_value(rf).map_err(trapsim::TrapError::from)?);

            // Harmonic measure of one trap among four well-separated ones.
            if ns.iter().any(|n| n % 4 != 0) {
                return schema("hitting uniformity needs N divisible by 4");
            }
            let devs: Vec<f64> = ns
                .par_iter()
                .map(|&n| -> Result<f64, CliError> {
                    let spec = TorusSpec::new(3, n)?;
                    let h = n / 2;
                    let traps = [[0, 0, 0], [h, h, 0], [h, 0, h], [0, h, h]]
                        .iter()
                        .map(|c| spec.site(c))
                        .collect::<Result<Vec<_>, _>>()?;
                    let sol = harmonic_on(&spec, &traps[..1], &traps[1..])?;
                    let mut dev: f64 = 0.0;
                    for x in 0..spec.sites() {
                        let mut far = true;
                        for &t in &traps {
                            far &= spec.graph_distance(Site(x), t)? >= n / 4;
                        }
                        if far {
                            dev = dev.max((sol.f[x] - 0.25).abs());
                        }
                    }
                    Ok(dev)
                })
                .collect::<Result<_, _>>()?;
            for (&n, &v) in ns.iter().zip(&devs) {
                push(&mut table, "hitting_first_max_deviation", n, v, 0.0);
            }
            let last = *devs.last().expect("nonempty");
            let trend = devs.len() < 3 || trend_test(&devs, TREND_THRESHOLD)?.pass;
            verdicts.push(Verdict {
                pass: last <= 0.05 && trend,
                ..Verdict::at_most("hitting_uniformity", last, 0.05, format!("max |P - 1/4| along N: {}", trend_detail(&devs)))
            });
            plot_series.push(Series {
                name: "4 |P - 1/4|".into(),
                points: ns.iter().zip(&devs).map(|(&n, &v)| (n as f64, 4.0 * v)).collect(),
            });

            // Two traps swapped by a reflection: exactly 1/2 on the mirror
            // planes.
            let n = *ns.last().expect("nonempty");
            let spec = TorusSpec::new(3, n)?;
            let pair = [spec.site(&[0, 0, 0])?, spec.site(&[n / 2, 0, 0])?];
            let sol = harmonic_on(&spec, &pair[..1], &pair[1..])?;
            let mut dev: f64 = 0.0;
            for x in 0..spec.sites() {
                let c = spec.coords(Site(x));
                if c[0] == n / 4 || c[0] == 3 * n / 4 {
                    dev = dev.max((sol.f[x] - 0.5).abs());
                }
            }
            push(&mut table, "hitting_symmetric_pair_deviation", n, dev, 0.0);
            verdicts.push(Verdict::at_most("hitting_symmetric_pair", dev, 1e-10, "max |P - 1/2| on the mirror planes"));
        } else {
            let greens: Vec<f64> = boxes.par_iter().map(|&l| green_box_2d(l)).collect::<Result<_, _>>()?;
            let logs: Vec<f64> = boxes.iter().map(|&l| (l as f64).ln()).collect();
            for (&l, &g) in boxes.iter().zip(&greens) {
                push(&mut table, "green_box", l, g, f64::NAN);
            }
            let (slope, intercept) = linear_fit(&logs, &greens)?;
            let target = 2.0 / PI;
            push(&mut table, "green_slope", 0, slope, target);
            push(&mut table, "green_intercept", 0, intercept, f64::NAN);
            verdicts.push(Verdict::at_most(
                "green_slope",
                ((slope - target) / target).abs(),
                0.03,
                format!("slope {slope:.5} against log l for l in {boxes:?}"),
            ));
            metrics.insert("green_slope".into(), json!(slope));
            metrics.insert("green_intercept".into(), json!(intercept));
        }
        Ok(Outcome {
            table,
            verdicts,
            metrics,
            plot: Some(Plot {
                title: format!("capacity limits, d = {d}"),
                x_label: "N".into(),
                y_label: "ratio".into(),
                log_x: true,
                series: plot_series,
                reference: Some(1.0),
            }),
            ..Default::default()
        })
    }

    /// Atoms given in the config, if any.
    fn user_atoms(&self) -> Option<Result<Vec<Atom>, CliError>> {
        let d = self.d();
        let raw = self.p.atoms.as_ref()?;
        Some(
            raw.iter()
                .map(|a| {
                    if a.len() != d + 1 {
                        return schema(format!("each atom needs {d} coordinates and a weight"));
                    }
                    if a[..d].iter().any(|x| !(0.0..1.0).contains(x)) || !(a[d] > 0.0) {
                        return schema("atom coordinates must lie in [0, 1) and weights must be positive");
                    }
                    Ok(Atom { pos: a[..d].to_vec(), weight: a[d] })
                })
                .collect(),
        )
    }

    /// Configured atoms, or a default layout: well separated, distinct
    /// weights.
    fn trace_atoms(&self) -> Result<Vec<Atom>, CliError> {
        let d = self.d();
        if let Some(atoms) = self.user_atoms() {
            return atoms;
        }
        let layout: Vec<(Vec<f64>, f64)> = if d == 3 {
            vec![
                (vec![0.0, 0.0, 0.0], 1.0),
                (vec![0.5, 0.5, 0.0], 0.8),
                (vec![0.5, 0.0, 0.5], 0.6),
                (vec![0.0, 0.5, 0.5], 0.4),
            ]
        } else {
            vec![(vec![0.0, 0.0], 1.0), (vec![0.5, 1.0 / 3.0], 0.8), (vec![0.25, 2.0 / 3.0], 0.6)]
        };
        Ok(layout.into_iter().map(Atom::from).collect())
    }

    fn trace_convergence(&self) -> Result<Outcome, CliError> {
        let d = self.d();
        let mode = if d == 3 { KMode::D3 } else { KMode::D2LogN };
        let m = self.p.m.expect("resolved");
        let atoms = self.trace_atoms()?;
        if m > atoms.len() || m < 2 {
            return schema(format!("M = {m} needs between 2 and {} atoms", atoms.len()));
        }
        let measure = TrapMeasure::new(d, atoms, self.p.background.expect("resolved"))?;
        let ns = self.ns().to_vec();
        let fields: Vec<WField> = ns
            .iter()
            .map(|&n| Ok(discretize(&measure, TorusSpec::new(d, n)?, measure.default_floor())?))
            .collect::<Result<_, CliError>>()?;
        let tables: Vec<_> = fields.par_iter().map(|f| trace_convergence_experiment(f, m, mode)).collect::<Result<_, _>>()?;
        let mut table = Table::new(&["d", "N", "M", "i", "j", "r_exact", "r_limit", "rel_err", "mode"]);
        let mut worst = Vec::new();
        for rows in &tables {
            for r in rows {
                table.push(vec![
                    r.d.to_string(),
                    r.n.to_string(),
                    r.m.to_string(),
                    r.i.to_string(),
                    r.j.to_string(),
                    num(r.r_exact),
                    num(r.r_limit),
                    num(r.rel_err),
                    r.mode.name().into(),
                ]);
            }
            worst.push(rows.first().map(|r| r.rel_err.abs()).unwrap_or(0.0));
        }
        let threshold = self.p.threshold.expect("resolved");
        let last = *worst.last().expect("nonempty");
        let trend = worst.len() < 3 || trend_test(&worst, TREND_THRESHOLD)?.pass;
        let verdicts = vec![Verdict {
            pass: last <= threshold && trend,
            ..Verdict::at_most("trace_rate_convergence", last, threshold, format!("max |rel_err| along N: {}", trend_detail(&worst)))
        }];
        let trajectory = if self.dump() {
            let field = fields.last().expect("nonempty");
            let n = *ns.last().expect("nonempty");
            let start = rank_traps(field, 1)?[0];
            let cfg = WalkConfig::new(field, mode.theta(n), self.cfg.seed)?;
            Some(simulate_walk_replica(&cfg, start, self.p.t.expect("resolved"), 0)?)
        } else {
            None
        };
        Ok(Outcome {
            table,
            verdicts,
            plot: Some(Plot {
                title: format!("trace rates against the K-process, d = {d}, M = {m}"),
                x_label: "N".into(),
                y_label: "max relative error".into(),
                log_x: true,
                series: vec![Series { name: mode.name().into(), points: ns.iter().map(|&n| n as f64).zip(worst).collect() }],
                reference: Some(0.0),
            }),
            trajectory,
            ..Default::default()
        })
    }

    fn occupation(&self) -> Result<Outcome, CliError> {
        let seeds = self.env_seeds();
        let ms = self.p.m_values.clone().expect("resolved");
        if ms.len() < 3 {
            return schema("occupation needs at least three values of M");
        }
        let t = self.p.t.expect("resolved");
        let replicas = self.p.replicas.expect("resolved");
        let threshold = self.p.threshold.expect("resolved");
        let mut table = Table::new(&["environment_seed", "N", "M", "trap_rank", "mean", "std_error"]);
        let mut verdicts = Vec::new();
        let mut series = Vec::new();
        let mut trajectory = None;
        for &n in self.ns() {
            let spec = TorusSpec::new(self.d(), n)?;
            let mut passes = Vec::new();
            let mut avg = vec![0.0; ms.len()];
            for &s in &seeds {
                let measure = self.ppp(s)?;
                let field = discretize(&measure, spec, measure.default_floor())?;
                let mut maxima = Vec::new();
                for (k, &m) in ms.iter().enumerate() {
                    let r = occupation_negligibility(&field, m, t, replicas, self.cfg.seed)?;
                    for (j, (mean, se)) in r.mean.iter().zip(&r.std_error).enumerate() {
                        table.push(vec![s.to_string(), n.to_string(), m.to_string(), (j + 1).to_string(), num(*mean), num(*se)]);
                    }
                    maxima.push(r.max_mean);
                    avg[k] += r.max_mean / seeds.len() as f64;
                }
                passes.push(trend_test(&maxima, TREND_THRESHOLD)?.pass);
                if self.dump() && trajectory.is_none() {
                    let start = rank_traps(&field, 1)?[0];
                    let theta = if spec.dim() == 2 { (n as f64).ln() } else { 1.0 };
                    let cfg = WalkConfig::new(&field, theta, self.cfg.seed)?;
                    trajectory = Some(simulate_walk_replica(&cfg, start, t, 0)?);
                }
            }
            let frac = fraction(&passes);
            verdicts.push(Verdict::at_least(
                &format!("occupation_decreasing_in_m_N{n}"),
                frac,
                threshold,
                format!("{} of {} environments decrease along M = {ms:?}", passes.iter().filter(|b| **b).count(), passes.len()),
            ));
            series.push(Series {
                name: format!("N = {n}, mean over environments"),
                points: ms.iter().map(|&m| m as f64).zip(avg).collect(),
            });
        }
        Ok(Outcome {
            table,
            verdicts,
            environment_seeds: seeds,
            plot: Some(Plot {
                title: format!("time outside the top-M traps on [0, {t}]"),
                x_label: "M".into(),
                y_label: "max over start traps".into(),
                log_x: true,
                series,
                reference: None,
            }),
            trajectory,
            ..Default::default()
        })
    }

    fn hydro_field(&self, n: usize) -> Result<(WField, TimeScale), CliError> {
        let seed = self.env_seeds()[0];
        let sampled = self.ppp(seed)?;
        let measure = TrapMeasure::new(1, sampled.atoms, self.p.background.expect("resolved"))?;
        let field = discretize(&measure, TorusSpec::new(1, n)?, measure.default_floor())?;
        let scale = match self.p.time_scale.as_deref() {
            Some("bouchaud") => TimeScale::Bouchaud { alpha: self.p.alpha.expect("resolved") },
            _ => TimeScale::Diffusive,
        };
        Ok((field, scale))
    }

    fn hydro(&self) -> Result<Outcome, CliError> {
        let gamma = self.p.gamma.expect("resolved");
        let t = self.p.t.expect("resolved");
        let replicas = self.p.replicas.expect("resolved");
        let threshold = self.p.threshold.expect("resolved");
        let u0 = |x: f64| 1.0 + 0.5 * (2.0 * PI * x).cos();
        let h = |x: f64| (2.0 * PI * x).cos();
        let mut table =
            Table::new(&["N", "t", "mc_mean", "mc_se", "ode_value", "z_score", "mass_drift", "accepted_steps"]);
        let mut verdicts = Vec::new();
        let mut files = Vec::new();
        let mut plot_series = Vec::new();
        for &n in self.ns() {
            let (field, scale) = self.hydro_field(n)?;
            let cfg = HydroConfig::new(&field, gamma, u0, t, scale)?;
            let sol = solve_master(&cfg, &DtControl::new(vec![t]))?;
            let ut = sol.at(t).expect("output time recorded");
            let cmp = hydro_comparison(&cfg, h, t, replicas, self.cfg.seed)?;
            let drift = sol.mass_drift();
            table.push(vec![
                n.to_string(),
                num(t),
                num(cmp.mc_mean),
                num(cmp.mc_se),
                num(cmp.ode_value),
                num(cmp.z_score),
                num(drift),
                sol.accepted_steps.to_string(),
            ]);
            verdicts.push(
                Verdict::at_most(
                    &format!("expectation_match_N{n}"),
                    cmp.z_score,
                    threshold,
                    format!("MC {:.6} vs solver {:.6}", cmp.mc_mean, pairing(&cfg, ut, h)),
                )
                .with_se(cmp.mc_se),
            );
            verdicts.push(Verdict::at_most(&format!("mass_conservation_N{n}"), drift, 1e-8, "relative drift of sum W u"));
            if Some(&n) == self.ns().last() {
                let mut csv = Vec::new();
                sol.write_csv(&mut csv)?;
                files.push(("density.csv".to_string(), csv));
                let xs = (0..n).map(|x| x as f64 / n as f64);
                plot_series.push(Series { name: "u_0".into(), points: xs.clone().zip(cfg.u0.iter().copied()).collect() });
                plot_series.push(Series { name: format!("u_{t}"), points: xs.zip(ut.iter().copied()).collect() });
            }
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("initial_profile".into(), json!("1 + cos(2 pi x) / 2"));
        metrics.insert("test_function".into(), json!("cos(2 pi x)"));
        Ok(Outcome {
            table,
            verdicts,
            metrics,
            environment_seeds: vec![self.env_seeds()[0]],
            plot: Some(Plot {
                title: "master-equation density".into(),
                x_label: "x".into(),
                y_label: "u".into(),
                log_x: false,
                series: plot_series,
                reference: None,
            }),
            files,
            ..Default::default()
        })
    }

    fn two_blocks(&self) -> Result<Outcome, CliError> {
        let gamma = self.p.gamma.expect("resolved");
        let t = self.p.t.expect("resolved");
        let replicas = self.p.replicas.expect("resolved");
        let eps = self.p.epsilons.clone().expect("resolved");
        let mut table = Table::new(&["N", "epsilon", "ell", "mean", "std_error"]);
        let mut verdicts = Vec::new();
        let mut series = Vec::new();
        for &n in self.ns() {
            let (field, scale) = self.hydro_field(n)?;
            let cfg = HydroConfig::new(&field, gamma, |x| 1.0 + 0.5 * (2.0 * PI * x).cos(), t, scale)?;
            let rows = two_blocks_diagnostic(&cfg, |x| (2.0 * PI * x).cos(), &eps, replicas, self.cfg.seed)?;
            for r in &rows {
                table.push(vec![n.to_string(), num(r.epsilon), r.ell.to_string(), num(r.mean), num(r.std_error)]);
            }
            let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
            if means.len() >= 3 {
                let v = trend_test(&means, TREND_THRESHOLD)?;
                verdicts.push(
                    Verdict::at_least(
                        &format!("two_blocks_shrinks_with_epsilon_N{n}"),
                        v.fraction_decreasing,
                        TREND_THRESHOLD,
                        format!("means along epsilon {eps:?}: {}", trend_detail(&means)),
                    )
                    .diagnostic(),
                );
            }
            series.push(Series { name: format!("N = {n}"), points: eps.iter().copied().zip(means).collect() });
        }
        Ok(Outcome {
            table,
            verdicts,
            environment_seeds: vec![self.env_seeds()[0]],
            plot: Some(Plot {
                title: "two-blocks replacement error".into(),
                x_label: "epsilon".into(),
                y_label: "E|...|".into(),
                log_x: true,
                series,
                reference: Some(0.0),
            }),
            ..Default::default()
        })
    }

    fn stay2d(&self) -> Result<Outcome, CliError> {
        let seeds = self.env_seeds();
        let ns = self.ns().to_vec();
        let t = self.p.t.expect("resolved");
        let div = self.p.ell_divisor.expect("resolved");
        let replicas = self.p.replicas.expect("resolved");
        let rank = self.p.trap_rank.expect("resolved");
        let threshold = self.p.threshold.expect("resolved");
        if ns.len() < 3 {
            return schema("stay2d needs at least three values of N");
        }
        let mut table = Table::new(&["environment_seed", "N", "ell", "probability", "std_error", "censored"]);
        let mut passes = Vec::new();
        let mut avg = vec![0.0; ns.len()];
        let mut trajectory = None;
        for &s in &seeds {
            let measure = self.ppp(s)?;
            let mut probs = Vec::new();
            for (k, &n) in ns.iter().enumerate() {
                let field = discretize(&measure, TorusSpec::new(2, n)?, measure.default_floor())?;
                let trap = rank_traps(&field, rank)?[rank - 1];
                let ell = n / div;
                let r = stay_experiment(&field, trap, t, ell, replicas, self.cfg.seed)?;
                table.push(vec![
                    s.to_string(),
                    n.to_string(),
                    ell.to_string(),
                    num(r.probability),
                    num(r.std_error),
                    r.censored.to_string(),
                ]);
                probs.push(r.probability);
                avg[k] += r.probability / seeds.len() as f64;
                if self.dump() && trajectory.is_none() {
                    trajectory = Some(ClockProcess::from_seed(&field, 1.0, trap, self.cfg.seed, 0)?.trajectory(t)?);
                }
            }
            passes.push(trend_test(&probs, TREND_THRESHOLD)?.pass);
        }
        let frac = fraction(&passes);
        let verdicts = vec![Verdict::at_least(
            "stay_probability_decreasing",
            frac,
            threshold,
            format!("{} of {} environments decrease along N", passes.iter().filter(|b| **b).count(), passes.len()),
        )];
        Ok(Outcome {
            table,
            verdicts,
            environment_seeds: seeds,
            plot: Some(Plot {
                title: format!("P(distance >= N/{div} from trap {rank} at t = {t})"),
                x_label: "N".into(),
                y_label: "probability".into(),
                log_x: true,
                series: vec![Series { name: "mean over environments".into(), points: ns.iter().map(|&n| n as f64).zip(avg).collect() }],
                reference: Some(0.0),
            }),
            trajectory,
            ..Default::default()
        })
    }

    fn kproc_diagonal(&self) -> Result<Outcome, CliError> {
        let d = self.d();
        let mode = match d {
            3 => KMode::D3,
            2 => KMode::D2LogN,
            _ => return schema(format!("kproc-diagonal needs d = 2 or d = 3, got d = {d}")),
        };
        let seed = self.env_seeds()[0];
        let measure = match self.user_atoms() {
            Some(atoms) => TrapMeasure::new(d, atoms?, self.p.background.unwrap_or(0.0))?,
            None => self.ppp(seed)?,
        };
        let schedule = match &self.p.schedule {
            Some(pairs) => TruncationSchedule::new(d, pairs.iter().map(|p| (p[0], p[1])).collect())?,
            None => {
                let ns = self.ns();
                let fields: Vec<WField> = ns
                    .iter()
                    .map(|&n| Ok(discretize(&measure, TorusSpec::new(d, n)?, measure.default_floor())?))
                    .collect::<Result<_, CliError>>()?;
                let cap = fields.iter().map(|f| f.values.iter().filter(|&&v| v > f.floor).count()).min().unwrap_or(1);
                TruncationSchedule::log2(d, ns, cap.max(1))?
            }
        };
        let fields: Vec<WField> = schedule
            .pairs
            .iter()
            .map(|&(n, _)| Ok(discretize(&measure, TorusSpec::new(d, n)?, measure.default_floor())?))
            .collect::<Result<_, CliError>>()?;
        let horizon = self.p.t.expect("resolved");
        let replicas = self.p.replicas.expect("resolved");
        let rows = diagonal_coupling(&fields, &schedule, mode, horizon, replicas, self.cfg.seed)?;
        let mut header = vec!["N".to_string(), "ell".into(), "sup_distance".into(), "sup_distance_se".into()];
        for f in COUPLING_TIMES {
            header.push(format!("tv_t{f}"));
        }
        for f in COUPLING_TIMES {
            header.push(format!("tv_exact_t{f}"));
        }
        header.push("censored".into());
        let mut table = Table { header, rows: Vec::new() };
        for r in &rows {
            let mut row = vec![r.n.to_string(), r.ell.to_string(), num(r.sup_distance), num(r.sup_distance_se)];
            row.extend(r.tv.iter().map(|v| num(*v)));
            row.extend(r.tv_exact.iter().map(|v| num(*v)));
            row.push(r.censored.to_string());
            table.push(row);
        }
        let mut verdicts = Vec::new();
        let final_tv: Vec<f64> = rows.iter().map(|r| *r.tv_exact.last().expect("three times")).collect();
        if final_tv.len() >= 3 {
            let v = trend_test(&final_tv, TREND_THRESHOLD)?;
            verdicts.push(
                Verdict::at_least(
                    "tv_to_k_process_decreasing",
                    v.fraction_decreasing,
                    TREND_THRESHOLD,
                    format!("TV at t = horizon along the schedule: {}", trend_detail(&final_tv)),
                )
                .diagnostic(),
            );
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("schedule".into(), json!(schedule.pairs));
        Ok(Outcome {
            table,
            verdicts,
            metrics,
            environment_seeds: vec![seed],
            plot: Some(Plot {
                title: format!("trace walk against the truncated K-process ({})", mode.name()),
                x_label: "N".into(),
                y_label: "distance".into(),
                log_x: true,
                series: vec![
                    Series { name: "sup distance".into(), points: rows.iter().map(|r| (r.n as f64, r.sup_distance)).collect() },
                    Series { name: "TV at horizon".into(), points: rows.iter().map(|r| r.n as f64).zip(final_tv).collect() },
                ],
                reference: Some(0.0),
            }),
            ..Default::default()
        })
    }
}
