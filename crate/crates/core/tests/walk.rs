mod common;

use proptest::prelude::*;
use rayon::prelude::*;
use trapsim::environment::WField;
use trapsim::lattice::{Site, SiteSet, TorusSpec};
use trapsim::potential::{mean_hitting_torus, trace_rates_exact, ChainSpec, HittingClock};
use trapsim::rng::{stream, Purpose};
use trapsim::stats::{chi_square_gof, ks_two_sample};
use trapsim::walk::*;

fn field(d: usize, n: usize, spread: f64, seed: u64) -> WField {
    use rand::Rng;
    let spec = TorusSpec::new(d, n).unwrap();
    let mut rng = stream(seed, Purpose::Oracle, 0);
    let values = (0..spec.sites()).map(|_| rng.random_range(-spread..spread).exp()).collect();
    WField::from_values(spec, values).unwrap()
}

#[test]
fn holding_times_have_mean_depth_over_speed() {
    let f = field(2, 4, 1.0, 1);
    let theta = 2.5;
    let mut w = Walker::new(&f, theta, Site(5), stream(2, Purpose::Walk, 0)).unwrap();
    let mut per_site = vec![Vec::new(); 16];
    for _ in 0..200_000 {
        let (x, h) = w.step();
        per_site[x.0].push(h);
    }
    for (x, hs) in per_site.iter().enumerate() {
        let (m, se) = common::mean_se(hs);
        let want = f.values[x] / theta;
        assert!((m - want).abs() < 4.0 * se, "site {x}: {m} vs {want}");
    }
}

#[test]
fn simulated_paths_are_nearest_neighbour_and_fill_the_horizon() {
    let f = field(3, 5, 1.0, 3);
    let cfg = WalkConfig::new(&f, 1.0, 4).unwrap();
    let p = simulate_walk(&cfg, Site(7), 50.0).unwrap();
    assert!(p.is_nearest_neighbor());
    assert_eq!(p.start, Site(7));
    assert!(common::rel(p.segments.iter().map(|s| s.holding).sum(), 50.0) < 1e-12);
    assert_eq!(simulate_walk(&cfg, Site(7), 50.0).unwrap(), p);
    assert!(WalkConfig::new(&f, 0.0, 4).is_err());
    assert!(simulate_walk(&cfg, Site(125), 1.0).is_err());
}

#[test]
fn mean_hitting_time_matches_exact_value() {
    let f = field(3, 16, 0.5, 4);
    let chain = ChainSpec::new(&f);
    let (x, y) = (Site(0), f.spec.site(&[8, 8, 8]).unwrap());
    let exact = mean_hitting_torus(&chain, x, y, HittingClock::Chain).unwrap();
    let target = SiteSet::new(&f.spec, &[y]).unwrap();
    let cfg = WalkConfig::new(&f, 1.0, 5).unwrap();
    let times: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|r| hitting_time_walk(&cfg, x, &target, 1e9, stream(5, Purpose::Walk, r)).unwrap().time())
        .collect();
    let (m, se) = common::mean_se(&times);
    assert!((m - exact).abs() < 4.0 * se, "MC {m} ± {se}, exact {exact}");
    assert!(common::rel(m, exact) < 0.25);
}

#[test]
fn gamblers_ruin_on_the_cycle() {
    let spec = TorusSpec::new(1, 10).unwrap();
    let hits = |x0: usize, a: usize, b: usize| -> f64 {
        let a = SiteSet::new(&spec, &[Site(a)]).unwrap();
        let b = SiteSet::new(&spec, &[Site(b)]).unwrap();
        let wins: u64 = (0..100_000u64)
            .into_par_iter()
            .map(|r| skeleton_hits_first(&spec, Site(x0), &a, &b, 10_000, &mut stream(6, Purpose::Oracle, r)).unwrap() as u64)
            .sum();
        wins as f64 / 1e5
    };
    let se = (0.25f64 / 1e5).sqrt();
    assert!((hits(0, 3, 7) - 0.5).abs() < 4.0 * se);
    // Between 0 and 4, from 1: 1/4.
    let p = hits(1, 4, 0);
    assert!((p - 0.25).abs() < 4.0 * (0.1875f64 / 1e5).sqrt(), "{p}");
}

#[test]
fn empirical_trace_rates_match_exact_rates() {
    let f = field(2, 6, 1.0, 7);
    let sites = [Site(0), Site(8), Site(21)];
    let set = SiteSet::new(&f.spec, &sites).unwrap();
    let cfg = WalkConfig::new(&f, 1.0, 8).unwrap();
    let paths: Vec<Trajectory> = (0..8u64)
        .into_par_iter()
        .map(|r| simulate_trace(&cfg, sites[0], &set, 3e4, u64::MAX, stream(8, Purpose::Walk, r)).unwrap().0)
        .collect();
    let est = estimate_trace_rates(&paths, &sites).unwrap();
    assert!(est.total_jumps() >= 100_000, "only {} jumps", est.total_jumps());
    let exact = trace_rates_exact(&ChainSpec::new(&f), &sites).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let (r, se) = (est.rate(i, j).unwrap(), est.std_error(i, j).unwrap());
            let want = exact.rate(i, j);
            assert!((r - want).abs() < 3.5 * se, "r({i},{j}) = {r} ± {se}, exact {want}");
        }
    }
}

#[test]
fn walk_is_stationary_under_depth_measure() {
    let f = field(1, 8, 1.0, 9);
    let cfg = WalkConfig::new(&f, 1.0, 10).unwrap();
    let mut counts = vec![0u64; 8];
    let ends: Vec<usize> = (0..20_000u64)
        .into_par_iter()
        .map(|r| simulate_walk_replica(&cfg, Site(0), 500.0, r).unwrap().position_at(500.0).unwrap().0)
        .collect();
    for x in ends {
        counts[x] += 1;
    }
    let nu: Vec<f64> = f.values.iter().map(|w| w / f.mass()).collect();
    let (_, _, p) = chi_square_gof(&counts, &nu, 5.0).unwrap();
    assert!(p > 1e-3, "chi-square p = {p}");
}

#[test]
fn clock_process_has_the_law_of_the_walk() {
    let f = field(2, 16, 1.0, 11);
    let start = Site(17);
    let home = SiteSet::new(&f.spec, &[start]).unwrap();
    let t = 5.0;
    let cfg = WalkConfig::new(&f, 1.0, 12).unwrap();
    let a: Vec<f64> = (0..4000u64)
        .into_par_iter()
        .map(|r| occupation_time(&simulate_walk_replica(&cfg, start, t, r).unwrap(), &home, t).unwrap())
        .collect();
    let b: Vec<f64> = (0..4000u64)
        .into_par_iter()
        .map(|r| {
            let p = ClockProcess::from_seed(&f, 1.0, start, 13, r).unwrap().trajectory(t).unwrap();
            occupation_time(&p, &home, t).unwrap()
        })
        .collect();
    let ks = ks_two_sample(&a, &b).unwrap();
    assert!(ks.p_value > 1e-3, "{ks:?}");
}

#[test]
fn clock_process_reports_its_state() {
    let f = field(2, 8, 1.0, 14);
    let mut c = ClockProcess::from_seed(&f, 2.0, Site(3), 1, 0).unwrap();
    let mut s = 0.0;
    for k in 1..=100 {
        let (_, h) = c.advance();
        s += h;
        assert_eq!(c.state().k, k);
        assert!((c.state().s - s).abs() < 1e-12);
    }
}

#[test]
fn short_times_do_not_move_the_walker_far() {
    let f = field(2, 32, 1.0, 15);
    let est = stay_experiment(&f, Site(0), 1e-9, 1, 2000, 16).unwrap();
    assert!(est.probability < 1e-2, "{est:?}");
    let beyond = stay_experiment(&f, Site(0), 10.0, 33, 100, 16).unwrap();
    assert_eq!(beyond.probability, 0.0);
    let f3 = field(3, 4, 1.0, 0);
    assert!(stay_experiment(&f3, Site(0), 1.0, 1, 10, 0).is_err());
}

#[test]
fn traj_files_round_trip() {
    let f = field(2, 8, 1.0, 17);
    let p = simulate_walk(&WalkConfig::new(&f, 1.0, 18).unwrap(), Site(9), 20.0).unwrap();
    let mut buf = Vec::new();
    write_traj(&mut buf, &p).unwrap();
    let back = read_traj(&buf[..]).unwrap();
    assert_eq!(back.segments, p.segments);
    assert_eq!(back.spec, p.spec);
    assert!(read_traj(&b"JART"[..]).is_err());
    assert!(read_traj(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn return_and_hitting_times_on_a_recorded_path() {
    let spec = TorusSpec::new(1, 5).unwrap();
    let seg = |s, h| Segment { site: Site(s), holding: h };
    let p = Trajectory::from_segments(spec, vec![seg(0, 1.0), seg(1, 0.5), seg(0, 2.0), seg(4, 1.0)]).unwrap();
    let zero = SiteSet::new(&spec, &[Site(0)]).unwrap();
    let four = SiteSet::new(&spec, &[Site(4)]).unwrap();
    let three = SiteSet::new(&spec, &[Site(3)]).unwrap();
    assert_eq!(hitting_time(&p, &zero).unwrap(), Hit::At(0.0));
    assert_eq!(return_time(&p, &zero).unwrap(), Hit::At(1.5));
    assert_eq!(hitting_time(&p, &four).unwrap(), Hit::At(3.5));
    assert_eq!(hitting_time(&p, &three).unwrap(), Hit::Censored(4.5));
    assert_eq!(occupation_time(&p, &zero, 2.0).unwrap(), 1.5);
    assert_eq!(p.occupation_profile()[0], (Site(0), 3.0));
}

proptest! {
    #[test]
    fn trace_of_a_trace_is_the_trace(seed in any::<u64>(), keep in proptest::collection::vec(any::<bool>(), 16)) {
        let f = field(2, 4, 1.0, seed);
        let p = simulate_walk(&WalkConfig::new(&f, 1.0, seed).unwrap(), Site(0), 200.0).unwrap();
        let outer_sites: Vec<Site> = (0..16).filter(|&x| keep[x] || x < 3).map(Site).collect();
        let inner_sites: Vec<Site> = outer_sites.iter().copied().filter(|s| s.0 < 3 || s.0 % 2 == 0).collect();
        let outer = SiteSet::new(&f.spec, &outer_sites).unwrap();
        let inner = SiteSet::new(&f.spec, &inner_sites).unwrap();
        let direct = trace(&p, &inner);
        let nested = trace(&trace(&p, &outer).unwrap(), &inner);
        match (direct, nested) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.segments.len(), b.segments.len());
                for (s, t) in a.segments.iter().zip(&b.segments) {
                    prop_assert_eq!(s.site, t.site);
                    prop_assert!((s.holding - t.holding).abs() <= 1e-12 * s.holding.max(1.0));
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one trace is empty and the other is not"),
        }
    }

    #[test]
    fn trace_only_keeps_sites_of_the_set(seed in any::<u64>()) {
        let f = field(1, 9, 1.0, seed);
        let p = simulate_walk(&WalkConfig::new(&f, 1.0, seed).unwrap(), Site(0), 100.0).unwrap();
        let set = SiteSet::new(&f.spec, &[Site(0), Site(4)]).unwrap();
        let tr = trace(&p, &set).unwrap();
        prop_assert!(tr.segments.iter().all(|s| set.contains(s.site)));
        prop_assert!(tr.segments.windows(2).all(|w| w[0].site != w[1].site));
        let inside = occupation_time(&p, &set, 100.0).unwrap();
        prop_assert!((tr.total_time - inside).abs() < 1e-9 * inside.max(1.0));
    }
}
