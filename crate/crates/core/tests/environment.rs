mod common;

use proptest::prelude::*;
use trapsim::environment::*;
use trapsim::lattice::{Site, TorusSpec};
use trapsim::stats::ks_two_sample;

#[test]
fn ppp_atom_count_is_poisson() {
    // w_min chosen so that 25 atoms are expected.
    let alpha = 0.6;
    let w_min = 25f64.powf(-1.0 / alpha);
    let counts: Vec<f64> = (0..4000)
        .map(|s| sample_ppp_environment(&PppConfig::new(alpha, w_min, s).unwrap(), 2).unwrap().atoms.len() as f64)
        .collect();
    let (mean, se) = common::mean_se(&counts);
    assert!((mean - 25.0).abs() < 4.0 * se, "mean {mean} se {se}");
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    assert!((var / mean - 1.0).abs() < 0.1, "dispersion {}", var / mean);
}

#[test]
fn ppp_weight_tail_follows_power_law() {
    let alpha = 0.5;
    let w_min = 1e-6;
    let w = sample_ppp_environment(&PppConfig::new(alpha, w_min, 3).unwrap(), 1).unwrap();
    let n = w.atoms.len() as f64;
    assert!(n > 900.0);
    for k in [2.0f64, 10.0] {
        let p: f64 = k.powf(-alpha);
        let frac = w.atoms.iter().filter(|a| a.weight > k * w_min).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((frac - p).abs() < 4.0 * se, "tail at {k} w_min: {frac} vs {p}");
    }
    assert!(w.atoms.iter().all(|a| a.weight >= w_min && a.pos[0] >= 0.0 && a.pos[0] < 1.0));
}

#[test]
fn ppp_is_reproducible_per_seed() {
    let c = PppConfig::new(0.5, 1e-4, 11).unwrap();
    assert_eq!(sample_ppp_environment(&c, 3).unwrap(), sample_ppp_environment(&c, 3).unwrap());
    let other = PppConfig::new(0.5, 1e-4, 12).unwrap();
    assert_ne!(sample_ppp_environment(&c, 3).unwrap(), sample_ppp_environment(&other, 3).unwrap());
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(PppConfig::new(1.0, 1e-3, 0).is_err());
    assert!(PppConfig::new(0.5, 0.0, 0).is_err());
    assert!(TrapMeasure::new(4, vec![], 1.0).is_err());
    assert!(TrapMeasure::new(1, vec![Atom { pos: vec![1.0], weight: 1.0 }], 0.0).is_err());
    assert!(TrapMeasure::new(1, vec![Atom { pos: vec![0.5], weight: -1.0 }], 0.0).is_err());
    let empty = TrapMeasure::new(1, vec![Atom { pos: vec![0.1], weight: 1.0 }], 0.0).unwrap();
    let spec = TorusSpec::new(1, 4).unwrap();
    assert!(matches!(discretize(&empty, spec, 0.0), Err(trapsim::error::TrapError::NonPositiveEnvironment { .. })));
}

#[test]
fn floor_only_fills_empty_cubes() {
    let w = TrapMeasure::new(2, vec![Atom { pos: vec![0.1, 0.1], weight: 4.0 }, Atom { pos: vec![0.9, 0.6], weight: 2.0 }], 0.0)
        .unwrap();
    assert_eq!(w.default_floor(), 4e-9);
    let f = discretize(&w, TorusSpec::new(2, 4).unwrap(), w.default_floor()).unwrap();
    assert_eq!(f.values[0], 4.0);
    assert_eq!(f.values[3 * 4 + 2], 2.0);
    assert_eq!(f.values.iter().filter(|&&v| v == 4e-9).count(), 14);
    assert_eq!(f.total, 6.0);
}

#[test]
fn h1_statistic_of_uniform_field() {
    // Σ 1/W = N^d / c, so the statistic is N^{d-2-γ0} / c.
    let f = WField::uniform(TorusSpec::new(1, 128).unwrap(), 0.25).unwrap();
    let got = check_h1(&f, 1.5).unwrap();
    assert!(common::rel(got, 128f64.powf(-3.5) * 128.0 / 0.25) < 1e-12);
}

#[test]
fn rescaled_depths_have_an_n_independent_law() {
    // In d = 1, τ_x = N^{1/α} W_x is a sum over a Poisson process whose
    // rescaled intensity does not depend on N.
    let alpha = 0.5;
    let w_min = 1e-10;
    let sample = |n: usize, seeds: std::ops::Range<u64>| -> Vec<f64> {
        let mut out = Vec::new();
        for s in seeds {
            let w = sample_ppp_environment(&PppConfig::new(alpha, w_min, s).unwrap(), 1).unwrap();
            let f = discretize(&w, TorusSpec::new(1, n).unwrap(), w.default_floor()).unwrap();
            out.extend(tau_field(&f, alpha).unwrap());
        }
        out
    };
    let a = sample(64, 0..12);
    let b = sample(128, 100..106);
    let ks = ks_two_sample(&a, &b).unwrap();
    assert!(ks.p_value > 1e-3, "KS {ks:?}");
}

#[test]
fn environment_document_round_trips() {
    let ppp = PppConfig::new(0.5, 1e-3, 5).unwrap();
    let w = sample_ppp_environment(&ppp, 2).unwrap();
    let doc = EnvironmentDoc::new(&w, 16, Some(&ppp), w.default_floor());
    let back = EnvironmentDoc::from_json(&doc.to_json().unwrap()).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.field().unwrap(), discretize(&w, TorusSpec::new(2, 16).unwrap(), w.default_floor()).unwrap());
}

fn measure(d: usize) -> impl Strategy<Value = TrapMeasure> {
    let atom = (proptest::collection::vec(0.0f64..1.0, d), 1e-3f64..1e3).prop_map(|(pos, weight)| Atom { pos, weight });
    (proptest::collection::vec(atom, 0..40), 0.0f64..2.0)
        .prop_filter("non-empty", |(a, b)| !a.is_empty() || *b > 0.0)
        .prop_map(move |(atoms, bg)| TrapMeasure::new(d, atoms, bg).unwrap())
}

proptest! {
    #[test]
    fn discretization_conserves_mass(d in 1usize..=3, n in 2usize..=12, seed in any::<u64>()) {
        let w = sample_ppp_environment(&PppConfig::new(0.7, 1e-2, seed).unwrap(), d).unwrap();
        prop_assume!(!w.atoms.is_empty());
        let f = discretize(&w, TorusSpec::new(d, n).unwrap(), 1e-300).unwrap();
        prop_assert!(common::rel(f.total, w.total_mass()) < 1e-12);
        let unfloored: f64 = f.values.iter().filter(|&&v| v > 1e-300).sum();
        prop_assert!(common::rel(unfloored, w.total_mass()) < 1e-12);
    }

    #[test]
    fn discretization_of_any_measure_conserves_mass(w in measure(2), n in 2usize..=10) {
        let f = discretize(&w, TorusSpec::new(2, n).unwrap(), w.default_floor()).unwrap();
        prop_assert!(common::rel(f.total, w.total_mass()) < 1e-12);
        prop_assert!(f.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn ranking_is_invariant_under_rescaling(w in measure(1), n in 2usize..=32, c in 1e-3f64..1e3, m in 1usize..=4) {
        let f = discretize(&w, TorusSpec::new(1, n).unwrap(), w.default_floor()).unwrap();
        let m = m.min(n);
        let ranked = rank_traps(&f, m).unwrap();
        prop_assert_eq!(rank_traps(&f.scaled(c).unwrap(), m).unwrap(), ranked.clone());
        for pair in ranked.windows(2) {
            prop_assert!(f.value(pair[0]) >= f.value(pair[1]));
        }
        let smallest = f.value(*ranked.last().unwrap());
        let outside = (0..n).filter(|x| !ranked.contains(&Site(*x))).all(|x| f.values[x] <= smallest);
        prop_assert!(outside);
    }
}
