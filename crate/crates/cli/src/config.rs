//! Experiment configuration: a TOML document with a top-level experiment
//! name, an output directory and a flat `[params]` table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trapsim::lattice::MAX_DIM;

use crate::error::CliError;

/// Named experiments understood by the runner.
pub const EXPERIMENTS: [(&str, &str); 9] = [
    ("env-check", "regularity statistic N^-(2+γ0) Σ 1/W_x along N for sampled environments"),
    ("potential-identities", "escape and expected-hitting identities on randomized instances"),
    ("capacity-limits", "point-to-point capacities against v_3/2 (d=3) or π/4 (d=2), with v_3 or Green slope"),
    ("trace-convergence", "exact trace rates on the deepest traps against the K-process rates"),
    ("occupation", "time spent outside the top-M traps, per M, over sampled environments"),
    ("hydro", "particle system against the lattice Krein–Feller solver (d=1)"),
    ("two-blocks", "point density against block density, per block fraction ε (d=1)"),
    ("stay2d", "probability of being far from the deepest trap at time t (d=2)"),
    ("kproc-diagonal", "trace walk against the truncated K-process along a schedule (N, ℓ_N)"),
];

/// Raw configuration as written in the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub output_dir: PathBuf,
    /// Base seed; environment `k` uses `seed + k` unless `params.seeds` is
    /// given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub plot: bool,
    #[serde(default)]
    pub params: Params,
}

fn default_true() -> bool {
    true
}

/// Parameter block; every field is optional and defaults per experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub d: Option<usize>,
    pub n: Option<Vec<usize>>,
    pub m: Option<usize>,
    pub m_values: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub t: Option<f64>,
    pub replicas: Option<u64>,
    pub environments: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    /// First environment seed when `seeds` is absent; defaults to `seed`.
    pub environment_seed: Option<u64>,
    pub w_min: Option<f64>,
    pub background: Option<f64>,
    /// `[[N, ℓ], ...]`.
    pub schedule: Option<Vec<[usize; 2]>>,
    pub epsilons: Option<Vec<f64>>,
    /// Box radii for Green's-function estimates.
    pub boxes: Option<Vec<usize>>,
    /// Random walks for the `Z^3` return-frequency estimate.
    pub walks: Option<u64>,
    pub cutoff: Option<u64>,
    /// Trap rank `j` (1-based) for `stay2d`.
    pub trap_rank: Option<usize>,
    /// Distance divisor: `ℓ_N = N / ell_divisor`.
    pub ell_divisor: Option<usize>,
    /// Atoms `[x_1, .., x_d, w]` replacing the default trap layout.
    pub atoms: Option<Vec<Vec<f64>>>,
    pub instances: Option<usize>,
    pub threshold: Option<f64>,
    /// `"diffusive"` or `"bouchaud"` (hydro only).
    pub time_scale: Option<String>,
    /// Write `trajectory.traj` with a sample walk.
    pub dump_trajectory: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Schema(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks that do not depend on experiment defaults.
    pub fn validate(&self) -> Result<(), CliError> {
        if !EXPERIMENTS.iter().any(|(name, _)| *name == self.experiment) {
            return Err(CliError::Schema(format!("unknown experiment `{}`", self.experiment)));
        }
        let p = &self.params;
        if let Some(d) = p.d {
            if d == 0 || d > MAX_DIM {
                return Err(CliError::Schema(format!("dimension out of range: d = {d} (supported: 1..=3)")));
            }
        }
        if let Some(ns) = &p.n {
            if ns.is_empty() || ns.iter().any(|&n| n < 2) {
                return Err(CliError::Schema("n must be a nonempty list of sides >= 2".into()));
            }
        }
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Schema(format!("{name} must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("t", p.t)?;
        positive("gamma", p.gamma)?;
        positive("w_min", p.w_min)?;
        positive("threshold", p.threshold)?;
        if let Some(a) = p.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::Schema(format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        if let Some(b) = p.background {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(CliError::Schema(format!("background must be non-negative, got {b}")));
            }
        }
        if p.replicas == Some(0) || p.environments == Some(0) || p.instances == Some(0) {
            return Err(CliError::Schema("replicas, environments and instances must be positive".into()));
        }
        if let Some(seeds) = &p.seeds {
            if seeds.is_empty() {
                return Err(CliError::Schema("seeds must not be empty".into()));
            }
        }
        if let Some(eps) = &p.epsilons {
            if eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                return Err(CliError::Schema("epsilons must lie in (0, 1]".into()));
            }
        }
        if let Some(ts) = &p.time_scale {
            if ts != "diffusive" && ts != "bouchaud" {
                return Err(CliError::Schema(format!("time_scale must be \"diffusive\" or \"bouchaud\", got `{ts}`")));
            }
        }
        if p.ell_divisor == Some(0) || p.trap_rank == Some(0) || p.m == Some(0) {
            return Err(CliError::Schema("m, trap_rank and ell_divisor must be positive".into()));
        }
        Ok(())
    }

    /// Seeds of the environments: explicit list, or `base + k` for
    /// `k < count` with `base = environment_seed` (default `seed`).
    pub fn environment_seeds(&self, default_count: usize) -> Vec<u64> {
        match &self.params.seeds {
            Some(s) => s.clone(),
            None => {
                let count = self.params.environments.unwrap_or(default_count);
                let base = self.params.environment_seed.unwrap_or(self.seed);
                (0..count as u64).map(|k| base.wrapping_add(k)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_document() {
        let c = ExperimentConfig::from_toml("experiment = \"hydro\"\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(c.experiment, "hydro");
        assert!(c.plot);
        assert_eq!(c.params, Params::default());
    }

    #[test]
    fn rejects_unknown_keys_and_experiments() {
        assert!(ExperimentConfig::from_toml("experiment = \"hydro\"\noutput_dir = \"o\"\ncolour = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"nope\"\noutput_dir = \"o\"\n").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"hydro\"\noutput_dir = \"o\"\n[params]\nfoo = 2\n").is_err());
    }

    #[test]
    fn dimension_four_is_out_of_range() {
        let e = ExperimentConfig::from_toml("experiment = \"capacity-limits\"\noutput_dir = \"o\"\n[params]\nd = 4\n")
            .unwrap_err();
        assert!(e.to_string().contains("dimension out of range"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seeds_default_to_consecutive() {
        let mut c = ExperimentConfig { seed: 10, ..Default::default() };
        c.params.environments = Some(3);
        assert_eq!(c.environment_seeds(20), vec![10, 11, 12]);
        c.params.environment_seed = Some(100);
        assert_eq!(c.environment_seeds(20), vec![100, 101, 102]);
        c.params.seeds = Some(vec![4, 2]);
        assert_eq!(c.environment_seeds(20), vec![4, 2]);
    }
}
