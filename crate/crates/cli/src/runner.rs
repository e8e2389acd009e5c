//! `run`, `replay` and `list-experiments`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use trapsim::walk::{read_traj, write_traj, Trajectory};

use crate::config::{ExperimentConfig, EXPERIMENTS};
use crate::error::{CliError, ErrorReport};
use crate::experiments::{execute, resolve, Outcome};
use crate::output::{write_file, Verdict};

/// Contents of `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    /// `pass`, `fail` or `error`.
    pub status: String,
    /// The configuration with every default filled in.
    pub config: Option<ExperimentConfig>,
    pub seed: Option<u64>,
    pub environment_seeds: Vec<u64>,
    pub verdicts: Vec<Verdict>,
    pub metrics: std::collections::BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
    pub error: Option<ErrorReport>,
}

/// Result of `trapsim run`.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub output_dir: Option<PathBuf>,
    pub summary: Summary,
}

impl RunReport {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.summary.verdicts.iter().find(|v| v.name == name)
    }
}

/// Output directory as written in the config, taken relative to the
/// config file.
fn output_dir(config_path: &Path, raw: &Path) -> PathBuf {
    if raw.is_absolute() {
        raw.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(raw)
    }
}

/// Best-effort experiment name and output directory from a document that
/// failed validation.
fn salvage(config_path: &Path) -> (String, Option<PathBuf>) {
    let table: Option<toml::Table> =
        std::fs::read_to_string(config_path).ok().and_then(|text| toml::from_str(&text).ok());
    let Some(table) = table else {
        return (String::new(), None);
    };
    let name = table.get("experiment").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    let dir = table.get("output_dir").and_then(|v| v.as_str()).map(|raw| output_dir(config_path, Path::new(raw)));
    (name, dir)
}

fn error_summary(experiment: &str, config: Option<ExperimentConfig>, err: &CliError) -> Summary {
    Summary {
        experiment: experiment.into(),
        status: "error".into(),
        seed: config.as_ref().map(|c| c.seed),
        config,
        environment_seeds: Vec::new(),
        verdicts: Vec::new(),
        metrics: Default::default(),
        artifacts: Vec::new(),
        error: Some(err.report()),
    }
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    write_file(dir, "summary.json", text.as_bytes())
}

/// Run the experiment described by the config file at `path`, writing
/// artifacts into its output directory.
pub fn run(path: &Path) -> RunReport {
    let cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            let (name, dir) = salvage(path);
            let summary = error_summary(&name, None, &e);
            if let Some(d) = &dir {
                if std::fs::create_dir_all(d).is_ok() {
                    let _ = write_summary(d, &summary);
                }
            }
            return RunReport { exit_code: e.exit_code(), output_dir: dir, summary };
        }
    };
    let dir = output_dir(path, &cfg.output_dir);
    run_config(&cfg, &dir)
}

/// Run `cfg` with artifacts in `dir`.
pub fn run_config(cfg: &ExperimentConfig, dir: &Path) -> RunReport {
    let fail = |resolved: Option<ExperimentConfig>, e: CliError| {
        let summary = error_summary(&cfg.experiment, resolved.or(Some(cfg.clone())), &e);
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_summary(dir, &summary);
        }
        RunReport { exit_code: e.exit_code(), output_dir: Some(dir.to_path_buf()), summary }
    };
    if let Err(e) = cfg.validate() {
        return fail(None, e);
    }
    let params = match resolve(cfg) {
        Ok(p) => p,
        Err(e) => return fail(None, e),
    };
    let resolved = ExperimentConfig { params: params.clone(), ..cfg.clone() };
    if let Err(e) = std::fs::create_dir_all(dir) {
        return fail(Some(resolved), CliError::Output(format!("{}: {e}", dir.display())));
    }
    let outcome = match execute(cfg, &params) {
        Ok(o) => o,
        Err(e) => return fail(Some(resolved), e),
    };
    match write_outcome(cfg, dir, &outcome) {
        Ok(artifacts) => {
            let pass = outcome.verdicts.iter().all(|v| v.pass || !v.gating);
            let summary = Summary {
                experiment: cfg.experiment.clone(),
                status: if pass { "pass" } else { "fail" }.into(),
                seed: Some(cfg.seed),
                config: Some(resolved),
                environment_seeds: outcome.environment_seeds,
                verdicts: outcome.verdicts,
                metrics: outcome.metrics,
                artifacts,
                error: None,
            };
            if let Err(e) = write_summary(dir, &summary) {
                return fail(summary.config, e);
            }
            RunReport { exit_code: if pass { 0 } else { 1 }, output_dir: Some(dir.to_path_buf()), summary }
        }
        Err(e) => fail(Some(resolved), e),
    }
}

fn write_outcome(cfg: &ExperimentConfig, dir: &Path, outcome: &Outcome) -> Result<Vec<String>, CliError> {
    let mut artifacts = vec!["results.csv".to_string()];
    write_file(dir, "results.csv", outcome.table.to_csv().as_bytes())?;
    if let (true, Some(plot)) = (cfg.plot, &outcome.plot) {
        write_file(dir, "plot.svg", plot.to_svg().as_bytes())?;
        artifacts.push("plot.svg".into());
    }
    if let Some(traj) = &outcome.trajectory {
        let mut buf = Vec::new();
        write_traj(&mut buf, traj)?;
        write_file(dir, "trajectory.traj", &buf)?;
        artifacts.push("trajectory.traj".into());
    }
    for (name, bytes) in &outcome.files {
        write_file(dir, name, bytes)?;
        artifacts.push(name.clone());
    }
    artifacts.push("summary.json".into());
    Ok(artifacts)
}

/// [`run`] inside a dedicated pool of `threads` workers.
pub fn run_with_threads(path: &Path, threads: usize) -> Result<RunReport, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Schema(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(|| run(path)))
}

/// Text summary of a trajectory: segment count, total time and the ten
/// most occupied sites.
pub fn replay_summary(traj: &Trajectory) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "torus: d = {}, N = {}", traj.spec.dim(), traj.spec.side());
    let _ = writeln!(s, "segments: {}", traj.len());
    let _ = writeln!(s, "total time: {}", traj.total_time);
    let profile = traj.occupation_profile();
    if !profile.is_empty() {
        let _ = writeln!(s, "top sites by occupation:");
        for (rank, (site, time)) in profile.iter().take(10).enumerate() {
            let c = traj.spec.coords(*site);
            let coords: Vec<String> = c[..traj.spec.dim()].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{:>3}  site {} ({})  time {time}", rank + 1, site.0, coords.join(", "));
        }
    }
    s
}

pub fn replay(path: &Path) -> Result<String, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    let traj = read_traj(std::io::BufReader::new(file))?;
    Ok(replay_summary(&traj))
}

pub fn list_experiments() -> String {
    let width = EXPERIMENTS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    EXPERIMENTS.iter().map(|(n, d)| format!("{n:<width$}  {d}\n")).collect()
}
