//! Experiment orchestration: config files, per-seed runs, M sweeps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cmdp::Cmdp;
use crate::envgen::{generate_cmdp, EnvSpec};
use crate::error::{Error, Result};
use crate::format;
use crate::log::{Algo, IterateLog};
use crate::npgpd::{run_npgpd_with, NpgpdConfig, SOLVE_TOL};
use crate::oracles::{constrained_optimum, SolveReport};
use crate::zpgpd::{run_zpgpd_with, ZpgpdConfig};

/// Where a run's environment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSource {
    /// Generated per seed; seed `k` uses `spec.seed + k`.
    Spec(EnvSpec),
    /// One fixed instance shared by every seed.
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgoConfig {
    Npgpd(NpgpdConfig),
    Zpgpd(ZpgpdConfig),
}

impl AlgoConfig {
    pub fn algo(&self) -> Algo {
        match self {
            AlgoConfig::Npgpd(_) => Algo::Npgpd,
            AlgoConfig::Zpgpd(_) => Algo::Zpgpd,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AlgoConfig::Npgpd(c) => c.seed,
            AlgoConfig::Zpgpd(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            AlgoConfig::Npgpd(c) => c.seed = seed,
            AlgoConfig::Zpgpd(c) => c.seed = seed,
        }
    }

    pub fn m_evaluators(&self) -> usize {
        match self {
            AlgoConfig::Npgpd(c) => c.m_evaluators,
            AlgoConfig::Zpgpd(c) => c.m_evaluators,
        }
    }

    pub fn set_m_evaluators(&mut self, m: usize) {
        match self {
            AlgoConfig::Npgpd(c) => c.m_evaluators = m,
            AlgoConfig::Zpgpd(c) => c.m_evaluators = m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgoConfig::Npgpd(c) => c.validate(),
            AlgoConfig::Zpgpd(c) => c.validate(),
        }
    }

    /// Runs one seed's worth of the algorithm against `report`.
    pub fn run(&self, cmdp: &Cmdp, report: &SolveReport) -> Result<IterateLog> {
        match self {
            AlgoConfig::Npgpd(c) => run_npgpd_with(cmdp, c, report, |_| {}),
            AlgoConfig::Zpgpd(c) => run_zpgpd_with(cmdp, c, report, |_| {}),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigDoc {
    algo: Algo,
    env: EnvSource,
    #[serde(default)]
    algo_config: Option<Value>,
    #[serde(default = "one")]
    n_seeds: usize,
    out_dir: PathBuf,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvSource,
    pub algo: AlgoConfig,
    pub n_seeds: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RunConfigDoc = format::from_json(text)?;
        let raw = doc
            .algo_config
            .unwrap_or_else(|| Value::Object(Default::default()));
        let algo = match doc.algo {
            Algo::Npgpd => AlgoConfig::Npgpd(algo_section(raw)?),
            Algo::Zpgpd => AlgoConfig::Zpgpd(algo_section(raw)?),
        };
        let config = RunConfig {
            env: doc.env,
            algo,
            n_seeds: doc.n_seeds,
            out_dir: doc.out_dir,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json {
                path: field,
                message,
            } => Error::Json {
                path: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let algo_config = match &self.algo {
            AlgoConfig::Npgpd(c) => serde_json::to_value(c)?,
            AlgoConfig::Zpgpd(c) => serde_json::to_value(c)?,
        };
        format::to_json(&RunConfigDoc {
            algo: self.algo.algo(),
            env: self.env.clone(),
            algo_config: Some(algo_config),
            n_seeds: self.n_seeds,
            out_dir: self.out_dir.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::InvalidConfig("n_seeds must be at least 1".into()));
        }
        match &self.env {
            EnvSource::Spec(spec) => spec.validate()?,
            EnvSource::Path(p) if !p.is_file() => {
                return Err(Error::InvalidConfig(format!(
                    "environment file {} does not exist",
                    p.display()
                )))
            }
            EnvSource::Path(_) => {}
        }
        self.algo.validate()
    }

    /// Environment used by seed index `k`.
    pub fn environment(&self, k: usize) -> Result<Cmdp> {
        match &self.env {
            EnvSource::Spec(spec) => generate_cmdp(&EnvSpec {
                seed: spec.seed.wrapping_add(k as u64),
                ..spec.clone()
            }),
            EnvSource::Path(p) => Cmdp::load(p),
        }
    }

    /// Algorithm settings used by seed index `k`.
    pub fn algo_for_seed(&self, k: usize) -> AlgoConfig {
        let mut algo = self.algo.clone();
        algo.set_seed(self.algo.seed().wrapping_add(k as u64));
        algo
    }
}

fn algo_section<T: serde::de::DeserializeOwned>(raw: Value) -> Result<T> {
    serde_path_to_error::deserialize(raw).map_err(|e| Error::Json {
        path: format!("algo_config.{}", e.path()),
        message: e.inner().to_string(),
    })
}

/// Runs seed index `k` of `config`, returning the solver report alongside
/// the log.
pub fn run_seed(config: &RunConfig, k: usize) -> Result<(SolveReport, IterateLog)> {
    let cmdp = config.environment(k)?;
    let report = constrained_optimum(&cmdp, SOLVE_TOL)?;
    let log = config.algo_for_seed(k).run(&cmdp, &report)?;
    Ok((report, log))
}

pub fn seed_csv_path(out_dir: &Path, k: usize) -> PathBuf {
    out_dir.join(format!("seed={k}.csv"))
}

/// Writes `seed={k}.csv` and its JSON sidecar for every seed index.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut written = Vec::with_capacity(config.n_seeds);
    for k in 0..config.n_seeds {
        let (_, log) = run_seed(config, k)?;
        let path = seed_csv_path(&config.out_dir, k);
        log.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed_index: usize,
    pub seed: u64,
    pub final_gap_running_avg: f64,
    pub final_violation_running: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    #[serde(rename = "M")]
    pub m: usize,
    pub runs: Vec<RunSummary>,
    pub mean_final_gap_running_avg: f64,
    pub mean_final_violation_running: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub algo: Algo,
    pub groups: Vec<GroupSummary>,
}

impl SweepSummary {
    pub fn group(&self, m: usize) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.m == m)
    }
}

pub fn summarize(m: usize, logs: &[(u64, &IterateLog)]) -> Result<GroupSummary> {
    let mut runs = Vec::with_capacity(logs.len());
    for (k, (seed, log)) in logs.iter().enumerate() {
        let last = log
            .final_row()
            .ok_or_else(|| Error::LogCheck(format!("seed index {k} produced no rows")))?;
        runs.push(RunSummary {
            seed_index: k,
            seed: *seed,
            final_gap_running_avg: last.gap_running_avg,
            final_violation_running: last.violation_running,
        });
    }
    let n = runs.len().max(1) as f64;
    Ok(GroupSummary {
        m,
        mean_final_gap_running_avg: runs.iter().map(|r| r.final_gap_running_avg).sum::<f64>() / n,
        mean_final_violation_running: runs.iter().map(|r| r.final_violation_running).sum::<f64>()
            / n,
        runs,
    })
}

/// Runs `config` once per panel size into `out_dir/M={m}/` and writes
/// `out_dir/summary.json`.
pub fn sweep(config: &RunConfig, m_values: &[usize]) -> Result<SweepSummary> {
    if m_values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one M".into()));
    }
    let mut groups = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut sub = config.clone();
        sub.algo.set_m_evaluators(m);
        sub.out_dir = config.out_dir.join(format!("M={m}"));
        let paths = run_experiment(&sub)?;
        let logs = paths
            .iter()
            .map(|p| IterateLog::read(p))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(u64, &IterateLog)> = logs.iter().map(|l| (l.header.seed, l)).collect();
        groups.push(summarize(m, &pairs)?);
    }
    let summary = SweepSummary {
        algo: config.algo.algo(),
        groups,
    };
    format::write_json(&config.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
