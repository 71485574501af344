//! Multi-seed orchestration with one JSON record per (arm, seed) on disk.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::report::{aggregate, AggregateReport};
use crate::error::{Error, Result};
use crate::pipeline::{run, RunConfig, RunMetrics};

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const EXPERIMENT_FILE: &str = "experiment.toml";
const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub arm: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub metrics: RunMetrics,
}

/// SHA-256 of the canonical JSON form of the run configuration (seed included).
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn record_path(dir: &Path, arm: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let hash = config_hash(cfg)?;
    Ok(dir
        .join(RUNS_DIR)
        .join(format!("{arm}__{}__seed{}__{}.json", cfg.env.label(), cfg.seed, &hash[..16])))
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Every record under `dir/runs`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = dir.join(RUNS_DIR);
    let entries = std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&runs, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_record(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ran,
    Reused,
}

pub struct SuiteResult {
    pub report: AggregateReport,
    /// In arm-major, seed-minor order.
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub reused: usize,
}

/// Runs every (arm, seed) cell not already on disk, then aggregates.
/// `on_cell` is called once per cell as it completes, possibly from worker threads.
pub fn run_suite<F>(cfg: &ExperimentConfig, on_cell: F) -> Result<SuiteResult>
where
    F: Fn(&RunRecord, CellStatus) + Sync,
{
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let runs = dir.join(RUNS_DIR);
    std::fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    let experiment = dir.join(EXPERIMENT_FILE);
    std::fs::write(&experiment, cfg.to_toml_string()?).map_err(|e| Error::io(&experiment, e))?;

    let cells: Vec<(usize, RunConfig)> = cfg
        .arms
        .iter()
        .enumerate()
        .flat_map(|(i, arm)| {
            cfg.seeds.iter().map(move |&seed| {
                (
                    i,
                    RunConfig {
                        seed,
                        ..arm.config.clone()
                    },
                )
            })
        })
        .collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(cells.len())
    .max(1);

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(RunRecord, CellStatus)>>> = Mutex::new(vec![None; cells.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() || first_error.lock().expect("poisoned").is_some() {
                    break;
                }
                let (arm_idx, run_cfg) = &cells[idx];
                match run_cell(dir, &cfg.arms[*arm_idx].name, run_cfg) {
                    Ok((record, status)) => {
                        on_cell(&record, status);
                        slots.lock().expect("poisoned")[idx] = Some((record, status));
                    }
                    Err(e) => {
                        first_error.lock().expect("poisoned").get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("poisoned") {
        return Err(e);
    }
    let done: Vec<(RunRecord, CellStatus)> = slots
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|s| s.expect("every cell completes"))
        .collect();
    let executed = done.iter().filter(|(_, s)| *s == CellStatus::Ran).count();
    let records: Vec<RunRecord> = done.into_iter().map(|(r, _)| r).collect();
    let order: Vec<String> = cfg.arms.iter().map(|a| a.name.clone()).collect();
    let report = aggregate(&records, &order, cfg.reference.as_deref())?;
    Ok(SuiteResult {
        report,
        executed,
        reused: records.len() - executed,
        records,
    })
}

fn run_cell(dir: &Path, arm: &str, cfg: &RunConfig) -> Result<(RunRecord, CellStatus)> {
    let path = record_path(dir, arm, cfg)?;
    if path.exists() {
        if let Ok(record) = load_record(&path) {
            if record.config == *cfg {
                return Ok((record, CellStatus::Reused));
            }
        }
    }
    let outcome = run(cfg)?;
    let record = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        arm: arm.to_string(),
        config_hash: config_hash(cfg)?,
        config: cfg.clone(),
        metrics: outcome.metrics,
    };
    write_atomic(&path, serde_json::to_string_pretty(&record)?.as_bytes())?;
    Ok((record, CellStatus::Ran))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvSpec;
    use crate::harness::config::Arm;
    use crate::pipeline::Algorithm;

    fn tiny(dir: &Path, seeds: Vec<u64>) -> ExperimentConfig {
        let base = RunConfig {
            env: EnvSpec::gridworld(0.2),
            algorithm: Algorithm::Dqn,
            total_steps: Some(300),
            eval_episodes: 2,
            ..RunConfig::default()
        };
        ExperimentConfig {
            target: None,
            output_dir: dir.to_path_buf(),
            seeds,
            reference: None,
            threads: 2,
            arms: vec![Arm {
                name: "dqn".into(),
                config: base,
            }],
        }
    }

    #[test]
    fn hash_depends_on_every_field() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        let mut c = a.clone();
        c.sat.margin = 0.6;
        let ha = config_hash(&a).unwrap();
        assert_eq!(ha.len(), 64);
        assert_ne!(ha, config_hash(&b).unwrap());
        assert_ne!(ha, config_hash(&c).unwrap());
        assert_eq!(ha, config_hash(&a.clone()).unwrap());
    }

    #[test]
    fn resume_skips_completed_cells() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path(), vec![0, 1, 2]);
        let first = run_suite(&cfg, |_, _| {}).unwrap();
        assert_eq!((first.executed, first.reused), (3, 0));
        let second = run_suite(&cfg, |_, _| {}).unwrap();
        assert_eq!((second.executed, second.reused), (0, 3));
        assert_eq!(
            first.records.iter().map(|r| &r.metrics.training_returns).collect::<Vec<_>>(),
            second.records.iter().map(|r| &r.metrics.training_returns).collect::<Vec<_>>()
        );
        assert_eq!(load_records(tmp.path()).unwrap().len(), 3);
    }

    #[test]
    fn seed_order_does_not_change_aggregate() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_suite(&tiny(tmp.path(), vec![0, 1, 2]), |_, _| {}).unwrap();
        let b = run_suite(&tiny(tmp.path(), vec![2, 0, 1]), |_, _| {}).unwrap();
        assert_eq!(b.executed, 0);
        let strip = |r: &AggregateReport| {
            let mut r = r.clone();
            r.arms.iter_mut().for_each(|a| a.time = 0.0);
            r
        };
        assert_eq!(strip(&a.report), strip(&b.report));
    }

    #[test]
    fn unwritable_output_fails_before_training() {
        let tmp = tempfile::tempdir().unwrap();
        let blocker = tmp.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let cfg = tiny(&blocker.join("sub"), vec![0]);
        let calls = AtomicUsize::new(0);
        let res = run_suite(&cfg, |_, _| {
            calls.fetch_add(1, Ordering::SeqCst);
        });
        assert!(matches!(res, Err(Error::Io { .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn crashed_cell_is_recorded_as_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny(tmp.path(), vec![0]);
        // A learning rate this large drives the weights to infinity.
        cfg.arms[0].config.dqn.adam.lr = 1e300;
        cfg.arms[0].config.dqn.learning_starts = 64;
        let res = run_suite(&cfg, |_, _| {}).unwrap();
        let m = &res.records[0].metrics;
        assert!(m.failed);
        assert!(m.error.is_some());
        let back = load_records(tmp.path()).unwrap();
        assert!(back[0].metrics.eval_return_mean.is_nan());
        assert_eq!(res.report.arms[0].failure_rate, 1.0);
    }
}
