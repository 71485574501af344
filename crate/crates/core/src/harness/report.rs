//! Aggregation across seeds, CSV tables, learning-curve data, and the
//! action-noise robustness evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{levene_test, mean, sample_std, sample_variance};
use super::suite::RunRecord;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::numerics::{MlpParams, Rng, Stream};
use crate::pipeline::evaluate;

pub const LEVENE_VARIANT: &str = "brown_forsythe";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub algorithm: String,
    pub env: String,
    pub seeds: usize,
    /// Seeds whose run finished and produced an evaluation.
    pub evaluated: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub variance: Option<f64>,
    pub failure_rate: f64,
    pub success_rate: Option<f64>,
    pub levene_statistic: Option<f64>,
    pub levene_p: Option<f64>,
    pub noisy_mean: Option<f64>,
    /// Mean noisy return over mean clean return; undefined when the clean mean is ≤ 0.
    pub noise_ratio: Option<f64>,
    pub time: f64,
    pub params_ratio: f64,
    pub env_steps: f64,
    pub diversity: Option<f64>,
    /// Per-seed evaluation returns in record order (NaN for crashed runs).
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub reference: Option<String>,
    pub levene_variant: String,
    pub arms: Vec<ArmSummary>,
}

fn finite(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    xs.into_iter().filter(|x| x.is_finite()).collect()
}

fn ratio(noisy: Option<f64>, clean: Option<f64>) -> Option<f64> {
    match (noisy, clean) {
        (Some(n), Some(c)) if c > 0.0 => Some(n / c),
        _ => None,
    }
}

/// Groups records by arm (in `order`, then any others by first appearance).
/// Seeds are sorted within an arm so the summary is independent of run order.
pub fn aggregate(records: &[RunRecord], order: &[String], reference: Option<&str>) -> Result<AggregateReport> {
    let mut names: Vec<String> = order.to_vec();
    for r in records {
        if !names.contains(&r.arm) {
            names.push(r.arm.clone());
        }
    }
    let mut arms = Vec::new();
    for name in &names {
        let mut rs: Vec<&RunRecord> = records.iter().filter(|r| &r.arm == name).collect();
        if rs.is_empty() {
            continue;
        }
        rs.sort_by_key(|r| r.metrics.seed);
        let returns: Vec<f64> = rs.iter().map(|r| r.metrics.eval_return_mean).collect();
        let ok = finite(returns.iter().copied());
        let n = rs.len() as f64;
        let noisy: Vec<f64> = rs.iter().filter_map(|r| r.metrics.noisy_eval_return_mean).collect();
        let noisy_mean = if noisy.is_empty() { None } else { mean(&noisy) };
        let clean_with_noise = finite(
            rs.iter()
                .filter(|r| r.metrics.noisy_eval_return_mean.is_some())
                .map(|r| r.metrics.eval_return_mean),
        );
        let evaluated: Vec<&&RunRecord> = rs.iter().filter(|r| r.metrics.error.is_none()).collect();
        arms.push(ArmSummary {
            arm: name.clone(),
            algorithm: rs[0].metrics.algorithm.clone(),
            env: rs[0].metrics.env.clone(),
            seeds: rs.len(),
            evaluated: ok.len(),
            mean: mean(&ok),
            std: sample_std(&ok),
            variance: sample_variance(&ok),
            failure_rate: rs.iter().filter(|r| r.metrics.failed).count() as f64 / n,
            success_rate: mean(&evaluated.iter().map(|r| r.metrics.eval_success_rate).collect::<Vec<_>>()),
            levene_statistic: None,
            levene_p: None,
            noisy_mean,
            noise_ratio: ratio(noisy_mean, mean(&clean_with_noise)),
            time: rs.iter().map(|r| r.metrics.wall_time_s).sum::<f64>() / n,
            params_ratio: rs.iter().map(|r| r.metrics.parameters.ratio).sum::<f64>() / n,
            env_steps: rs.iter().map(|r| r.metrics.env_steps as f64).sum::<f64>() / n,
            diversity: mean(&rs.iter().filter_map(|r| r.metrics.diversity).collect::<Vec<_>>()),
            returns,
        });
    }
    if let Some(reference) = reference {
        let refs = arms
            .iter()
            .find(|a| a.arm == reference)
            .map(|a| finite(a.returns.iter().copied()))
            .ok_or_else(|| Error::config("reference", format!("no records for arm {reference:?}")))?;
        for a in arms.iter_mut().filter(|a| a.arm != reference) {
            let mine = finite(a.returns.iter().copied());
            if mine.len() >= 2 && refs.len() >= 2 {
                let lev = levene_test(&[&mine, &refs])?;
                a.levene_statistic = Some(lev.statistic);
                a.levene_p = Some(lev.p_value);
            }
        }
    }
    Ok(AggregateReport {
        reference: reference.map(str::to_string),
        levene_variant: LEVENE_VARIANT.to_string(),
        arms,
    })
}

/// Fixed-schema CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub algorithm: String,
    pub env: String,
    pub seeds: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub variance: Option<f64>,
    pub failure_rate: f64,
    pub levene_p: Option<f64>,
    pub time: f64,
    pub params_ratio: f64,
}

impl AggregateReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.arms
            .iter()
            .map(|a| CsvRow {
                algorithm: a.arm.clone(),
                env: a.env.clone(),
                seeds: a.seeds,
                mean: a.mean,
                std: a.std,
                variance: a.variance,
                failure_rate: a.failure_rate,
                levene_p: a.levene_p,
                time: a.time,
                params_ratio: a.params_ratio,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:<22} {:>5} {:>10} {:>10} {:>12} {:>8} {:>8} {:>9} {:>8} {:>8}",
            "arm", "env", "seeds", "mean", "std", "variance", "fail%", "success", "levene_p", "noise", "params"
        );
        for a in &self.arms {
            let _ = writeln!(
                out,
                "{:<24} {:<22} {:>5} {:>10} {:>10} {:>12} {:>8.1} {:>8} {:>9} {:>8} {:>8.3}",
                a.arm,
                a.env,
                a.seeds,
                fmt(a.mean),
                fmt(a.std),
                fmt(a.variance),
                100.0 * a.failure_rate,
                fmt(a.success_rate),
                fmt(a.levene_p),
                fmt(a.noise_ratio),
                a.params_ratio,
            );
        }
        if let Some(r) = &self.reference {
            let _ = writeln!(out, "levene ({}) against {r}", self.levene_variant);
        }
        out
    }
}

pub fn write_csv(rows: &[CsvRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    w.write_record([
        "algorithm",
        "env",
        "seeds",
        "mean",
        "std",
        "variance",
        "failure_rate",
        "levene_p",
        "time",
        "params_ratio",
    ])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        Error::Csv(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    /// Sample std over the seeds that reached this episode; empty below two.
    pub std: Option<f64>,
    pub seeds: usize,
}

/// Per-episode training return averaged over the records that have that episode.
pub fn learning_curve(records: &[&RunRecord]) -> Vec<CurvePoint> {
    let len = records
        .iter()
        .map(|r| r.metrics.training_returns.len())
        .max()
        .unwrap_or(0);
    (0..len)
        .map(|ep| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| r.metrics.training_returns.get(ep).copied())
                .collect();
            CurvePoint {
                episode: ep,
                mean: mean(&vals).unwrap_or(f64::NAN),
                std: sample_std(&vals),
                seeds: vals.len(),
            }
        })
        .collect()
}

/// Writes one `<arm>.csv` curve file per arm into `dir`; returns the paths.
pub fn write_plot_data(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arms: Vec<&str> = Vec::new();
    for r in records {
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    let mut paths = Vec::new();
    for arm in arms {
        let rs: Vec<&RunRecord> = records.iter().filter(|r| r.arm == arm).collect();
        let path = dir.join(format!("{arm}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        for p in learning_curve(&rs) {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub clean: f64,
    pub noisy: f64,
    /// `noisy / clean`; undefined when the clean mean is ≤ 0.
    pub ratio: Option<f64>,
}

/// Greedy evaluation of a trained policy on the clean environment and with
/// action noise, `episodes` each.
pub fn robustness_eval(
    policy: &MlpParams,
    env: &EnvSpec,
    noise_prob: f64,
    episodes: usize,
    seed: u64,
) -> Result<RobustnessResult> {
    let clean_env = env.clone().with_noise(0.0);
    let noisy_env = env.clone().with_noise(noise_prob);
    let clean = evaluate(policy, &clean_env, episodes, &mut Rng::derive(seed, Stream::Eval, 0))?.mean;
    // Same stream for both so the two runs see the same start states.
    let noisy = evaluate(policy, &noisy_env, episodes, &mut Rng::derive(seed, Stream::Eval, 0))?.mean;
    Ok(RobustnessResult {
        clean,
        noisy,
        ratio: ratio(Some(noisy), Some(clean)),
    })
}
