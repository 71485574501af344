//! Across-seed statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Unbiased (n − 1) variance; undefined below two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mu = mean(xs)?;
    Some(xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64)
}

pub fn sample_std(xs: &[f64]) -> Option<f64> {
    sample_variance(xs).map(f64::sqrt)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Upper tail `P(F ≥ x)` of the F(d1, d2) distribution.
pub fn f_survival(x: f64, d1: f64, d2: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::NonFinite("F statistic".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let f = FisherSnedecor::new(d1, d2)
        .map_err(|e| Error::Contract(format!("F({d1}, {d2}): {e}")))?;
    Ok(f.sf(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// Brown–Forsythe test for equal variances: one-way ANOVA on absolute
/// deviations from each group's median.
pub fn levene_test(groups: &[&[f64]]) -> Result<LeveneResult> {
    if groups.len() < 2 {
        return Err(Error::Contract("levene test needs at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Contract(format!(
            "levene test needs at least two values per group, got {}",
            g.len()
        )));
    }
    if groups.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("levene input".into()));
    }
    let k = groups.len();
    let devs: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g).expect("nonempty");
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let n_total: usize = devs.iter().map(Vec::len).sum();
    let grand = devs.iter().flatten().sum::<f64>() / n_total as f64;
    let means: Vec<f64> = devs.iter().map(|d| mean(d).expect("nonempty")).collect();
    let between: f64 = devs
        .iter()
        .zip(&means)
        .map(|(d, m)| d.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let within: f64 = devs
        .iter()
        .zip(&means)
        .map(|(d, m)| d.iter().map(|z| (z - m) * (z - m)).sum::<f64>())
        .sum();
    let (df1, df2) = (k - 1, n_total - k);
    let statistic = if within == 0.0 {
        if between == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (df2 as f64 / df1 as f64) * between / within
    };
    Ok(LeveneResult {
        statistic,
        p_value: f_survival(statistic, df1 as f64, df2 as f64)?,
        df_between: df1,
        df_within: df2,
    })
}
