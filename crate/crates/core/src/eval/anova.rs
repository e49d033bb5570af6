use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    pub groups: Vec<GroupStats>,
    pub ssb: f64,
    pub ssw: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub f: f64,
    pub p: f64,
    /// Zero within-group variance: F is infinite or undefined.
    pub degenerate: bool,
}

impl AnovaResult {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn marker(&self) -> &'static str {
        significance_marker(self.p)
    }
}

/// `**` for p < 0.01, `*` for p < 0.05, empty otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Upper tail `P(X > f)` of the F distribution with `(df1, df2)` degrees of freedom.
pub fn f_survival(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if !(df1 >= 1.0 && df2 >= 1.0 && df1.is_finite() && df2.is_finite()) {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be ≥ 1, got ({df1}, {df2})")));
    }
    if f.is_nan() || f < 0.0 {
        return Err(Error::InvalidArgument(format!("F must be ≥ 0, got {f}")));
    }
    if f == 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    let x = df2 / (df2 + df1 * f);
    Ok(beta_reg(df2 / 2.0, df1 / 2.0, x))
}

pub fn group_stats(values: &[f64]) -> GroupStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    GroupStats { n, mean, sd }
}

/// One-way fixed-effects ANOVA over raw observations.
pub fn anova_raw(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if let Some(bad) = groups.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!("group {bad} contains a non-finite value")));
    }
    let stats: Vec<GroupStats> = groups.iter().map(|g| group_stats(g)).collect();
    check_groups(&stats)?;
    // Within-group sum of squares straight from the data, not via the rounded SDs.
    let ssw: f64 = groups
        .iter()
        .zip(&stats)
        .map(|(g, s)| g.iter().map(|v| (v - s.mean).powi(2)).sum::<f64>())
        .sum();
    finish(stats, ssw)
}

/// The same test driven by per-group summary statistics.
pub fn anova_summary(means: &[f64], sds: &[f64], ns: &[usize]) -> Result<AnovaResult> {
    if means.len() != sds.len() || means.len() != ns.len() {
        return Err(Error::InvalidArgument(format!(
            "means, SDs and sizes differ in length: {}, {}, {}",
            means.len(),
            sds.len(),
            ns.len()
        )));
    }
    let stats: Vec<GroupStats> = means
        .iter()
        .zip(sds)
        .zip(ns)
        .map(|((&mean, &sd), &n)| GroupStats { n, mean, sd })
        .collect();
    if stats.iter().any(|s| !s.mean.is_finite() || !s.sd.is_finite() || s.sd < 0.0) {
        return Err(Error::InvalidArgument("means must be finite and SDs finite and ≥ 0".into()));
    }
    check_groups(&stats)?;
    let ssw = stats.iter().map(|s| (s.n - 1) as f64 * s.sd * s.sd).sum();
    finish(stats, ssw)
}

fn check_groups(stats: &[GroupStats]) -> Result<()> {
    if stats.len() < 2 {
        return Err(Error::InvalidArgument(format!("ANOVA needs at least 2 groups, got {}", stats.len())));
    }
    if let Some(i) = stats.iter().position(|s| s.n < 2) {
        return Err(Error::InvalidArgument(format!(
            "every group needs at least 2 observations; group {i} has {}",
            stats[i].n
        )));
    }
    Ok(())
}

fn finish(groups: Vec<GroupStats>, ssw: f64) -> Result<AnovaResult> {
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.n).sum();
    let grand = groups.iter().map(|g| g.n as f64 * g.mean).sum::<f64>() / total as f64;
    let ssb: f64 = groups.iter().map(|g| g.n as f64 * (g.mean - grand).powi(2)).sum();
    let (df_between, df_within) = (k - 1, total - k);
    let (f, p, degenerate) = if ssw == 0.0 {
        if ssb > 0.0 {
            log::warn!("zero within-group variance with distinct means; F is infinite");
            (f64::INFINITY, 0.0, true)
        } else {
            log::warn!("all observations identical; F is undefined");
            (0.0, 1.0, true)
        }
    } else {
        let f = (ssb / df_between as f64) / (ssw / df_within as f64);
        (f, f_survival(f, df_between as f64, df_within as f64)?, false)
    };
    Ok(AnovaResult {
        groups,
        ssb,
        ssw,
        df_between,
        df_within,
        f,
        p,
        degenerate,
    })
}
