//! Capacity measurement: mutual information of memorized labels, bits per
//! parameter, architecture equivalence multipliers and the two-sample
//! statistics used to compare reruns.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("fraction correct {0} outside [0, 1]")]
    Fraction(f64),
    #[error("sample size {0} must be non-negative")]
    SampleSize(f64),
    #[error("each sample needs at least two values (got {0} and {1})")]
    TooFewSamples(usize, usize),
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("bits per parameter must be positive and finite for {0}")]
    Bpp(String),
    #[error("rerun statistics need at least one feasible loss")]
    NoLosses,
}

/// `x log₂ x` with the convention `0 log 0 = 0`.
fn xlog2x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    -(xlog2x(p) + xlog2x(1.0 - p))
}

/// Bits carried about `b` uniform binary labels by predictions that are
/// correct with frequency `p`: `b + b(p log₂ p + (1−p) log₂(1−p))`.
pub fn mutual_information(p: f64, b: f64) -> Result<f64, CapacityError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CapacityError::Fraction(p));
    }
    if b.is_nan() || b < 0.0 {
        return Err(CapacityError::SampleSize(b));
    }
    Ok(b + b * (xlog2x(p) + xlog2x(1.0 - p)))
}

pub fn bits_per_parameter(bits: f64, n_params: usize) -> f64 {
    if n_params == 0 {
        0.0
    } else {
        bits / n_params as f64
    }
}

/// Squared reconstruction error of the best `n_h`-dimensional linear code
/// for `n_in` unit-variance inputs.
pub fn expected_memory_error(n_in: usize, n_h: usize) -> f64 {
    n_in.saturating_sub(n_h) as f64
}

/// One capacity measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub arch: String,
    pub depth: usize,
    pub n_params: usize,
    pub b: usize,
    pub p: f64,
    pub i_bits: f64,
    pub bpp: f64,
}

impl CapacityReport {
    pub fn new(arch: &str, depth: usize, n_params: usize, b: usize, p: f64) -> Result<Self, CapacityError> {
        let i_bits = mutual_information(p, b as f64)?;
        Ok(Self {
            arch: arch.to_string(),
            depth,
            n_params,
            b,
            p,
            i_bits,
            bpp: bits_per_parameter(i_bits, n_params),
        })
    }
}

/// Writes reports as CSV with columns `arch, depth, n_params, b, p, I_bits, bpp`.
pub fn write_reports_csv<W: Write>(reports: &[CapacityReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["arch", "depth", "n_params", "b", "p", "I_bits", "bpp"])?;
    for r in reports {
        w.write_record([
            r.arch.clone(),
            r.depth.to_string(),
            r.n_params.to_string(),
            r.b.to_string(),
            r.p.to_string(),
            r.i_bits.to_string(),
            r.bpp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per architecture: the maximum bits per parameter within each
/// `(n_params, depth)` group, averaged over groups.
pub fn mean_of_group_maxima(reports: &[CapacityReport]) -> BTreeMap<String, f64> {
    let mut maxima: BTreeMap<(&str, usize, usize), f64> = BTreeMap::new();
    for r in reports {
        let m = maxima.entry((&r.arch, r.n_params, r.depth)).or_insert(f64::NEG_INFINITY);
        *m = m.max(r.bpp);
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((arch, _, _), m) in maxima {
        let e = sums.entry(arch.to_string()).or_default();
        e.0 += m;
        e.1 += 1;
    }
    sums.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect()
}

/// `entries[x][y]`: parameters architecture `x` needs to store what `y`
/// stores with one, i.e. `bpp(y) / bpp(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceTable {
    pub archs: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl EquivalenceTable {
    pub fn get(&self, x: &str, y: &str) -> Option<f64> {
        let i = self.archs.iter().position(|a| a == x)?;
        let j = self.archs.iter().position(|a| a == y)?;
        Some(self.entries[i][j])
    }
}

pub fn equivalence_multipliers(bpp: &BTreeMap<String, f64>) -> Result<EquivalenceTable, CapacityError> {
    for (arch, &v) in bpp {
        if !(v.is_finite() && v > 0.0) {
            return Err(CapacityError::Bpp(arch.clone()));
        }
    }
    let archs: Vec<String> = bpp.keys().cloned().collect();
    let values: Vec<f64> = bpp.values().copied().collect();
    let entries = values
        .iter()
        .map(|&x| values.iter().map(|&y| y / x).collect())
        .collect();
    Ok(EquivalenceTable { archs, entries })
}

/// Result of Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, CapacityError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CapacityError::TooFewSamples(a.len(), b.len()));
    }
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (q1, q2) = (v1 / a.len() as f64, v2 / b.len() as f64);
    if q1 + q2 == 0.0 {
        return Err(CapacityError::ZeroVariance);
    }
    let t = (m1 - m2) / (q1 + q2).sqrt();
    let df = (q1 + q2).powi(2)
        / (q1 * q1 / (a.len() as f64 - 1.0) + q2 * q2 / (b.len() as f64 - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| ≥ |t|)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).min(1.0)
}

/// Spread of losses from repeated runs of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerunStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation (n − 1).
    pub sd: f64,
    pub sd_over_mean: f64,
    /// Share of all runs that diverged, in percent.
    pub infeasible_pct: f64,
}

pub fn rerun_stats(losses: &[f64], infeasible: usize) -> Result<RerunStats, CapacityError> {
    if losses.is_empty() {
        return Err(CapacityError::NoLosses);
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let sd = if losses.len() > 1 {
        (losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RerunStats {
        min: losses.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        max: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sd,
        sd_over_mean: sd / mean,
        infeasible_pct: 100.0 * infeasible as f64 / (losses.len() + infeasible) as f64,
    })
}
