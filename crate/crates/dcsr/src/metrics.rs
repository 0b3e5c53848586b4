//! Distribution-distance and spectral metrics used for time selection and
//! evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::{mean_spectrum, Dataset};
use crate::{Error, Result};

mod ot;

pub use ot::{assignment_cost, transport_cost};

/// Metric identifier; parseable from config strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Tvd,
    Rmse,
    Mmd,
    W2,
    MelrU,
    MelrW,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Tvd,
        Metric::Rmse,
        Metric::Mmd,
        Metric::W2,
        Metric::MelrU,
        Metric::MelrW,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Tvd => "tvd",
            Metric::Rmse => "rmse",
            Metric::Mmd => "mmd",
            Metric::W2 => "w2",
            Metric::MelrU => "melru",
            Metric::MelrW => "melrw",
        }
    }

    /// Evaluate this metric with its default parameters; `v` is the
    /// reference distribution.
    pub fn evaluate(&self, u: &Dataset, v: &Dataset) -> Result<f64> {
        match self {
            Metric::Tvd => tvd(u, v),
            Metric::Rmse => rmse(u, v),
            Metric::Mmd => mmd(u, v, DEFAULT_MMD_BANDWIDTH),
            Metric::W2 => w2(u, v),
            Metric::MelrU => melr(u, v, false),
            Metric::MelrW => melr(u, v, true),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tvd" => Ok(Metric::Tvd),
            "rmse" => Ok(Metric::Rmse),
            "mmd" => Ok(Metric::Mmd),
            "w2" => Ok(Metric::W2),
            "melru" => Ok(Metric::MelrU),
            "melrw" => Ok(Metric::MelrW),
            other => Err(Error::UnknownMetric(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_MMD_BANDWIDTH: f64 = 0.01;

/// Exact W2 is solved combinatorially; keep instance sizes bounded.
pub const W2_MAX_SIZE: usize = 2000;

fn check_paired(u: &Dataset, v: &Dataset) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "paired metric needs equal sizes, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.resolution() != v.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: v.resolution(),
            got: u.resolution(),
        });
    }
    Ok(())
}

/// Per-sample relative L1 distances `||u_i - v_i||_1 / ||v_i||_1`.
pub fn tvd_per_sample(u: &Dataset, v: &Dataset) -> Result<Vec<f64>> {
    check_paired(u, v)?;
    u.fields()
        .iter()
        .zip(v.fields())
        .enumerate()
        .map(|(i, (a, b))| {
            let denom: f64 = b.values().iter().map(|x| x.abs()).sum();
            if denom == 0.0 {
                return Err(Error::invalid(format!(
                    "reference sample {i} has zero L1 norm"
                )));
            }
            let num: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .sum();
            Ok(num / denom)
        })
        .collect()
}

/// Total variation distance: mean relative L1 error over paired samples.
pub fn tvd(u: &Dataset, v: &Dataset) -> Result<f64> {
    let per = tvd_per_sample(u, v)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Per-sample relative L2 distances `||u_i - v_i||_2 / ||v_i||_2`.
pub fn rmse_per_sample(u: &Dataset, v: &Dataset) -> Result<Vec<f64>> {
    check_paired(u, v)?;
    u.fields()
        .iter()
        .zip(v.fields())
        .enumerate()
        .map(|(i, (a, b))| {
            let denom: f64 = b.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            if denom == 0.0 {
                return Err(Error::invalid(format!(
                    "reference sample {i} has zero L2 norm"
                )));
            }
            let num: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            Ok(num / denom)
        })
        .collect()
}

/// Relative root mean squared error over paired samples.
pub fn rmse(u: &Dataset, v: &Dataset) -> Result<f64> {
    let per = rmse_per_sample(u, v)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// Maximum mean discrepancy with a Gaussian kernel, biased V-statistic
/// (diagonal terms included). Clipped at 0 against rounding.
pub fn mmd(u: &Dataset, v: &Dataset, bandwidth: f64) -> Result<f64> {
    if u.resolution() != v.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: v.resolution(),
            got: u.resolution(),
        });
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("MMD bandwidth must be positive"));
    }
    let n = u.len() as f64;
    let m = v.len() as f64;
    let mut uu = 0.0;
    for a in u.fields() {
        for b in u.fields() {
            uu += gaussian_kernel(a.values(), b.values(), bandwidth);
        }
    }
    let mut vv = 0.0;
    for a in v.fields() {
        for b in v.fields() {
            vv += gaussian_kernel(a.values(), b.values(), bandwidth);
        }
    }
    let mut uv = 0.0;
    for a in u.fields() {
        for b in v.fields() {
            uv += gaussian_kernel(a.values(), b.values(), bandwidth);
        }
    }
    Ok((uu / (n * n) + vv / (m * m) - 2.0 * uv / (n * m)).max(0.0))
}

/// Exact Wasserstein-2 distance between empirical measures with uniform
/// weights. Equal sizes reduce to an assignment problem; unequal sizes are
/// solved by the transportation simplex.
pub fn w2(u: &Dataset, v: &Dataset) -> Result<f64> {
    if u.resolution() != v.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: v.resolution(),
            got: u.resolution(),
        });
    }
    let (n, m) = (u.len(), v.len());
    if n > W2_MAX_SIZE || m > W2_MAX_SIZE {
        return Err(Error::invalid(format!(
            "w2 instance {n}x{m} exceeds the exact-solver bound {W2_MAX_SIZE}; subsample first"
        )));
    }
    let cost = |i: usize, j: usize| -> f64 {
        u.fields()[i]
            .values()
            .iter()
            .zip(v.fields()[j].values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let total = if n == m {
        assignment_cost(n, &cost) / n as f64
    } else {
        transport_cost(n, m, &cost)
    };
    Ok(total.max(0.0).sqrt())
}

/// Mean energy log ratio of dataset-average spectra; `v` is the reference
/// and supplies the weights in the weighted variant. Bins where either
/// average spectrum vanishes are excluded.
pub fn melr(u: &Dataset, v: &Dataset, weighted: bool) -> Result<f64> {
    if u.resolution() != v.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: v.resolution(),
            got: u.resolution(),
        });
    }
    let su = mean_spectrum(u);
    let sv = mean_spectrum(v);
    let included: Vec<usize> = su
        .energies()
        .iter()
        .zip(sv.energies())
        .enumerate()
        .filter(|(_, (&a, &b))| a > 0.0 && b > 0.0)
        .map(|(k, _)| k)
        .collect();
    if included.is_empty() {
        return Err(Error::invalid("no common positive spectral bins"));
    }
    let ref_total: f64 = included.iter().map(|&k| sv.energies()[k]).sum();
    if ref_total <= 0.0 {
        return Err(Error::invalid("reference spectrum is zero"));
    }
    let mut acc = 0.0;
    for &k in &included {
        let ratio = su.energies()[k] / sv.energies()[k];
        let w = if weighted {
            sv.energies()[k] / ref_total
        } else {
            1.0
        };
        acc += w * ratio.ln().abs();
    }
    Ok(acc)
}

/// Per-metric scalar values plus per-sample vectors where applicable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub per_sample: BTreeMap<String, Vec<f64>>,
}

impl MetricReport {
    pub fn compute(metrics: &[Metric], pred: &Dataset, reference: &Dataset) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut per_sample = BTreeMap::new();
        for metric in metrics {
            let value = metric.evaluate(pred, reference)?;
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(format!(
                    "metric {metric} produced invalid value {value}"
                )));
            }
            values.insert(metric.name().to_string(), value);
            match metric {
                Metric::Tvd => {
                    per_sample.insert("tvd".into(), tvd_per_sample(pred, reference)?);
                }
                Metric::Rmse => {
                    per_sample.insert("rmse".into(), rmse_per_sample(pred, reference)?);
                }
                _ => {}
            }
        }
        Ok(MetricReport { values, per_sample })
    }

    /// One row per metric: `metric,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.values {
            out.push_str(&format!("{k},{v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Median of a sample vector (empty input is a caller bug).
pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
