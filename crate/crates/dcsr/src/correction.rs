//! Low-fidelity correction: perturb to a small diffusion time, denoise along
//! the probability-flow ODE from a (possibly larger) time, and grid-search
//! the two times against a high-fidelity reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Dataset;
use crate::metrics::Metric;
use crate::noise::NoiseSchedule;
use crate::score::ScoreModel;
use crate::sde::{ode_solve, perturb, OdeTolerances};
use crate::seeds;
use crate::{Error, Result};

/// Grid-search configuration for the correction times.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Upper end of the perturbation-time grid.
    pub t_e: f64,
    /// Number of perturbation-time grid points.
    pub n_t1: usize,
    /// Number of denoising-time grid points per perturbation time.
    pub n_t2: usize,
    /// Smallest denoising multiplier (t2 = c * t1).
    pub c1: f64,
    /// Largest denoising multiplier.
    pub c2: f64,
    /// Dataset metric minimized over the grid.
    pub metric: Metric,
    /// Independent noise redraws averaged per grid cell.
    pub repeats: usize,
    pub tol: OdeTolerances,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            t_e: 0.2,
            n_t1: 11,
            n_t2: 5,
            c1: 1.2,
            c2: 3.0,
            metric: Metric::MelrW,
            repeats: 1,
            tol: OdeTolerances::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.n_t1 < 2 {
            return Err(Error::DegenerateGrid("t1"));
        }
        if self.n_t2 < 2 {
            return Err(Error::DegenerateGrid("t2"));
        }
        if !(self.t_e > 0.0 && self.t_e <= 1.0) {
            return Err(Error::invalid("t_e must lie in (0, 1]"));
        }
        if !(self.c1 >= 1.0) || !(self.c2 > self.c1) {
            return Err(Error::invalid("multipliers need 1 <= c1 < c2"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        Ok(())
    }

    fn t1_at(&self, p: usize) -> f64 {
        p as f64 * self.t_e / (self.n_t1 - 1) as f64
    }

    fn t2_at(&self, t1: f64, q: usize) -> f64 {
        let c = self.c1 + q as f64 * (self.c2 - self.c1) / (self.n_t2 - 1) as f64;
        (c * t1).min(1.0)
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub t1: f64,
    pub t2: f64,
    pub value: f64,
}

/// Outcome of a correction-time search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSearchResult {
    pub t1_star: f64,
    pub t2_star: f64,
    pub metric_min: f64,
    pub grid: Vec<GridCell>,
}

impl TimeSearchResult {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t1,t2,value")?;
        for c in &self.grid {
            writeln!(w, "{},{},{}", c.t1, c.t2, c.value)?;
        }
        Ok(())
    }
}

/// Apply the correction map to every sample: perturb with `sigma(t1)` noise,
/// then solve the PF ODE from `t2` down to 0. Samples whose solve fails are
/// passed through unchanged and reported by index. `t1 = t2 = 0` is the
/// identity, bit-exact.
pub fn correct_dataset(
    lf: &Dataset,
    model: &ScoreModel,
    t1: f64,
    t2: f64,
    seed: u64,
    tol: &OdeTolerances,
) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&t1) {
        return Err(Error::TimeOutOfRange(t1));
    }
    if !(0.0..=1.0).contains(&t2) {
        return Err(Error::TimeOutOfRange(t2));
    }
    if t1 > t2 {
        return Err(Error::invalid(format!(
            "perturbation time {t1} exceeds denoising time {t2}"
        )));
    }
    if lf.resolution() != model.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: model.resolution(),
            got: lf.resolution(),
        });
    }
    if t1 == 0.0 && t2 == 0.0 {
        return Ok((lf.clone(), Vec::new()));
    }

    let sched: &NoiseSchedule = model.sched();
    let results: Vec<_> = lf
        .fields()
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = seeds::stream(seed, &[0x636f7272, i as u64]);
            let attempt = perturb(u, t1, sched, &mut rng)
                .and_then(|y| ode_solve(&y, t2, 0.0, model, None, tol));
            match attempt {
                Ok(f) => (f, false),
                Err(_) => (u.clone(), true),
            }
        })
        .collect();

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, (_, bad))| bad.then_some(i))
        .collect();
    let fields = results.into_iter().map(|(f, _)| f).collect();
    let out = Dataset::new(fields, lf.tag().clone())?;
    Ok((out, failed))
}

fn cell_metric(
    lf: &Dataset,
    hf_ref: &Dataset,
    model: &ScoreModel,
    t1: f64,
    t2: f64,
    cfg: &SearchConfig,
    cell_seed: u64,
) -> f64 {
    let mut total = 0.0;
    for r in 0..cfg.repeats {
        let seed = seeds::derive_seed(cell_seed, &[r as u64]);
        let value = correct_dataset(lf, model, t1, t2, seed, &cfg.tol)
            .and_then(|(corrected, _)| cfg.metric.evaluate(&corrected, hf_ref));
        match value {
            Ok(v) if v.is_finite() => total += v,
            // a failed cell must not win the search
            _ => return f64::INFINITY,
        }
    }
    total / cfg.repeats as f64
}

/// Imbalanced grid search over (t1, t2): t1 sweeps [0, t_e] and t2 sweeps
/// multipliers of t1. Ties keep the first minimum in scan order (small t1,
/// then small t2).
pub fn select_t1_t2(
    lf: &Dataset,
    hf_ref: &Dataset,
    model: &ScoreModel,
    cfg: &SearchConfig,
) -> Result<TimeSearchResult> {
    cfg.validate()?;
    let mut grid = Vec::with_capacity(cfg.n_t1 * cfg.n_t2);
    let mut best: Option<(f64, f64, f64)> = None;
    for p in 0..cfg.n_t1 {
        let t1 = cfg.t1_at(p);
        for q in 0..cfg.n_t2 {
            let t2 = cfg.t2_at(t1, q);
            let cell_seed = seeds::derive_seed(cfg.seed, &[p as u64, q as u64]);
            let value = cell_metric(lf, hf_ref, model, t1, t2, cfg, cell_seed);
            grid.push(GridCell { t1, t2, value });
            if best.map_or(true, |(_, _, v)| value < v) {
                best = Some((t1, t2, value));
            }
        }
    }
    let (t1_star, t2_star, metric_min) = best.expect("nonempty grid");
    if metric_min.is_infinite() {
        return Err(Error::invalid("every search cell failed to evaluate"));
    }
    Ok(TimeSearchResult {
        t1_star,
        t2_star,
        metric_min,
        grid,
    })
}

/// Balanced single-time search (t1 = t2 = t on the same [0, t_e] grid).
pub fn select_t(
    lf: &Dataset,
    hf_ref: &Dataset,
    model: &ScoreModel,
    cfg: &SearchConfig,
) -> Result<TimeSearchResult> {
    cfg.validate()?;
    let mut grid = Vec::with_capacity(cfg.n_t1);
    let mut best: Option<(f64, f64)> = None;
    for p in 0..cfg.n_t1 {
        let t = cfg.t1_at(p);
        let cell_seed = seeds::derive_seed(cfg.seed, &[p as u64]);
        let value = cell_metric(lf, hf_ref, model, t, t, cfg, cell_seed);
        grid.push(GridCell {
            t1: t,
            t2: t,
            value,
        });
        if best.map_or(true, |(_, v)| value < v) {
            best = Some((t, value));
        }
    }
    let (t_star, metric_min) = best.expect("nonempty grid");
    if metric_min.is_infinite() {
        return Err(Error::invalid("every search cell failed to evaluate"));
    }
    Ok(TimeSearchResult {
        t1_star: t_star,
        t2_star: t_star,
        metric_min,
        grid,
    })
}

/// Gaussian tail constant `C_lambda = d + 2 sqrt(d ln(1/lambda)) + 2 ln(1/lambda)`.
pub fn c_lambda(dim: usize, lambda: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid("lambda must lie in (0, 1)"));
    }
    let log_term = (1.0 / lambda).ln();
    Ok(dim as f64 + 2.0 * (dim as f64 * log_term).sqrt() + 2.0 * log_term)
}

/// High-probability error bound for the imbalanced correction:
/// `exp(2 L t2) (||e||^2 + sigma^2(t2) delta + (sigma^2(t1) + sigma^2(t2)) C_lambda)`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_bound(
    err_sq: f64,
    delta: f64,
    t1: f64,
    t2: f64,
    lipschitz: f64,
    dim: usize,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<f64> {
    if err_sq < 0.0 || delta < 0.0 || lipschitz < 0.0 {
        return Err(Error::invalid("bound inputs must be nonnegative"));
    }
    if t1 > t2 {
        return Err(Error::invalid("bound requires t1 <= t2"));
    }
    let cl = c_lambda(dim, lambda)?;
    let s1 = sched.sigma_sq(t1)?;
    let s2 = sched.sigma_sq(t2)?;
    Ok((2.0 * lipschitz * t2).exp() * (err_sq + s2 * delta + (s1 + s2) * cl))
}

/// Idealized bound when the only error source is score inaccuracy:
/// `exp(2 L t2) sigma^2(t2) delta`.
pub fn prop1_bound(delta: f64, t2: f64, lipschitz: f64, sched: &NoiseSchedule) -> Result<f64> {
    if delta < 0.0 || lipschitz < 0.0 {
        return Err(Error::invalid("bound inputs must be nonnegative"));
    }
    Ok((2.0 * lipschitz * t2).exp() * sched.sigma_sq(t2)? * delta)
}
