//! Probability-flow ODE integration and Euler-Maruyama reverse sampling for
//! the variance-exploding diffusion.

use rand_distr::{Distribution, StandardNormal};

use crate::grid::Field;
use crate::noise::NoiseSchedule;
use crate::score::ScoreModel;
use crate::seeds::Stream;
use crate::{Error, Result};

/// Adaptive step-size tolerances for the PF ODE solver.
#[derive(Debug, Clone)]
pub struct OdeTolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerances {
    fn default() -> Self {
        OdeTolerances {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 100_000,
        }
    }
}

/// Add forward-process noise at diffusion time `t`: `x + sigma(t) eps`.
pub fn perturb(x: &Field, t: f64, sched: &NoiseSchedule, rng: &mut Stream) -> Result<Field> {
    let sigma = sched.sigma(t)?;
    let values = x
        .values()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect();
    Field::from_values(values)
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Solve the probability-flow ODE `dx/dt = -1/2 sigma_sq'(t) S(x, t)` from
/// `t_start` to `t_end` (either direction) with an adaptive Dormand-Prince
/// 5(4) scheme. Endpoints are clamped to the model's minimum evaluatable
/// time; `t_start == t_end` returns the input unchanged.
pub fn ode_solve(
    x: &Field,
    t_start: f64,
    t_end: f64,
    model: &ScoreModel,
    cond: Option<&Field>,
    tol: &OdeTolerances,
) -> Result<Field> {
    if !(0.0..=1.0).contains(&t_start) {
        return Err(Error::TimeOutOfRange(t_start));
    }
    if !(0.0..=1.0).contains(&t_end) {
        return Err(Error::TimeOutOfRange(t_end));
    }
    if !(tol.rtol > 0.0) || !(tol.atol > 0.0) {
        return Err(Error::invalid("ODE tolerances must be positive"));
    }
    let t0 = t_start.max(model.min_time());
    let t1 = t_end.max(model.min_time());
    if t0 == t1 {
        return Ok(x.clone());
    }

    let sched = model.sched();
    let n = x.resolution();
    let rhs = |y: &[f64], t: f64| -> Result<Vec<f64>> {
        let field = Field::from_values(y.to_vec())?;
        let score = model.eval(&field, t, cond)?;
        let coeff = -0.5 * sched.sigma_sq_deriv(t);
        Ok(score.values().iter().map(|&s| coeff * s).collect())
    };

    let lo = t0.min(t1);
    let hi = t0.max(t1);
    let scale_cap = 1e8 * (1.0 + x.values().iter().map(|v| v.abs()).fold(0.0, f64::max));

    let mut t = t0;
    let mut y = x.values().to_vec();
    let mut h = (t1 - t0) / 100.0;
    let mut k: Vec<Vec<f64>> = vec![Vec::new(); 7];
    k[0] = rhs(&y, t)?;
    let mut steps = 0usize;

    while t != t1 {
        if steps >= tol.max_steps {
            return Err(Error::OdeStepLimit);
        }
        steps += 1;

        // do not overshoot the endpoint
        if (t + h - t1) * h.signum() > 0.0 || (t + h).clamp(lo, hi) != t + h {
            h = t1 - t;
        }

        for stage in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(stage) {
                let a = A[stage - 1][j];
                if a != 0.0 {
                    for (yv, kv) in ys.iter_mut().zip(kj) {
                        *yv += h * a * kv;
                    }
                }
            }
            let ts = (t + C[stage] * h).clamp(lo, hi);
            k[stage] = rhs(&ys, ts)?;
        }

        let mut y5 = y.clone();
        let mut err_sq = 0.0;
        for i in 0..n {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for (stage, kc) in k.iter().enumerate() {
                d5 += B5[stage] * kc[i];
                d4 += B4[stage] * kc[i];
            }
            y5[i] += h * d5;
            let sc = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
            let e = h * (d5 - d4) / sc;
            err_sq += e * e;
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() || y5.iter().any(|v| !v.is_finite() || v.abs() > scale_cap) {
            return Err(Error::OdeDiverged);
        }

        if err <= 1.0 {
            t = if (t + h - t1) * h.signum() >= 0.0 { t1 } else { t + h };
            y = y5;
            // first-same-as-last: stage 7 is the derivative at the new point
            k[0] = std::mem::take(&mut k[6]);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h == 0.0 || !h.is_finite() {
            return Err(Error::OdeDiverged);
        }
    }

    Field::from_values(y)
}

fn em_reverse(
    model: &ScoreModel,
    cond: Option<&Field>,
    n_steps: usize,
    rng: &mut Stream,
) -> Result<Field> {
    if n_steps == 0 {
        return Err(Error::invalid("EM sampling needs at least one step"));
    }
    let sched = model.sched();
    let n = model.resolution();
    let sigma_max = sched.sigma(1.0)?;
    // The VE forward process perturbs the data rather than replacing it, so
    // the t = 1 marginal is centred on the data. For conditional sampling the
    // prolonged condition is the best available centre; unconditional
    // sampling keeps the usual zero-centred start.
    let centre: Vec<f64> = match cond {
        Some(c) => crate::grid::prolong(c, n / c.resolution())?
            .values()
            .to_vec(),
        None => vec![0.0; n],
    };
    let mut x: Vec<f64> = centre
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma_max * z
        })
        .collect();

    for i in (1..=n_steps).rev() {
        let t = i as f64 / n_steps as f64;
        let t_prev = (i - 1) as f64 / n_steps as f64;
        let var_t = sched.sigma_sq(t)?;
        let var_prev = sched.sigma_sq(t_prev)?;
        let drift = var_t - var_prev;
        let diffusion = drift.sqrt();
        let field = Field::from_values(x.clone())?;
        let score = model.eval(&field, t, cond)?;
        // The last step is taken without noise injection so the sample does
        // not retain O(sigma(1/n)) jitter that no later step can remove.
        let last = i == 1;
        for (xi, s) in x.iter_mut().zip(score.values()) {
            let z: f64 = if last { 0.0 } else { StandardNormal.sample(rng) };
            *xi += drift * s + diffusion * z;
        }
    }
    Field::from_values(x)
}

/// Draw one sample from an unconditional model by reverse Euler-Maruyama
/// over a uniform time grid from t = 1 down to t = 0.
pub fn em_sample_uncond(model: &ScoreModel, n_steps: usize, rng: &mut Stream) -> Result<Field> {
    if model.cond_resolution().is_some() {
        return Err(Error::invalid(
            "conditional model passed to unconditional sampler",
        ));
    }
    em_reverse(model, None, n_steps, rng)
}

/// Draw one conditional sample given a low-resolution condition.
pub fn em_sample_cond(
    model: &ScoreModel,
    cond: &Field,
    n_steps: usize,
    rng: &mut Stream,
) -> Result<Field> {
    let expected = model
        .cond_resolution()
        .ok_or_else(|| Error::invalid("unconditional model passed to conditional sampler"))?;
    if cond.resolution() != expected {
        return Err(Error::ResolutionMismatch {
            expected,
            got: cond.resolution(),
        });
    }
    em_reverse(model, Some(cond), n_steps, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    fn rand_field(n: usize, rng: &mut Stream) -> Field {
        Field::from_values((0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn max_abs_diff(a: &Field, b: &Field) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn point_mass_denoising_recovers_target() {
        let mut rng = seeds::stream(1, &[]);
        let x0 = rand_field(10, &mut rng);
        let model = ScoreModel::point_mass(x0.clone(), sched());
        let t2 = 0.5;
        let y = perturb(&x0, t2, model.sched(), &mut rng).unwrap();
        let out = ode_solve(&y, t2, 0.0, &model, None, &OdeTolerances::default()).unwrap();
        assert!(max_abs_diff(&out, &x0) < 1e-3, "residual {}", max_abs_diff(&out, &x0));
    }

    #[test]
    fn point_mass_partial_trajectory_matches_closed_form() {
        // along the PF ODE, x(t) = x0 + (sigma(t) / sigma(t2)) (y - x0)
        let mut rng = seeds::stream(2, &[]);
        let x0 = rand_field(6, &mut rng);
        let model = ScoreModel::point_mass(x0.clone(), sched());
        let sch = sched();
        let t2 = 0.7;
        let t_mid = 0.3;
        let y = perturb(&x0, t2, &sch, &mut rng).unwrap();
        let out = ode_solve(&y, t2, t_mid, &model, None, &OdeTolerances::default()).unwrap();
        let ratio = sch.sigma(t_mid).unwrap() / sch.sigma(t2).unwrap();
        let expect = x0.zip_map(&y, |a, b| a + ratio * (b - a)).unwrap();
        assert!(max_abs_diff(&out, &expect) < 1e-4);
    }

    #[test]
    fn gaussian_endpoint_matches_closed_form() {
        // denoising endpoint: mu + s / sqrt(s^2 + sigma^2(t2)) (y - mu)
        let mut rng = seeds::stream(3, &[]);
        let n = 8;
        let mu = Field::constant(0.5, n).unwrap();
        let s = 1.3;
        let sch = sched();
        let model = ScoreModel::gaussian(mu.clone(), s, sch.clone()).unwrap();
        let t2 = 0.6;
        let y = rand_field(n, &mut rng);
        let out = ode_solve(&y, t2, 0.0, &model, None, &OdeTolerances::default()).unwrap();
        let c = s / (s * s + sch.sigma_sq(t2).unwrap()).sqrt();
        let expect = mu.zip_map(&y, |m, yv| m + c * (yv - m)).unwrap();
        assert!(max_abs_diff(&out, &expect) < 1e-4);
    }

    #[test]
    fn forward_backward_round_trip() {
        let mut rng = seeds::stream(4, &[]);
        let n = 8;
        let model =
            ScoreModel::gaussian(Field::constant(0.0, n).unwrap(), 1.0, sched()).unwrap();
        let x = rand_field(n, &mut rng);
        let tol = OdeTolerances::default();
        let up = ode_solve(&x, 0.2, 0.8, &model, None, &tol).unwrap();
        let back = ode_solve(&up, 0.8, 0.2, &model, None, &tol).unwrap();
        assert!(max_abs_diff(&back, &x) < 1e-4);
    }

    #[test]
    fn equal_endpoints_return_input_bit_exact() {
        let mut rng = seeds::stream(5, &[]);
        let x = rand_field(5, &mut rng);
        let model = ScoreModel::point_mass(rand_field(5, &mut rng), sched());
        let out = ode_solve(&x, 0.4, 0.4, &model, None, &OdeTolerances::default()).unwrap();
        for (a, b) in out.values().iter().zip(x.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let mut rng = seeds::stream(6, &[]);
        let n = 6;
        let mu = Field::constant(0.0, n).unwrap();
        let s = 0.9;
        let sch = sched();
        let model = ScoreModel::gaussian(mu.clone(), s, sch.clone()).unwrap();
        let t2 = 0.5;
        let y = rand_field(n, &mut rng);
        let c = s / (s * s + sch.sigma_sq(t2).unwrap()).sqrt();
        let expect = mu.zip_map(&y, |m, yv| m + c * (yv - m)).unwrap();
        let err_at = |scale: f64| {
            let tol = OdeTolerances {
                rtol: scale,
                atol: scale,
                max_steps: 100_000,
            };
            let out = ode_solve(&y, t2, 0.0, &model, None, &tol).unwrap();
            max_abs_diff(&out, &expect)
        };
        let loose = err_at(1e-3);
        let tight = err_at(1e-8);
        assert!(tight < loose, "tight {tight} vs loose {loose}");
        assert!(tight < 1e-7);
    }

    #[test]
    fn step_limit_is_reported() {
        let model =
            ScoreModel::gaussian(Field::constant(0.0, 4).unwrap(), 1.0, sched()).unwrap();
        let x = Field::constant(1.0, 4).unwrap();
        let tol = OdeTolerances {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 3,
        };
        assert!(matches!(
            ode_solve(&x, 0.9, 0.0, &model, None, &tol),
            Err(Error::OdeStepLimit)
        ));
    }

    #[test]
    fn backward_map_contracts_for_gaussian_score() {
        // the exact denoising map is linear with factor < 1; the numerical
        // map should not expand any pair of starts
        let mut rng = seeds::stream(7, &[]);
        let n = 4;
        let model =
            ScoreModel::gaussian(Field::constant(0.0, n).unwrap(), 1.0, sched()).unwrap();
        let tol = OdeTolerances::default();
        for _ in 0..50 {
            let a = rand_field(n, &mut rng);
            let b = rand_field(n, &mut rng);
            let fa = ode_solve(&a, 0.5, 0.0, &model, None, &tol).unwrap();
            let fb = ode_solve(&b, 0.5, 0.0, &model, None, &tol).unwrap();
            let before: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let after: f64 = fa
                .values()
                .iter()
                .zip(fb.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(after <= 1.1 * before, "after {after} vs before {before}");
        }
    }

    #[test]
    fn em_sampler_matches_gaussian_statistics() {
        let mut rng = seeds::stream(8, &[]);
        let n = 4;
        let s = 1.0;
        let model =
            ScoreModel::gaussian(Field::constant(0.0, n).unwrap(), s, sched()).unwrap();
        let count = 800;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..count {
            let x = em_sample_uncond(&model, 200, &mut rng).unwrap();
            for &v in x.values() {
                sum += v;
                sum_sq += v * v;
            }
        }
        let total = (count * n) as f64;
        let mean = sum / total;
        let var = sum_sq / total - mean * mean;
        assert!(mean.abs() < 0.08, "mean {mean}");
        assert!((var - s * s).abs() < 0.12, "var {var}");
    }

    #[test]
    fn em_sampler_validates_inputs() {
        let model =
            ScoreModel::gaussian(Field::constant(0.0, 4).unwrap(), 1.0, sched()).unwrap();
        let mut rng = seeds::stream(9, &[]);
        assert!(em_sample_uncond(&model, 0, &mut rng).is_err());
        let cond = Field::constant(0.0, 2).unwrap();
        assert!(em_sample_cond(&model, &cond, 10, &mut rng).is_err());
    }
}
