//! The variance-exploding noise schedule and colored-noise generators.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{dft, idft, Field};
use crate::seeds::Stream;
use crate::{Error, Result};

/// VE schedule `sigma(t) = sqrt((b^{2t} - 1) / (2 ln b))` with base `b > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigma_max_base: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_max_base: 25.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_max_base: f64) -> Result<Self> {
        if !(sigma_max_base > 1.0) {
            return Err(Error::invalid("schedule base must exceed 1"));
        }
        Ok(NoiseSchedule { sigma_max_base })
    }

    pub fn sigma_max_base(&self) -> f64 {
        self.sigma_max_base
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.sigma_sq(t)?.sqrt())
    }

    /// `sigma^2(t) = expm1(2 t ln b) / (2 ln b)`.
    pub fn sigma_sq(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        let two_log = 2.0 * self.sigma_max_base.ln();
        Ok((two_log * t).exp_m1() / two_log)
    }

    /// Closed-form `d[sigma^2]/dt = b^{2t}`; never finite-differenced.
    pub fn sigma_sq_deriv(&self, t: f64) -> f64 {
        (2.0 * self.sigma_max_base.ln() * t).exp()
    }

    /// Inverse of `sigma`: `t = ln(1 + 2 v^2 ln b) / (2 ln b)`.
    pub fn sigma_inv(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        let two_log = 2.0 * self.sigma_max_base.ln();
        let t = (v * v * two_log).ln_1p() / two_log;
        if t > 1.0 + 1e-12 {
            return Err(Error::LevelExceedsSchedule);
        }
        Ok(t.min(1.0))
    }
}

/// Spectral exponent of the colored-noise filter `|k|^{-r/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

impl NoiseColor {
    pub fn exponent(&self) -> f64 {
        match self {
            NoiseColor::White => 0.0,
            NoiseColor::Pink => 1.0,
            NoiseColor::Brown => 2.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseColor::White => "white",
            NoiseColor::Pink => "pink",
            NoiseColor::Brown => "brown",
        }
    }
}

/// Colored-noise specification; serializes as
/// `{"color": "pink", "magnitude": 0.1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub color: NoiseColor,
    pub magnitude: f64,
}

impl NoiseSpec {
    pub fn new(color: NoiseColor, magnitude: f64) -> Result<Self> {
        if !(magnitude >= 0.0) {
            return Err(Error::invalid("noise magnitude must be nonnegative"));
        }
        Ok(NoiseSpec { color, magnitude })
    }
}

/// Draw standard normal noise, filter in Fourier space by `|k|^{-r/2}` with
/// the DC mode zeroed, and scale by the magnitude. Mean-free by construction.
pub fn colored_noise(n: usize, spec: &NoiseSpec, rng: &mut Stream) -> Result<Field> {
    if n < 4 {
        return Err(Error::invalid("noise resolution must be at least 4"));
    }
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    if spec.magnitude == 0.0 {
        return Field::from_values(vec![0.0; n]);
    }
    let eps_field = Field::from_values(eps)?;
    let mut coeffs = dft(&eps_field);
    let r = spec.color.exponent();
    for (j, c) in coeffs.iter_mut().enumerate() {
        let k = j.min(n - j);
        if k == 0 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c /= (k as f64).powf(r / 2.0);
        }
    }
    let filtered = idft(&coeffs);
    Field::from_values(filtered.iter().map(|c| spec.magnitude * c.re).collect())
}
