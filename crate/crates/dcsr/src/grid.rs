//! Periodic uniform-grid fields, resolution change operators and energy
//! spectra.
//!
//! Fields live on the periodic unit interval (configurable length) sampled at
//! `n` equispaced nodes `x_i = i L / n`. Restriction and prolongation use
//! periodic cubic spline interpolation; both are linear and interpolate the
//! shared nodes exactly.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod io;

/// A sampled function on a periodic uniform 1D grid.
///
/// The shape is kept as an explicit vector so a 2D extension stays additive;
/// v1 only constructs one-dimensional fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    domain_length: f64,
}

impl Field {
    /// Build a field, validating that all values are finite.
    pub fn new(values: Vec<f64>, domain_length: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("field must be nonempty"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        if !(domain_length > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        Ok(Field {
            values,
            domain_length,
        })
    }

    /// Field on the unit interval.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Field::new(values, 1.0)
    }

    /// Constant field `c` at resolution `n`.
    pub fn constant(c: f64, n: usize) -> Result<Self> {
        Field::from_values(vec![c; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    /// Grid shape; 1D fields report a single axis.
    pub fn shape(&self) -> Vec<usize> {
        vec![self.values.len()]
    }

    /// Grid node positions.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.values.len();
        let length = self.domain_length;
        (0..n).map(move |i| i as f64 * length / n as f64)
    }

    /// Pointwise combination with another field of the same resolution.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if other.resolution() != self.resolution() {
            return Err(Error::ResolutionMismatch {
                expected: self.resolution(),
                got: other.resolution(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::new(values, self.domain_length)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.values.iter().map(|&v| f(v)).collect(), self.domain_length)
    }
}

/// Provenance record carried by every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceTag {
    pub fidelity: String,
    pub bias_source: String,
    pub seed: u64,
}

impl ProvenanceTag {
    pub fn new(fidelity: &str, bias_source: &str, seed: u64) -> Self {
        ProvenanceTag {
            fidelity: fidelity.to_string(),
            bias_source: bias_source.to_string(),
            seed,
        }
    }
}

/// An ordered collection of fields at one resolution.
#[derive(Debug, Clone)]
pub struct Dataset {
    fields: Vec<Field>,
    tag: ProvenanceTag,
}

impl Dataset {
    pub fn new(fields: Vec<Field>, tag: ProvenanceTag) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::invalid("dataset must be nonempty"))?;
        let res = first.resolution();
        if fields.iter().any(|f| f.resolution() != res) {
            return Err(Error::invalid("dataset resolution is not homogeneous"));
        }
        Ok(Dataset { fields, tag })
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn tag(&self) -> &ProvenanceTag {
        &self.tag
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.fields[0].resolution()
    }

    /// Apply a fallible per-sample transform, keeping the provenance tag.
    pub fn try_map(&self, f: impl Fn(&Field) -> Result<Field>) -> Result<Dataset> {
        let fields = self.fields.iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(fields, self.tag.clone())
    }

    pub fn with_tag(&self, tag: ProvenanceTag) -> Dataset {
        Dataset {
            fields: self.fields.clone(),
            tag,
        }
    }
}

/// Energy per wavenumber magnitude, `k = 0..=n/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    energies: Vec<f64>,
}

impl Spectrum {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }
}

/// Second derivatives of the periodic cubic spline through `y` on a uniform
/// grid with spacing `h`. Cyclic tridiagonal system solved with the
/// Sherman-Morrison correction.
fn periodic_spline_second_derivs(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    debug_assert!(n >= 3);
    let rhs: Vec<f64> = (0..n)
        .map(|i| {
            let prev = y[(i + n - 1) % n];
            let next = y[(i + 1) % n];
            6.0 * (prev - 2.0 * y[i] + next) / (h * h)
        })
        .collect();

    // System: m[i-1] + 4 m[i] + m[i+1] = rhs[i], cyclic.
    let solve_tridiag = |b: &[f64]| -> Vec<f64> {
        // Plain tridiagonal (1, 4, 1) of size n with modified corners
        // diag[0] = 4 - gamma, diag[n-1] = 4 - 1/gamma, gamma = -4 chosen below.
        let gamma = -4.0;
        let mut diag = vec![4.0; n];
        diag[0] -= gamma;
        diag[n - 1] -= 1.0 / gamma;
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        // Thomas forward sweep, sub = super = 1.
        let mut beta = diag[0];
        x[0] = b[0] / beta;
        for i in 1..n {
            c[i] = 1.0 / beta;
            beta = diag[i] - c[i];
            x[i] = (b[i] - x[i - 1]) / beta;
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c[i + 1] * next;
        }
        x
    };

    let gamma = -4.0;
    let x = solve_tridiag(&rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = 1.0;
    let z = solve_tridiag(&u);
    // v = (1, ..., 1/gamma) picks up the two cyclic corner entries.
    let vx = x[0] + x[n - 1] / gamma;
    let vz = z[0] + z[n - 1] / gamma;
    let factor = vx / (1.0 + vz);
    (0..n).map(|i| x[i] - factor * z[i]).collect()
}

/// Evaluator for the periodic cubic spline through a field's node values.
pub struct CubicSpline<'a> {
    field: &'a Field,
    second_derivs: Vec<f64>,
    h: f64,
}

impl<'a> CubicSpline<'a> {
    pub fn new(field: &'a Field) -> Self {
        let n = field.resolution();
        let h = field.domain_length / n as f64;
        let second_derivs = periodic_spline_second_derivs(field.values(), h);
        CubicSpline {
            field,
            second_derivs,
            h,
        }
    }

    /// Evaluate at `x`, wrapping periodically.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.field.resolution();
        let length = self.field.domain_length;
        let xp = x.rem_euclid(length);
        let pos = xp / self.h;
        let i = (pos.floor() as usize).min(n - 1);
        let j = (i + 1) % n;
        let a = (i as f64 + 1.0) - pos;
        let b = pos - i as f64;
        let y = self.field.values();
        let h2 = self.h * self.h;
        a * y[i]
            + b * y[j]
            + ((a * a * a - a) * self.second_derivs[i] + (b * b * b - b) * self.second_derivs[j])
                * h2
                / 6.0
    }
}

/// Downsample by an integer factor. Coarse nodes coincide with fine nodes, so
/// the periodic cubic interpolant reduces to decimation there.
pub fn restrict(f: &Field, factor: usize) -> Result<Field> {
    let n = f.resolution();
    if factor == 0 || n % factor != 0 {
        return Err(Error::IncompatibleFactor);
    }
    let coarse = n / factor;
    if coarse < 4 {
        return Err(Error::IncompatibleFactor);
    }
    let values = f.values().iter().step_by(factor).copied().collect();
    Field::new(values, f.domain_length)
}

/// Periodic cubic upsampling by an integer factor >= 2. Interpolates the
/// coarse nodes exactly, so `restrict(prolong(f, k), k) == f`.
pub fn prolong(f: &Field, factor: usize) -> Result<Field> {
    if factor < 2 {
        return Err(Error::invalid("prolongation factor must be >= 2"));
    }
    let n = f.resolution();
    if n < 4 {
        return Err(Error::invalid("prolongation needs at least 4 nodes"));
    }
    let fine = n * factor;
    let spline = CubicSpline::new(f);
    let values = (0..fine)
        .map(|i| {
            if i % factor == 0 {
                f.values()[i / factor]
            } else {
                spline.eval(i as f64 * f.domain_length / fine as f64)
            }
        })
        .collect();
    Field::new(values, f.domain_length)
}

/// Forward DFT of the field values (unnormalized).
pub fn dft(f: &Field) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse DFT, normalized by 1/n.
pub fn idft(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    FftPlanner::new()
        .plan_fft_inverse(buf.len())
        .process(&mut buf);
    let n = buf.len() as f64;
    for v in &mut buf {
        *v /= n;
    }
    buf
}

/// Energy per wavenumber magnitude: `E(k)` sums `|X_j|^2` over the +-k pair
/// for `0 < k < n/2`; the DC bin and (for even n) the Nyquist bin are counted
/// once.
pub fn energy_spectrum(f: &Field) -> Spectrum {
    let coeffs = dft(f);
    let n = coeffs.len();
    let kmax = n / 2;
    let mut energies = vec![0.0; kmax + 1];
    for (j, c) in coeffs.iter().enumerate() {
        let k = j.min(n - j);
        energies[k] += c.norm_sqr();
    }
    Spectrum { energies }
}

/// Mean of per-sample energy spectra over a dataset.
pub fn mean_spectrum(data: &Dataset) -> Spectrum {
    let n = data.resolution();
    let mut energies = vec![0.0; n / 2 + 1];
    for f in data.fields() {
        for (e, s) in energies.iter_mut().zip(energy_spectrum(f).energies()) {
            *e += s;
        }
    }
    let count = data.len() as f64;
    for e in &mut energies {
        *e /= count;
    }
    Spectrum { energies }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn sin_field(n: usize) -> Field {
        Field::from_values(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
                .collect(),
        )
        .unwrap()
    }

    fn random_field(n: usize, seed: u64) -> Field {
        let mut rng = crate::seeds::stream(seed, &[]);
        Field::from_values((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn restrict_constant_is_constant() {
        let f = Field::constant(3.25, 100).unwrap();
        let c = restrict(&f, 5).unwrap();
        assert_eq!(c.resolution(), 20);
        assert!(c.values().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn restrict_sine_matches_analytic() {
        let f = sin_field(100);
        let c = restrict(&f, 4).unwrap();
        assert_eq!(c.resolution(), 25);
        for (i, &v) in c.values().iter().enumerate() {
            let exact = (2.0 * std::f64::consts::PI * i as f64 / 25.0).sin();
            assert!((v - exact).abs() < 1e-3, "node {i}: {v} vs {exact}");
        }
    }

    #[test]
    fn restrict_rejects_bad_factors() {
        let f = Field::constant(1.0, 100).unwrap();
        assert!(matches!(restrict(&f, 3), Err(Error::IncompatibleFactor)));
        // factor = n collapses the grid below the minimum resolution
        assert!(matches!(restrict(&f, 100), Err(Error::IncompatibleFactor)));
    }

    #[test]
    fn prolong_constant_and_node_interpolation() {
        let f = Field::constant(-1.5, 25).unwrap();
        let p = prolong(&f, 4).unwrap();
        assert_eq!(p.resolution(), 100);
        for &v in p.values() {
            assert_abs_diff_eq!(v, -1.5, epsilon = 1e-12);
        }

        let g = random_field(25, 42);
        let back = restrict(&prolong(&g, 4).unwrap(), 4).unwrap();
        for (a, b) in back.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prolong_sine_matches_analytic() {
        let f = sin_field(25);
        let p = prolong(&f, 4).unwrap();
        for (i, &v) in p.values().iter().enumerate() {
            let exact = (2.0 * std::f64::consts::PI * i as f64 / 100.0).sin();
            assert!((v - exact).abs() < 2e-3, "node {i}: {v} vs {exact}");
        }
    }

    #[test]
    fn prolong_rejects_factor_below_two() {
        let f = Field::constant(0.0, 25).unwrap();
        assert!(prolong(&f, 1).is_err());
    }

    #[test]
    fn resolution_ops_are_linear() {
        let f = random_field(40, 1);
        let g = random_field(40, 2);
        let (a, b) = (0.7, -2.3);
        let combo = f.zip_map(&g, |x, y| a * x + b * y).unwrap();

        for factor in [2usize, 4] {
            let lhs = prolong(&combo, factor).unwrap();
            let rf = prolong(&f, factor).unwrap();
            let rg = prolong(&g, factor).unwrap();
            for ((&l, &x), &y) in lhs.values().iter().zip(rf.values()).zip(rg.values()) {
                assert!((l - (a * x + b * y)).abs() < 1e-12);
            }
            let lhs = restrict(&combo, factor).unwrap();
            let rf = restrict(&f, factor).unwrap();
            let rg = restrict(&g, factor).unwrap();
            for ((&l, &x), &y) in lhs.values().iter().zip(rf.values()).zip(rg.values()) {
                assert!((l - (a * x + b * y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_of_constant_is_dc_only() {
        let f = Field::constant(2.0, 64).unwrap();
        let s = energy_spectrum(&f);
        assert_abs_diff_eq!(s.energies()[0], (2.0 * 64.0) * (2.0 * 64.0), epsilon = 1e-6);
        for &e in &s.energies()[1..] {
            assert!(e < 1e-8);
        }
    }

    #[test]
    fn spectrum_of_sine_concentrates_at_k1() {
        let s = energy_spectrum(&sin_field(100));
        // two conjugate bins of magnitude n/2 each
        assert_abs_diff_eq!(s.energies()[1], 5000.0, epsilon = 1e-6);
        for (k, &e) in s.energies().iter().enumerate() {
            if k != 1 {
                assert!(e < 1e-8, "k={k} e={e}");
            }
        }
    }

    proptest! {
        #[test]
        fn parseval_identity(seed in 0u64..1000, n in 4usize..64) {
            let f = random_field(n, seed);
            let s = energy_spectrum(&f);
            let sum_sq: f64 = f.values().iter().map(|v| v * v).sum();
            let expect = n as f64 * sum_sq;
            prop_assert!((s.total() - expect).abs() <= 1e-9 * expect.max(1.0));
        }

        #[test]
        fn spectrum_shift_invariance(seed in 0u64..1000, n in 4usize..64, shift in 0usize..64) {
            let f = random_field(n, seed);
            let shift = shift % n;
            let mut rolled = f.values().to_vec();
            rolled.rotate_left(shift);
            let g = Field::from_values(rolled).unwrap();
            let sf = energy_spectrum(&f);
            let sg = energy_spectrum(&g);
            for (a, b) in sf.energies().iter().zip(sg.energies()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dataset_rejects_mixed_resolutions() {
        let tag = ProvenanceTag::new("hf", "analytic", 0);
        let fields = vec![Field::constant(0.0, 4).unwrap(), Field::constant(0.0, 8).unwrap()];
        assert!(Dataset::new(fields, tag).is_err());
    }
}
