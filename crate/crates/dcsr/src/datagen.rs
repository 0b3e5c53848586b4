//! The 1D periodic advection laboratory: box initial conditions with an
//! exact analytic solution, three finite solvers of differing bias character,
//! and colored-noise pollution for synthetic low-fidelity data.

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::grid::{Dataset, Field, ProvenanceTag};
use crate::noise::{colored_noise, NoiseColor, NoiseSpec};
use crate::seeds::{self, Stream};
use crate::{Error, Result};

/// Periodic linear advection `u_t + v u_x = 0` on [0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvectionProblem {
    pub velocity: f64,
    pub final_time: f64,
    pub dt: f64,
}

impl Default for AdvectionProblem {
    fn default() -> Self {
        AdvectionProblem {
            velocity: 0.1,
            final_time: 0.25,
            dt: 0.001,
        }
    }
}

impl AdvectionProblem {
    fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.final_time > 0.0) {
            return Err(Error::invalid("dt and final_time must be positive"));
        }
        let steps = self.final_time / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "final_time {} is not a multiple of dt {}",
                self.final_time, self.dt
            )));
        }
        Ok(rounded as usize)
    }

    fn check_cfl(&self, n: usize, domain_length: f64) -> Result<f64> {
        if self.velocity <= 0.0 {
            return Err(Error::invalid("upwind solvers require positive velocity"));
        }
        let dx = domain_length / n as f64;
        let cfl = self.velocity * self.dt / dx;
        if cfl > 1.0 {
            return Err(Error::invalid(format!("CFL number {cfl:.3} exceeds 1")));
        }
        Ok(cfl)
    }
}

/// A union of axis-aligned boxes of unit height on the periodic unit interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxIC {
    /// Intervals (lo, hi) with 0 <= lo <= hi < 1.
    pub intervals: Vec<(f64, f64)>,
}

impl BoxIC {
    /// Indicator value at periodic coordinate x.
    pub fn eval(&self, x: f64) -> f64 {
        let xp = x.rem_euclid(1.0);
        for &(lo, hi) in &self.intervals {
            if xp >= lo && xp < hi {
                return 1.0;
            }
        }
        0.0
    }

    /// Discretize on an n-point grid with nodes i/n.
    pub fn discretize(&self, n: usize) -> Result<Field> {
        Field::from_values((0..n).map(|i| self.eval(i as f64 / n as f64)).collect())
    }
}

/// Draw a box initial condition: K uniform on {1, 2, 3}, each box from a
/// sorted pair of uniform draws on [0, 1).
/// Narrowest admissible box. A box narrower than the coarsest grid spacing
/// can fall entirely between grid points and sample to the zero field, so
/// draws are rejected until every box is resolvable.
pub const MIN_BOX_WIDTH: f64 = 0.08;

pub fn sample_ic(rng: &mut Stream) -> BoxIC {
    let k = rng.gen_range(1..=3usize);
    let unit = Uniform::new(0.0, 1.0);
    let intervals = (0..k)
        .map(|_| loop {
            let a: f64 = rng.sample(unit);
            let b: f64 = rng.sample(unit);
            if (a - b).abs() >= MIN_BOX_WIDTH {
                break (a.min(b), a.max(b));
            }
        })
        .collect();
    BoxIC { intervals }
}

/// Exact solution at the final time: the initial indicator translated by
/// `v * T` with periodic wraparound.
pub fn analytic_solution(problem: &AdvectionProblem, ic: &BoxIC, n: usize) -> Result<Field> {
    let shift = problem.velocity * problem.final_time;
    Field::from_values(
        (0..n)
            .map(|i| ic.eval(i as f64 / n as f64 - shift))
            .collect(),
    )
}

/// First-order Godunov upwind scheme (exact for v > 0 upwinding).
pub fn solve_godunov(problem: &AdvectionProblem, u0: &Field) -> Result<Field> {
    let n = u0.resolution();
    let cfl = problem.check_cfl(n, u0.domain_length())?;
    let steps = problem.n_steps()?;
    let mut u = u0.values().to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        for i in 0..n {
            let prev = u[(i + n - 1) % n];
            next[i] = u[i] - cfl * (u[i] - prev);
        }
        std::mem::swap(&mut u, &mut next);
    }
    Field::new(u, u0.domain_length())
}

/// Second-order Lax-Wendroff scheme (dispersive near discontinuities).
pub fn solve_lax_wendroff(problem: &AdvectionProblem, u0: &Field) -> Result<Field> {
    let n = u0.resolution();
    let cfl = problem.check_cfl(n, u0.domain_length())?;
    let steps = problem.n_steps()?;
    let mut u = u0.values().to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        for i in 0..n {
            let um = u[(i + n - 1) % n];
            let up = u[(i + 1) % n];
            next[i] = u[i] - 0.5 * cfl * (up - um) + 0.5 * cfl * cfl * (up - 2.0 * u[i] + um);
        }
        std::mem::swap(&mut u, &mut next);
    }
    Field::new(u, u0.domain_length())
}

/// Pseudo-spectral solver: per-step unit-modulus phase shift of each Fourier
/// mode. Exact on resolved smooth data; rings on discontinuities.
pub fn solve_spectral(problem: &AdvectionProblem, u0: &Field) -> Result<Field> {
    use num_complex::Complex64;
    let n = u0.resolution();
    let steps = problem.n_steps()?;
    let mut modes = crate::grid::dft(u0);
    let l = u0.domain_length();
    for _ in 0..steps {
        for (j, m) in modes.iter_mut().enumerate() {
            // signed wavenumber of bin j
            let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let phase = -std::f64::consts::TAU * k * problem.velocity * problem.dt / l;
            if n % 2 == 0 && j == n / 2 {
                // the Nyquist bin is its own conjugate: a complex phase would
                // break realness, so project onto its real (cosine) component
                *m *= phase.cos();
            } else {
                *m *= Complex64::from_polar(1.0, phase);
            }
        }
    }
    let shifted = crate::grid::idft(&modes);
    Field::new(shifted.iter().map(|c| c.re).collect(), l)
}

/// Add per-sample colored noise, seeding each draw from (master seed, index).
pub fn pollute(data: &Dataset, spec: &NoiseSpec, master_seed: u64) -> Result<Dataset> {
    let n = data.resolution();
    let fields = data
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = seeds::stream(master_seed, &[0x706f6c, i as u64]);
            let noise = colored_noise(n, spec, &mut rng)?;
            f.zip_map(&noise, |a, b| a + b)
        })
        .collect::<Result<Vec<_>>>()?;
    let tag = ProvenanceTag::new("lf", spec.color.name(), master_seed);
    Dataset::new(fields, tag)
}

/// A complete synthetic benchmark: high-fidelity train/test splits plus six
/// low-fidelity variants of the test split (three solver biases, three noise
/// colors).
#[derive(Debug, Clone)]
pub struct AdvectionSuite {
    pub hf_train: Dataset,
    pub hf_test: Dataset,
    pub lf_test: Vec<(String, Dataset)>,
}

pub const NOISE_MAGNITUDE: f64 = 0.1;

/// Build the benchmark at resolution `n` with `n_train` training and
/// `n_test` test samples. Low-fidelity sets share the test initial
/// conditions so corrections are evaluated against matched references.
pub fn build_advection_suite(
    problem: &AdvectionProblem,
    n: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<AdvectionSuite> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("suite needs nonempty train and test splits"));
    }
    let mut train_rng = seeds::stream(seed, &[0x747261, 0]);
    let mut test_rng = seeds::stream(seed, &[0x746573, 0]);

    let train_fields = (0..n_train)
        .map(|_| analytic_solution(problem, &sample_ic(&mut train_rng), n))
        .collect::<Result<Vec<_>>>()?;
    let hf_train = Dataset::new(train_fields, ProvenanceTag::new("hf", "none", seed))?;

    let test_ics: Vec<BoxIC> = (0..n_test).map(|_| sample_ic(&mut test_rng)).collect();
    let test_fields = test_ics
        .iter()
        .map(|ic| analytic_solution(problem, ic, n))
        .collect::<Result<Vec<_>>>()?;
    let hf_test = Dataset::new(test_fields, ProvenanceTag::new("hf", "none", seed))?;

    let mut lf_test = Vec::new();
    for (name, solver) in [
        ("godunov", solve_godunov as fn(&AdvectionProblem, &Field) -> Result<Field>),
        ("lax_wendroff", solve_lax_wendroff),
        ("spectral", solve_spectral),
    ] {
        let fields = test_ics
            .iter()
            .map(|ic| solver(problem, &ic.discretize(n)?))
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset::new(fields, ProvenanceTag::new("lf", name, seed))?;
        lf_test.push((name.to_string(), ds));
    }
    for color in [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown] {
        let spec = NoiseSpec::new(color, NOISE_MAGNITUDE)?;
        let sub_seed = seeds::derive_seed(seed, &[0x6e6f69, color.exponent() as u64]);
        let ds = pollute(&hf_test, &spec, sub_seed)?;
        lf_test.push((color.name().to_string(), ds));
    }
    // unbiased control: the "low-fidelity" inputs are the reference itself
    lf_test.push((
        "none".to_string(),
        Dataset::new(
            hf_test.fields().to_vec(),
            ProvenanceTag::new("lf", "none", seed),
        )?,
    ));

    Ok(AdvectionSuite {
        hf_train,
        hf_test,
        lf_test,
    })
}
