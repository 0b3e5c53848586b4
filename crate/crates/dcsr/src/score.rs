//! Score-model abstraction: closed-form analytic oracles and a small
//! trainable time-conditioned network with denoising-score-matching training.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{prolong, Dataset, Field};
use crate::noise::NoiseSchedule;
use crate::seeds::{self, Stream};
use crate::{Error, Result};

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{NetArch, Network};

/// The score function family: analytic oracles or trained networks.
#[derive(Debug, Clone)]
pub enum ScoreKind {
    /// Data distribution is a point mass at `target`.
    PointMass { target: Field },
    /// Isotropic Gaussian `N(mean, std^2 I)`.
    Gaussian { mean: Field, std: f64 },
    /// Mixture of isotropic Gaussians with shared std.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Field>,
        std: f64,
    },
    /// Trained unconditional network.
    Network(Network),
    /// Trained conditional network (super-resolution stage).
    ConditionalNetwork(Network),
}

/// An evaluatable score function `S(x, t[, cond])` tied to a noise schedule.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    kind: ScoreKind,
    sched: NoiseSchedule,
}

impl ScoreModel {
    pub fn point_mass(target: Field, sched: NoiseSchedule) -> Self {
        ScoreModel {
            kind: ScoreKind::PointMass { target },
            sched,
        }
    }

    pub fn gaussian(mean: Field, std: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::invalid("gaussian std must be positive"));
        }
        Ok(ScoreModel {
            kind: ScoreKind::Gaussian { mean, std },
            sched,
        })
    }

    pub fn gaussian_mixture(
        weights: Vec<f64>,
        means: Vec<Field>,
        std: f64,
        sched: NoiseSchedule,
    ) -> Result<Self> {
        if weights.len() != means.len() || weights.is_empty() {
            return Err(Error::invalid("mixture weights/means mismatch"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mixture weights must be nonnegative and sum to 1"));
        }
        if !(std > 0.0) {
            return Err(Error::invalid("mixture std must be positive"));
        }
        Ok(ScoreModel {
            kind: ScoreKind::GaussianMixture {
                weights,
                means,
                std,
            },
            sched,
        })
    }

    pub fn from_network(net: Network, sched: NoiseSchedule) -> Self {
        let kind = if net.cond_resolution().is_some() {
            ScoreKind::ConditionalNetwork(net)
        } else {
            ScoreKind::Network(net)
        };
        ScoreModel { kind, sched }
    }

    pub fn kind(&self) -> &ScoreKind {
        &self.kind
    }

    pub fn sched(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// Resolution of the fields this model scores.
    pub fn resolution(&self) -> usize {
        match &self.kind {
            ScoreKind::PointMass { target } => target.resolution(),
            ScoreKind::Gaussian { mean, .. } => mean.resolution(),
            ScoreKind::GaussianMixture { means, .. } => means[0].resolution(),
            ScoreKind::Network(net) | ScoreKind::ConditionalNetwork(net) => net.output_dim(),
        }
    }

    /// Conditioning resolution, if this is a conditional model.
    pub fn cond_resolution(&self) -> Option<usize> {
        match &self.kind {
            ScoreKind::Network(net) | ScoreKind::ConditionalNetwork(net) => net.cond_resolution(),
            _ => None,
        }
    }

    /// Smallest time at which the score is numerically evaluatable. The
    /// backward PF ODE clamps its endpoint here.
    pub fn min_time(&self) -> f64 {
        match &self.kind {
            // -(x - x0) / sigma^2(t) is 0/0 at t = 0 on the PF trajectory
            ScoreKind::PointMass { .. } => 1e-8,
            ScoreKind::Gaussian { .. } | ScoreKind::GaussianMixture { .. } => 0.0,
            // parametrization net / sigma(t) divides by sigma(0) = 0
            ScoreKind::Network(_) | ScoreKind::ConditionalNetwork(_) => 1e-3,
        }
    }

    /// Evaluate the score `S(x, t[, cond])`.
    pub fn eval(&self, x: &Field, t: f64, cond: Option<&Field>) -> Result<Field> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        let sigma_sq = self.sched.sigma_sq(t)?;
        match &self.kind {
            ScoreKind::PointMass { target } => {
                if x.resolution() != target.resolution() {
                    return Err(Error::ResolutionMismatch {
                        expected: target.resolution(),
                        got: x.resolution(),
                    });
                }
                if sigma_sq == 0.0 {
                    // finite only on the data point itself
                    if x.values() == target.values() {
                        return Field::from_values(vec![0.0; x.resolution()]);
                    }
                    return Err(Error::ScoreUndefinedAtZero);
                }
                x.zip_map(target, |xi, ti| -(xi - ti) / sigma_sq)
            }
            ScoreKind::Gaussian { mean, std } => {
                let denom = std * std + sigma_sq;
                x.zip_map(mean, |xi, mi| -(xi - mi) / denom)
            }
            ScoreKind::GaussianMixture {
                weights,
                means,
                std,
            } => {
                let denom = std * std + sigma_sq;
                // responsibilities via log-sum-exp
                let logits: Vec<f64> = weights
                    .iter()
                    .zip(means)
                    .map(|(w, mu)| {
                        let d2: f64 = x
                            .values()
                            .iter()
                            .zip(mu.values())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        w.max(1e-300).ln() - d2 / (2.0 * denom)
                    })
                    .collect();
                let max_logit = logits.iter().cloned().fold(f64::MIN, f64::max);
                let expd: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
                let total: f64 = expd.iter().sum();
                let resp: Vec<f64> = expd.iter().map(|e| e / total).collect();
                let mut posterior_mean = vec![0.0; x.resolution()];
                for (r, mu) in resp.iter().zip(means) {
                    for (p, m) in posterior_mean.iter_mut().zip(mu.values()) {
                        *p += r * m;
                    }
                }
                let values = x
                    .values()
                    .iter()
                    .zip(&posterior_mean)
                    .map(|(xi, pm)| -(xi - pm) / denom)
                    .collect();
                Field::from_values(values)
            }
            ScoreKind::Network(net) => {
                if t == 0.0 {
                    return Err(Error::ScoreUndefinedAtZero);
                }
                let out = net.forward_single(x.values(), None, t, sigma_sq.sqrt())?;
                let sigma = sigma_sq.sqrt();
                Field::from_values(out.iter().map(|v| v / sigma).collect())
            }
            ScoreKind::ConditionalNetwork(net) => {
                if t == 0.0 {
                    return Err(Error::ScoreUndefinedAtZero);
                }
                let cond = cond
                    .ok_or_else(|| Error::invalid("conditional model requires a condition"))?;
                let expected = net.cond_resolution().expect("conditional network");
                if cond.resolution() != expected {
                    return Err(Error::ResolutionMismatch {
                        expected,
                        got: cond.resolution(),
                    });
                }
                let factor = net.output_dim() / expected;
                let upsampled = prolong(cond, factor)?;
                let sigma = sigma_sq.sqrt();
                // The conditional network models the residual against the
                // prolonged condition; the shift is constant in x, so the
                // residual score equals the score of the full field.
                let resid: Vec<f64> = x
                    .values()
                    .iter()
                    .zip(upsampled.values())
                    .map(|(xi, ui)| xi - ui)
                    .collect();
                let out = net.forward_single(&resid, Some(upsampled.values()), t, sigma)?;
                Field::from_values(out.iter().map(|v| v / sigma).collect())
            }
        }
    }
}

/// Training hyperparameters for denoising score matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Lower clip of the sampled time; the loss weight is singular at t = 0.
    pub t_min: f64,
    /// When set, the step size follows a cosine decay from `learning_rate`
    /// down to this value over `max_iter` iterations.
    pub final_learning_rate: Option<f64>,
    /// Draw training times log-uniformly instead of uniformly.
    pub log_time: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            max_iter: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            t_min: 1e-4,
            final_learning_rate: None,
            log_time: false,
            seed: 0,
        }
    }
}

/// Per-iteration training loss record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn median_of_range(&self, range: std::ops::Range<usize>) -> f64 {
        crate::metrics::median(&self.losses[range])
    }
}

/// Denoising score-matching loss: mean over the batch of
/// `||sigma(t) S(x + sigma(t) eps, t[, cond]) + eps||^2`.
pub fn dsm_loss(
    model: &ScoreModel,
    batch: &Dataset,
    t: f64,
    eps: &[Field],
    conds: Option<&Dataset>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("dsm_loss needs a nonempty batch"));
    }
    if eps.len() != batch.len() {
        return Err(Error::invalid("noise draws must match batch size"));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::TimeOutOfRange(t));
    }
    let sigma = model.sched().sigma(t)?;
    let mut total = 0.0;
    for (i, (x, e)) in batch.fields().iter().zip(eps).enumerate() {
        let noised = x.zip_map(e, |a, b| a + sigma * b)?;
        let cond = conds.map(|c| &c.fields()[i]);
        let score = model.eval(&noised, t, cond)?;
        let term: f64 = score
            .values()
            .iter()
            .zip(e.values())
            .map(|(s, e)| {
                let r = sigma * s + e;
                r * r
            })
            .sum();
        total += term;
    }
    Ok(total / batch.len() as f64)
}

fn validate_train(data_len: usize, cfg: &TrainConfig) -> Result<()> {
    if cfg.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > data_len {
        return Err(Error::invalid(format!(
            "batch size {} incompatible with dataset of {data_len}",
            cfg.batch_size
        )));
    }
    Ok(())
}

fn draw_batch_indices(rng: &mut Stream, data_len: usize, batch: usize) -> Vec<usize> {
    use rand::Rng;
    (0..batch).map(|_| rng.gen_range(0..data_len)).collect()
}

fn draw_time(rng: &mut Stream, cfg: &TrainConfig) -> f64 {
    use rand::Rng;
    if cfg.log_time {
        // Log-uniform in t: equal training weight per noise-scale decade, so
        // the small-sigma regime that controls final sample quality is not
        // starved by the flat draw.
        let u: f64 = rng.gen_range(0.0..=1.0);
        cfg.t_min * (1.0 / cfg.t_min).powf(u)
    } else {
        rng.gen_range(cfg.t_min..=1.0)
    }
}

/// Train an unconditional score model by denoising score matching. One time
/// draw is shared across the batch at each iteration.
pub fn train_uncond(
    data: &Dataset,
    cfg: &TrainConfig,
    arch: &NetArch,
    sched: NoiseSchedule,
) -> Result<(ScoreModel, TrainLog)> {
    validate_train(data.len(), cfg)?;
    let n = data.resolution();
    let mut rng = seeds::stream(cfg.seed, &[0x7261696e]);
    let mut net = Network::new(arch.clone(), n, None, &mut rng)?;
    let mut opt = net::Adam::new(net.num_params(), cfg);
    let mut losses = Vec::with_capacity(cfg.max_iter);

    for iter in 0..cfg.max_iter {
        let idx = draw_batch_indices(&mut rng, data.len(), cfg.batch_size);
        let t = draw_time(&mut rng, cfg);
        let sigma = sched.sigma(t)?;
        let b = cfg.batch_size;
        let mut noised = Array2::<f64>::zeros((b, n));
        let mut eps = Array2::<f64>::zeros((b, n));
        for (row, &sample) in idx.iter().enumerate() {
            let x = data.fields()[sample].values();
            for col in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                eps[(row, col)] = e;
                noised[(row, col)] = x[col] + sigma * e;
            }
        }
        let (loss, grads) = net.dsm_loss_and_grad(&noised, None, &eps, t, sigma);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iter });
        }
        losses.push(loss);
        if let Some(lr_min) = cfg.final_learning_rate {
            let frac = iter as f64 / cfg.max_iter.max(1) as f64;
            let lr = lr_min
                + 0.5 * (cfg.learning_rate - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos());
            opt.set_lr(lr);
        }
        opt.step(&mut net, &grads);
    }

    Ok((
        ScoreModel::from_network(net, sched),
        TrainLog { losses },
    ))
}

/// Train a conditional super-resolution score model on aligned (low, high)
/// pairs. The condition enters as an upsampled channel concatenated to the
/// noised high-resolution input.
pub fn train_cond(
    low: &Dataset,
    high: &Dataset,
    cfg: &TrainConfig,
    arch: &NetArch,
    sched: NoiseSchedule,
) -> Result<(ScoreModel, TrainLog)> {
    if low.len() != high.len() {
        return Err(Error::invalid(format!(
            "misaligned pair counts: {} low vs {} high",
            low.len(),
            high.len()
        )));
    }
    validate_train(high.len(), cfg)?;
    let n_low = low.resolution();
    let n_high = high.resolution();
    if n_high % n_low != 0 || n_high / n_low < 2 {
        return Err(Error::invalid(format!(
            "high resolution {n_high} must be an integer multiple (>= 2) of low {n_low}"
        )));
    }
    let factor = n_high / n_low;

    // Upsample conditions once.
    let upsampled: Vec<Field> = low
        .fields()
        .iter()
        .map(|f| prolong(f, factor))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = seeds::stream(cfg.seed, &[0x636f6e64]);
    let mut net = Network::new(arch.clone(), n_high, Some(n_low), &mut rng)?;
    let mut opt = net::Adam::new(net.num_params(), cfg);
    let mut losses = Vec::with_capacity(cfg.max_iter);

    for iter in 0..cfg.max_iter {
        let idx = draw_batch_indices(&mut rng, high.len(), cfg.batch_size);
        let t = draw_time(&mut rng, cfg);
        let sigma = sched.sigma(t)?;
        let b = cfg.batch_size;
        let mut noised = Array2::<f64>::zeros((b, n_high));
        let mut cond = Array2::<f64>::zeros((b, n_high));
        let mut eps = Array2::<f64>::zeros((b, n_high));
        for (row, &sample) in idx.iter().enumerate() {
            let x = high.fields()[sample].values();
            let c = upsampled[sample].values();
            for col in 0..n_high {
                let e: f64 = StandardNormal.sample(&mut rng);
                eps[(row, col)] = e;
                // Diffuse the residual against the prolonged condition; the
                // sampler adds the condition back through the score shift.
                noised[(row, col)] = (x[col] - c[col]) + sigma * e;
                cond[(row, col)] = c[col];
            }
        }
        let (loss, grads) = net.dsm_loss_and_grad(&noised, Some(&cond), &eps, t, sigma);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iter });
        }
        losses.push(loss);
        if let Some(lr_min) = cfg.final_learning_rate {
            let frac = iter as f64 / cfg.max_iter.max(1) as f64;
            let lr = lr_min
                + 0.5 * (cfg.learning_rate - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos());
            opt.set_lr(lr);
        }
        opt.step(&mut net, &grads);
    }

    Ok((
        ScoreModel::from_network(net, sched),
        TrainLog { losses },
    ))
}
