//! Small time-conditioned MLP with manual backpropagation.
//!
//! The time enters through a fixed Gaussian random-feature embedding
//! concatenated to the (optionally conditioned) field values. Hidden layers
//! use SiLU; the score is `net(x, t) / sigma(t)`, so the denoising loss
//! reduces to `mean ||net(x + sigma eps, t) + eps||^2` and no sigma weighting
//! appears in the gradients.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seeds::Stream;
use crate::{Error, Result};

use super::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NetArch {
    /// Time-embedding width; must be even.
    pub embed_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Std of the frozen random-feature frequencies.
    pub embed_scale: f64,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            embed_dim: 128,
            hidden: vec![256, 256],
            embed_scale: 30.0,
        }
    }
}

impl NetArch {
    /// Minimal architecture for fast tests.
    pub fn tiny() -> Self {
        NetArch {
            embed_dim: 8,
            hidden: vec![16],
            embed_scale: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: NetArch,
    output_dim: usize,
    cond_resolution: Option<usize>,
    /// Frozen random-feature frequencies, length embed_dim / 2.
    freqs: Array1<f64>,
    layers: Vec<Layer>,
}

/// Per-layer gradients mirroring the network's parameters.
pub struct Grads {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Network {
    pub fn new(
        arch: NetArch,
        output_dim: usize,
        cond_resolution: Option<usize>,
        rng: &mut Stream,
    ) -> Result<Self> {
        if arch.embed_dim == 0 || arch.embed_dim % 2 != 0 {
            return Err(Error::invalid("embed_dim must be positive and even"));
        }
        if arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        let feature_dim = output_dim + if cond_resolution.is_some() { output_dim } else { 0 };
        let z_dim = feature_dim + arch.embed_dim;
        let mut dims = vec![z_dim];
        dims.extend(&arch.hidden);
        dims.push(output_dim);

        let freqs = Array1::from_iter((0..arch.embed_dim / 2).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            arch.embed_scale * z
        }));
        let layers = dims
            .windows(2)
            .map(|d| {
                let scale = 1.0 / (d[0] as f64).sqrt();
                let w = Array2::from_shape_fn((d[0], d[1]), |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                });
                Layer {
                    w,
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();

        Ok(Network {
            arch,
            output_dim,
            cond_resolution,
            freqs,
            layers,
        })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn cond_resolution(&self) -> Option<usize> {
        self.cond_resolution
    }

    fn embed(&self, t: f64) -> Array1<f64> {
        let half = self.freqs.len();
        let mut e = Array1::zeros(2 * half);
        for (i, &f) in self.freqs.iter().enumerate() {
            let a = std::f64::consts::TAU * f * t;
            e[i] = a.sin();
            e[half + i] = a.cos();
        }
        e
    }

    fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    /// Assemble the batched input [c_in * x | cond | embed(t)] where
    /// c_in = 1 / sqrt(1 + sigma^2) keeps the noised channel at unit scale
    /// across the whole noise range.
    fn assemble(
        &self,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        t: f64,
        sigma: f64,
    ) -> Array2<f64> {
        let b = x.nrows();
        let c_in = 1.0 / (1.0 + sigma * sigma).sqrt();
        let emb = self.embed(t);
        let mut z = Array2::zeros((b, self.input_width()));
        let mut col = 0;
        z.slice_mut(ndarray::s![.., col..col + x.ncols()])
            .assign(&x.mapv(|v| c_in * v));
        col += x.ncols();
        if let Some(c) = cond {
            z.slice_mut(ndarray::s![.., col..col + c.ncols()]).assign(c);
            col += c.ncols();
        }
        for row in 0..b {
            z.slice_mut(ndarray::s![row, col..]).assign(&emb);
        }
        z
    }

    /// Forward pass keeping pre-activations for backprop. Returns
    /// (pre-activations per layer, activations per layer incl. input, output).
    fn forward_batch(&self, z0: Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let n_layers = self.layers.len();
        let mut pres = Vec::with_capacity(n_layers);
        let mut acts = Vec::with_capacity(n_layers);
        acts.push(z0);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = acts[l].dot(&layer.w);
            pre += &layer.b;
            if l + 1 < n_layers {
                let act = pre.mapv(silu);
                pres.push(pre);
                acts.push(act);
            } else {
                pres.push(pre);
            }
        }
        let out = pres.last().unwrap().clone();
        (pres, acts, out)
    }

    /// Evaluate the raw network output for a single input.
    pub fn forward_single(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        t: f64,
        sigma: f64,
    ) -> Result<Vec<f64>> {
        if x.len() != self.output_dim {
            return Err(Error::ResolutionMismatch {
                expected: self.output_dim,
                got: x.len(),
            });
        }
        let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let ca = cond.map(|c| Array2::from_shape_vec((1, c.len()), c.to_vec()).unwrap());
        let z0 = self.assemble(&xa, ca.as_ref(), t, sigma);
        let (_, _, out) = self.forward_batch(z0);
        Ok(out.row(0).to_vec())
    }

    /// Denoising loss `mean_rows ||net(noised, t) + eps||^2` and its gradient.
    pub fn dsm_loss_and_grad(
        &self,
        noised: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        eps: &Array2<f64>,
        t: f64,
        sigma: f64,
    ) -> (f64, Grads) {
        let b = noised.nrows() as f64;
        let z0 = self.assemble(noised, cond, t, sigma);
        let (pres, acts, out) = self.forward_batch(z0);

        let resid = &out + eps;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / b;
        let mut d_pre = resid.mapv(|r| 2.0 * r / b);

        let n_layers = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let gw = acts[l].t().dot(&d_pre);
            let gb = d_pre.sum_axis(Axis(0));
            grads.push((gw, gb));
            if l > 0 {
                let da = d_pre.dot(&self.layers[l].w.t());
                d_pre = da * &pres[l - 1].mapv(silu_deriv);
            }
        }
        grads.reverse();
        (loss, Grads { layers: grads })
    }

    pub fn num_params(&self) -> usize {
        self.freqs.len()
            + self
                .layers
                .iter()
                .map(|l| l.w.len() + l.b.len())
                .sum::<usize>()
    }

    /// All parameters (frozen frequencies first, then layers) as a flat vector.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.freqs.iter());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Overwrite all parameters from a flat vector in `flatten_params` order.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut i = 0;
        for f in self.freqs.iter_mut() {
            *f = flat[i];
            i += 1;
        }
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = flat[i];
                i += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[i];
                i += 1;
            }
        }
        Ok(())
    }
}

impl Grads {
    /// Trainable-parameter gradients flattened in layer order (frequencies
    /// are frozen and carry no gradient).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (gw, gb) in &self.layers {
            out.extend(gw.iter());
            out.extend(gb.iter());
        }
        out
    }
}

/// Adam optimizer over the trainable layer parameters.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(_num_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    /// Override the step size (used by cosine-decay schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Network, grads: &Grads) {
        let g = grads.flatten();
        if self.m.is_empty() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut i = 0;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for l in &mut net.layers {
            for p in l.w.iter_mut() {
                update(p, &mut self.m[i], &mut self.v[i], g[i], self.lr, self.beta1, self.beta2, self.eps);
                i += 1;
            }
            for p in l.b.iter_mut() {
                update(p, &mut self.m[i], &mut self.v[i], g[i], self.lr, self.beta1, self.beta2, self.eps);
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn build(cond: Option<usize>) -> Network {
        let mut rng = seeds::stream(7, &[1]);
        let arch = NetArch {
            embed_dim: 8,
            hidden: vec![10],
            embed_scale: 30.0,
        };
        Network::new(arch, 6, cond, &mut rng).unwrap()
    }

    #[test]
    fn rejects_odd_embed_dim() {
        let mut rng = seeds::stream(7, &[2]);
        let arch = NetArch {
            embed_dim: 7,
            hidden: vec![4],
            embed_scale: 1.0,
        };
        assert!(Network::new(arch, 6, None, &mut rng).is_err());
    }

    #[test]
    fn param_round_trip() {
        let mut net = build(None);
        let flat = net.flatten_params();
        let mut flat2 = flat.clone();
        for (i, v) in flat2.iter_mut().enumerate() {
            *v += (i as f64) * 1e-6;
        }
        net.set_params(&flat2).unwrap();
        assert_eq!(net.flatten_params(), flat2);
        assert!(net.set_params(&flat[..flat.len() - 1]).is_err());
    }

    /// Central finite differences against the analytic gradient.
    #[test]
    fn gradient_check() {
        let mut net = build(None);
        let mut rng = seeds::stream(11, &[]);
        let b = 3;
        let n = 6;
        let noised = Array2::from_shape_fn((b, n), |_| StandardNormal.sample(&mut rng));
        let eps = Array2::from_shape_fn((b, n), |_| StandardNormal.sample(&mut rng));
        let t = 0.37;

        let (_, grads) = net.dsm_loss_and_grad(&noised, None, &eps, t, 1.4);
        let g = grads.flatten();
        let base = net.flatten_params();
        let n_freqs = net.freqs.len();

        use rand::Rng;
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.gen_range(0..g.len());
            let mut plus = base.clone();
            plus[n_freqs + k] += h;
            net.set_params(&plus).unwrap();
            let (lp, _) = net.dsm_loss_and_grad(&noised, None, &eps, t, 1.4);
            let mut minus = base.clone();
            minus[n_freqs + k] -= h;
            net.set_params(&minus).unwrap();
            let (lm, _) = net.dsm_loss_and_grad(&noised, None, &eps, t, 1.4);
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-8);
            assert!(
                (fd - g[k]).abs() / denom < 1e-5,
                "param {k}: analytic {} vs fd {fd}",
                g[k]
            );
        }
        net.set_params(&base).unwrap();
    }

    #[test]
    fn conditional_gradient_check() {
        let mut net = build(Some(3));
        let mut rng = seeds::stream(13, &[]);
        let b = 2;
        let n = 6;
        let noised = Array2::from_shape_fn((b, n), |_| StandardNormal.sample(&mut rng));
        let cond = Array2::from_shape_fn((b, n), |_| StandardNormal.sample(&mut rng));
        let eps = Array2::from_shape_fn((b, n), |_| StandardNormal.sample(&mut rng));
        let t = 0.8;

        let (_, grads) = net.dsm_loss_and_grad(&noised, Some(&cond), &eps, t, 0.3);
        let g = grads.flatten();
        let base = net.flatten_params();
        let n_freqs = net.freqs.len();

        use rand::Rng;
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.gen_range(0..g.len());
            let mut plus = base.clone();
            plus[n_freqs + k] += h;
            net.set_params(&plus).unwrap();
            let (lp, _) = net.dsm_loss_and_grad(&noised, Some(&cond), &eps, t, 0.3);
            let mut minus = base.clone();
            minus[n_freqs + k] -= h;
            net.set_params(&minus).unwrap();
            let (lm, _) = net.dsm_loss_and_grad(&noised, Some(&cond), &eps, t, 0.3);
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-8);
            assert!((fd - g[k]).abs() / denom < 1e-5);
        }
        net.set_params(&base).unwrap();
    }
}
