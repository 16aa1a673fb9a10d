use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{dpo_loss_item, forward, logistic, DpoBatchItem, DpoConfig, DpoPair, EpsPredictor, Sampler, SeededSampler};
use super::schedule::NoiseSchedule;
use super::DpoError;
use crate::backend::Embedding;

pub const DEFAULT_STEP: f64 = 1e-5;

/// A predictor with a flat parameter vector and a vector-Jacobian product
/// with respect to those parameters.
pub trait ParametricPredictor: EpsPredictor + Sized {
    fn params(&self) -> Vec<f64>;

    fn with_params(&self, params: &[f64]) -> Result<Self, DpoError>;

    /// Add `upstream^T * d predict(x_t, t, cond) / d params` into `grad`.
    fn accumulate_param_grad(&self, x_t: &[f64], t: usize, cond: &Embedding, upstream: &[f64], grad: &mut [f64]);
}

/// `eps(x, t, c) = A x` with a dense `d x d` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    dim: usize,
    a: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(dim: usize, a: Vec<f64>) -> Result<Self, DpoError> {
        if a.len() != dim * dim {
            return Err(DpoError::ParamCount { expected: dim * dim, actual: a.len() });
        }
        Ok(LinearPredictor { dim, a })
    }

    /// Entries drawn from `N(0, 1/d)`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim.max(1) as f64).sqrt();
        let a = (0..dim * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        LinearPredictor { dim, a }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl EpsPredictor for LinearPredictor {
    fn predict(&self, x_t: &[f64], _t: usize, _cond: &Embedding) -> Vec<f64> {
        if x_t.len() != self.dim {
            // wrong-length output is reported as a dimension error by the caller
            return Vec::new();
        }
        self.a.chunks(self.dim).map(|row| row.iter().zip(x_t).map(|(a, x)| a * x).sum()).collect()
    }
}

impl ParametricPredictor for LinearPredictor {
    fn params(&self) -> Vec<f64> {
        self.a.clone()
    }

    fn with_params(&self, params: &[f64]) -> Result<Self, DpoError> {
        LinearPredictor::new(self.dim, params.to_vec())
    }

    fn accumulate_param_grad(&self, x_t: &[f64], _t: usize, _cond: &Embedding, upstream: &[f64], grad: &mut [f64]) {
        for (i, g) in upstream.iter().enumerate() {
            for (j, x) in x_t.iter().enumerate() {
                grad[i * self.dim + j] += g * x;
            }
        }
    }
}

/// Mean loss over `items` (at their stored draws) and its gradient with
/// respect to `theta`'s parameters.
/// `n` items with standard normal `x0`, condition and noise, and uniform
/// timesteps, all drawn from `seed`.
pub fn random_batch(d: usize, cond_dim: usize, n: usize, seed: u64, sched: &NoiseSchedule) -> Vec<DpoBatchItem> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let sampler = SeededSampler::new(seed);
    (0..n)
        .map(|i| {
            let pair = DpoPair {
                prompt_id: format!("p{i}"),
                winner: "w".into(),
                loser: "l".into(),
                cond: Embedding::from_raw(v(cond_dim)),
                x0_w: v(d),
                x0_l: v(d),
            };
            DpoBatchItem::from_pair(&pair, sampler.draw(i, &pair, sched.timesteps()))
        })
        .collect()
}

pub fn analytic_gradient<P: ParametricPredictor>(
    theta: &P,
    reference: &dyn EpsPredictor,
    items: &[DpoBatchItem],
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<(f64, Vec<f64>), DpoError> {
    if items.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let n = items.len() as f64;
    let mut grad = vec![0.0; theta.params().len()];
    let mut total = 0.0;
    for item in items {
        let f = forward(item, theta, reference, sched, cfg)?;
        total += f.loss;
        // d softplus(beta * inner) / d inner
        let g = cfg.beta * logistic(cfg.beta * f.inner) / n;
        let up_w: Vec<f64> = item.eps_w.iter().zip(&f.theta_w).map(|(e, p)| -2.0 * g * (e - p)).collect();
        let up_l: Vec<f64> = item.eps_l.iter().zip(&f.theta_l).map(|(e, p)| 2.0 * g * (e - p)).collect();
        theta.accumulate_param_grad(&f.x_t_w, item.t, &item.cond, &up_w, &mut grad);
        theta.accumulate_param_grad(&f.x_t_l, item.t, &item.cond, &up_l, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DpoError::NonFinite("gradient"));
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn mean_loss<P: ParametricPredictor>(
    theta: &P,
    reference: &dyn EpsPredictor,
    items: &[DpoBatchItem],
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<f64, DpoError> {
    let mut total = 0.0;
    for item in items {
        total += dpo_loss_item(item, theta, reference, sched, cfg)?;
    }
    Ok(total / items.len() as f64)
}

/// Compare the analytic gradient with central differences of step `h`.
///
/// Relative error per parameter is `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn grad_check<P: ParametricPredictor>(
    theta: &P,
    reference: &dyn EpsPredictor,
    items: &[DpoBatchItem],
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
    h: f64,
) -> Result<GradCheck, DpoError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(DpoError::Step(h));
    }
    let (_, analytic) = analytic_gradient(theta, reference, items, sched, cfg)?;
    let base = theta.params();
    let mut numeric = Vec::with_capacity(base.len());
    let mut max_rel_error: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        let up = mean_loss(&theta.with_params(&p)?, reference, items, sched, cfg)?;
        p[k] = base[k] - h;
        let down = mean_loss(&theta.with_params(&p)?, reference, items, sched, cfg)?;
        let fd = (up - down) / (2.0 * h);
        if !fd.is_finite() {
            return Err(DpoError::NonFinite("finite difference"));
        }
        max_rel_error = max_rel_error.max((analytic[k] - fd).abs() / fd.abs().max(1e-8));
        numeric.push(fd);
    }
    Ok(GradCheck { max_rel_error, analytic, numeric })
}
