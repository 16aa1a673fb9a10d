use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::{forward_diffuse, NoiseSchedule};
use super::{check_dim, sq_dist, DpoError};
use crate::backend::Embedding;
use crate::hashing::{digest_parts, substream_seed};

/// The single loss constant, with the timestep count and per-timestep
/// weighting folded in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 5000.0 }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        if self.beta.is_finite() && self.beta > 0.0 {
            Ok(())
        } else {
            Err(DpoError::Beta(self.beta))
        }
    }
}

/// Noise prediction `eps(x_t, t, cond)`. Must be deterministic and return a
/// vector of the same length as `x_t`.
pub trait EpsPredictor: Sync {
    fn predict(&self, x_t: &[f64], t: usize, cond: &Embedding) -> Vec<f64>;
}

/// A condition with its preferred and rejected clean samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoPair {
    pub prompt_id: String,
    pub winner: String,
    pub loser: String,
    pub cond: Embedding,
    pub x0_w: Vec<f64>,
    pub x0_l: Vec<f64>,
}

/// Timestep and noise draws for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub t: usize,
    pub eps_w: Vec<f64>,
    pub eps_l: Vec<f64>,
}

/// A pair together with its draws: everything one loss term needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoBatchItem {
    pub cond: Embedding,
    pub x0_w: Vec<f64>,
    pub x0_l: Vec<f64>,
    pub t: usize,
    pub eps_w: Vec<f64>,
    pub eps_l: Vec<f64>,
}

impl DpoBatchItem {
    pub fn from_pair(pair: &DpoPair, draw: Draw) -> Self {
        DpoBatchItem {
            cond: pair.cond.clone(),
            x0_w: pair.x0_w.clone(),
            x0_l: pair.x0_l.clone(),
            t: draw.t,
            eps_w: draw.eps_w,
            eps_l: draw.eps_l,
        }
    }

    /// Sample dimension `d`.
    pub fn dim(&self) -> usize {
        self.x0_w.len()
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<(), DpoError> {
        let d = self.dim();
        check_dim("x0_l", d, &self.x0_l)?;
        check_dim("eps_w", d, &self.eps_w)?;
        check_dim("eps_l", d, &self.eps_l)?;
        sched.check_timestep(self.t)?;
        let all = [&self.x0_w, &self.x0_l, &self.eps_w, &self.eps_l];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(DpoError::NonFinite("item input"));
        }
        Ok(())
    }
}

/// `(|eps_w - theta_w|^2 - |eps_w - ref_w|^2) - (|eps_l - theta_l|^2 - |eps_l - ref_l|^2)`.
pub fn dpo_inner(
    eps_w: &[f64],
    eps_l: &[f64],
    theta_w: &[f64],
    theta_l: &[f64],
    ref_w: &[f64],
    ref_l: &[f64],
) -> Result<f64, DpoError> {
    let d = eps_w.len();
    check_dim("eps_l", d, eps_l)?;
    check_dim("theta_w", d, theta_w)?;
    check_dim("theta_l", d, theta_l)?;
    check_dim("ref_w", d, ref_w)?;
    check_dim("ref_l", d, ref_l)?;
    Ok((sq_dist(eps_w, theta_w) - sq_dist(eps_w, ref_w)) - (sq_dist(eps_l, theta_l) - sq_dist(eps_l, ref_l)))
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one loss term, kept for the gradient.
pub(crate) struct Forward {
    pub x_t_w: Vec<f64>,
    pub x_t_l: Vec<f64>,
    pub theta_w: Vec<f64>,
    pub theta_l: Vec<f64>,
    pub inner: f64,
    pub loss: f64,
}

pub(crate) fn forward(
    item: &DpoBatchItem,
    theta: &dyn EpsPredictor,
    reference: &dyn EpsPredictor,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<Forward, DpoError> {
    cfg.validate()?;
    item.validate(sched)?;
    let d = item.dim();
    let x_t_w = forward_diffuse(&item.x0_w, item.t, &item.eps_w, sched)?;
    let x_t_l = forward_diffuse(&item.x0_l, item.t, &item.eps_l, sched)?;
    let theta_w = theta.predict(&x_t_w, item.t, &item.cond);
    let theta_l = theta.predict(&x_t_l, item.t, &item.cond);
    let ref_w = reference.predict(&x_t_w, item.t, &item.cond);
    let ref_l = reference.predict(&x_t_l, item.t, &item.cond);
    check_dim("theta prediction", d, &theta_w)?;
    check_dim("reference prediction", d, &ref_w)?;
    let inner = dpo_inner(&item.eps_w, &item.eps_l, &theta_w, &theta_l, &ref_w, &ref_l)?;
    if !inner.is_finite() {
        return Err(DpoError::NonFinite("inner term"));
    }
    // -ln logistic(-beta * inner) = softplus(beta * inner)
    let loss = softplus(cfg.beta * inner);
    if !loss.is_finite() {
        return Err(DpoError::NonFinite("loss"));
    }
    Ok(Forward { x_t_w, x_t_l, theta_w, theta_l, inner, loss })
}

/// `-ln logistic(-beta * inner)` for one item at its stored draws.
pub fn dpo_loss_item(
    item: &DpoBatchItem,
    theta: &dyn EpsPredictor,
    reference: &dyn EpsPredictor,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<f64, DpoError> {
    Ok(forward(item, theta, reference, sched, cfg)?.loss)
}

/// Source of per-item draws.
pub trait Sampler: Sync {
    /// Draws for item `index` of a batch.
    fn draw(&self, index: usize, pair: &DpoPair, timesteps: usize) -> Draw;
}

/// How [`SeededSampler`] keys each item's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawKey {
    /// By position in the batch.
    Index,
    /// By the pair's contents, so identical pairs get identical draws.
    Content,
}

/// Discrete-uniform timesteps and standard normal noise from ChaCha streams.
#[derive(Debug, Clone, Copy)]
pub struct SeededSampler {
    pub seed: u64,
    pub key: DrawKey,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        SeededSampler { seed, key: DrawKey::Index }
    }
}

fn vec_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

impl Sampler for SeededSampler {
    fn draw(&self, index: usize, pair: &DpoPair, timesteps: usize) -> Draw {
        let key = match self.key {
            DrawKey::Index => index.to_string(),
            DrawKey::Content => {
                let digest = digest_parts(&[&vec_bytes(pair.cond.values()), &vec_bytes(&pair.x0_w), &vec_bytes(&pair.x0_l)]);
                hex::encode(digest)
            }
        };
        let mut rng = ChaCha20Rng::seed_from_u64(substream_seed(self.seed, &["dpo-draw", &key]));
        let t = rng.random_range(0..timesteps);
        let d = pair.x0_w.len();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let eps_w = (0..d).map(|_| normal()).collect();
        let eps_l = (0..d).map(|_| normal()).collect();
        Draw { t, eps_w, eps_l }
    }
}

/// Monte-Carlo estimate of the loss: mean of per-item terms at sampled draws.
///
/// Items are evaluated in parallel; the mean is summed in item order so the
/// result does not depend on scheduling.
pub fn dpo_loss_batch(
    pairs: &[DpoPair],
    theta: &dyn EpsPredictor,
    reference: &dyn EpsPredictor,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
    sampler: &dyn Sampler,
) -> Result<f64, DpoError> {
    if pairs.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let item = DpoBatchItem::from_pair(p, sampler.draw(i, p, sched.timesteps()));
            dpo_loss_item(&item, theta, reference, sched, cfg)
        })
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
