use serde::{Deserialize, Serialize};

use super::{check_dim, DpoError};

/// Tolerance for `alpha^2 + sigma^2 = 1`.
const VP_TOLERANCE: f64 = 1e-9;

/// Discrete variance-preserving schedule; index `t` runs over `0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Build from explicit tables, checking the VP identity and monotonicity.
    pub fn from_parts(alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self, DpoError> {
        if alpha.is_empty() {
            return Err(DpoError::Schedule("no timesteps".into()));
        }
        if alpha.len() != sigma.len() {
            return Err(DpoError::Schedule(format!("{} alphas vs {} sigmas", alpha.len(), sigma.len())));
        }
        for (t, (&a, &s)) in alpha.iter().zip(&sigma).enumerate() {
            if !(a.is_finite() && s.is_finite()) || a < 0.0 || s < 0.0 {
                return Err(DpoError::Schedule(format!("bad entry at t={t}")));
            }
            if (a * a + s * s - 1.0).abs() > VP_TOLERANCE {
                return Err(DpoError::Schedule(format!("alpha^2 + sigma^2 = {} at t={t}", a * a + s * s)));
            }
        }
        if alpha.windows(2).any(|w| w[1] > w[0]) || sigma.windows(2).any(|w| w[1] < w[0]) {
            return Err(DpoError::Schedule("alpha must not increase and sigma must not decrease".into()));
        }
        Ok(NoiseSchedule { alpha, sigma })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn check_timestep(&self, t: usize) -> Result<(), DpoError> {
        if t >= self.timesteps() {
            return Err(DpoError::Timestep { t, timesteps: self.timesteps() });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_linear_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// Linear betas from `beta_start` to `beta_end`; `alpha_t = sqrt(prod(1 - beta_s))`.
pub fn make_linear_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DpoError> {
    if timesteps == 0 {
        return Err(DpoError::Schedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DpoError::Schedule(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
    }
    let mut alpha = Vec::with_capacity(timesteps);
    let mut sigma = Vec::with_capacity(timesteps);
    let mut alpha_bar = 1.0;
    for t in 0..timesteps {
        let beta = if timesteps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * t as f64 / (timesteps - 1) as f64
        };
        alpha_bar *= 1.0 - beta;
        alpha.push(alpha_bar.sqrt());
        sigma.push((1.0 - alpha_bar).sqrt());
    }
    NoiseSchedule::from_parts(alpha, sigma)
}

/// `alpha_t * x0 + sigma_t * eps`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>, DpoError> {
    check_dim("eps", x0.len(), eps)?;
    sched.check_timestep(t)?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}
